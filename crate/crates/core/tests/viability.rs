use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vptc::viability::{
    admissible_bounds, braking_rollout, is_viable_jnt, joint_limit_accel_bounds,
};
use vptc::{ConstraintKind, HalfSpace, JointState, RobotModel, ViableAccelBox};

fn limited_arm(n: usize) -> RobotModel {
    let mut m = RobotModel::uniform_rods(&vec![0.3; n], &vec![1.0; n], &vec![0.03; n]);
    for k in 0..n {
        m.q_lower[k] = -1.0 - 0.2 * k as f64;
        m.q_upper[k] = 0.8 + 0.3 * k as f64;
        m.qd_max[k] = 2.0 + k as f64;
        m.qdd_max[k] = 10.0 - 2.0 * k as f64;
    }
    m
}

fn state_in(model: &RobotModel) -> impl Strategy<Value = JointState> {
    let n = model.dof();
    let q: Vec<_> = (0..n).map(|k| model.q_lower[k]..model.q_upper[k]).collect();
    let qd: Vec<_> = (0..n).map(|k| -model.qd_max[k]..model.qd_max[k]).collect();
    (q, qd).prop_map(|(q, qd)| JointState::new(DVector::from_vec(q), DVector::from_vec(qd)))
}

fn sample_box(rng: &mut ChaCha8Rng, b: &ViableAccelBox) -> DVector<f64> {
    DVector::from_fn(b.lower.len(), |i, _| {
        if b.upper[i] > b.lower[i] {
            rng.gen_range(b.lower[i]..=b.upper[i])
        } else {
            b.lower[i]
        }
    })
}

/// Drives the exact double integrator with random accelerations from the
/// box and returns the first step at which a limit is exceeded.
fn closed_loop_escape(
    model: &RobotModel,
    start: JointState,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start;
    let tol = 1e-9;
    for step in 0..steps {
        let b = joint_limit_accel_bounds(model, &s, dt);
        if !b.all_feasible() {
            return Some(step);
        }
        let qdd = sample_box(&mut rng, &b);
        s.q += &s.qd * dt + &qdd * (0.5 * dt * dt);
        s.qd += &qdd * dt;
        for k in 0..s.dof() {
            let out_q = s.q[k] < model.q_lower[k] - tol || s.q[k] > model.q_upper[k] + tol;
            let out_v = s.qd[k].abs() > model.qd_max[k] + tol;
            if out_q || out_v {
                return Some(step);
            }
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn braking_rollout_comes_to_rest(
        s in state_in(&limited_arm(3)),
        dt in 1e-4f64..2e-2,
    ) {
        let model = limited_arm(3);
        let traj = braking_rollout(&model, &s, dt);
        let last = traj.final_state();
        prop_assert!(last.qd.iter().all(|v| *v == 0.0));

        let expected_t = (0..3).map(|k| s.qd[k].abs() / model.qdd_max[k]).fold(0.0, f64::max);
        prop_assert!((traj.t_brake - expected_t).abs() < 1e-12);
        let expected_len = (expected_t / dt - 1e-9).ceil().max(0.0) as usize + 1;
        prop_assert!(traj.samples.len() == expected_len || traj.samples.len() == expected_len + 1);

        for w in traj.samples.windows(2) {
            for k in 0..3 {
                prop_assert!(w[1].qd[k].abs() <= w[0].qd[k].abs());
                prop_assert!(w[1].qd[k] * s.qd[k] >= 0.0);
            }
        }
        for k in 0..3 {
            let stop = s.q[k] + s.qd[k] * s.qd[k].abs() / (2.0 * model.qdd_max[k]);
            prop_assert!((last.q[k] - stop).abs() < 1e-9);
        }
    }

    #[test]
    fn feasible_box_lies_inside_hardware_box(
        s in state_in(&limited_arm(3)),
        dt in 1e-3f64..2e-2,
    ) {
        let model = limited_arm(3);
        let b = joint_limit_accel_bounds(&model, &s, dt);
        for k in 0..3 {
            if b.feasible[k] {
                prop_assert!(b.lower[k] >= -model.qdd_max[k] - 1e-12);
                prop_assert!(b.upper[k] <= model.qdd_max[k] + 1e-12);
                prop_assert!(b.lower[k] <= b.upper[k]);
            }
        }
    }

    #[test]
    fn random_box_accelerations_never_leave_limits_three_joints(
        s in state_in(&limited_arm(3)),
        seed in any::<u64>(),
    ) {
        let model = limited_arm(3);
        let dt = 5e-3;
        prop_assume!(is_viable_jnt(&model, &s, dt));
        prop_assert_eq!(closed_loop_escape(&model, s, dt, 10_000, seed), None);
    }

    #[test]
    fn random_box_accelerations_never_leave_limits_one_joint(
        s in state_in(&limited_arm(1)),
        seed in any::<u64>(),
        dt in 1e-3f64..2e-2,
    ) {
        let model = limited_arm(1);
        prop_assume!(is_viable_jnt(&model, &s, dt));
        prop_assert_eq!(closed_loop_escape(&model, s, dt, 10_000, seed), None);
    }

    #[test]
    fn admissible_bounds_enclose_every_admissible_point(
        lower in prop::collection::vec(-10.0f64..0.0, 3),
        width in prop::collection::vec(0.0f64..20.0, 3),
        normal in prop::collection::vec(-1.0f64..1.0, 3),
        offset in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let lo = DVector::from_vec(lower);
        let hi = &lo + DVector::from_vec(width);
        let b = ViableAccelBox { lower: lo, upper: hi, feasible: vec![true; 3] };
        let h = HalfSpace::new(DVector::from_vec(normal), offset, ConstraintKind::Eca);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inside: Vec<_> = (0..2000)
            .map(|_| sample_box(&mut rng, &b))
            .filter(|p| h.value(p) >= 0.0)
            .collect();
        match admissible_bounds(&b, &h) {
            None => prop_assert!(inside.is_empty()),
            Some((alo, ahi)) => {
                for p in &inside {
                    for k in 0..3 {
                        prop_assert!(p[k] >= alo[k] - 1e-9 && p[k] <= ahi[k] + 1e-9);
                    }
                }
                // each face of the bounding box touches the admissible set
                for k in 0..3 {
                    for target in [alo[k], ahi[k]] {
                        let mut best = DVector::from_fn(3, |j, _| {
                            if h.normal[j] >= 0.0 { b.upper[j] } else { b.lower[j] }
                        });
                        best[k] = target;
                        prop_assert!(h.value(&best) >= -1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_halfspace_keeps_sign(
        normal in prop::collection::vec(-5.0f64..5.0, 3),
        offset in -5.0f64..5.0,
        point in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let h = HalfSpace::new(DVector::from_vec(normal), offset, ConstraintKind::Sca);
        prop_assume!(h.normal.norm() > 1e-6);
        let n = h.normalized();
        prop_assert!((n.normal.norm() - 1.0).abs() < 1e-12);
        let p = DVector::from_vec(point);
        prop_assert!((n.value(&p) * h.normal.norm() - h.value(&p)).abs() < 1e-9);
    }
}
