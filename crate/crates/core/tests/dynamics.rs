use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Isometry2, Matrix2, Point2, Vector2};
use proptest::prelude::*;
use vptc::kinematics::{
    damped_pinv_transpose, dynamics_terms, forward_dynamics, forward_kinematics, gravity_torque,
    jacobian, mass_matrix,
};
use vptc::{JointState, RobotModel};

const FD_STEP: f64 = 1e-6;

fn arm() -> impl Strategy<Value = RobotModel> {
    (1usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.1f64..0.6, n),
                prop::collection::vec(0.2f64..3.0, n),
                prop::collection::vec(0.1f64..0.9, n),
                prop::collection::vec(0.5f64..2.0, n),
            )
        })
        .prop_map(|(lengths, masses, com, inertia_scale)| {
            let n = lengths.len();
            let mut m = RobotModel::uniform_rods(&lengths, &masses, &vec![0.03; n]);
            for i in 0..n {
                m.link_com_offsets[i] = com[i] * lengths[i];
                m.link_inertias[i] *= inertia_scale[i];
            }
            m
        })
}

fn arm_and_state() -> impl Strategy<Value = (RobotModel, JointState)> {
    arm()
        .prop_flat_map(|m| {
            let n = m.dof();
            (
                Just(m),
                prop::collection::vec(-3.1f64..3.1, n),
                prop::collection::vec(-3.0f64..3.0, n),
            )
        })
        .prop_map(|(m, q, qd)| {
            (
                m,
                JointState::new(DVector::from_vec(q), DVector::from_vec(qd)),
            )
        })
}

/// Link frames composed as rigid transforms, independent of the library.
fn frames(model: &RobotModel, q: &DVector<f64>) -> Vec<Isometry2<f64>> {
    let mut pose = Isometry2::identity();
    let mut out = Vec::new();
    for i in 0..q.len() {
        pose *= Isometry2::rotation(q[i]);
        out.push(pose);
        pose *= Isometry2::translation(model.link_lengths[i], 0.0);
    }
    out
}

fn com_positions(model: &RobotModel, q: &DVector<f64>) -> Vec<Vector2<f64>> {
    frames(model, q)
        .iter()
        .enumerate()
        .map(|(i, f)| (f * Point2::new(model.link_com_offsets[i], 0.0)).coords)
        .collect()
}

fn kinetic_energy_oracle(model: &RobotModel, s: &JointState) -> f64 {
    let plus = com_positions(model, &(&s.q + &s.qd * FD_STEP));
    let minus = com_positions(model, &(&s.q - &s.qd * FD_STEP));
    let mut omega = 0.0;
    let mut energy = 0.0;
    for i in 0..s.dof() {
        let v = (plus[i] - minus[i]) / (2.0 * FD_STEP);
        omega += s.qd[i];
        energy += 0.5 * model.link_masses[i] * v.norm_squared()
            + 0.5 * model.link_inertias[i] * omega * omega;
    }
    energy
}

fn potential_oracle(model: &RobotModel, q: &DVector<f64>) -> f64 {
    com_positions(model, q)
        .iter()
        .enumerate()
        .map(|(i, p)| -model.link_masses[i] * model.gravity.dot(p))
        .sum()
}

fn partial(q: &DVector<f64>, k: usize, f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    let mut p = q.clone();
    let mut m = q.clone();
    p[k] += FD_STEP;
    m[k] -= FD_STEP;
    (f(&p) - f(&m)) / (2.0 * FD_STEP)
}

fn mass_rate(model: &RobotModel, s: &JointState) -> DMatrix<f64> {
    (mass_matrix(model, &(&s.q + &s.qd * FD_STEP)) - mass_matrix(model, &(&s.q - &s.qd * FD_STEP)))
        / (2.0 * FD_STEP)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tip_matches_composed_frames((model, s) in arm_and_state()) {
        let n = s.dof();
        let last = frames(&model, &s.q)[n - 1] * Point2::new(model.link_lengths[n - 1], 0.0);
        let x = forward_kinematics(&model, &s.q);
        prop_assert!((x - last.coords).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences((model, s) in arm_and_state()) {
        let jac = jacobian(&model, &s.q);
        for k in 0..s.dof() {
            let col = Vector2::new(
                partial(&s.q, k, |q| forward_kinematics(&model, q).x),
                partial(&s.q, k, |q| forward_kinematics(&model, q).y),
            );
            prop_assert!((jac.column(k) - col).norm() < 1e-7);
        }
    }

    #[test]
    fn inertia_is_symmetric_positive_definite((model, s) in arm_and_state()) {
        let m = mass_matrix(&model, &s.q);
        prop_assert!((&m - m.transpose()).amax() < 1e-12);
        let eig = m.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0);
    }

    #[test]
    fn kinetic_energy_matches_body_velocities((model, s) in arm_and_state()) {
        let m = mass_matrix(&model, &s.q);
        let quad = 0.5 * s.qd.dot(&(&m * &s.qd));
        let oracle = kinetic_energy_oracle(&model, &s);
        prop_assert!((quad - oracle).abs() <= 1e-6 * (1.0 + oracle));
    }

    #[test]
    fn gravity_is_potential_gradient((model, s) in arm_and_state()) {
        let g = gravity_torque(&model, &s.q);
        for k in 0..s.dof() {
            let oracle = partial(&s.q, k, |q| potential_oracle(&model, q));
            prop_assert!((g[k] - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn mass_rate_minus_twice_coriolis_is_skew((model, s) in arm_and_state()) {
        let terms = dynamics_terms(&model, &s);
        let skew = mass_rate(&model, &s) - &terms.coriolis * 2.0;
        let scale = 1.0 + terms.coriolis.amax();
        prop_assert!((&skew + skew.transpose()).amax() < 1e-6 * scale);
    }

    #[test]
    fn coriolis_matches_lagrangian((model, s) in arm_and_state()) {
        // C q̇ = Ṁ q̇ − ½ ∂(q̇ᵀ M q̇)/∂q
        let terms = dynamics_terms(&model, &s);
        let lhs = &terms.coriolis * &s.qd;
        let mdot_qd = mass_rate(&model, &s) * &s.qd;
        for k in 0..s.dof() {
            let dt_dq = partial(&s.q, k, |q| 0.5 * s.qd.dot(&(mass_matrix(&model, q) * &s.qd)));
            let oracle = mdot_qd[k] - dt_dq;
            prop_assert!((lhs[k] - oracle).abs() < 1e-6 * (1.0 + oracle.abs()));
        }
    }

    #[test]
    fn forward_dynamics_satisfies_equation_of_motion(
        (model, s) in arm_and_state(),
        seed in prop::collection::vec(-50.0f64..50.0, 8),
    ) {
        let n = s.dof();
        let tau = DVector::from_fn(n, |i, _| seed[i]);
        let ext = DVector::from_fn(n, |i, _| seed[4 + i] * 0.1);
        let qdd = forward_dynamics(&model, &s, &tau, &ext);
        let terms = dynamics_terms(&model, &s);
        let residual = &terms.mass * &qdd + &terms.coriolis * &s.qd + &terms.gravity - tau - ext;
        prop_assert!(residual.amax() < 1e-9 * (1.0 + qdd.amax()));
    }

    #[test]
    fn undamped_operator_inverts_jacobian_transpose((model, s) in arm_and_state()) {
        let jac = jacobian(&model, &s.q);
        let gram: Matrix2<f64> = &jac * jac.transpose();
        prop_assume!(gram.symmetric_eigenvalues().min() > 1e-3);
        let b = damped_pinv_transpose(&jac, 0.0).unwrap();
        assert_relative_eq!(&b * jac.transpose(), Matrix2::identity(), epsilon = 1e-9);
        let sigma = 0.3;
        let damped = damped_pinv_transpose(&jac, sigma).unwrap();
        let expected = (gram.try_inverse().unwrap() + Matrix2::identity() * sigma * sigma) * &jac;
        assert_relative_eq!(damped, expected, epsilon = 1e-9 * expected.amax().max(1.0));
    }
}

#[test]
fn energy_is_conserved_without_gravity_or_torque() {
    let mut model = RobotModel::desk();
    model.gravity = Vector2::zeros();
    let mut s = JointState::new(
        DVector::from_vec(vec![0.3, 1.1, -0.7]),
        DVector::from_vec(vec![1.0, -0.8, 1.5]),
    );
    let energy = |s: &JointState| 0.5 * s.qd.dot(&(mass_matrix(&model, &s.q) * &s.qd));
    let e0 = energy(&s);
    let zero = DVector::zeros(3);
    let h = 1e-4;
    let accel = |s: &JointState| forward_dynamics(&model, s, &zero, &zero);
    for _ in 0..10_000 {
        // classic RK4 on (q, q̇)
        let k1 = (s.qd.clone(), accel(&s));
        let s2 = JointState::new(&s.q + &k1.0 * (h / 2.0), &s.qd + &k1.1 * (h / 2.0));
        let k2 = (s2.qd.clone(), accel(&s2));
        let s3 = JointState::new(&s.q + &k2.0 * (h / 2.0), &s.qd + &k2.1 * (h / 2.0));
        let k3 = (s3.qd.clone(), accel(&s3));
        let s4 = JointState::new(&s.q + &k3.0 * h, &s.qd + &k3.1 * h);
        let k4 = (s4.qd.clone(), accel(&s4));
        s.q += (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0);
        s.qd += (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (h / 6.0);
    }
    assert_relative_eq!(energy(&s), e0, max_relative = 1e-8);
}
