//! Braking rollouts and joint position/velocity viability bounds on
//! the next control step's acceleration.

use nalgebra::DVector;

use crate::halfspace::HalfSpace;
use crate::kinematics::{JointState, RobotModel};
use crate::scalar::{lit, sign, Real};

/// Slack (rad/s²) under which an empty interval is treated as a point.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BrakingSample<T: Real = f64> {
    pub t: T,
    pub q: DVector<T>,
    pub qd: DVector<T>,
}

/// Trajectory under maximum per-joint deceleration until rest.
#[derive(Debug, Clone, PartialEq)]
pub struct BrakingTrajectory<T: Real = f64> {
    pub samples: Vec<BrakingSample<T>>,
    /// Exact braking time `max_k |q̇_k(0)| / q̈_max,k`.
    pub t_brake: T,
}

impl<T: Real> BrakingTrajectory<T> {
    pub fn final_state(&self) -> &BrakingSample<T> {
        self.samples
            .last()
            .expect("rollout has at least one sample")
    }
}

/// Acceleration box for the next control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ViableAccelBox<T: Real = f64> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
    pub feasible: Vec<bool>,
}

impl<T: Real> ViableAccelBox<T> {
    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().all(|&f| f)
    }

    pub fn contains(&self, qdd: &DVector<T>, tol: T) -> bool {
        (0..qdd.len()).all(|i| qdd[i] >= self.lower[i] - tol && qdd[i] <= self.upper[i] + tol)
    }

    /// Unconstrained hardware box `[−q̈_max, q̈_max]`.
    pub fn hardware(model: &RobotModel<T>) -> Self {
        Self {
            lower: -model.qdd_max.clone(),
            upper: model.qdd_max.clone(),
            feasible: vec![true; model.dof()],
        }
    }
}

/// Per-joint maximum deceleration `−q̈_max·sign(q̇)`.
pub fn braking_accel<T: Real>(model: &RobotModel<T>, qd: &DVector<T>) -> DVector<T> {
    DVector::from_fn(qd.len(), |i, _| -model.qdd_max[i] * sign(qd[i]))
}

/// Braking over one control interval: full deceleration unless the joint
/// would stop sooner, in which case exactly `−q̇/dt`.
pub fn braking_accel_step<T: Real>(model: &RobotModel<T>, qd: &DVector<T>, dt: T) -> DVector<T> {
    DVector::from_fn(qd.len(), |i, _| {
        let a = model.qdd_max[i];
        (-qd[i] / dt).max(-a).min(a)
    })
}

/// Rolls out the element-wise braking control with exact constant
/// deceleration kinematics, sampling every `dt_brake` seconds. Each
/// joint is clamped to zero velocity at the instant it stops.
pub fn braking_rollout<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    dt_brake: T,
) -> BrakingTrajectory<T> {
    assert!(dt_brake > T::zero(), "dt_brake must be positive");
    let n = state.dof();
    let half: T = lit(0.5);
    let t_brake = (0..n)
        .map(|k| state.qd[k].abs() / model.qdd_max[k])
        .fold(T::zero(), |a, b| a.max(b));

    let mut q = state.q.clone();
    let mut qd = state.qd.clone();
    let mut t = T::zero();
    let mut samples = vec![BrakingSample {
        t,
        q: q.clone(),
        qd: qd.clone(),
    }];
    while qd.iter().any(|v| *v != T::zero()) {
        for k in 0..n {
            let v = qd[k];
            if v == T::zero() {
                continue;
            }
            let a = model.qdd_max[k];
            if v.abs() <= a * dt_brake {
                q[k] += sign(v) * v * v / (a + a);
                qd[k] = T::zero();
            } else {
                let s = sign(v);
                q[k] += v * dt_brake - s * half * a * dt_brake * dt_brake;
                qd[k] = v - s * a * dt_brake;
            }
        }
        t += dt_brake;
        samples.push(BrakingSample {
            t,
            q: q.clone(),
            qd: qd.clone(),
        });
    }
    BrakingTrajectory { samples, t_brake }
}

/// Largest acceleration satisfying the upper stoppability inequality
/// `q̇ + dt·q̈ ≤ sqrt(2 q̈_max (q⁺ − q − dt·q̇ − ½dt²·q̈))` whenever the
/// next velocity is positive.
fn upper_stoppable_bound<T: Real>(q: T, v: T, q_max: T, a: T, dt: T) -> T {
    let two: T = lit(2.0);
    let zero_next_velocity = -v / dt;
    // dt²·x² + (2dt·v + a·dt²)·x + (v² − 2a(q⁺ − q − dt·v)) ≤ 0, scaled by 1/dt²
    let b = two * v / dt + a;
    let c = (v * v - two * a * (q_max - q - dt * v)) / (dt * dt);
    let disc = b * b - lit::<T>(4.0) * c;
    if disc < T::zero() {
        return zero_next_velocity;
    }
    let sq = disc.sqrt();
    let big = -(b + if b >= T::zero() { sq } else { -sq }) / two;
    let r2 = if big == T::zero() {
        T::zero()
    } else {
        big.max(c / big)
    };
    r2.max(zero_next_velocity)
}

/// Intersection of hardware, velocity, one-step position and
/// stoppability constraints on the next acceleration, per joint.
pub fn joint_limit_accel_bounds<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    dt: T,
) -> ViableAccelBox<T> {
    joint_limit_accel_bounds_with_braking(model, state, dt, &model.qdd_max)
}

/// As [`joint_limit_accel_bounds`], but the stoppability constraint
/// assumes only `braking[k]` of deceleration is available afterwards
/// while the hardware box stays at `±q̈_max`.
pub fn joint_limit_accel_bounds_with_braking<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    dt: T,
    braking: &DVector<T>,
) -> ViableAccelBox<T> {
    assert!(dt > T::zero(), "dt must be positive");
    let n = state.dof();
    let two: T = lit(2.0);
    let tol: T = lit(FEASIBILITY_TOL);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut feasible = vec![true; n];
    for k in 0..n {
        let (q, v) = (state.q[k], state.qd[k]);
        let (qlo, qhi) = (model.q_lower[k], model.q_upper[k]);
        let a = braking[k];
        let vmax = model.qd_max[k];

        let mut lo = -model.qdd_max[k];
        let mut hi = model.qdd_max[k];
        lo = lo.max((-vmax - v) / dt);
        hi = hi.min((vmax - v) / dt);
        lo = lo.max(two * (qlo - q - dt * v) / (dt * dt));
        hi = hi.min(two * (qhi - q - dt * v) / (dt * dt));
        hi = hi.min(upper_stoppable_bound(q, v, qhi, a, dt));
        lo = lo.max(-upper_stoppable_bound(-q, -v, -qlo, a, dt));

        if lo > hi {
            if lo - hi <= tol {
                let mid = (lo + hi) / two;
                lo = mid;
                hi = mid;
            } else {
                feasible[k] = false;
            }
        }
        lower[k] = lo;
        upper[k] = hi;
    }
    ViableAccelBox {
        lower,
        upper,
        feasible,
    }
}

/// `(q, q̇) ∈ F_jnt` and a viable next acceleration exists for every
/// joint.
pub fn is_viable_jnt<T: Real>(model: &RobotModel<T>, state: &JointState<T>, dt: T) -> bool {
    model.in_joint_limits(state) && joint_limit_accel_bounds(model, state, dt).all_feasible()
}

/// Per-joint range of accelerations inside `accel_box` that also satisfy
/// `g·q̈ + b ≥ 0`, i.e. the bounding box of the admissible set. Returns
/// `None` when the intersection is empty.
pub fn admissible_bounds<T: Real>(
    accel_box: &ViableAccelBox<T>,
    halfspace: &HalfSpace<T>,
) -> Option<(DVector<T>, DVector<T>)> {
    let n = accel_box.lower.len();
    let g = &halfspace.normal;
    // max of g·q̈ over the box, per coordinate contribution
    let best = |j: usize| {
        if g[j] >= T::zero() {
            g[j] * accel_box.upper[j]
        } else {
            g[j] * accel_box.lower[j]
        }
    };
    let total: T = (0..n).map(best).fold(T::zero(), |a, b| a + b);
    if total + halfspace.offset < T::zero() {
        return None;
    }
    let mut lower = accel_box.lower.clone();
    let mut upper = accel_box.upper.clone();
    for i in 0..n {
        // g_i q̈_i ≥ −b − max_{j≠i} g_j q̈_j
        let rest = total - best(i);
        let need = -halfspace.offset - rest;
        if g[i] > T::zero() {
            lower[i] = lower[i].max(need / g[i]);
        } else if g[i] < T::zero() {
            upper[i] = upper[i].min(need / g[i]);
        }
    }
    Some((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_dof(q_lo: f64, q_hi: f64, vmax: f64, amax: f64) -> RobotModel {
        let mut m = RobotModel::uniform_rods(&[0.5], &[1.0], &[0.04]);
        m.q_lower[0] = q_lo;
        m.q_upper[0] = q_hi;
        m.qd_max[0] = vmax;
        m.qdd_max[0] = amax;
        m
    }

    #[test]
    fn rest_state_is_single_sample() {
        let model = RobotModel::<f64>::desk();
        let state = JointState::at_rest(DVector::from_vec(vec![0.1, 0.2, 0.3]));
        let traj = braking_rollout(&model, &state, 1e-3);
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.t_brake, 0.0);
    }

    #[test]
    fn single_joint_braking_distance() {
        let model = one_dof(-3.0, 3.0, 2.0, 10.0);
        let state = JointState::new(DVector::from_element(1, 0.0), DVector::from_element(1, 1.0));
        let traj = braking_rollout(&model, &state, 1e-3);
        assert_relative_eq!(traj.t_brake, 0.1, epsilon = 1e-12);
        let last = traj.final_state();
        assert_relative_eq!(last.q[0], 0.05, epsilon = 1e-12);
        assert_eq!(last.qd[0], 0.0);
        assert!((last.t - 0.1).abs() <= 1e-3 + 1e-12);
    }

    #[test]
    fn joints_stop_independently() {
        let mut model = RobotModel::<f64>::uniform_rods(&[0.5, 0.5], &[1.0, 1.0], &[0.04, 0.04]);
        model.qdd_max = DVector::from_element(2, 10.0);
        let state = JointState::new(DVector::zeros(2), DVector::from_vec(vec![1.0, -0.5]));
        let traj = braking_rollout(&model, &state, 1e-3);
        assert_relative_eq!(traj.t_brake, 0.1, epsilon = 1e-12);
        let stop = |k: usize| {
            traj.samples
                .iter()
                .find(|s| s.qd[k] == 0.0)
                .map(|s| s.t)
                .unwrap()
        };
        assert!((stop(1) - 0.05).abs() <= 1e-3 + 1e-12);
        assert!((stop(0) - 0.1).abs() <= 1e-3 + 1e-12);
        assert_relative_eq!(traj.final_state().q[1], -0.0125, epsilon = 1e-12);
    }

    #[test]
    fn far_from_limits_gives_hardware_box() {
        let model = RobotModel::<f64>::desk();
        let state = JointState::new(
            DVector::from_vec(vec![0.0, 0.5, -0.5]),
            DVector::from_vec(vec![0.1, 0.0, -0.1]),
        );
        let bounds = joint_limit_accel_bounds(&model, &state, 5e-3);
        assert!(bounds.all_feasible());
        for k in 0..3 {
            assert_eq!(bounds.lower[k], -10.0);
            assert_eq!(bounds.upper[k], 10.0);
        }
    }

    #[test]
    fn at_upper_limit_at_rest() {
        let model = one_dof(-1.0, 1.0, 2.0, 10.0);
        let state = JointState::at_rest(DVector::from_element(1, 1.0));
        let bounds = joint_limit_accel_bounds(&model, &state, 5e-3);
        assert!(bounds.all_feasible());
        assert!(bounds.upper[0] <= 0.0);
    }

    #[test]
    fn cannot_stop_in_time() {
        let model = one_dof(-1.0, 1.0, 2.0, 10.0);
        // stopping distance 0.2 rad, only 0.15 left
        let state = JointState::new(
            DVector::from_element(1, 0.85),
            DVector::from_element(1, 2.0),
        );
        assert!(!is_viable_jnt(&model, &state, 5e-3));
        let state = JointState::at_rest(DVector::from_element(1, 0.0));
        assert!(is_viable_jnt(&model, &state, 5e-3));
        let state = JointState::at_rest(DVector::from_element(1, 1.2));
        assert!(!is_viable_jnt(&model, &state, 5e-3));
    }

    #[test]
    fn admissible_bounds_single_halfspace() {
        let accel_box = ViableAccelBox {
            lower: DVector::from_vec(vec![-10.0, -10.0]),
            upper: DVector::from_vec(vec![10.0, 10.0]),
            feasible: vec![true; 2],
        };
        // q̈0 + q̈1 ≥ 5
        let hs = HalfSpace::new(
            DVector::from_vec(vec![1.0, 1.0]),
            -5.0,
            crate::halfspace::ConstraintKind::Eca,
        );
        let (lo, hi) = admissible_bounds(&accel_box, &hs).unwrap();
        assert_relative_eq!(lo[0], -5.0);
        assert_relative_eq!(lo[1], -5.0);
        assert_relative_eq!(hi[0], 10.0);
        let hs = HalfSpace::new(
            DVector::from_vec(vec![1.0, 1.0]),
            -25.0,
            crate::halfspace::ConstraintKind::Eca,
        );
        assert!(admissible_bounds(&accel_box, &hs).is_none());
    }
}
