//! Task-space dynamical-system motion plan and the velocity-based
//! impedance force that tracks it passively.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::kinematics::{
    damped_pinv_transpose, forward_kinematics, gravity_torque, jacobian, sym2_eigenvalues,
    JointState, RobotModel,
};
use crate::scalar::{lit, Real};

/// Linear attractor `f(x) = 2P(x − x*)` with `P` symmetric negative
/// definite. Its potential is `𝒫(x) = −(x − x*)ᵀP(x − x*)` so that
/// `f = −∇𝒫`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorField<T: Real = f64> {
    pub x_star: Vector2<T>,
    pub gain: Matrix2<T>,
}

/// Anisotropic damping gains: `lambda1` along the desired velocity,
/// `lambda2` across it. Below `eta_f` the field direction is undefined
/// and damping falls back to `lambda2·𝕀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingSpec<T: Real = f64> {
    pub lambda1: T,
    pub lambda2: T,
    pub eta_f: T,
}

impl<T: Real> Default for DampingSpec<T> {
    fn default() -> Self {
        Self {
            lambda1: lit(40.0),
            lambda2: lit(20.0),
            eta_f: lit(1e-4),
        }
    }
}

impl<T: Real> DampingSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < T::zero() || self.lambda2 < T::zero() || self.eta_f <= T::zero() {
            return Err(Error::InvalidArgument(
                "damping gains must be non-negative and eta_f positive".into(),
            ));
        }
        Ok(())
    }
}

impl<T: Real> AttractorField<T> {
    /// Isotropic field `P = −k 𝕀`.
    pub fn isotropic(x_star: Vector2<T>, k: T) -> Self {
        Self {
            x_star,
            gain: Matrix2::identity() * (-k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.gain - self.gain.transpose()).amax() > lit(1e-12) {
            return Err(Error::InvalidArgument(
                "field gain must be symmetric".into(),
            ));
        }
        let (_, hi) = sym2_eigenvalues(&self.gain);
        if hi >= T::zero() {
            return Err(Error::InvalidArgument(
                "field gain must be negative definite".into(),
            ));
        }
        Ok(())
    }

    /// Scalar potential `𝒫(x) ≥ 0`, zero at the attractor.
    pub fn potential(&self, x: &Vector2<T>) -> T {
        let e = x - self.x_star;
        -(e.transpose() * self.gain * e)[(0, 0)]
    }
}

pub fn ds_velocity<T: Real>(field: &AttractorField<T>, x: &Vector2<T>) -> Vector2<T> {
    field.gain * (x - field.x_star) * lit::<T>(2.0)
}

/// Orthonormal frame `V = [v1 v2]` with `v1 = f/‖f‖`, or `None` when the
/// field is too small to define a direction.
pub fn damping_frame<T: Real>(
    field: &AttractorField<T>,
    spec: &DampingSpec<T>,
    x: &Vector2<T>,
) -> Option<Matrix2<T>> {
    let f = ds_velocity(field, x);
    let norm = f.norm();
    if norm < spec.eta_f {
        return None;
    }
    let v1 = f / norm;
    let v2 = Vector2::new(-v1.y, v1.x);
    Some(Matrix2::from_columns(&[v1, v2]))
}

/// `D(x) = V Λ Vᵀ`.
pub fn damping_matrix<T: Real>(
    field: &AttractorField<T>,
    spec: &DampingSpec<T>,
    x: &Vector2<T>,
) -> Matrix2<T> {
    match damping_frame(field, spec, x) {
        Some(frame) => {
            let lambda = Matrix2::new(spec.lambda1, T::zero(), T::zero(), spec.lambda2);
            frame * lambda * frame.transpose()
        }
        None => Matrix2::identity() * spec.lambda2,
    }
}

/// Task-space gravity `G_x = Ĵ^{-T} G(q)` using the damped operator.
pub fn task_gravity<T: Real>(
    model: &RobotModel<T>,
    q: &nalgebra::DVector<T>,
    sigma: T,
) -> Result<Vector2<T>> {
    let op = damped_pinv_transpose(&jacobian(model, q), sigma)?;
    Ok(op * gravity_torque(model, q))
}

/// `F_c = G_x − D(x)(ẋ − f(x))`.
pub fn passive_force<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    field: &AttractorField<T>,
    spec: &DampingSpec<T>,
    sigma: T,
) -> Result<Vector2<T>> {
    let x = forward_kinematics(model, &state.q);
    let jac = jacobian(model, &state.q);
    let xd = &jac * &state.qd;
    let gx = damped_pinv_transpose(&jac, sigma)? * gravity_torque(model, &state.q);
    let d = damping_matrix(field, spec, &x);
    Ok(gx - d * (xd - ds_velocity(field, &x)))
}
