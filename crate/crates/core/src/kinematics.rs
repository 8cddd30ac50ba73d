//! Planar serial-chain model: forward kinematics, Jacobians and
//! Lagrangian rigid-body dynamics.
//!
//! Joint `i` rotates link `i` about the distal end of link `i - 1`
//! (link 0 pivots at the origin). Absolute link angles are cumulative
//! sums of joint angles.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2xX, Vector2};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Regularization added to `J Jᵀ` when it is numerically singular.
pub const TASK_GRAM_EPSILON: f64 = 1e-8;

/// Smallest eigenvalue of `J Jᵀ` (m²) below which the Gram matrix is
/// treated as singular.
pub const TASK_GRAM_SINGULAR: f64 = 1e-6;

/// Kinematic, inertial and limit description of a planar n-link arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel<T: Real = f64> {
    pub link_lengths: DVector<T>,
    pub link_masses: DVector<T>,
    /// Distance of each link's center of mass from its proximal joint.
    pub link_com_offsets: DVector<T>,
    /// Rotational inertia about the center of mass.
    pub link_inertias: DVector<T>,
    /// Capsule radius of each link for collision geometry.
    pub link_radii: DVector<T>,
    pub gravity: Vector2<T>,
    pub q_lower: DVector<T>,
    pub q_upper: DVector<T>,
    pub qd_max: DVector<T>,
    pub qdd_max: DVector<T>,
    pub tau_min: DVector<T>,
    pub tau_max: DVector<T>,
}

/// Augmented joint state `(q, q̇)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState<T: Real = f64> {
    pub q: DVector<T>,
    pub qd: DVector<T>,
}

/// Inertia matrix, Coriolis matrix and gravity torque at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms<T: Real = f64> {
    pub mass: DMatrix<T>,
    pub coriolis: DMatrix<T>,
    pub gravity: DVector<T>,
}

impl<T: Real> JointState<T> {
    pub fn new(q: DVector<T>, qd: DVector<T>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: DVector<T>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

impl<T: Real> RobotModel<T> {
    /// Chain of uniform rods: center of mass at mid-length and inertia
    /// `m l² / 12`. Limits default to ±π position, 2 rad/s, 10 rad/s²
    /// and ±100 N·m and can be overwritten afterwards.
    pub fn uniform_rods(lengths: &[f64], masses: &[f64], radii: &[f64]) -> Self {
        assert_eq!(lengths.len(), masses.len());
        assert_eq!(lengths.len(), radii.len());
        let n = lengths.len();
        let v = |f: &dyn Fn(usize) -> f64| DVector::from_fn(n, |i, _| lit::<T>(f(i)));
        Self {
            link_lengths: v(&|i| lengths[i]),
            link_masses: v(&|i| masses[i]),
            link_com_offsets: v(&|i| 0.5 * lengths[i]),
            link_inertias: v(&|i| masses[i] * lengths[i] * lengths[i] / 12.0),
            link_radii: v(&|i| radii[i]),
            gravity: Vector2::new(T::zero(), lit(-9.81)),
            q_lower: v(&|_| -std::f64::consts::PI),
            q_upper: v(&|_| std::f64::consts::PI),
            qd_max: v(&|_| 2.0),
            qdd_max: v(&|_| 10.0),
            tau_min: v(&|_| -100.0),
            tau_max: v(&|_| 100.0),
        }
    }

    /// The 3-DoF desk arm used by the bundled scenarios.
    pub fn desk() -> Self {
        let mut model = Self::uniform_rods(&[0.4, 0.35, 0.25], &[2.0, 1.5, 1.0], &[0.04; 3]);
        let n = 3;
        model.q_lower = DVector::from_element(n, lit(-2.8));
        model.q_upper = DVector::from_element(n, lit(2.8));
        model.tau_min = DVector::from_vec(vec![lit(-80.0), lit(-40.0), lit(-15.0)]);
        model.tau_max = -model.tau_min.clone();
        model
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    /// Sum of link lengths.
    pub fn reach(&self) -> T {
        self.link_lengths.sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        let vectors = [
            ("link_masses", &self.link_masses),
            ("link_com_offsets", &self.link_com_offsets),
            ("link_inertias", &self.link_inertias),
            ("link_radii", &self.link_radii),
            ("q_lower", &self.q_lower),
            ("q_upper", &self.q_upper),
            ("qd_max", &self.qd_max),
            ("qdd_max", &self.qdd_max),
            ("tau_min", &self.tau_min),
            ("tau_max", &self.tau_max),
        ];
        if n == 0 {
            return Err(Error::InvalidModel("robot has no links".into()));
        }
        for (name, v) in vectors {
            if v.len() != n {
                return Err(Error::InvalidModel(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} is not finite")));
            }
        }
        let positive = |name: &str, v: &DVector<T>| {
            if v.iter().all(|&x| x > T::zero()) {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!(
                    "{name} must be strictly positive"
                )))
            }
        };
        positive("link_lengths", &self.link_lengths)?;
        positive("link_masses", &self.link_masses)?;
        positive("link_radii", &self.link_radii)?;
        positive("qd_max", &self.qd_max)?;
        positive("qdd_max", &self.qdd_max)?;
        // point-mass links are allowed
        if self.link_inertias.iter().any(|&x| x < T::zero()) {
            return Err(Error::InvalidModel(
                "link_inertias must be non-negative".into(),
            ));
        }
        for i in 0..n {
            if self.q_lower[i] >= self.q_upper[i] {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: q_lower >= q_upper"
                )));
            }
            if self.tau_min[i] >= self.tau_max[i] {
                return Err(Error::InvalidModel(format!(
                    "joint {i}: tau_min >= tau_max"
                )));
            }
        }
        Ok(())
    }

    /// Whether `(q, q̇)` lies in the joint position/velocity box.
    pub fn in_joint_limits(&self, state: &JointState<T>) -> bool {
        (0..self.dof()).all(|i| {
            state.q[i] >= self.q_lower[i]
                && state.q[i] <= self.q_upper[i]
                && state.qd[i].abs() <= self.qd_max[i]
        })
    }

    /// Copy with casted scalar type.
    pub fn cast<U: Real>(&self) -> RobotModel<U> {
        let c = |v: &DVector<T>| v.map(|x| lit::<U>(crate::scalar::to_f64(x)));
        RobotModel {
            link_lengths: c(&self.link_lengths),
            link_masses: c(&self.link_masses),
            link_com_offsets: c(&self.link_com_offsets),
            link_inertias: c(&self.link_inertias),
            link_radii: c(&self.link_radii),
            gravity: self.gravity.map(|x| lit::<U>(crate::scalar::to_f64(x))),
            q_lower: c(&self.q_lower),
            q_upper: c(&self.q_upper),
            qd_max: c(&self.qd_max),
            qdd_max: c(&self.qdd_max),
            tau_min: c(&self.tau_min),
            tau_max: c(&self.tau_max),
        }
    }
}

/// Absolute angle of each link.
pub fn link_angles<T: Real>(q: &DVector<T>) -> Vec<T> {
    let mut acc = T::zero();
    q.iter()
        .map(|&qi| {
            acc += qi;
            acc
        })
        .collect()
}

/// Positions of every joint followed by the tip: `n + 1` points.
pub fn joint_positions<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Vec<Vector2<T>> {
    let angles = link_angles(q);
    let mut points = Vec::with_capacity(q.len() + 1);
    let mut p = Vector2::zeros();
    points.push(p);
    for (i, th) in angles.iter().enumerate() {
        p += Vector2::new(th.cos(), th.sin()) * model.link_lengths[i];
        points.push(p);
    }
    points
}

/// End-effector position.
pub fn forward_kinematics<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Vector2<T> {
    *joint_positions(model, q)
        .last()
        .expect("at least the base point")
}

/// Jacobian of a point fixed at distance `offset` along link `link`.
pub fn point_jacobian<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
    link: usize,
    offset: T,
) -> Matrix2xX<T> {
    let n = q.len();
    let angles = link_angles(q);
    let mut jac = Matrix2xX::zeros(n);
    // accumulate from the distal link towards the base
    let mut col = Vector2::zeros();
    for m in (0..=link).rev() {
        let r = if m == link {
            offset
        } else {
            model.link_lengths[m]
        };
        col += Vector2::new(-angles[m].sin(), angles[m].cos()) * r;
        jac.set_column(m, &col);
    }
    jac
}

/// End-effector Jacobian `∂x/∂q` (2×n).
pub fn jacobian<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Matrix2xX<T> {
    let last = q.len() - 1;
    point_jacobian(model, q, last, model.link_lengths[last])
}

/// Center-of-mass Jacobians of every link together with their partial
/// derivatives with respect to each joint: `djac[i][k] = ∂Jv_i/∂q_k`.
fn com_jacobians<T: Real>(
    model: &RobotModel<T>,
    q: &DVector<T>,
) -> (Vec<Matrix2xX<T>>, Vec<Vec<Matrix2xX<T>>>) {
    let n = q.len();
    let angles = link_angles(q);
    let mut jacs = Vec::with_capacity(n);
    let mut djacs = Vec::with_capacity(n);
    for i in 0..n {
        let radius = |m: usize| {
            if m == i {
                model.link_com_offsets[i]
            } else {
                model.link_lengths[m]
            }
        };
        let mut jac = Matrix2xX::zeros(n);
        let mut djac = vec![Matrix2xX::zeros(n); n];
        for j in 0..=i {
            let mut col = Vector2::zeros();
            for m in j..=i {
                col += Vector2::new(-angles[m].sin(), angles[m].cos()) * radius(m);
            }
            jac.set_column(j, &col);
            for (k, dj) in djac.iter_mut().enumerate().take(i + 1) {
                let mut dcol = Vector2::zeros();
                for m in j.max(k)..=i {
                    dcol -= Vector2::new(angles[m].cos(), angles[m].sin()) * radius(m);
                }
                dj.set_column(j, &dcol);
            }
        }
        jacs.push(jac);
        djacs.push(djac);
    }
    (jacs, djacs)
}

/// Joint-space inertia matrix `M(q)`.
pub fn mass_matrix<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> DMatrix<T> {
    let n = q.len();
    let (jacs, _) = com_jacobians(model, q);
    let mut mass = DMatrix::zeros(n, n);
    for (i, jac) in jacs.iter().enumerate() {
        mass += jac.transpose() * jac * model.link_masses[i];
        // angular part: Jω_i = [1 … 1 (j ≤ i), 0 …]
        for a in 0..=i {
            for b in 0..=i {
                mass[(a, b)] += model.link_inertias[i];
            }
        }
    }
    mass
}

/// Gravity torque `G(q) = ∂U/∂q`.
pub fn gravity_torque<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> DVector<T> {
    let (jacs, _) = com_jacobians(model, q);
    let mut g = DVector::zeros(q.len());
    for (i, jac) in jacs.iter().enumerate() {
        g -= jac.transpose() * model.gravity * model.link_masses[i];
    }
    g
}

/// `M(q)`, Christoffel-symbol `C(q, q̇)` and `G(q)`.
pub fn dynamics_terms<T: Real>(model: &RobotModel<T>, state: &JointState<T>) -> DynamicsTerms<T> {
    let q = &state.q;
    let n = q.len();
    let (jacs, djacs) = com_jacobians(model, q);

    let mut mass = DMatrix::zeros(n, n);
    let mut gravity = DVector::zeros(n);
    // dmass[k] = ∂M/∂q_k
    let mut dmass = vec![DMatrix::zeros(n, n); n];
    for (i, jac) in jacs.iter().enumerate() {
        let m = model.link_masses[i];
        mass += jac.transpose() * jac * m;
        for a in 0..=i {
            for b in 0..=i {
                mass[(a, b)] += model.link_inertias[i];
            }
        }
        gravity -= jac.transpose() * model.gravity * m;
        for (k, dj) in djacs[i].iter().enumerate() {
            let prod = dj.transpose() * jac;
            dmass[k] += (&prod + prod.transpose()) * m;
        }
    }

    let half: T = lit(0.5);
    let mut coriolis = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut c = T::zero();
            for k in 0..n {
                let christoffel = half * (dmass[k][(i, j)] + dmass[j][(i, k)] - dmass[i][(j, k)]);
                c += christoffel * state.qd[k];
            }
            coriolis[(i, j)] = c;
        }
    }

    DynamicsTerms {
        mass,
        coriolis,
        gravity,
    }
}

/// `q̈ = M⁻¹(τ_c + τ_ext − C q̇ − G)`.
pub fn forward_dynamics<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    tau_c: &DVector<T>,
    tau_ext: &DVector<T>,
) -> DVector<T> {
    let terms = dynamics_terms(model, state);
    accel_from_terms(&terms, &state.qd, &(tau_c + tau_ext))
}

/// Acceleration from precomputed dynamics terms and total torque.
pub fn accel_from_terms<T: Real>(
    terms: &DynamicsTerms<T>,
    qd: &DVector<T>,
    tau: &DVector<T>,
) -> DVector<T> {
    let rhs = tau - &terms.coriolis * qd - &terms.gravity;
    let chol = terms
        .mass
        .clone()
        .cholesky()
        .expect("inertia matrix of a chain with positive masses is positive definite");
    chol.solve(&rhs)
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym2_eigenvalues<T: Real>(m: &Matrix2<T>) -> (T, T) {
    let half: T = lit(0.5);
    let mean = half * (m[(0, 0)] + m[(1, 1)]);
    let diff = half * (m[(0, 0)] - m[(1, 1)]);
    let off = half * (m[(0, 1)] + m[(1, 0)]);
    let r = (diff * diff + off * off).sqrt();
    (mean - r, mean + r)
}

/// Damped operator `Ĵᵀ = ((J Jᵀ)⁻¹ + σ² 𝕀) J` (2×n) mapping joint torque
/// to task force.
///
/// `(J Jᵀ)⁻¹` is replaced by `(J Jᵀ + ε𝕀)⁻¹` near singular
/// configurations; with `sigma = 0` a singular Gram matrix is an error.
pub fn damped_pinv_transpose<T: Real>(jac: &Matrix2xX<T>, sigma: T) -> Result<Matrix2xX<T>> {
    let gram: Matrix2<T> = jac * jac.transpose();
    let (lo, _) = sym2_eigenvalues(&gram);
    let singular = lo < lit(TASK_GRAM_SINGULAR);
    if singular && sigma == T::zero() {
        return Err(Error::SingularTaskInertia);
    }
    let reg = if singular {
        gram + Matrix2::identity() * lit::<T>(TASK_GRAM_EPSILON)
    } else {
        gram
    };
    let inv = reg.try_inverse().ok_or(Error::SingularTaskInertia)?;
    Ok((inv + Matrix2::identity() * (sigma * sigma)) * jac)
}
