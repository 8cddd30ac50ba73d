//! Torque QP that tracks a task-space force under joint-limit, torque and
//! collision-avoidance constraints.

pub mod solver;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halfspace::HalfSpace;
use crate::viability::ViableAccelBox;
pub use solver::{solve_dense, DenseQp, KktResiduals, QpSolution, SolverOptions};

/// Origin of one inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    AccelLower(usize),
    AccelUpper(usize),
    TorqueLower(usize),
    TorqueUpper(usize),
    Sca,
    Eca(u32),
    Slack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    /// Elementwise braking torque replaced an infeasible QP.
    FallbackBraking,
    /// Braking torque had to be clipped to the torque limits.
    Clamped,
}

/// One control-step problem in torque space. Accelerations are affine in
/// torque through `q̈ = M⁻¹(τ − h)` with `h = C q̇ + G`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueQp {
    /// `B` (2×n), maps joint torque to task force.
    pub task_map: Matrix2xX<f64>,
    pub task_force: Vector2<f64>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau_ref: DVector<f64>,
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub accel_box: ViableAccelBox<f64>,
    pub tau_min: DVector<f64>,
    pub tau_max: DVector<f64>,
    /// Hard constraint.
    pub sca: Option<HalfSpace<f64>>,
    /// Softened by the shared slack `δ`.
    pub eca: Vec<(u32, HalfSpace<f64>)>,
    /// Elementwise braking acceleration used by the fallback.
    pub braking: DVector<f64>,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltQp {
    pub qp: DenseQp,
    pub rows: Vec<RowKind>,
    /// Number of torque variables; a slack follows when ECA rows exist.
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub active: Vec<RowKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: DVector<f64>,
    pub delta: f64,
    pub status: QpStatus,
    pub eca_dropped: bool,
    pub active: Vec<RowKind>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub warm: Option<WarmStart>,
}

impl TorqueQp {
    pub fn dof(&self) -> usize {
        self.tau_ref.len()
    }

    fn mass_inverse(&self) -> Result<DMatrix<f64>> {
        self.mass
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::InvalidArgument("inertia matrix is not positive definite".into()))
    }

    pub fn build(&self) -> Result<BuiltQp> {
        self.build_with(true)
    }

    fn build_with(&self, with_eca: bool) -> Result<BuiltQp> {
        let n = self.dof();
        let eca: &[(u32, HalfSpace<f64>)] = if with_eca { &self.eca } else { &[] };
        let slack = !eca.is_empty();
        let m = n + usize::from(slack);
        let minv = self.mass_inverse()?;
        let drift = &minv * &self.bias;

        let mut h = DMatrix::zeros(m, m);
        let btb = self.task_map.tr_mul(&self.task_map);
        h.view_mut((0, 0), (n, n))
            .copy_from(&(btb + DMatrix::identity(n, n) * (2.0 * self.alpha1)));
        let mut c = DVector::zeros(m);
        c.rows_mut(0, n).copy_from(
            &(-(self.task_map.tr_mul(&self.task_force)) - &self.tau_ref * (2.0 * self.alpha1)),
        );
        if slack {
            h[(n, n)] = 2.0 * self.alpha2;
        }

        let mut rows: Vec<(RowKind, DVector<f64>, f64)> = Vec::new();
        for i in 0..n {
            let mi = minv.row(i).transpose();
            if self.accel_box.lower[i].is_finite() {
                rows.push((
                    RowKind::AccelLower(i),
                    mi.clone(),
                    self.accel_box.lower[i] + drift[i],
                ));
            }
            if self.accel_box.upper[i].is_finite() {
                rows.push((
                    RowKind::AccelUpper(i),
                    -mi,
                    -self.accel_box.upper[i] - drift[i],
                ));
            }
        }
        for i in 0..n {
            let e = DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 });
            if self.tau_min[i].is_finite() {
                rows.push((RowKind::TorqueLower(i), e.clone(), self.tau_min[i]));
            }
            if self.tau_max[i].is_finite() {
                rows.push((RowKind::TorqueUpper(i), -e, -self.tau_max[i]));
            }
        }
        let accel_row = |kind: RowKind, hs: &HalfSpace<f64>| {
            let hs = if self.normalize {
                hs.normalized()
            } else {
                hs.clone()
            };
            // g·M⁻¹(τ − h) + b ≥ 0
            let a = minv.tr_mul(&hs.normal);
            let b = -hs.offset + hs.normal.dot(&drift);
            (kind, a, b)
        };
        if let Some(hs) = &self.sca {
            rows.push(accel_row(RowKind::Sca, hs));
        }
        let eca_start = rows.len();
        for (id, hs) in eca {
            rows.push(accel_row(RowKind::Eca(*id), hs));
        }
        let eca_end = rows.len();

        let mut kinds = Vec::with_capacity(rows.len() + 1);
        let total = rows.len() + usize::from(slack);
        let mut a = DMatrix::zeros(total, m);
        let mut b = DVector::zeros(total);
        for (r, (kind, coeffs, rhs)) in rows.into_iter().enumerate() {
            a.view_mut((r, 0), (1, n)).copy_from(&coeffs.transpose());
            if (eca_start..eca_end).contains(&r) {
                a[(r, n)] = 1.0;
            }
            b[r] = rhs;
            kinds.push(kind);
        }
        if slack {
            a[(total - 1, n)] = 1.0;
            kinds.push(RowKind::Slack);
        }
        Ok(BuiltQp {
            qp: DenseQp::new(h, c, a, b),
            rows: kinds,
            dof: n,
        })
    }

    /// `M·clamp(braking, box) + h`, clipped to the torque limits.
    pub fn braking_torque(&self) -> (DVector<f64>, bool) {
        let n = self.dof();
        let acc = DVector::from_fn(n, |i, _| {
            let a = self.braking[i];
            if self.accel_box.feasible[i] {
                a.max(self.accel_box.lower[i]).min(self.accel_box.upper[i])
            } else {
                a
            }
        });
        let raw = &self.mass * acc + &self.bias;
        let tau = DVector::from_fn(n, |i, _| raw[i].max(self.tau_min[i]).min(self.tau_max[i]));
        let clipped = (&tau - &raw).amax() > 0.0;
        (tau, clipped)
    }

    fn attempt(
        &self,
        with_eca: bool,
        warm: Option<&WarmStart>,
        opts: &SolverOptions,
    ) -> Result<ControlOutput> {
        let built = self.build_with(with_eca)?;
        let warm_rows: Option<Vec<usize>> = warm.map(|w| {
            w.active
                .iter()
                .filter_map(|k| built.rows.iter().position(|r| r == k))
                .collect()
        });
        let sol = solve_dense(&built.qp, warm_rows.as_deref(), opts)?;
        let n = built.dof;
        let active: Vec<RowKind> = sol.active.iter().map(|&i| built.rows[i]).collect();
        Ok(ControlOutput {
            tau: sol.z.rows(0, n).into_owned(),
            delta: if sol.z.len() > n { sol.z[n] } else { 0.0 },
            status: QpStatus::Optimal,
            eca_dropped: false,
            warm: Some(WarmStart {
                active: active.clone(),
            }),
            active,
            kkt: sol.kkt,
            iterations: sol.iterations,
        })
    }

    /// Full problem, then without ECA rows, then elementwise braking.
    pub fn solve(&self, warm: Option<&WarmStart>, opts: &SolverOptions) -> ControlOutput {
        if self.accel_box.all_feasible() {
            if let Ok(out) = self.attempt(true, warm, opts) {
                return out;
            }
            if !self.eca.is_empty() {
                if let Ok(mut out) = self.attempt(false, warm, opts) {
                    out.eca_dropped = true;
                    return out;
                }
            }
        }
        let (tau, clipped) = self.braking_torque();
        ControlOutput {
            tau,
            delta: 0.0,
            status: if clipped {
                QpStatus::Clamped
            } else {
                QpStatus::FallbackBraking
            },
            eca_dropped: !self.eca.is_empty(),
            active: Vec::new(),
            kkt: KktResiduals::default(),
            iterations: 0,
            warm: None,
        }
    }
}

/// Task force actually produced by a torque, `B τ`.
pub fn applied_task_force(task_map: &Matrix2xX<f64>, tau: &DVector<f64>) -> Vector2<f64> {
    task_map * tau
}

/// Minimizer of `½‖J^{-T}τ − F_c‖²` subject to `aᵀτ ≤ b`:
/// `τ₀ = JᵀF_c` if feasible, otherwise `τ₀` projected onto the boundary in
/// the `(JᵀJ)⁻¹` metric.
pub fn closed_form_single_constraint(
    f_c: &Vector2<f64>,
    jac: &Matrix2xX<f64>,
    a: &DVector<f64>,
    b: f64,
) -> Result<DVector<f64>> {
    let tau0 = jac.tr_mul(f_c);
    let excess = a.dot(&tau0) - b;
    if excess <= 0.0 {
        return Ok(tau0);
    }
    let ja = jac * a;
    let denom = ja.norm_squared();
    if denom <= f64::EPSILON * a.norm_squared() * jac.norm_squared() {
        return Err(Error::InvisibleConstraint);
    }
    Ok(tau0 - jac.tr_mul(&ja) * (excess / denom))
}

/// Projector `Ā = 𝕀 − (Ja)(Ja)ᵀ/‖Ja‖²` and offset `b·Ja/‖Ja‖²`.
pub fn task_projector(
    jac: &Matrix2xX<f64>,
    a: &DVector<f64>,
    b: f64,
) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    let ja = jac * a;
    let denom = ja.norm_squared();
    if denom == 0.0 {
        return Err(Error::InvisibleConstraint);
    }
    Ok((
        Matrix2::identity() - ja * ja.transpose() / denom,
        ja * (b / denom),
    ))
}

/// Task force equivalent to the active single-constraint solution,
/// `ĀF_c + b·Ja/‖Ja‖²`.
pub fn equivalent_task_force(
    f_c: &Vector2<f64>,
    jac: &Matrix2xX<f64>,
    a: &DVector<f64>,
    b: f64,
) -> Result<Vector2<f64>> {
    let (proj, offset) = task_projector(jac, a, b)?;
    Ok(proj * f_c + offset)
}
