//! Learned self-collision viability score `Γ(q, q̇) = ℓ1 − ℓ2` and the
//! acceleration half-space that keeps it from decreasing.

pub mod dataset;
pub mod mlp;
pub mod train;

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio::{put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::halfspace::{ConstraintKind, HalfSpace};
use crate::kinematics::{JointState, RobotModel};
use mlp::Mlp;

pub use dataset::{generate_sca_dataset, read_dataset, write_dataset, LabeledState};
pub use train::{select_threshold, train_sca, Confusion, TrainConfig, TrainReport};

const MAGIC: &[u8; 4] = b"SCA1";

/// Affine map of `(q, q̇)` onto `[−1, 1]^{2n}` from the joint limits.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub center: DVector<f64>,
    pub half_width: DVector<f64>,
}

impl InputScaling {
    pub fn from_limits(model: &RobotModel) -> Self {
        let n = model.dof();
        let center = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                0.5 * (model.q_lower[i] + model.q_upper[i])
            } else {
                0.0
            }
        });
        let half_width = DVector::from_fn(2 * n, |i, _| {
            if i < n {
                0.5 * (model.q_upper[i] - model.q_lower[i])
            } else {
                model.qd_max[i - n]
            }
        });
        Self { center, half_width }
    }

    pub fn apply(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        let n = q.len();
        DVector::from_fn(2 * n, |i, _| {
            let z = if i < n { q[i] } else { qd[i - n] };
            (z - self.center[i]) / self.half_width[i]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaModel {
    pub net: Mlp<f64>,
    pub scaling: InputScaling,
    pub gamma_thr: f64,
    pub epsilon_sca: f64,
}

/// `Γ` with its input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaEval {
    pub gamma: f64,
    pub d_q: DVector<f64>,
    pub d_qd: DVector<f64>,
}

impl ScaModel {
    pub fn dof(&self) -> usize {
        self.scaling.center.len() / 2
    }

    pub fn gamma(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let y = self.net.forward(&self.scaling.apply(q, qd));
        y[0] - y[1]
    }

    pub fn gamma_with_grad(&self, state: &JointState) -> GammaEval {
        let n = self.dof();
        let c = DVector::from_vec(vec![1.0, -1.0]);
        let (y, g) = self
            .net
            .forward_with_input_grad(&self.scaling.apply(&state.q, &state.qd), &c);
        let grad = g.component_div(&self.scaling.half_width);
        GammaEval {
            gamma: y[0] - y[1],
            d_q: grad.rows(0, n).into_owned(),
            d_qd: grad.rows(n, n).into_owned(),
        }
    }

    /// Γ, its gradients and the one-step half-space at `state`.
    pub fn constraint(&self, state: &JointState, dt: f64) -> (GammaEval, HalfSpace<f64>) {
        let eval = self.gamma_with_grad(state);
        let h = sca_constraint(&eval, state, dt);
        (eval, h)
    }

    /// Γ is inside the activation band or already below zero.
    pub fn is_active(&self, gamma: f64) -> bool {
        gamma <= self.epsilon_sca
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let dims = self.net.dims();
        put_u32(&mut buf, self.dof() as u32);
        put_u32(&mut buf, dims.len() as u32);
        for d in &dims {
            put_u32(&mut buf, *d as u32);
        }
        for v in self
            .scaling
            .center
            .iter()
            .chain(self.scaling.half_width.iter())
        {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (w, b) in self.net.weights.iter().zip(&self.net.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    buf.extend_from_slice(&w[(r, c)].to_le_bytes());
                }
            }
            for v in b.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.gamma_thr.to_le_bytes());
        buf.extend_from_slice(&self.epsilon_sca.to_le_bytes());
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let mut r = ByteReader::new(&bytes);
        if r.take(4).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let n = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let layers = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        if !(2..=16).contains(&layers) {
            return Err(bad("implausible layer count"));
        }
        let dims = (0..layers)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated"))?;
        if dims[0] != 2 * n || dims[layers - 1] != 2 || dims.iter().any(|&d| d == 0 || d > 1 << 16)
        {
            return Err(bad("layer dimensions inconsistent with the joint count"));
        }
        let center = r.vector(2 * n).ok_or_else(|| bad("truncated"))?;
        let half_width = r.vector(2 * n).ok_or_else(|| bad("truncated"))?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let w = r
                .vector(pair[0] * pair[1])
                .ok_or_else(|| bad("truncated"))?;
            weights.push(DMatrix::from_row_slice(pair[1], pair[0], w.as_slice()));
            biases.push(r.vector(pair[1]).ok_or_else(|| bad("truncated"))?);
        }
        let gamma_thr = r.f64().ok_or_else(|| bad("truncated"))?;
        let epsilon_sca = r.f64().ok_or_else(|| bad("truncated"))?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            net: Mlp { weights, biases },
            scaling: InputScaling { center, half_width },
            gamma_thr,
            epsilon_sca,
        })
    }
}

/// First-order `ΔΓ ≥ 0` over one step of length `dt`:
/// `g = ½∇_qΓ dt² + ∇_q̇Γ dt`, `b = ∇_qΓ·q̇ dt`.
pub fn sca_constraint(eval: &GammaEval, state: &JointState, dt: f64) -> HalfSpace<f64> {
    let normal = &eval.d_q * (0.5 * dt * dt) + &eval.d_qd * dt;
    let offset = eval.d_q.dot(&state.qd) * dt;
    HalfSpace::new(normal, offset, ConstraintKind::Sca)
}
