//! Whole-body signed distance from per-link Bernstein fields, its
//! braking-aware viability variant `S_v`, and the external collision
//! half-space built from it.

pub mod bernstein;

use std::path::Path;

use nalgebra::{DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::halfspace::{ConstraintKind, HalfSpace};
use crate::kinematics::{joint_positions, link_angles, JointState, RobotModel};
use crate::viability::braking_rollout;

pub use bernstein::{fit_bernstein, fit_link_sdf, BernsteinSdf, SdfFitConfig};

/// Log-sum-exp soft minimum `m − ln Σ exp(−β(s_i − m))/β` with
/// `m = min s_i`, and its normalized weights. Lies in
/// `[m − ln(N)/β, m]`; a single value is returned unchanged.
pub fn soft_min(values: &[f64], beta: f64) -> (f64, Vec<f64>) {
    assert!(!values.is_empty(), "soft-min of an empty set");
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let terms: Vec<f64> = values.iter().map(|v| (-beta * (v - m)).exp()).collect();
    let sum: f64 = terms.iter().sum();
    let value = m - sum.ln() / beta;
    (value, terms.into_iter().map(|w| w / sum).collect())
}

/// One fitted field per link plus the soft-min sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfSet {
    pub links: Vec<BernsteinSdf>,
    pub beta: f64,
}

pub const DEFAULT_BETA: f64 = 80.0;

impl SdfSet {
    /// Fits every link's capsule in parallel; link `i` uses seed
    /// `config.seed + i`.
    pub fn fit(model: &RobotModel, config: &SdfFitConfig) -> Result<Self> {
        let links = (0..model.dof())
            .into_par_iter()
            .map(|i| {
                let cfg = SdfFitConfig {
                    seed: config.seed.wrapping_add(i as u64),
                    ..config.clone()
                };
                fit_link_sdf(model.link_lengths[i], model.link_radii[i], &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            links,
            beta: DEFAULT_BETA,
        })
    }

    pub fn file_name(link: usize) -> String {
        format!("link_{link}.bsdf")
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, l) in self.links.iter().enumerate() {
            l.save(&dir.join(Self::file_name(i)))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path, links: usize, beta: f64) -> Result<Self> {
        let links = (0..links)
            .map(|i| BernsteinSdf::load(&dir.join(Self::file_name(i))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { links, beta })
    }
}

/// Whole-body distance and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyDistance {
    pub value: f64,
    pub d_p: Vector2<f64>,
    pub d_q: DVector<f64>,
    pub link_values: Vec<f64>,
    /// Some link field was queried outside its domain box.
    pub outside: bool,
}

fn to_link_frame(p: &Vector2<f64>, origin: &Vector2<f64>, angle: f64) -> [f64; 2] {
    let d = p - origin;
    let (s, c) = angle.sin_cos();
    [c * d.x + s * d.y, -s * d.x + c * d.y]
}

fn check_set(model: &RobotModel, set: &SdfSet) {
    assert_eq!(set.links.len(), model.dof(), "one SDF per link required");
}

/// Soft-min over links of the per-link fields at world point `p`.
pub fn whole_body_value(
    model: &RobotModel,
    set: &SdfSet,
    q: &DVector<f64>,
    p: &Vector2<f64>,
) -> f64 {
    check_set(model, set);
    let origins = joint_positions(model, q);
    let angles = link_angles(q);
    let values: Vec<f64> = set
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| l.value(&to_link_frame(p, &origins[i], angles[i])))
        .collect();
    soft_min(&values, set.beta).0
}

pub fn whole_body_sdf(
    model: &RobotModel,
    set: &SdfSet,
    q: &DVector<f64>,
    p: &Vector2<f64>,
) -> BodyDistance {
    check_set(model, set);
    let n = model.dof();
    let origins = joint_positions(model, q);
    let angles = link_angles(q);
    let mut values = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut outside = false;
    for (i, l) in set.links.iter().enumerate() {
        let s = l.sample(&to_link_frame(p, &origins[i], angles[i]));
        let (sn, cs) = angles[i].sin_cos();
        grads.push(Vector2::new(
            cs * s.grad[0] - sn * s.grad[1],
            sn * s.grad[0] + cs * s.grad[1],
        ));
        values.push(s.value);
        outside |= s.outside;
    }
    let (value, weights) = soft_min(&values, set.beta);
    let mut d_p = Vector2::zeros();
    let mut d_q = DVector::zeros(n);
    for i in 0..n {
        d_p += grads[i] * weights[i];
        // rotating joint k moves link i's frame about o_k, which looks
        // like the point turning the other way
        for k in 0..=i {
            let r = p - origins[k];
            d_q[k] -= weights[i] * grads[i].dot(&Vector2::new(-r.y, r.x));
        }
    }
    BodyDistance {
        value,
        d_p,
        d_q,
        link_values: values,
        outside,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViabilityOptions {
    pub dt_brake: f64,
    pub max_samples: usize,
    pub fd_step: f64,
}

impl Default for ViabilityOptions {
    fn default() -> Self {
        Self {
            dt_brake: 1e-3,
            max_samples: 120,
            fd_step: 1e-4,
        }
    }
}

/// `S_v` and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ViabilityDistance {
    pub value: f64,
    pub d_q: DVector<f64>,
    pub d_qd: DVector<f64>,
    pub d_p: Vector2<f64>,
    pub samples: usize,
    /// The rollout was subsampled to `max_samples`.
    pub capped: bool,
}

/// Rollout configurations used for `S_v`, uniformly subsampled when the
/// rollout is longer than `max_samples`.
pub fn rollout_configurations(
    model: &RobotModel,
    state: &JointState,
    opts: &ViabilityOptions,
) -> (Vec<DVector<f64>>, bool) {
    let rollout = braking_rollout(model, state, opts.dt_brake);
    let total = rollout.samples.len();
    let cap = opts.max_samples.max(2);
    if total <= cap {
        return (rollout.samples.into_iter().map(|s| s.q).collect(), false);
    }
    let picks = (0..cap).map(|i| {
        let idx = (i as f64 * (total - 1) as f64 / (cap - 1) as f64).round() as usize;
        rollout.samples[idx].q.clone()
    });
    (picks.collect(), true)
}

pub fn viability_value(
    model: &RobotModel,
    set: &SdfSet,
    state: &JointState,
    p: &Vector2<f64>,
    opts: &ViabilityOptions,
) -> f64 {
    let (configs, _) = rollout_configurations(model, state, opts);
    let values: Vec<f64> = configs
        .iter()
        .map(|q| whole_body_value(model, set, q, p))
        .collect();
    soft_min(&values, set.beta).0
}

pub fn viability_sdf(
    model: &RobotModel,
    set: &SdfSet,
    state: &JointState,
    p: &Vector2<f64>,
    opts: &ViabilityOptions,
) -> ViabilityDistance {
    let n = model.dof();
    let (configs, capped) = rollout_configurations(model, state, opts);
    let per_sample: Vec<BodyDistance> = configs
        .iter()
        .map(|q| whole_body_sdf(model, set, q, p))
        .collect();
    let values: Vec<f64> = per_sample.iter().map(|b| b.value).collect();
    let (value, weights) = soft_min(&values, set.beta);
    let d_p = per_sample
        .iter()
        .zip(&weights)
        .fold(Vector2::zeros(), |acc, (b, w)| acc + b.d_p * *w);

    let h = opts.fd_step;
    let mut d_q = DVector::zeros(n);
    let mut d_qd = DVector::zeros(n);
    for k in 0..n {
        let mut plus = state.clone();
        let mut minus = state.clone();
        plus.q[k] += h;
        minus.q[k] -= h;
        d_q[k] = (viability_value(model, set, &plus, p, opts)
            - viability_value(model, set, &minus, p, opts))
            / (2.0 * h);
        let mut plus = state.clone();
        let mut minus = state.clone();
        plus.qd[k] += h;
        minus.qd[k] -= h;
        d_qd[k] = (viability_value(model, set, &plus, p, opts)
            - viability_value(model, set, &minus, p, opts))
            / (2.0 * h);
    }
    ViabilityDistance {
        value,
        d_q,
        d_qd,
        d_p,
        samples: configs.len(),
        capped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleMotion {
    #[default]
    Static,
    ConstantVelocity {
        velocity: [f64; 2],
    },
    /// `center + amplitude·sin(frequency·t + phase)` per axis.
    Sinusoid {
        amplitude: [f64; 2],
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

/// Disc obstacle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u32,
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub motion: ObstacleMotion,
}

impl Obstacle {
    pub fn fixed(id: u32, center: Vector2<f64>, radius: f64) -> Self {
        Self {
            id,
            center: [center.x, center.y],
            radius,
            motion: ObstacleMotion::Static,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || self.center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "obstacle {} needs a positive radius and finite center",
                self.id
            )));
        }
        Ok(())
    }

    pub fn position(&self, t: f64) -> Vector2<f64> {
        let c = Vector2::from(self.center);
        match self.motion {
            ObstacleMotion::Static => c,
            ObstacleMotion::ConstantVelocity { velocity } => c + Vector2::from(velocity) * t,
            ObstacleMotion::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => c + Vector2::from(amplitude) * (frequency * t + phase).sin(),
        }
    }

    pub fn velocity(&self, t: f64) -> Vector2<f64> {
        match self.motion {
            ObstacleMotion::Static => Vector2::zeros(),
            ObstacleMotion::ConstantVelocity { velocity } => Vector2::from(velocity),
            ObstacleMotion::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Vector2::from(amplitude) * (frequency * (frequency * t + phase).cos()),
        }
    }
}

/// External-collision term for one obstacle at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcaTerm {
    pub obstacle: u32,
    pub distance: ViabilityDistance,
    /// `S_v(center) − radius − margin`.
    pub clearance: f64,
    pub halfspace: HalfSpace<f64>,
}

/// First-order `ΔS_v ≥ 0` over one step `dt`, including the obstacle's own
/// displacement: `g = ½∇_qS_v dt² + ∇_q̇S_v dt`,
/// `b = ∇_qS_v·q̇ dt + ∇_pS_v·Δp`.
#[allow(clippy::too_many_arguments)]
pub fn eca_constraint(
    model: &RobotModel,
    set: &SdfSet,
    state: &JointState,
    obstacle: &Obstacle,
    t: f64,
    dt: f64,
    margin: f64,
    opts: &ViabilityOptions,
) -> EcaTerm {
    let p = obstacle.position(t);
    let distance = viability_sdf(model, set, state, &p, opts);
    let delta_p = obstacle.velocity(t) * dt;
    let normal = &distance.d_q * (0.5 * dt * dt) + &distance.d_qd * dt;
    let offset = distance.d_q.dot(&state.qd) * dt + distance.d_p.dot(&delta_p);
    EcaTerm {
        obstacle: obstacle.id,
        clearance: distance.value - obstacle.radius - margin,
        distance,
        halfspace: HalfSpace::new(normal, offset, ConstraintKind::Eca),
    }
}
