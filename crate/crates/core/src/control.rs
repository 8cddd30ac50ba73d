//! One control step: passive DS force, viability constraints and the torque
//! QP, plus a discrete passivity monitor.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::ds::{passive_force, AttractorField, DampingSpec};
use crate::error::Result;
use crate::halfspace::HalfSpace;
use crate::kinematics::{
    damped_pinv_transpose, dynamics_terms, forward_kinematics, jacobian, JointState, RobotModel,
};
use crate::qp::{ControlOutput, SolverOptions, TorqueQp, WarmStart};
use crate::sca::ScaModel;
use crate::sdf::{eca_constraint, viability_value, Obstacle, SdfSet, ViabilityOptions};
use crate::viability::{
    admissible_bounds, braking_accel_step, joint_limit_accel_bounds_with_braking, ViableAccelBox,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub sigma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Joint damping in the regularization target `τ_ref = G − d q̇`.
    pub null_damping: f64,
    /// ECA rows enter the QP once `S_v − r − margin` drops below this.
    pub eps_eca: f64,
    pub eca_margin: f64,
    /// Joint position limits are tightened by this many radians.
    pub position_margin: f64,
    /// Velocity limits are scaled by `1 − velocity_margin`.
    pub velocity_margin: f64,
    /// Stoppability assumes only `1 − braking_margin` of `q̈_max` remains
    /// for braking after the next step.
    pub braking_margin: f64,
    pub normalize_halfspaces: bool,
    pub viability: ViabilityOptions,
    pub solver: SolverOptions,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            alpha1: 1e-4,
            alpha2: 1e2,
            null_damping: 0.5,
            eps_eca: 0.05,
            eca_margin: 0.05,
            position_margin: 0.01,
            velocity_margin: 0.02,
            braking_margin: 0.1,
            normalize_halfspaces: true,
            viability: ViabilityOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyToggles {
    pub sca: bool,
    pub eca: bool,
}

impl Default for SafetyToggles {
    fn default() -> Self {
        Self {
            sca: true,
            eca: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SafetyModels<'a> {
    pub sca: Option<&'a ScaModel>,
    pub sdf: Option<&'a SdfSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcaReport {
    pub obstacle: u32,
    pub viability_distance: f64,
    pub clearance: f64,
    pub active: bool,
}

/// Everything computed during one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub output: ControlOutput,
    pub task_force: Vector2<f64>,
    pub accel_box: ViableAccelBox<f64>,
    /// Per-joint bounds of the acceleration set left by the box and every
    /// active half-space, or `None` when that set is empty.
    pub admissible: Option<(DVector<f64>, DVector<f64>)>,
    pub gamma: Option<f64>,
    pub sca_active: bool,
    pub eca: Vec<EcaReport>,
    pub halfspaces: Vec<HalfSpace<f64>>,
}

/// Copy of `model` with the controller's tightened joint limits.
pub fn tightened_model(model: &RobotModel, config: &ControllerConfig) -> RobotModel {
    let mut m = model.clone();
    for i in 0..m.dof() {
        let span = m.q_upper[i] - m.q_lower[i];
        let pad = config.position_margin.min(0.25 * span);
        m.q_lower[i] += pad;
        m.q_upper[i] -= pad;
        m.qd_max[i] *= 1.0 - config.velocity_margin;
    }
    m
}

#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    model: RobotModel,
    limits: RobotModel,
    warm: Option<WarmStart>,
}

impl Controller {
    pub fn new(model: &RobotModel, config: ControllerConfig) -> Self {
        Self {
            limits: tightened_model(model, &config),
            model: model.clone(),
            config,
            warm: None,
        }
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        state: &JointState,
        t: f64,
        dt: f64,
        field: &AttractorField,
        damping: &DampingSpec,
        obstacles: &[Obstacle],
        models: SafetyModels<'_>,
        toggles: SafetyToggles,
    ) -> Result<ControlStep> {
        let cfg = &self.config;
        let model = &self.model;
        let terms = dynamics_terms(model, state);
        let jac = jacobian(model, &state.q);
        let task_map = damped_pinv_transpose(&jac, cfg.sigma)?;
        let task_force = passive_force(model, state, field, damping, cfg.sigma)?;
        let bias = &terms.coriolis * &state.qd + &terms.gravity;
        let tau_ref = &terms.gravity - &state.qd * cfg.null_damping;
        let reserve = &self.limits.qdd_max * (1.0 - cfg.braking_margin);
        let accel_box = joint_limit_accel_bounds_with_braking(&self.limits, state, dt, &reserve);

        let mut gamma = None;
        let mut sca = None;
        if toggles.sca {
            if let Some(net) = models.sca {
                let (eval, hs) = net.constraint(state, dt);
                gamma = Some(eval.gamma);
                if net.is_active(eval.gamma) {
                    sca = Some(hs);
                }
            }
        }

        let mut eca = Vec::new();
        let mut reports = Vec::new();
        if toggles.eca {
            if let Some(set) = models.sdf {
                for obs in obstacles {
                    let sv = viability_value(model, set, state, &obs.position(t), &cfg.viability);
                    let clearance = sv - obs.radius - cfg.eca_margin;
                    let active = clearance <= cfg.eps_eca;
                    if active {
                        let term = eca_constraint(
                            model,
                            set,
                            state,
                            obs,
                            t,
                            dt,
                            cfg.eca_margin,
                            &cfg.viability,
                        );
                        eca.push((obs.id, term.halfspace));
                    }
                    reports.push(EcaReport {
                        obstacle: obs.id,
                        viability_distance: sv,
                        clearance,
                        active,
                    });
                }
            }
        }

        let halfspaces: Vec<HalfSpace<f64>> = sca
            .iter()
            .cloned()
            .chain(eca.iter().map(|(_, h)| h.clone()))
            .collect();
        let admissible = if accel_box.all_feasible() {
            halfspaces.iter().try_fold(
                (accel_box.lower.clone(), accel_box.upper.clone()),
                |(lo, hi), h| {
                    let boxed = ViableAccelBox {
                        lower: lo,
                        upper: hi,
                        feasible: accel_box.feasible.clone(),
                    };
                    admissible_bounds(&boxed, h)
                },
            )
        } else {
            None
        };

        let problem = TorqueQp {
            task_map,
            task_force,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            tau_ref,
            mass: terms.mass,
            bias,
            accel_box: accel_box.clone(),
            tau_min: model.tau_min.clone(),
            tau_max: model.tau_max.clone(),
            sca: sca.clone(),
            eca,
            braking: braking_accel_step(model, &state.qd, dt),
            normalize: cfg.normalize_halfspaces,
        };
        let output = problem.solve(self.warm.as_ref(), &cfg.solver);
        self.warm = output.warm.clone();
        Ok(ControlStep {
            output,
            task_force,
            accel_box,
            admissible,
            gamma,
            sca_active: sca.is_some(),
            eca: reports,
            halfspaces,
        })
    }
}

/// `S = ½ẋᵀ(B M Bᵀ)ẋ + λ1 𝒫(x)` with `B` the damped torque-to-force map.
pub fn storage(
    model: &RobotModel,
    state: &JointState,
    field: &AttractorField,
    lambda1: f64,
    sigma: f64,
) -> Result<f64> {
    let terms = dynamics_terms(model, state);
    let jac = jacobian(model, &state.q);
    let b = damped_pinv_transpose(&jac, sigma)?;
    let xd = &jac * &state.qd;
    let lambda = &b * &terms.mass * b.transpose();
    let x = forward_kinematics(model, &state.q);
    Ok(0.5 * xd.dot(&(lambda * xd)) + lambda1 * field.potential(&x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassivityReading {
    pub storage: f64,
    /// `ΔS/Δt − ẋᵀF_ext`; zero on the first sample.
    pub residual: f64,
    pub passive: bool,
}

/// Tracks storage between successive samples and flags intervals where it
/// grows faster than the external power input allows.
#[derive(Debug, Clone)]
pub struct PassivityMonitor {
    pub lambda1: f64,
    pub sigma: f64,
    pub tolerance: f64,
    prev: Option<(f64, f64, Vector2<f64>)>,
}

impl PassivityMonitor {
    pub fn new(lambda1: f64, sigma: f64, tolerance: f64) -> Self {
        Self {
            lambda1,
            sigma,
            tolerance,
            prev: None,
        }
    }

    /// `f_ext` is the external task force held over the interval ending now.
    pub fn update(
        &mut self,
        model: &RobotModel,
        state: &JointState,
        field: &AttractorField,
        t: f64,
        f_ext: &Vector2<f64>,
    ) -> Result<PassivityReading> {
        let s = storage(model, state, field, self.lambda1, self.sigma)?;
        let xd = jacobian(model, &state.q) * &state.qd;
        let residual = match self.prev {
            Some((t0, s0, xd0)) if t > t0 => (s - s0) / (t - t0) - (0.5 * (xd + xd0)).dot(f_ext),
            _ => 0.0,
        };
        self.prev = Some((t, s, xd));
        Ok(PassivityReading {
            storage: s,
            residual,
            passive: residual <= self.tolerance,
        })
    }
}
