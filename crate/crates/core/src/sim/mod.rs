//! Deterministic fixed-step simulation of the controlled arm.

pub mod log;
pub mod metrics;
pub mod random;
pub mod scenario;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DVector, Vector2};

use self::log::{
    ObstacleRecord, StepRecord, TrajectoryLog, FLAG_ECA_ACTIVE, FLAG_ECA_DROPPED,
    FLAG_PASSIVITY_LOST, FLAG_SCA_ACTIVE,
};
use self::metrics::{compute_metrics, Metrics};
use self::scenario::{validate_command, Command, ConstraintName, ConstraintToggles, Scenario};
use crate::control::{ControlStep, Controller, PassivityMonitor, SafetyModels};
use crate::ds::{AttractorField, DampingSpec};
use crate::error::{Error, Result};
use crate::geometry::{obstacle_clearance, self_collision_distance};
use crate::kinematics::{
    damped_pinv_transpose, forward_dynamics, forward_kinematics, jacobian, JointState, RobotModel,
};
use crate::sca::ScaModel;
use crate::sdf::{Obstacle, SdfSet};

/// Obstacle clearance tolerance below the ECA margin.
pub const CLEARANCE_TOLERANCE: f64 = 0.005;
/// Velocity-limit tolerance in rad/s.
pub const VELOCITY_TOLERANCE: f64 = 1e-6;

/// Learned models shared between simulations.
#[derive(Debug, Clone, Default)]
pub struct LoadedModels {
    pub sca: Option<Arc<ScaModel>>,
    pub sdf: Option<Arc<SdfSet>>,
}

impl LoadedModels {
    /// Loads every model file the scenario names.
    pub fn load(scenario: &Scenario, model: &RobotModel) -> Result<Self> {
        let sca = match &scenario.models.sca {
            Some(p) => {
                let m = ScaModel::load(&scenario.resolve(p))?;
                if m.dof() != model.dof() {
                    return Err(Error::InvalidScenario(format!(
                        "SCA model is for {} joints, robot has {}",
                        m.dof(),
                        model.dof()
                    )));
                }
                Some(Arc::new(m))
            }
            None => None,
        };
        let sdf = match &scenario.models.sdf_dir {
            Some(dir) => Some(Arc::new(SdfSet::load_dir(
                &scenario.resolve(dir),
                model.dof(),
                scenario.models.beta,
            )?)),
            None => None,
        };
        Ok(Self { sca, sdf })
    }
}

#[derive(Debug, Clone)]
struct RuntimePush {
    t_end: f64,
    torque: DVector<f64>,
}

/// One running scenario. Commands may be applied between steps.
pub struct Simulation {
    pub scenario: Scenario,
    model: RobotModel,
    field: AttractorField,
    damping: DampingSpec,
    controller: Controller,
    monitor: PassivityMonitor,
    models: LoadedModels,
    toggles: ConstraintToggles,
    obstacles: Vec<Obstacle>,
    runtime_pushes: Vec<RuntimePush>,
    state: JointState,
    step: usize,
    steps: usize,
    f_ext_task: Vector2<f64>,
    last: Option<ControlStep>,
    log: TrajectoryLog,
    log_limit: Option<usize>,
}

impl Simulation {
    pub fn new(scenario: Scenario, models: LoadedModels) -> Result<Self> {
        scenario.validate()?;
        let model = scenario.robot_model()?;
        if scenario.constraints.sca && models.sca.is_none() {
            return Err(Error::InvalidScenario(
                "sca is enabled but no SCA model is loaded".into(),
            ));
        }
        if scenario.constraints.eca && !scenario.obstacles.is_empty() && models.sdf.is_none() {
            return Err(Error::InvalidScenario(
                "eca is enabled but no SDF set is loaded".into(),
            ));
        }
        let state = scenario.initial_state(&model)?;
        let damping = scenario.damping.spec();
        let monitor = PassivityMonitor::new(
            scenario.monitor.lambda1.unwrap_or(damping.lambda1),
            scenario.controller.sigma,
            scenario.monitor.tolerance,
        );
        Ok(Self {
            field: scenario.field.build()?,
            damping,
            controller: Controller::new(&model, scenario.controller),
            monitor,
            models,
            toggles: scenario.constraints,
            obstacles: scenario.obstacles.clone(),
            runtime_pushes: Vec::new(),
            state,
            step: 0,
            steps: scenario.step_count(),
            f_ext_task: Vector2::zeros(),
            last: None,
            log: TrajectoryLog::new(&scenario.name, model.dof(), scenario.control_dt),
            log_limit: None,
            model,
            scenario,
        })
    }

    /// Loads models from the scenario's paths and builds the simulation.
    pub fn from_scenario(scenario: Scenario) -> Result<Self> {
        let model = scenario.robot_model()?;
        let models = LoadedModels::load(&scenario, &model)?;
        Self::new(scenario, models)
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn state(&self) -> &JointState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.scenario.control_dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.steps
    }

    pub fn field(&self) -> &AttractorField {
        &self.field
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn toggles(&self) -> ConstraintToggles {
        self.toggles
    }

    pub fn models(&self) -> &LoadedModels {
        &self.models
    }

    pub fn last_control(&self) -> Option<&ControlStep> {
        self.last.as_ref()
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    /// Runs without a step limit, e.g. for live sessions.
    pub fn set_unbounded(&mut self) {
        self.steps = usize::MAX;
    }

    /// Keeps roughly the most recent `limit` records in the log.
    pub fn set_log_limit(&mut self, limit: usize) {
        self.log_limit = Some(limit.max(1));
    }

    pub fn apply_command(&mut self, cmd: &Command) -> Result<()> {
        validate_command(cmd, &self.model)?;
        let t = self.time();
        match cmd {
            Command::SetTarget { x } => self.field.x_star = Vector2::from(*x),
            Command::MoveObstacle { id, p } => {
                let o = self
                    .obstacles
                    .iter_mut()
                    .find(|o| o.id == *id)
                    .ok_or_else(|| Error::InvalidArgument(format!("no obstacle with id {id}")))?;
                *o = Obstacle::fixed(*id, Vector2::from(*p), o.radius);
            }
            Command::AddObstacle { p, radius, id } => {
                if self.toggles.eca && self.models.sdf.is_none() {
                    return Err(Error::InvalidArgument(
                        "no SDF set loaded for collision avoidance".into(),
                    ));
                }
                let id = id
                    .unwrap_or_else(|| self.obstacles.iter().map(|o| o.id + 1).max().unwrap_or(0));
                if self.obstacles.iter().any(|o| o.id == id) {
                    return Err(Error::InvalidArgument(format!(
                        "obstacle id {id} already exists"
                    )));
                }
                self.obstacles
                    .push(Obstacle::fixed(id, Vector2::from(*p), *radius));
            }
            Command::RemoveObstacle { id } => {
                let before = self.obstacles.len();
                self.obstacles.retain(|o| o.id != *id);
                if self.obstacles.len() == before {
                    return Err(Error::InvalidArgument(format!("no obstacle with id {id}")));
                }
            }
            Command::Toggle {
                constraint,
                enabled,
            } => match constraint {
                ConstraintName::Jnt => {}
                ConstraintName::Sca => {
                    if *enabled && self.models.sca.is_none() {
                        return Err(Error::InvalidArgument("no SCA model loaded".into()));
                    }
                    self.toggles.sca = *enabled;
                }
                ConstraintName::Eca => {
                    if *enabled && self.models.sdf.is_none() && !self.obstacles.is_empty() {
                        return Err(Error::InvalidArgument("no SDF set loaded".into()));
                    }
                    self.toggles.eca = *enabled;
                }
            },
            Command::Push { tau, duration } => self.runtime_pushes.push(RuntimePush {
                t_end: t + duration,
                torque: DVector::from_column_slice(tau),
            }),
        }
        Ok(())
    }

    fn external_load(&self, t: f64) -> (DVector<f64>, Vector2<f64>) {
        let n = self.model.dof();
        let mut torque = DVector::zeros(n);
        let mut force = Vector2::zeros();
        for p in self.scenario.pushes.iter().filter(|p| p.is_active(t)) {
            if let Some(tq) = &p.torque {
                torque += DVector::from_column_slice(tq);
            }
            if let Some(f) = p.force {
                force += Vector2::from(f);
            }
        }
        for p in &self.runtime_pushes {
            if t < p.t_end {
                torque += &p.torque;
            }
        }
        (torque, force)
    }

    /// One control step followed by the physics sub-steps it spans.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let k = self.step;
        let pending: Vec<Command> = self
            .scenario
            .commands
            .iter()
            .filter(|c| c.step == k as u64)
            .map(|c| c.command.clone())
            .collect();
        for cmd in &pending {
            self.apply_command(cmd).map_err(|e| {
                Error::InvalidScenario(format!("scripted command at step {k}: {e}"))
            })?;
        }
        let started = Instant::now();
        let dt = self.scenario.control_dt;
        let t = k as f64 * dt;
        let sdf = if self.toggles.eca {
            self.models.sdf.as_deref()
        } else {
            None
        };
        let control = self.controller.step(
            &self.state,
            t,
            dt,
            &self.field,
            &self.damping,
            &self.obstacles,
            SafetyModels {
                sca: self.models.sca.as_deref(),
                sdf,
            },
            self.toggles.safety(),
        )?;
        let passivity =
            self.monitor
                .update(&self.model, &self.state, &self.field, t, &self.f_ext_task)?;

        let (tau_ext, force_ext) = self.external_load(t);
        let jac = jacobian(&self.model, &self.state.q);
        let task_map = damped_pinv_transpose(&jac, self.scenario.controller.sigma)?;
        self.f_ext_task = force_ext + &task_map * &tau_ext;

        let gamma = match (&control.gamma, &self.models.sca) {
            (Some(g), _) => *g,
            (None, Some(net)) => net.gamma(&self.state.q, &self.state.qd),
            (None, None) => f64::NAN,
        };
        let q = &self.state.q;
        let obstacles: Vec<ObstacleRecord> = self
            .obstacles
            .iter()
            .map(|o| {
                let p = o.position(t);
                ObstacleRecord {
                    id: o.id,
                    p,
                    radius: o.radius,
                    viability_distance: control
                        .eca
                        .iter()
                        .find(|r| r.obstacle == o.id)
                        .map_or(f64::NAN, |r| r.viability_distance),
                    clearance: obstacle_clearance(&self.model, q, &p, o.radius),
                }
            })
            .collect();
        let out = &control.output;
        let mut flags = 0;
        if out.eca_dropped {
            flags |= FLAG_ECA_DROPPED;
        }
        if control.sca_active {
            flags |= FLAG_SCA_ACTIVE;
        }
        if control.eca.iter().any(|r| r.active) {
            flags |= FLAG_ECA_ACTIVE;
        }
        if !passivity.passive {
            flags |= FLAG_PASSIVITY_LOST;
        }
        let tau = out.tau.clone();

        // semi-implicit Euler with the torque held over the control period
        let h = self.scenario.physics_dt;
        let mut state = self.state.clone();
        for s in 0..self.scenario.substeps() {
            let ts = t + s as f64 * h;
            let (tq, f) = self.external_load(ts);
            let total_ext = tq + jacobian(&self.model, &state.q).tr_mul(&f);
            let qdd = forward_dynamics(&self.model, &state, &tau, &total_ext);
            state.qd += qdd * h;
            state.q += &state.qd * h;
            if !state.is_finite() {
                return Err(Error::NonFinite { t: ts + h });
            }
        }

        let record = StepRecord {
            t,
            q: self.state.q.clone(),
            qd: self.state.qd.clone(),
            x: forward_kinematics(&self.model, &self.state.q),
            xd: jac * &self.state.qd,
            target: self.field.x_star,
            tau,
            delta: out.delta,
            gamma,
            min_self_distance: self_collision_distance(&self.model, &self.state.q),
            min_obstacle_clearance: obstacles
                .iter()
                .map(|o| o.clearance)
                .fold(f64::INFINITY, f64::min),
            box_lower: control.accel_box.lower.clone(),
            box_upper: control.accel_box.upper.clone(),
            status: out.status,
            flags,
            passivity_residual: passivity.residual,
            wall_time: 0.0,
            obstacles,
        };
        self.state = state;
        self.runtime_pushes.retain(|p| p.t_end > t + dt);
        self.last = Some(control);
        self.step += 1;
        self.log.records.push(record);
        if let Some(limit) = self.log_limit {
            let len = self.log.records.len();
            if len > 2 * limit {
                self.log.records.drain(..len - limit);
            }
        }
        let last = self.log.records.last_mut().expect("record just pushed");
        if self.scenario.record_wall_clock {
            last.wall_time = started.elapsed().as_secs_f64();
        }
        Ok(last)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> (TrajectoryLog, Metrics) {
        let metrics = compute_metrics(&self.log);
        (self.log, metrics)
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<(TrajectoryLog, Metrics)> {
    let mut sim = Simulation::from_scenario(scenario.clone())?;
    sim.run()?;
    Ok(sim.finish())
}

pub fn run_scenario_with(
    scenario: &Scenario,
    models: LoadedModels,
) -> Result<(TrajectoryLog, Metrics)> {
    let mut sim = Simulation::new(scenario.clone(), models)?;
    sim.run()?;
    Ok(sim.finish())
}

pub fn run_scenario_file(path: &Path) -> Result<(TrajectoryLog, Metrics)> {
    run_scenario(&Scenario::load(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub step: usize,
    pub t: f64,
    pub what: String,
}

/// Safety properties that must hold at every logged step for the given
/// toggles.
pub fn check_invariants(
    log: &TrajectoryLog,
    model: &RobotModel,
    toggles: &ConstraintToggles,
    eca_margin: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (k, r) in log.records.iter().enumerate() {
        let mut flag = |what: String| {
            out.push(Violation {
                step: k,
                t: r.t,
                what,
            })
        };
        for i in 0..model.dof() {
            if r.q[i] < model.q_lower[i] || r.q[i] > model.q_upper[i] {
                flag(format!("joint {i} position {:.6} outside limits", r.q[i]));
            }
            if r.qd[i].abs() > model.qd_max[i] + VELOCITY_TOLERANCE {
                flag(format!("joint {i} velocity {:.6} exceeds limit", r.qd[i]));
            }
        }
        if toggles.sca && r.min_self_distance <= 0.0 {
            flag(format!(
                "self-collision distance {:.6}",
                r.min_self_distance
            ));
        }
        if toggles.eca && r.min_obstacle_clearance < eca_margin - CLEARANCE_TOLERANCE {
            flag(format!(
                "obstacle clearance {:.6}",
                r.min_obstacle_clearance
            ));
        }
    }
    out
}

/// `check_invariants` for a scenario run, following the toggle commands
/// scheduled in the scenario.
pub fn scenario_violations(scenario: &Scenario, log: &TrajectoryLog) -> Result<Vec<Violation>> {
    let model = scenario.robot_model()?;
    let margin = scenario.controller.eca_margin;
    let mut toggles = scenario.constraints;
    let mut changes: Vec<_> = scenario
        .commands
        .iter()
        .filter_map(|c| match c.command {
            Command::Toggle {
                constraint,
                enabled,
            } => Some((c.step as usize, constraint, enabled)),
            _ => None,
        })
        .collect();
    changes.sort_by_key(|c| c.0);
    let mut pending = changes.into_iter().peekable();
    let mut out = Vec::new();
    let mut start = 0;
    while start < log.records.len() {
        while let Some(&(_, name, on)) = pending.peek().filter(|c| c.0 <= start) {
            match name {
                ConstraintName::Jnt => toggles.jnt = on,
                ConstraintName::Sca => toggles.sca = on,
                ConstraintName::Eca => toggles.eca = on,
            }
            pending.next();
        }
        let end = pending
            .peek()
            .map_or(log.records.len(), |c| c.0.min(log.records.len()));
        let part = TrajectoryLog {
            records: log.records[start..end].to_vec(),
            ..TrajectoryLog::new(&log.name, log.dof, log.control_dt)
        };
        out.extend(
            check_invariants(&part, &model, &toggles, margin)
                .into_iter()
                .map(|mut v| {
                    v.step += start;
                    v
                }),
        );
        start = end;
    }
    Ok(out)
}
