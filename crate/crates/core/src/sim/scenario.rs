//! TOML scenario files.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, SafetyToggles};
use crate::ds::{AttractorField, DampingSpec};
use crate::error::{Error, Result};
use crate::kinematics::{JointState, RobotModel};
use crate::sdf::{Obstacle, DEFAULT_BETA};

fn default_duration() -> f64 {
    6.0
}
fn default_control_dt() -> f64 {
    0.005
}
fn default_physics_dt() -> f64 {
    0.001
}
fn default_true() -> bool {
    true
}

/// Overrides applied to the desk arm, or a uniform-rod chain when
/// `link_lengths` is given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub link_lengths: Option<Vec<f64>>,
    pub link_masses: Option<Vec<f64>>,
    pub link_radii: Option<Vec<f64>>,
    pub gravity: Option<[f64; 2]>,
    pub q_lower: Option<Vec<f64>>,
    pub q_upper: Option<Vec<f64>>,
    pub qd_max: Option<Vec<f64>>,
    pub qdd_max: Option<Vec<f64>>,
    pub tau_min: Option<Vec<f64>>,
    pub tau_max: Option<Vec<f64>>,
}

impl RobotConfig {
    pub fn build(&self) -> Result<RobotModel> {
        let mut model = match &self.link_lengths {
            Some(lengths) => {
                let n = lengths.len();
                let masses = self.link_masses.clone().unwrap_or_else(|| vec![1.0; n]);
                let radii = self.link_radii.clone().unwrap_or_else(|| vec![0.04; n]);
                if masses.len() != n || radii.len() != n {
                    return Err(Error::InvalidScenario(
                        "robot arrays must all have one entry per link".into(),
                    ));
                }
                RobotModel::uniform_rods(lengths, &masses, &radii)
            }
            None => {
                let mut m = RobotModel::desk();
                if self.link_masses.is_some() || self.link_radii.is_some() {
                    let n = m.dof();
                    let lengths: Vec<f64> = m.link_lengths.iter().copied().collect();
                    let masses = self
                        .link_masses
                        .clone()
                        .unwrap_or_else(|| m.link_masses.iter().copied().collect());
                    let radii = self
                        .link_radii
                        .clone()
                        .unwrap_or_else(|| m.link_radii.iter().copied().collect());
                    if masses.len() != n || radii.len() != n {
                        return Err(Error::InvalidScenario(
                            "robot arrays must all have one entry per link".into(),
                        ));
                    }
                    let rods = RobotModel::uniform_rods(&lengths, &masses, &radii);
                    m.link_masses = rods.link_masses;
                    m.link_inertias = rods.link_inertias;
                    m.link_radii = rods.link_radii;
                }
                m
            }
        };
        if let Some(g) = self.gravity {
            model.gravity = Vector2::from(g);
        }
        let n = model.dof();
        let set = |target: &mut DVector<f64>, value: &Option<Vec<f64>>, name: &str| -> Result<()> {
            if let Some(v) = value {
                if v.len() != n {
                    return Err(Error::InvalidScenario(format!(
                        "robot.{name} has {} entries, expected {n}",
                        v.len()
                    )));
                }
                *target = DVector::from_column_slice(v);
            }
            Ok(())
        };
        set(&mut model.q_lower, &self.q_lower, "q_lower")?;
        set(&mut model.q_upper, &self.q_upper, "q_upper")?;
        set(&mut model.qd_max, &self.qd_max, "qd_max")?;
        set(&mut model.qdd_max, &self.qdd_max, "qdd_max")?;
        set(&mut model.tau_min, &self.tau_min, "tau_min")?;
        set(&mut model.tau_max, &self.tau_max, "tau_max")?;
        model.validate()?;
        Ok(model)
    }
}

/// Attractor `f(x) = 2P(x − x*)`; either `k` (for `P = −k𝕀`) or a full
/// `gain` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub x_star: [f64; 2],
    pub k: Option<f64>,
    pub gain: Option<[[f64; 2]; 2]>,
}

impl FieldConfig {
    pub fn build(&self) -> Result<AttractorField> {
        let field = match (self.k, self.gain) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidScenario(
                    "field: give either k or gain, not both".into(),
                ))
            }
            (_, Some(g)) => AttractorField {
                x_star: Vector2::from(self.x_star),
                gain: Matrix2::new(g[0][0], g[0][1], g[1][0], g[1][1]),
            },
            (k, None) => AttractorField::isotropic(Vector2::from(self.x_star), k.unwrap_or(2.0)),
        };
        field
            .validate()
            .map_err(|e| Error::InvalidScenario(format!("field: {e}")))?;
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    #[serde(default)]
    pub qd: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampingConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eta_f: f64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        let d = DampingSpec::<f64>::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            eta_f: d.eta_f,
        }
    }
}

impl DampingConfig {
    pub fn spec(&self) -> DampingSpec {
        DampingSpec {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eta_f: self.eta_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintToggles {
    pub jnt: bool,
    pub sca: bool,
    pub eca: bool,
}

impl Default for ConstraintToggles {
    fn default() -> Self {
        Self {
            jnt: true,
            sca: true,
            eca: true,
        }
    }
}

impl ConstraintToggles {
    pub fn safety(&self) -> SafetyToggles {
        SafetyToggles {
            sca: self.sca,
            eca: self.eca,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub sca: Option<PathBuf>,
    pub sdf_dir: Option<PathBuf>,
    pub beta: f64,
}

impl Default for ModelPaths {
    fn default() -> Self {
        Self {
            sca: None,
            sdf_dir: None,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Potential weight in the storage function; the damping `lambda1`
    /// when unset.
    pub lambda1: Option<f64>,
    pub tolerance: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            lambda1: None,
            tolerance: 1e-3,
        }
    }
}

/// External disturbance over `[t_start, t_end)`: a joint torque or a task
/// force mapped through `Jᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Push {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default)]
    pub torque: Option<Vec<f64>>,
    #[serde(default)]
    pub force: Option<[f64; 2]>,
}

impl Push {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintName {
    Jnt,
    Sca,
    Eca,
}

/// Runtime change to a running simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetTarget {
        x: [f64; 2],
    },
    MoveObstacle {
        id: u32,
        p: [f64; 2],
    },
    AddObstacle {
        p: [f64; 2],
        radius: f64,
        #[serde(default)]
        id: Option<u32>,
    },
    RemoveObstacle {
        id: u32,
    },
    Toggle {
        constraint: ConstraintName,
        enabled: bool,
    },
    Push {
        tau: Vec<f64>,
        duration: f64,
    },
}

/// Command applied just before control step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledCommand {
    pub step: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_control_dt")]
    pub control_dt: f64,
    #[serde(default = "default_physics_dt")]
    pub physics_dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub robot: RobotConfig,
    pub field: FieldConfig,
    pub initial: InitialState,
    #[serde(default)]
    pub damping: DampingConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub constraints: ConstraintToggles,
    #[serde(default)]
    pub models: ModelPaths,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub pushes: Vec<Push>,
    #[serde(default)]
    pub commands: Vec<ScheduledCommand>,
    /// Whether wall-clock step times are recorded.
    #[serde(default = "default_true")]
    pub record_wall_clock: bool,
    /// Directory that relative model paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut s = Self::from_toml(&std::fs::read_to_string(path)?)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.control_dt).round() as usize
    }

    /// Physics sub-steps per control step.
    pub fn substeps(&self) -> usize {
        ((self.control_dt / self.physics_dt).round() as usize).max(1)
    }

    pub fn robot_model(&self) -> Result<RobotModel> {
        self.robot.build()
    }

    pub fn initial_state(&self, model: &RobotModel) -> Result<JointState> {
        let n = model.dof();
        if self.initial.q.len() != n {
            return Err(Error::InvalidScenario(format!(
                "initial.q has {} entries, expected {n}",
                self.initial.q.len()
            )));
        }
        let qd = match &self.initial.qd {
            Some(v) if v.len() != n => {
                return Err(Error::InvalidScenario(format!(
                    "initial.qd has {} entries, expected {n}",
                    v.len()
                )))
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(n),
        };
        Ok(JointState::new(
            DVector::from_column_slice(&self.initial.q),
            qd,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad("duration must be a non-negative number".into());
        }
        if !(self.control_dt > 0.0 && self.physics_dt > 0.0) {
            return bad("time steps must be positive".into());
        }
        if self.physics_dt > self.control_dt {
            return bad("physics_dt must not exceed control_dt".into());
        }
        let ratio = self.control_dt / self.physics_dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad("control_dt must be an integer multiple of physics_dt".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must not exceed {}", i64::MAX));
        }
        if !self.constraints.jnt {
            return bad("joint-limit constraints cannot be disabled".into());
        }
        let model = self.robot_model()?;
        let state = self.initial_state(&model)?;
        if !state.is_finite() {
            return bad("initial state is not finite".into());
        }
        self.field.build()?;
        self.damping
            .spec()
            .validate()
            .map_err(|e| Error::InvalidScenario(format!("damping: {e}")))?;
        let mut ids = std::collections::HashSet::new();
        for o in &self.obstacles {
            o.validate()
                .map_err(|e| Error::InvalidScenario(format!("obstacle {}: {e}", o.id)))?;
            if !ids.insert(o.id) {
                return bad(format!("duplicate obstacle id {}", o.id));
            }
        }
        for p in &self.pushes {
            if !(p.t_end >= p.t_start) {
                return bad("push interval ends before it starts".into());
            }
            match (&p.torque, &p.force) {
                (Some(t), None) if t.len() == model.dof() => {}
                (None, Some(_)) => {}
                _ => {
                    return bad(
                        "each push needs exactly one of torque (one entry per joint) or force"
                            .into(),
                    )
                }
            }
        }
        for c in &self.commands {
            validate_command(&c.command, &model)?;
        }
        if self.constraints.sca && self.models.sca.is_none() {
            return bad("sca is enabled but models.sca is not set".into());
        }
        if self.constraints.eca && !self.obstacles.is_empty() && self.models.sdf_dir.is_none() {
            return bad("eca is enabled with obstacles but models.sdf_dir is not set".into());
        }
        if !(self.models.beta > 0.0) {
            return bad("models.beta must be positive".into());
        }
        Ok(())
    }
}

/// Range checks shared by scripted and live commands.
pub fn validate_command(cmd: &Command, model: &RobotModel) -> Result<()> {
    let reach = model.reach();
    let in_workspace = |p: &[f64; 2]| p.iter().all(|v| v.is_finite() && v.abs() <= reach);
    let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
    match cmd {
        Command::SetTarget { x } if !in_workspace(x) => {
            bad("target outside the workspace bounding box")
        }
        Command::MoveObstacle { p, .. } if !p.iter().all(|v| v.is_finite()) => {
            bad("obstacle position not finite")
        }
        Command::AddObstacle { p, radius, .. } => {
            if !p.iter().all(|v| v.is_finite()) {
                bad("obstacle position not finite")
            } else if !(*radius > 0.0 && *radius <= 0.3) {
                bad("obstacle radius must lie in (0, 0.3] m")
            } else {
                Ok(())
            }
        }
        Command::Push { tau, duration } => {
            if tau.len() != model.dof() || tau.iter().any(|v| !v.is_finite()) {
                bad("push torque needs one finite entry per joint")
            } else if !(*duration >= 0.0 && duration.is_finite()) {
                bad("push duration must be non-negative")
            } else {
                Ok(())
            }
        }
        Command::Toggle {
            constraint: ConstraintName::Jnt,
            enabled: false,
        } => bad("joint-limit constraints cannot be disabled"),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
[field]
x_star = [0.5, 0.2]
[initial]
q = [0.1, 0.2, 0.3]
[constraints]
sca = false
eca = false
"#;

    #[test]
    fn defaults_fill_in() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.duration, 6.0);
        assert_eq!(s.control_dt, 0.005);
        assert_eq!(s.physics_dt, 0.001);
        assert_eq!(s.substeps(), 5);
        assert_eq!(s.step_count(), 1200);
        assert_eq!(s.robot_model().unwrap(), RobotModel::desk());
        assert_eq!(s.controller, ControllerConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.obstacles
            .push(Obstacle::fixed(3, Vector2::new(0.4, 0.4), 0.05));
        s.commands.push(ScheduledCommand {
            step: 10,
            command: Command::SetTarget { x: [0.1, 0.6] },
        });
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_configurations() {
        let base = Scenario::from_toml(MINIMAL).unwrap();
        let mut s = base.clone();
        s.physics_dt = 0.01;
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));
        let mut s = base.clone();
        s.constraints.jnt = false;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.seed = u64::MAX;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.constraints.sca = true;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.initial.q.pop();
        assert!(s.validate().is_err());
        assert!(Scenario::from_toml("name = 1").is_err());
        assert!(Scenario::from_toml(&format!("{MINIMAL}\nbogus = 1")).is_err());
    }

    #[test]
    fn command_ranges() {
        let m = RobotModel::desk();
        assert!(validate_command(&Command::SetTarget { x: [2.0, 0.0] }, &m).is_err());
        assert!(validate_command(&Command::SetTarget { x: [0.5, 0.0] }, &m).is_ok());
        let add = |r| Command::AddObstacle {
            p: [0.0, 0.5],
            radius: r,
            id: None,
        };
        assert!(validate_command(&add(0.31), &m).is_err());
        assert!(validate_command(&add(0.0), &m).is_err());
        assert!(validate_command(&add(0.3), &m).is_ok());
        let cmd: Command =
            serde_json::from_str(r#"{"kind":"toggle","constraint":"eca","enabled":false}"#)
                .unwrap();
        assert_eq!(
            cmd,
            Command::Toggle {
                constraint: ConstraintName::Eca,
                enabled: false
            }
        );
    }
}
