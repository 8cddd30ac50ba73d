//! JSON frames exchanged over the socket. Field names and units are
//! listed in `docs/wire.md`.

use serde::{Deserialize, Serialize};
use vptc::qp::{QpStatus, RowKind};
use vptc::sim::log::StepRecord;
use vptc::sim::scenario::{Command, Scenario};
use vptc::RobotModel;

use crate::error::TeleopError;

pub const SCHEMA_VERSION: &str = "1.0";

pub fn snapshot_schema_version() -> &'static str {
    SCHEMA_VERSION
}

fn major(version: &str) -> Option<u32> {
    version.split('.').next()?.parse().ok()
}

/// Client-side check: only the major component has to match.
pub fn check_schema(version: &str) -> Result<(), TeleopError> {
    match (major(version), major(SCHEMA_VERSION)) {
        (Some(a), Some(b)) if a == b => Ok(()),
        _ => Err(TeleopError::SchemaMismatch {
            expected: SCHEMA_VERSION.to_string(),
            found: version.to_string(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSnapshot {
    pub id: u32,
    pub p: [f64; 2],
    pub radius: f64,
    /// Soft-min distance of the braking trajectory to the obstacle center,
    /// present while collision avoidance evaluates this obstacle.
    pub viability_distance: Option<f64>,
    pub clearance: f64,
}

/// One control step as seen by an operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub step: u64,
    pub t: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub x: [f64; 2],
    pub target: [f64; 2],
    pub obstacles: Vec<ObstacleSnapshot>,
    pub gamma: Option<f64>,
    pub box_lower: Vec<f64>,
    pub box_upper: Vec<f64>,
    pub active: Vec<String>,
    pub status: QpStatus,
    pub flags: u32,
    pub passivity_residual: f64,
    /// Sequence number of the last operator command applied before this step.
    pub last_seq: Option<u64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn row_label(row: &RowKind) -> String {
    match row {
        RowKind::AccelLower(i) => format!("accel_lower:{i}"),
        RowKind::AccelUpper(i) => format!("accel_upper:{i}"),
        RowKind::TorqueLower(i) => format!("torque_lower:{i}"),
        RowKind::TorqueUpper(i) => format!("torque_upper:{i}"),
        RowKind::Sca => "sca".into(),
        RowKind::Eca(id) => format!("eca:{id}"),
        RowKind::Slack => "slack".into(),
    }
}

impl StateSnapshot {
    pub fn from_record(
        step: u64,
        record: &StepRecord,
        active: &[RowKind],
        last_seq: Option<u64>,
    ) -> Self {
        Self {
            step,
            t: record.t,
            q: record.q.iter().copied().collect(),
            qd: record.qd.iter().copied().collect(),
            x: [record.x.x, record.x.y],
            target: [record.target.x, record.target.y],
            obstacles: record
                .obstacles
                .iter()
                .map(|o| ObstacleSnapshot {
                    id: o.id,
                    p: [o.p.x, o.p.y],
                    radius: o.radius,
                    viability_distance: finite(o.viability_distance),
                    clearance: o.clearance,
                })
                .collect(),
            gamma: finite(record.gamma),
            box_lower: record.box_lower.iter().copied().collect(),
            box_upper: record.box_upper.iter().copied().collect(),
            active: active.iter().map(row_label).collect(),
            status: record.status,
            flags: record.flags,
            passivity_residual: record.passivity_residual,
            last_seq,
        }
    }
}

/// Static facts about the running scenario, sent once in `hello`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub dof: usize,
    pub control_dt: f64,
    pub snapshot_decimation: u32,
    pub link_lengths: Vec<f64>,
    pub link_radii: Vec<f64>,
    pub q_lower: Vec<f64>,
    pub q_upper: Vec<f64>,
    pub reach: f64,
}

impl ScenarioSummary {
    pub fn new(scenario: &Scenario, model: &RobotModel, decimation: u32) -> Self {
        let v = |d: &nalgebra::DVector<f64>| d.iter().copied().collect();
        Self {
            name: scenario.name.clone(),
            dof: model.dof(),
            control_dt: scenario.control_dt,
            snapshot_decimation: decimation,
            link_lengths: v(&model.link_lengths),
            link_radii: v(&model.link_radii),
            q_lower: v(&model.q_lower),
            q_upper: v(&model.q_upper),
            reach: model.reach(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Hello {
        schema: String,
        role: Role,
        scenario: ScenarioSummary,
    },
    Snapshot(StateSnapshot),
    Role {
        role: Role,
    },
    Error {
        seq: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    Command {
        seq: u64,
        #[serde(flatten)]
        command: Command,
    },
    /// Take the operator role if nobody holds it.
    Claim,
    /// Give up the operator role.
    Release,
}

pub fn encode(frame: &ServerFrame) -> String {
    serde_json::to_string(frame).expect("server frames always serialize")
}

pub fn decode_server(text: &str) -> Result<ServerFrame, TeleopError> {
    Ok(serde_json::from_str(text)?)
}

pub fn decode_client(text: &str) -> Result<ClientFrame, TeleopError> {
    Ok(serde_json::from_str(text)?)
}
