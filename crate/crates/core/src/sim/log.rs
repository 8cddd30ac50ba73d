//! Trajectory log: a plain-text preamble describing the record layout,
//! followed by little-endian `f64` records each terminated by `0x0a`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DVector, Vector2};

use crate::binio::ByteReader;
use crate::error::{Error, Result};
use crate::qp::QpStatus;

pub const LOG_SCHEMA_VERSION: u32 = 1;

pub const FLAG_ECA_DROPPED: u32 = 1;
pub const FLAG_SCA_ACTIVE: u32 = 2;
pub const FLAG_PASSIVITY_LOST: u32 = 4;
pub const FLAG_ECA_ACTIVE: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleRecord {
    pub id: u32,
    pub p: Vector2<f64>,
    pub radius: f64,
    /// `S_v` at the obstacle center, NaN when not evaluated.
    pub viability_distance: f64,
    /// Geometric clearance between the link capsules and the disc.
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub x: Vector2<f64>,
    pub xd: Vector2<f64>,
    pub target: Vector2<f64>,
    pub tau: DVector<f64>,
    pub delta: f64,
    /// NaN without a classifier.
    pub gamma: f64,
    pub min_self_distance: f64,
    /// `+∞` without obstacles.
    pub min_obstacle_clearance: f64,
    pub box_lower: DVector<f64>,
    pub box_upper: DVector<f64>,
    pub status: QpStatus,
    pub flags: u32,
    pub passivity_residual: f64,
    pub wall_time: f64,
    pub obstacles: Vec<ObstacleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub name: String,
    pub dof: usize,
    pub control_dt: f64,
    pub records: Vec<StepRecord>,
}

fn status_code(s: QpStatus) -> f64 {
    match s {
        QpStatus::Optimal => 0.0,
        QpStatus::FallbackBraking => 1.0,
        QpStatus::Clamped => 2.0,
    }
}

fn status_from(code: f64) -> Option<QpStatus> {
    match code as i64 {
        0 => Some(QpStatus::Optimal),
        1 => Some(QpStatus::FallbackBraking),
        2 => Some(QpStatus::Clamped),
        _ => None,
    }
}

impl TrajectoryLog {
    pub fn new(name: &str, dof: usize, control_dt: f64) -> Self {
        Self {
            name: name.to_string(),
            dof,
            control_dt,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.records.iter().map(|r| r.x).collect()
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_wall_clock(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.wall_time = 0.0;
        }
        out
    }

    pub fn preamble(&self) -> String {
        let n = self.dof;
        format!(
            "vptc-log\n\
             schema {LOG_SCHEMA_VERSION}\n\
             name {}\n\
             dof {n}\n\
             control_dt {:e}\n\
             record t q[{n}] qd[{n}] x[2] xd[2] target[2] tau[{n}] delta gamma min_self_distance \
             min_obstacle_clearance box_lower[{n}] box_upper[{n}] status flags passivity_residual wall_time \
             obstacle_count obstacles[obstacle_count]{{id px py radius viability_distance clearance}}\n\
             encoding f64-le, each record terminated by 0x0a\n\
             status 0=optimal 1=fallback_braking 2=clamped\n\
             flags 1=eca_dropped 2=sca_active 4=passivity_lost 8=eca_active\n\
             data\n",
            self.name.replace('\n', " "),
            self.control_dt
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = self.preamble().into_bytes();
        let put = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
        for r in &self.records {
            put(&mut buf, r.t);
            for v in r.q.iter().chain(r.qd.iter()) {
                put(&mut buf, *v);
            }
            for v in r.x.iter().chain(r.xd.iter()).chain(r.target.iter()) {
                put(&mut buf, *v);
            }
            for v in r.tau.iter() {
                put(&mut buf, *v);
            }
            for v in [
                r.delta,
                r.gamma,
                r.min_self_distance,
                r.min_obstacle_clearance,
            ] {
                put(&mut buf, v);
            }
            for v in r.box_lower.iter().chain(r.box_upper.iter()) {
                put(&mut buf, *v);
            }
            for v in [
                status_code(r.status),
                r.flags as f64,
                r.passivity_residual,
                r.wall_time,
                r.obstacles.len() as f64,
            ] {
                put(&mut buf, v);
            }
            for o in &r.obstacles {
                for v in [
                    o.id as f64,
                    o.p.x,
                    o.p.y,
                    o.radius,
                    o.viability_distance,
                    o.clearance,
                ] {
                    put(&mut buf, v);
                }
            }
            buf.push(b'\n');
        }
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut header = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or("preamble not terminated")?;
            let line =
                std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| "preamble is not text")?;
            pos += end + 1;
            if line == "data" {
                break;
            }
            header.push(line.to_string());
        }
        if header.first().map(String::as_str) != Some("vptc-log") {
            return Err("not a trajectory log".into());
        }
        let field = |key: &str| {
            header
                .iter()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
                .ok_or(format!("missing {key}"))
        };
        let schema: u32 = field("schema")?.parse().map_err(|_| "bad schema")?;
        if schema != LOG_SCHEMA_VERSION {
            return Err(format!("unsupported schema {schema}"));
        }
        let dof: usize = field("dof")?.parse().map_err(|_| "bad dof")?;
        if dof == 0 || dof > 64 {
            return Err("implausible dof".into());
        }
        let control_dt: f64 = field("control_dt")?.parse().map_err(|_| "bad control_dt")?;
        let name = field("name")?.to_string();

        let mut r = ByteReader::new(&bytes[pos..]);
        let mut records = Vec::new();
        let trunc = || "truncated record".to_string();
        while !r.is_empty() {
            let t = r.f64().ok_or_else(trunc)?;
            let q = r.vector(dof).ok_or_else(trunc)?;
            let qd = r.vector(dof).ok_or_else(trunc)?;
            let six = r.vector(6).ok_or_else(trunc)?;
            let tau = r.vector(dof).ok_or_else(trunc)?;
            let four = r.vector(4).ok_or_else(trunc)?;
            let box_lower = r.vector(dof).ok_or_else(trunc)?;
            let box_upper = r.vector(dof).ok_or_else(trunc)?;
            let tail = r.vector(5).ok_or_else(trunc)?;
            let count = tail[4];
            if !((0.0..=1e6).contains(&count) && count.fract() == 0.0) {
                return Err("bad obstacle count".into());
            }
            let mut obstacles = Vec::with_capacity(count as usize);
            for _ in 0..count as usize {
                let o = r.vector(6).ok_or_else(trunc)?;
                obstacles.push(ObstacleRecord {
                    id: o[0] as u32,
                    p: Vector2::new(o[1], o[2]),
                    radius: o[3],
                    viability_distance: o[4],
                    clearance: o[5],
                });
            }
            if r.take(1) != Some(b"\n") {
                return Err("record terminator missing".into());
            }
            records.push(StepRecord {
                t,
                q,
                qd,
                x: Vector2::new(six[0], six[1]),
                xd: Vector2::new(six[2], six[3]),
                target: Vector2::new(six[4], six[5]),
                tau,
                delta: four[0],
                gamma: four[1],
                min_self_distance: four[2],
                min_obstacle_clearance: four[3],
                box_lower,
                box_upper,
                status: status_from(tail[0]).ok_or("bad status code")?,
                flags: tail[1] as u32,
                passivity_residual: tail[2],
                wall_time: tail[3],
                obstacles,
            });
        }
        Ok(Self {
            name,
            dof,
            control_dt,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_record(t: f64, obstacles: usize) -> StepRecord {
        StepRecord {
            t,
            q: DVector::from_vec(vec![0.1, -0.2, 10.0_f64.powi(-300)]),
            qd: DVector::from_vec(vec![1.0, 2.0, -3.0]),
            x: Vector2::new(0.5, 0.25),
            xd: Vector2::new(-1e-9, 0.0),
            target: Vector2::new(0.3, 0.3),
            tau: DVector::from_vec(vec![5.0, -1.0, 0.25]),
            delta: 0.0,
            gamma: f64::NAN,
            min_self_distance: 0.12,
            min_obstacle_clearance: f64::INFINITY,
            box_lower: DVector::from_element(3, -10.0),
            box_upper: DVector::from_element(3, 10.0),
            status: QpStatus::Clamped,
            flags: FLAG_SCA_ACTIVE | FLAG_ECA_ACTIVE,
            passivity_residual: -0.5,
            wall_time: 1.5e-4,
            obstacles: (0..obstacles)
                .map(|i| ObstacleRecord {
                    id: i as u32 + 1,
                    p: Vector2::new(0.1 * i as f64, 0.6),
                    radius: 0.05,
                    viability_distance: 0.2,
                    // 0x0a bytes inside the payload must not confuse the reader
                    clearance: f64::from_le_bytes([10; 8]),
                })
                .collect(),
        }
    }

    #[test]
    fn bytes_round_trip_including_nan_and_newline_bytes() {
        let mut log = TrajectoryLog::new("demo", 3, 0.005);
        for k in 0..5 {
            log.records.push(sample_record(k as f64 * 0.005, k % 3));
        }
        let bytes = log.to_bytes();
        let back = TrajectoryLog::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.records.len(), 5);
        assert!(back.records[0].gamma.is_nan());
        assert_eq!(back.records[2].obstacles.len(), 2);
        assert_eq!(back.records[4].status, QpStatus::Clamped);
    }

    #[test]
    fn preamble_is_text_and_checked() {
        let log = TrajectoryLog::new("demo", 2, 0.005);
        let bytes = log.to_bytes();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with("vptc-log\nschema 1\n"));
        assert!(text.ends_with("data\n"));
        assert_eq!(TrajectoryLog::from_bytes(&bytes).unwrap(), log);

        let bumped = text.replace("schema 1", "schema 2");
        assert!(TrajectoryLog::from_bytes(bumped.as_bytes()).is_err());
        let mut log = log;
        log.dof = 3;
        log.records.push(sample_record(0.0, 1));
        let bytes = log.to_bytes();
        assert!(TrajectoryLog::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(TrajectoryLog::from_bytes(b"hello\ndata\n").is_err());
    }

    #[test]
    fn masking_wall_clock() {
        let mut log = TrajectoryLog::new("demo", 3, 0.005);
        log.records.push(sample_record(0.0, 0));
        let masked = log.without_wall_clock();
        assert_eq!(masked.records[0].wall_time, 0.0);
        assert_ne!(masked.to_bytes(), log.to_bytes());
    }
}
