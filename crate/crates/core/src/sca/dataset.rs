//! Braking-rollout labeled self-collision data.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::self_collision_distance;
use crate::kinematics::{JointState, RobotModel};
use crate::viability::braking_rollout;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub viable: bool,
    /// Time of the first colliding rollout sample for nonviable states.
    pub first_contact_t: Option<f64>,
}

impl LabeledState {
    pub fn state(&self) -> JointState {
        JointState::new(self.q.clone(), self.qd.clone())
    }
}

/// Labels a state viable iff every sample of its braking rollout is free
/// of self-collision.
pub fn label_state(model: &RobotModel, state: &JointState, dt_brake: f64) -> LabeledState {
    let rollout = braking_rollout(model, state, dt_brake);
    let first_contact_t = rollout
        .samples
        .iter()
        .find(|s| self_collision_distance(model, &s.q) <= 0.0)
        .map(|s| s.t);
    LabeledState {
        q: state.q.clone(),
        qd: state.qd.clone(),
        viable: first_contact_t.is_none(),
        first_contact_t,
    }
}

/// Uniform state for dataset index `index`; each index owns its own
/// ChaCha stream so the result does not depend on thread scheduling.
pub fn sample_state(model: &RobotModel, seed: u64, index: u64) -> JointState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = model.dof();
    let q = DVector::from_fn(n, |k, _| rng.gen_range(model.q_lower[k]..=model.q_upper[k]));
    let qd = DVector::from_fn(n, |k, _| rng.gen_range(-model.qd_max[k]..=model.qd_max[k]));
    JointState::new(q, qd)
}

pub fn generate_sca_dataset(
    model: &RobotModel,
    count: usize,
    seed: u64,
    dt_brake: f64,
) -> Result<Vec<LabeledState>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "dataset count must be positive".into(),
        ));
    }
    if dt_brake <= 0.0 {
        return Err(Error::InvalidArgument("dt_brake must be positive".into()));
    }
    model.validate()?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|i| label_state(model, &sample_state(model, seed, i), dt_brake))
        .collect())
}

/// Fraction of viable samples.
pub fn viable_fraction(data: &[LabeledState]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    data.iter().filter(|s| s.viable).count() as f64 / data.len() as f64
}

pub fn write_dataset(path: &Path, data: &[LabeledState]) -> Result<()> {
    let n = data.first().map_or(0, |s| s.q.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..n).map(|k| format!("q_{k}")).collect();
    header.extend((0..n).map(|k| format!("qd_{k}")));
    header.push("label".into());
    header.push("first_contact_t".into());
    w.write_record(&header)?;
    for s in data {
        let mut row: Vec<String> =
            s.q.iter()
                .chain(s.qd.iter())
                .map(|v| v.to_string())
                .collect();
        row.push(if s.viable { "viable" } else { "nonviable" }.into());
        row.push(
            s.first_contact_t
                .map_or_else(String::new, |t| t.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledState>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 4 || (headers.len() - 2) % 2 != 0 {
        return Err(bad(format!("unexpected column count {}", headers.len())));
    }
    let n = (headers.len() - 2) / 2;
    for k in 0..n {
        if headers[k] != format!("q_{k}") || headers[n + k] != format!("qd_{k}") {
            return Err(bad(
                "header must be q_0.., qd_0.., label, first_contact_t".into()
            ));
        }
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", line + 1)))
        };
        let q = DVector::from_iterator(n, (0..n).map(num).collect::<Result<Vec<_>>>()?);
        let qd = DVector::from_iterator(n, (n..2 * n).map(num).collect::<Result<Vec<_>>>()?);
        let viable = match &rec[2 * n] {
            "viable" => true,
            "nonviable" => false,
            other => return Err(bad(format!("row {}: unknown label {other:?}", line + 1))),
        };
        let first_contact_t = if rec[2 * n + 1].is_empty() {
            None
        } else {
            Some(num(2 * n + 1)?)
        };
        out.push(LabeledState {
            q,
            qd,
            viable,
            first_contact_t,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colliding_state_has_zero_contact_time() {
        let model = RobotModel::desk();
        let state = JointState::new(
            DVector::from_vec(vec![0.0, 2.8, 2.8]),
            DVector::from_vec(vec![0.5, -1.0, 0.3]),
        );
        let s = label_state(&model, &state, 1e-3);
        assert!(!s.viable);
        assert_eq!(s.first_contact_t, Some(0.0));
    }

    #[test]
    fn straight_rest_is_viable() {
        let model = RobotModel::desk();
        let s = label_state(&model, &JointState::at_rest(DVector::zeros(3)), 1e-3);
        assert!(s.viable);
        assert_eq!(s.first_contact_t, None);
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let model = RobotModel::desk();
        let a = generate_sca_dataset(&model, 300, 7, 1e-3).unwrap();
        let b = generate_sca_dataset(&model, 300, 7, 1e-3).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_dataset(&pa, &a).unwrap();
        write_dataset(&pb, &b).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(read_dataset(&pa).unwrap(), a);
    }

    #[test]
    fn samples_stay_in_limits() {
        let model = RobotModel::desk();
        for i in 0..200 {
            let s = sample_state(&model, 3, i);
            assert!(model.in_joint_limits(&s));
        }
    }
}
