//! Classifier training and threshold selection.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::LabeledState;
use super::mlp::Mlp;
use super::{InputScaling, ScaModel};
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub validation_fraction: f64,
    /// Minimum viable-class precision accepted by the threshold sweep.
    pub precision_floor: f64,
    /// Lower clamp for the selected threshold.
    pub min_threshold: f64,
    /// Lower bound on `ε_sca`; the band is at least twice the threshold.
    pub activation_band: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            validation_fraction: 0.2,
            precision_floor: 0.99,
            min_threshold: 0.25,
            activation_band: 4.0,
            seed: 0,
        }
    }
}

/// Binary confusion counts with "viable" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s > threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// Precision of the viable prediction; 1 when nothing is predicted viable.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return 1.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_size: usize,
    pub validation_size: usize,
    pub viable_fraction: f64,
    pub reweighted: bool,
    pub final_loss: f64,
    pub threshold_sweep: f64,
    pub validation: Confusion,
}

/// Threshold maximizing viable recall subject to precision ≥ `floor`,
/// predicting viable iff `score > threshold`. Ties in recall prefer higher
/// precision; remaining ties resolve to the midpoint of the tied range.
/// When no threshold meets the floor, the most precise one is returned.
pub fn select_threshold(scores: &[f64], labels: &[bool], floor: f64) -> f64 {
    assert!(!scores.is_empty(), "validation set is empty");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;

    // Candidate intervals (lo, hi] between distinct sorted scores; the
    // threshold t ∈ [lo, hi) classifies every score ≤ lo as nonviable.
    struct Cand {
        lo: f64,
        hi: f64,
        recall: f64,
        precision: f64,
    }
    let mut cands = Vec::new();
    let (mut tp, mut fp) = (positives, negatives);
    let push = |lo: f64, hi: f64, tp: usize, fp: usize, cands: &mut Vec<Cand>| {
        let recall = if positives == 0 {
            1.0
        } else {
            tp as f64 / positives as f64
        };
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        cands.push(Cand {
            lo,
            hi,
            recall,
            precision,
        });
    };
    push(f64::NEG_INFINITY, scores[order[0]], tp, fp, &mut cands);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let hi = if i < order.len() {
            scores[order[i]]
        } else {
            f64::INFINITY
        };
        push(s, hi, tp, fp, &mut cands);
    }

    let feasible: Vec<&Cand> = cands.iter().filter(|c| c.precision >= floor).collect();
    let best: Vec<&Cand> = if feasible.is_empty() {
        let p = cands
            .iter()
            .map(|c| c.precision)
            .fold(f64::NEG_INFINITY, f64::max);
        cands.iter().filter(|c| c.precision == p).collect()
    } else {
        let r = feasible
            .iter()
            .map(|c| c.recall)
            .fold(f64::NEG_INFINITY, f64::max);
        let top: Vec<&Cand> = feasible.into_iter().filter(|c| c.recall == r).collect();
        let p = top
            .iter()
            .map(|c| c.precision)
            .fold(f64::NEG_INFINITY, f64::max);
        top.into_iter().filter(|c| c.precision == p).collect()
    };
    let lo = best.iter().map(|c| c.lo).fold(f64::INFINITY, f64::min);
    let hi = best.iter().map(|c| c.hi).fold(f64::NEG_INFINITY, f64::max);
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (false, true) => hi - 1.0,
        (true, false) => lo + 1.0,
        (false, false) => 0.0,
    }
}

/// Trains the self-collision classifier on `data` (viable = class 0, so
/// `Γ = ℓ1 − ℓ2 > 0` predicts viable).
pub fn train_sca(
    robot: &RobotModel,
    data: &[LabeledState],
    config: &TrainConfig,
) -> Result<(ScaModel, TrainReport)> {
    let n = robot.dof();
    if data.iter().all(|s| s.viable) || data.iter().all(|s| !s.viable) {
        return Err(Error::DegenerateDataset(
            "dataset must contain both classes".into(),
        ));
    }
    if data.iter().any(|s| s.q.len() != n || s.qd.len() != n) {
        return Err(Error::InvalidArgument(
            "dataset dimension does not match the robot".into(),
        ));
    }
    let scaling = InputScaling::from_limits(robot);
    let inputs: Vec<DVector<f64>> = data.iter().map(|s| scaling.apply(&s.q, &s.qd)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let frac =
        train_idx.iter().filter(|&&i| data[i].viable).count() as f64 / train_idx.len() as f64;
    let reweighted = !(0.2..=0.8).contains(&frac);
    let (w_pos, w_neg) = if reweighted {
        (0.5 / frac, 0.5 / (1.0 - frac))
    } else {
        (1.0, 1.0)
    };

    let mut dims = vec![2 * n];
    dims.extend(&config.hidden);
    dims.push(2);
    let mut net = Mlp::init(&dims, config.seed ^ 0x5ca1);
    let mut vel_w: Vec<DMatrix<f64>> = net
        .weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    let mut vel_b: Vec<DVector<f64>> = net.biases.iter().map(|b| DVector::zeros(b.len())).collect();

    let batches_per_epoch = train_idx.len().div_ceil(config.batch_size);
    let total_steps = (batches_per_epoch * config.epochs).max(1);
    let mut step = 0usize;
    let mut final_loss = f64::NAN;
    for _epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for chunk in train_idx.chunks(config.batch_size) {
            let lr = config.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
            step += 1;
            let x = DMatrix::from_fn(2 * n, chunk.len(), |r, c| inputs[chunk[c]][r]);
            let (acts, pres) = net.forward_batch(&x);
            let logits = pres.last().unwrap();
            let weights: Vec<f64> = chunk
                .iter()
                .map(|&i| if data[i].viable { w_pos } else { w_neg })
                .collect();
            let wsum: f64 = weights.iter().sum();
            let mut d_out = DMatrix::zeros(2, chunk.len());
            for (c, &i) in chunk.iter().enumerate() {
                // two-class softmax cross-entropy written through the margin
                let margin = logits[(0, c)] - logits[(1, c)];
                let y = if data[i].viable { 1.0 } else { -1.0 };
                let z = y * margin;
                let loss = if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                };
                let p_wrong = 1.0 / (1.0 + z.exp());
                let g = -y * p_wrong * weights[c] / wsum;
                d_out[(0, c)] = g;
                d_out[(1, c)] = -g;
                epoch_loss += weights[c] * loss;
                epoch_weight += weights[c];
            }
            let (gw, gb) = net.backward_batch(&acts, &pres, d_out);
            for l in 0..net.weights.len() {
                let decay = &net.weights[l] * config.weight_decay;
                vel_w[l] = &vel_w[l] * config.momentum - (&gw[l] + decay) * lr;
                vel_b[l] = &vel_b[l] * config.momentum - &gb[l] * lr;
                net.weights[l] += &vel_w[l];
                net.biases[l] += &vel_b[l];
            }
        }
        final_loss = epoch_loss / epoch_weight;
        log::debug!("sca epoch {_epoch}: loss {final_loss:.5}");
    }

    let mut model = ScaModel {
        net,
        scaling,
        gamma_thr: 0.0,
        epsilon_sca: 0.0,
    };
    let scores: Vec<f64> = val_idx
        .iter()
        .map(|&i| model.gamma(&data[i].q, &data[i].qd))
        .collect();
    let labels: Vec<bool> = val_idx.iter().map(|&i| data[i].viable).collect();
    let sweep = select_threshold(&scores, &labels, config.precision_floor);
    model.gamma_thr = sweep.max(config.min_threshold);
    model.epsilon_sca = config.activation_band.max(2.0 * model.gamma_thr);
    let report = TrainReport {
        train_size: train_idx.len(),
        validation_size: val_idx.len(),
        viable_fraction: frac,
        reweighted,
        final_loss,
        threshold_sweep: sweep,
        validation: Confusion::from_scores(&scores, &labels, model.gamma_thr),
    };
    Ok((model, report))
}
