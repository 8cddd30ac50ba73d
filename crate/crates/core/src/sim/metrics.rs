//! Trajectory quality metrics.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::log::TrajectoryLog;

pub const CONVERGENCE_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub steps: usize,
    /// Control steps per wall-clock second.
    pub loop_rate: f64,
    pub path_length: f64,
    /// `None` when the path is degenerate or too short.
    pub normalized_jerk: Option<f64>,
    pub min_self_distance: f64,
    pub min_obstacle_clearance: f64,
    pub converged: bool,
}

/// `Σ ‖x_{k+1} − x_k‖`.
pub fn path_length(xs: &[Vector2<f64>]) -> f64 {
    xs.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Third derivative of uniformly sampled positions: five-point central
/// differences in the interior, four-point one-sided stencils at the ends.
pub fn third_derivative(xs: &[Vector2<f64>], h: f64) -> Result<Vec<Vector2<f64>>> {
    let n = xs.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "third differences need 4 samples, got {n}"
        )));
    }
    let h3 = h * h * h;
    let forward = |k: usize| (xs[k + 3] - xs[k + 2] * 3.0 + xs[k + 1] * 3.0 - xs[k]) / h3;
    let backward = |k: usize| (xs[k] - xs[k - 1] * 3.0 + xs[k - 2] * 3.0 - xs[k - 3]) / h3;
    Ok((0..n)
        .map(|k| {
            if k >= 2 && k + 2 < n {
                (xs[k + 2] - xs[k + 1] * 2.0 + xs[k - 1] * 2.0 - xs[k - 2]) / (2.0 * h3)
            } else if k + 3 < n {
                forward(k)
            } else {
                backward(k.max(3))
            }
        })
        .collect())
}

/// `NJ = ∫‖x⃛‖² dt / (L² T⁵)` over samples spaced `h` apart.
pub fn normalized_jerk(xs: &[Vector2<f64>], h: f64) -> Result<f64> {
    let jerk = third_derivative(xs, h)?;
    let length = path_length(xs);
    if length <= 0.0 {
        return Err(Error::DegeneratePath);
    }
    let sq: Vec<f64> = jerk.iter().map(|j| j.norm_squared()).collect();
    let integral = sq.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum::<f64>();
    let duration = h * (xs.len() - 1) as f64;
    Ok(integral / (length * length * duration.powi(5)))
}

/// Steps divided by the summed wall-clock step times.
pub fn loop_rate(wall_times: &[f64]) -> f64 {
    let total: f64 = wall_times.iter().sum();
    if total > 0.0 {
        wall_times.len() as f64 / total
    } else {
        0.0
    }
}

pub fn compute_metrics(log: &TrajectoryLog) -> Metrics {
    let xs = log.positions();
    let walls: Vec<f64> = log.records.iter().map(|r| r.wall_time).collect();
    let min = |f: &dyn Fn(&crate::sim::log::StepRecord) -> f64| {
        log.records.iter().map(f).fold(f64::INFINITY, f64::min)
    };
    Metrics {
        scenario: log.name.clone(),
        steps: log.len(),
        loop_rate: loop_rate(&walls),
        path_length: path_length(&xs),
        normalized_jerk: normalized_jerk(&xs, log.control_dt).ok(),
        min_self_distance: min(&|r| r.min_self_distance),
        min_obstacle_clearance: min(&|r| r.min_obstacle_clearance),
        converged: log
            .records
            .last()
            .is_some_and(|r| (r.x - r.target).norm() <= CONVERGENCE_TOL),
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "scenario",
    "steps",
    "loop_rate_hz",
    "path_length_m",
    "normalized_jerk",
    "min_self_distance_m",
    "min_obstacle_clearance_m",
    "converged",
];

fn metrics_row(m: &Metrics) -> [String; 8] {
    [
        m.scenario.clone(),
        m.steps.to_string(),
        format!("{}", m.loop_rate),
        format!("{}", m.path_length),
        m.normalized_jerk
            .map(|v| format!("{v}"))
            .unwrap_or_default(),
        format!("{}", m.min_self_distance),
        format!("{}", m.min_obstacle_clearance),
        m.converged.to_string(),
    ]
}

/// One CSV row per run under a fixed header.
pub fn write_metrics_csv<W: std::io::Write>(out: W, rows: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for m in rows {
        w.write_record(metrics_row(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics_csv(path: &Path, rows: &[Metrics]) -> Result<()> {
    write_metrics_csv(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn straight_line_has_zero_jerk() {
        let h = 0.01;
        let xs: Vec<_> = (0..200)
            .map(|k| Vector2::new(0.3 * k as f64 * h, -0.1 * k as f64 * h))
            .collect();
        assert!(normalized_jerk(&xs, h).unwrap().abs() < 1e-12);
        assert_relative_eq!(
            path_length(&xs),
            (0.09f64 + 0.01).sqrt() * 1.99,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cubic_third_derivative_is_exact() {
        let h = 0.1;
        let xs: Vec<_> = (0..4)
            .map(|k| Vector2::new((k as f64 * h).powi(3), 0.0))
            .collect();
        for j in third_derivative(&xs, h).unwrap() {
            assert_relative_eq!(j.x, 6.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn errors() {
        let still = vec![Vector2::new(0.2, 0.2); 10];
        assert!(matches!(
            normalized_jerk(&still, 0.01),
            Err(Error::DegeneratePath)
        ));
        assert!(normalized_jerk(&still[..3], 0.01).is_err());
        assert_eq!(path_length(&still), 0.0);
    }

    #[test]
    fn loop_rate_arithmetic() {
        assert_relative_eq!(loop_rate(&[0.005; 1000]), 200.0, epsilon = 1e-9);
        assert_relative_eq!(loop_rate(&[0.004]), 250.0);
        assert_relative_eq!(loop_rate(&[0.001, 0.003]), 2.0 / 0.004);
        assert_eq!(loop_rate(&[]), 0.0);
    }

    #[test]
    fn csv_has_header_and_empty_jerk_cell() {
        let m = Metrics {
            scenario: "a".into(),
            steps: 0,
            loop_rate: 0.0,
            path_length: 0.0,
            normalized_jerk: None,
            min_self_distance: f64::INFINITY,
            min_obstacle_clearance: f64::INFINITY,
            converged: false,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER.join(","));
        assert_eq!(lines[1], "a,0,0,0,,inf,inf,false");
    }
}
