//! Tensor-product Bernstein approximation of a signed distance field on
//! an axis-aligned box, in any dimension.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::geometry::capsule_sdf;
use crate::scalar::{lit, Real};

const MAGIC: &[u8; 4] = b"BSDF";

/// Values and derivatives of the `count` Bernstein polynomials of order
/// `count − 1` at `t ∈ [0, 1]`.
pub fn bernstein_basis<T: Real>(count: usize, t: T) -> (Vec<T>, Vec<T>) {
    assert!(count >= 1);
    let m = count - 1;
    let vals = basis_values(m, t);
    let ders = if m == 0 {
        vec![T::zero()]
    } else {
        let lower = basis_values(m - 1, t);
        let scale = lit::<T>(m as f64);
        (0..=m)
            .map(|i| {
                let left = if i > 0 { lower[i - 1] } else { T::zero() };
                let right = if i < m { lower[i] } else { T::zero() };
                scale * (left - right)
            })
            .collect()
    };
    (vals, ders)
}

fn basis_values<T: Real>(order: usize, t: T) -> Vec<T> {
    let s = T::one() - t;
    let mut tp = vec![T::one(); order + 1];
    let mut sp = vec![T::one(); order + 1];
    for i in 1..=order {
        tp[i] = tp[i - 1] * t;
        sp[i] = sp[i - 1] * s;
    }
    let mut binom = 1.0f64;
    (0..=order)
        .map(|i| {
            let v = lit::<T>(binom) * tp[i] * sp[order - i];
            binom = binom * (order - i) as f64 / (i + 1) as f64;
            v
        })
        .collect()
}

/// Contracts the trailing axis of a flattened tensor with `w`.
fn contract_last(tensor: &[f64], w: &[f64]) -> Vec<f64> {
    tensor
        .chunks_exact(w.len())
        .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// Signed distance approximation on `[lo, hi]` with `degree` basis
/// functions per axis and `degree^dim` coefficients (axis 0 slowest).
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinSdf {
    pub degree: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub ridge_lambda: f64,
    pub coeffs: DVector<f64>,
    pub rmse: f64,
}

/// Value and spatial gradient of a field query.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub grad: Vec<f64>,
    /// The query lay outside the domain box.
    pub outside: bool,
}

impl BernsteinSdf {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn coefficient_count(&self) -> usize {
        self.degree.pow(self.dim() as u32)
    }

    fn local(&self, p: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|a| ((p[a] - self.lo[a]) / (self.hi[a] - self.lo[a])).clamp(0.0, 1.0))
            .collect()
    }

    /// Tensor-product feature vector at a point inside the box.
    pub fn features(&self, p: &[f64]) -> DVector<f64> {
        let t = self.local(p);
        let bases: Vec<Vec<f64>> = t
            .iter()
            .map(|&ti| bernstein_basis(self.degree, ti).0)
            .collect();
        tensor_features(&bases, self.degree)
    }

    fn eval_inside(&self, p: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let d = self.dim();
        let t = self.local(p);
        let bases: Vec<(Vec<f64>, Vec<f64>)> = t
            .iter()
            .map(|&ti| bernstein_basis(self.degree, ti))
            .collect();
        let contract = |deriv_axis: Option<usize>| {
            let mut cur = self.coeffs.as_slice().to_vec();
            for a in (0..d).rev() {
                let w = if deriv_axis == Some(a) {
                    &bases[a].1
                } else {
                    &bases[a].0
                };
                cur = contract_last(&cur, w);
            }
            cur[0]
        };
        let value = contract(None);
        let grad = if want_grad {
            (0..d)
                .map(|a| contract(Some(a)) / (self.hi[a] - self.lo[a]))
                .collect()
        } else {
            Vec::new()
        };
        (value, grad)
    }

    /// Field value; outside the box the value at the projected boundary
    /// point plus the Euclidean remainder.
    pub fn value(&self, p: &[f64]) -> f64 {
        let (proj, rem) = self.project(p);
        self.eval_inside(&proj, false).0 + rem
    }

    pub fn sample(&self, p: &[f64]) -> FieldSample {
        let (proj, rem) = self.project(p);
        let (value, mut grad) = self.eval_inside(&proj, true);
        if rem > 0.0 {
            for a in 0..self.dim() {
                let off = p[a] - proj[a];
                // clamped axes only see the remainder term
                grad[a] = if off != 0.0 { off / rem } else { grad[a] };
            }
        }
        FieldSample {
            value: value + rem,
            grad,
            outside: rem > 0.0,
        }
    }

    fn project(&self, p: &[f64]) -> (Vec<f64>, f64) {
        let proj: Vec<f64> = (0..self.dim())
            .map(|a| p[a].clamp(self.lo[a], self.hi[a]))
            .collect();
        let rem = p
            .iter()
            .zip(&proj)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        (proj, rem)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, self.dim() as u32);
        put_u32(&mut buf, self.degree as u32);
        for v in self.lo.iter().chain(&self.hi) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.ridge_lambda.to_le_bytes());
        for v in self.coeffs.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.rmse.to_le_bytes());
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
        let dim = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let degree = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        if !(1..=3).contains(&dim) || !(2..=64).contains(&degree) {
            return Err(bad("unsupported dimension or degree"));
        }
        let lo = r
            .vector(dim)
            .ok_or_else(|| bad("truncated"))?
            .as_slice()
            .to_vec();
        let hi = r
            .vector(dim)
            .ok_or_else(|| bad("truncated"))?
            .as_slice()
            .to_vec();
        let ridge_lambda = r.f64().ok_or_else(|| bad("truncated"))?;
        let coeffs = r
            .vector(degree.pow(dim as u32))
            .ok_or_else(|| bad("truncated"))?;
        let rmse = r.f64().ok_or_else(|| bad("truncated"))?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(bad("empty domain box"));
        }
        Ok(Self {
            degree,
            lo,
            hi,
            ridge_lambda,
            coeffs,
            rmse,
        })
    }
}

fn tensor_features(bases: &[Vec<f64>], degree: usize) -> DVector<f64> {
    let d = bases.len();
    let count = degree.pow(d as u32);
    let mut out = DVector::zeros(count);
    let mut idx = vec![0usize; d];
    for k in 0..count {
        out[k] = (0..d).map(|a| bases[a][idx[a]]).product();
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < degree {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfFitConfig {
    pub degree: usize,
    pub ridge_lambda: f64,
    pub sample_count: usize,
    pub batch_size: usize,
    /// Margin (m) between the capsule surface and the domain box.
    pub padding: f64,
    /// Share of samples drawn outside the box and projected onto it.
    pub boundary_fraction: f64,
    pub seed: u64,
}

impl Default for SdfFitConfig {
    fn default() -> Self {
        Self {
            degree: 12,
            ridge_lambda: 1e-8,
            sample_count: 20_000,
            batch_size: 256,
            padding: 0.12,
            boundary_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Least-squares coefficients for `targets` at `points` inside `[lo, hi]`.
/// With `ridge_lambda > 0` the fit runs mini-batch recursive least squares
/// (square-root form), which equals the ridge solution; with `λ = 0` it
/// solves the normal equations and rejects ill-conditioned systems.
pub fn fit_bernstein(
    lo: &[f64],
    hi: &[f64],
    degree: usize,
    ridge_lambda: f64,
    points: &[Vec<f64>],
    targets: &[f64],
    batch_size: usize,
) -> Result<BernsteinSdf> {
    if degree < 2 {
        return Err(Error::InvalidArgument("degree must be at least 2".into()));
    }
    if ridge_lambda < 0.0 || points.len() != targets.len() || points.is_empty() {
        return Err(Error::InvalidArgument("bad fit inputs".into()));
    }
    let mut sdf = BernsteinSdf {
        degree,
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        ridge_lambda,
        coeffs: DVector::zeros(degree.pow(lo.len() as u32)),
        rmse: 0.0,
    };
    let k = sdf.coefficient_count();
    let feats: Vec<DVector<f64>> = points.iter().map(|p| sdf.features(p)).collect();

    if ridge_lambda == 0.0 {
        let mut ata = DMatrix::zeros(k, k);
        let mut aty = DVector::zeros(k);
        for (f, &y) in feats.iter().zip(targets) {
            ata.ger(1.0, f, f, 1.0);
            aty.axpy(y, f, 1.0);
        }
        let eig = ata.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition < 1e12) {
            return Err(Error::IllConditioned { condition });
        }
        let chol = ata.cholesky().ok_or(Error::IllConditioned { condition })?;
        sdf.coeffs = chol.solve(&aty);
    } else {
        // square-root information form: R starts at √λ·𝕀 and absorbs one
        // batch at a time through a QR update
        let mut r = DMatrix::identity(k, k) * ridge_lambda.sqrt();
        let mut z = DVector::zeros(k);
        let bs = batch_size.max(1);
        for start in (0..feats.len()).step_by(bs) {
            let end = (start + bs).min(feats.len());
            let rows = k + end - start;
            let stacked = DMatrix::from_fn(rows, k, |i, j| {
                if i < k {
                    r[(i, j)]
                } else {
                    feats[start + i - k][j]
                }
            });
            let rhs = DVector::from_fn(
                rows,
                |i, _| if i < k { z[i] } else { targets[start + i - k] },
            );
            let qr = stacked.qr();
            let qt_rhs = qr.q().tr_mul(&rhs);
            r = qr.r();
            z = qt_rhs.rows(0, k).into_owned();
        }
        let theta = r.solve_upper_triangular(&z).ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
        sdf.coeffs = theta;
    }
    let sse: f64 = feats
        .iter()
        .zip(targets)
        .map(|(f, &y)| (f.dot(&sdf.coeffs) - y).powi(2))
        .sum();
    sdf.rmse = (sse / targets.len() as f64).sqrt();
    Ok(sdf)
}

/// Domain box of a capsule link `[0, L] × {0}` with radius `r`.
pub fn capsule_box(length: f64, radius: f64, padding: f64) -> (Vec<f64>, Vec<f64>) {
    let m = radius + padding;
    (vec![-m, -m], vec![length + m, m])
}

/// Fits a link's capsule SDF from random samples; points drawn beyond
/// the box are projected onto its boundary.
pub fn fit_link_sdf(length: f64, radius: f64, config: &SdfFitConfig) -> Result<BernsteinSdf> {
    if length <= 0.0 || radius <= 0.0 {
        return Err(Error::InvalidArgument(
            "capsule dimensions must be positive".into(),
        ));
    }
    let k = config.degree.pow(2);
    if config.sample_count < 10 * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for {} coefficients",
            10 * k,
            k
        )));
    }
    let (lo, hi) = capsule_box(length, radius, config.padding);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut points = Vec::with_capacity(config.sample_count);
    for _ in 0..config.sample_count {
        let p: Vec<f64> = if rng.gen::<f64>() < config.boundary_fraction {
            (0..2)
                .map(|a| {
                    let w = hi[a] - lo[a];
                    rng.gen_range(lo[a] - 0.25 * w..=hi[a] + 0.25 * w)
                        .clamp(lo[a], hi[a])
                })
                .collect()
        } else {
            (0..2).map(|a| rng.gen_range(lo[a]..=hi[a])).collect()
        };
        points.push(p);
    }
    let targets: Vec<f64> = points
        .iter()
        .map(|p| capsule_sdf(&nalgebra::Vector2::new(p[0], p[1]), length, radius))
        .collect();
    fit_bernstein(
        &lo,
        &hi,
        config.degree,
        config.ridge_lambda,
        &points,
        &targets,
        config.batch_size,
    )
}
