//! Small dense GeLU network with exact input gradients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::{lit, Real};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh form of GeLU.
pub fn gelu<T: Real>(x: T) -> T {
    let u = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    lit::<T>(0.5) * x * (T::one() + u.tanh())
}

pub fn gelu_prime<T: Real>(x: T) -> T {
    let half: T = lit(0.5);
    let u = lit::<T>(GELU_C) * (x + lit::<T>(GELU_A) * x * x * x);
    let th = u.tanh();
    let du = lit::<T>(GELU_C) * (T::one() + lit::<T>(3.0 * GELU_A) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Fully connected network; GeLU on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real = f64> {
    pub weights: Vec<DMatrix<T>>,
    pub biases: Vec<DVector<T>>,
}

impl<T: Real> Mlp<T> {
    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].ncols()];
        d.extend(self.weights.iter().map(|w| w.nrows()));
        d
    }

    pub fn forward(&self, x: &DVector<T>) -> DVector<T> {
        let last = self.weights.len() - 1;
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * &a + b;
            a = if l == last { z } else { z.map(gelu) };
        }
        a
    }

    /// Output and the gradient of `c·output` with respect to the input.
    pub fn forward_with_input_grad(
        &self,
        x: &DVector<T>,
        c: &DVector<T>,
    ) -> (DVector<T>, DVector<T>) {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut a = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * &a + b;
            if l == last {
                a = z;
            } else {
                a = z.map(gelu);
                pre.push(z);
            }
        }
        let mut grad = self.weights[last].tr_mul(c);
        for l in (0..last).rev() {
            grad.component_mul_assign(&pre[l].map(gelu_prime));
            grad = self.weights[l].tr_mul(&grad);
        }
        (a, grad)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        let f = |v: T| lit::<U>(crate::scalar::to_f64(v));
        Mlp {
            weights: self.weights.iter().map(|w| w.map(f)).collect(),
            biases: self.biases.iter().map(|b| b.map(f)).collect(),
        }
    }
}

impl Mlp<f64> {
    /// He-style normal initialization with zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                normal.sample(&mut rng)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Batched forward pass on the columns of `x`; returns the
    /// pre-activations of every layer (the last one is the output).
    pub(crate) fn forward_batch(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        let mut pres = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l != last {
                acts.push(z.map(gelu));
            }
            pres.push(z);
        }
        (acts, pres)
    }

    /// Parameter gradients given the batch activations and `∂loss/∂output`.
    pub(crate) fn backward_batch(
        &self,
        acts: &[DMatrix<f64>],
        pres: &[DMatrix<f64>],
        d_out: DMatrix<f64>,
    ) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        let layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); layers];
        let mut gb = vec![DVector::zeros(0); layers];
        let mut delta = d_out;
        for l in (0..layers).rev() {
            gw[l] = &delta * acts[l].transpose();
            gb[l] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if l > 0 {
                let mut back = self.weights[l].tr_mul(&delta);
                back.zip_apply(&pres[l - 1], |g, z| *g *= gelu_prime(z));
                delta = back;
            }
        }
        (gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_relative_eq!(gelu_prime(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn input_gradient_matches_difference() {
        let net = Mlp::init(&[4, 16, 16, 2], 5);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.8, -0.9]);
        let c = DVector::from_vec(vec![1.0, -1.0]);
        let (y, g) = net.forward_with_input_grad(&x, &c);
        assert_eq!(y, net.forward(&x));
        for i in 0..4 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (c.dot(&net.forward(&xp)) - c.dot(&net.forward(&xm))) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-7, max_relative = 1e-6);
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = Mlp::init(&[3, 8, 2], 1);
        let x = DMatrix::from_fn(3, 5, |i, j| (i as f64 - j as f64) * 0.1);
        let (_, pres) = net.forward_batch(&x);
        for j in 0..5 {
            let y = net.forward(&x.column(j).into_owned());
            assert_relative_eq!(
                pres.last().unwrap().column(j).into_owned(),
                y,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn parameter_gradient_matches_difference() {
        let mut net = Mlp::init(&[2, 5, 2], 9);
        let x = DMatrix::from_row_slice(2, 3, &[0.1, -0.4, 0.7, 0.5, 0.2, -0.3]);
        // loss = sum of outputs weighted by a fixed matrix
        let wout = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.2, 0.3, -1.0, 0.8]);
        let loss = |n: &Mlp| {
            n.forward_batch(&x)
                .1
                .last()
                .unwrap()
                .component_mul(&wout)
                .sum()
        };
        let (acts, pres) = net.forward_batch(&x);
        let (gw, gb) = net.backward_batch(&acts, &pres, wout.clone());
        let h = 1e-6;
        for l in 0..2 {
            for idx in 0..net.weights[l].len() {
                let orig = net.weights[l][idx];
                net.weights[l][idx] = orig + h;
                let lp = loss(&net);
                net.weights[l][idx] = orig - h;
                let lm = loss(&net);
                net.weights[l][idx] = orig;
                assert_relative_eq!(gw[l][idx], (lp - lm) / (2.0 * h), epsilon = 1e-7);
            }
            for idx in 0..net.biases[l].len() {
                let orig = net.biases[l][idx];
                net.biases[l][idx] = orig + h;
                let lp = loss(&net);
                net.biases[l][idx] = orig - h;
                let lm = loss(&net);
                net.biases[l][idx] = orig;
                assert_relative_eq!(gb[l][idx], (lp - lm) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }
}
