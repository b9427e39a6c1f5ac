//! L1-loss linear SVM trained by dual coordinate descent.
//!
//! The bias is handled as an extra constant feature, so the solved problem is
//! `min ½(‖w‖² + b²) + C Σ max(0, 1 − yᵢ(w·xᵢ + b))`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearSvmParams {
    pub c: f64,
    /// Relative duality-gap tolerance: stop once `gap <= tol * (1 + |primal|)`.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for LinearSvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvmModel {
    weights: Vec<f64>,
    bias: f64,
    params: LinearSvmParams,
}

/// Per-epoch objective values recorded during training.
#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    /// Primal objective of the best iterate so far, which is the one returned.
    pub primal: Vec<f64>,
    /// Primal objective of each epoch's own iterate.
    pub iterate_primal: Vec<f64>,
    pub dual: Vec<f64>,
}

impl SolverTrace {
    pub fn epochs(&self) -> usize {
        self.primal.len()
    }

    pub fn final_gap(&self) -> f64 {
        match (self.primal.last(), self.dual.last()) {
            (Some(p), Some(d)) => p - d,
            _ => f64::INFINITY,
        }
    }
}

impl LinearSvmModel {
    pub fn from_parts(weights: Vec<f64>, bias: f64, params: LinearSvmParams) -> Self {
        Self {
            weights,
            bias,
            params,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn params(&self) -> &LinearSvmParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: &[f32]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.f64(self.params.c);
        w.f64(self.params.tol);
        w.u64(self.params.max_epochs as u64);
        w.u64(self.params.seed);
        w.f64(self.bias);
        w.f64s(&self.weights);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let params = LinearSvmParams {
            c: r.f64()?,
            tol: r.f64()?,
            max_epochs: r.u64()? as usize,
            seed: r.u64()?,
        };
        let bias = r.f64()?;
        let weights = r.f64s()?;
        Ok(Self {
            weights,
            bias,
            params,
        })
    }
}

#[inline]
fn dot(w: &[f64], x: &[f32]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| a * f64::from(b)).sum()
}

pub fn train_linear_svm(data: &Dataset, params: &LinearSvmParams) -> Result<LinearSvmModel> {
    train_linear_svm_traced(data, params).map(|(m, _)| m)
}

/// Trains and also returns the per-epoch primal and dual objective values.
pub fn train_linear_svm_traced(data: &Dataset, params: &LinearSvmParams) -> Result<(LinearSvmModel, SolverTrace)> {
    if !(params.c > 0.0) {
        return Err(Error::InvalidParameter(format!("C must be > 0, got {}", params.c)));
    }
    data.require_both_classes()?;
    let n = data.len();
    let dim = data.dim();
    let y: Vec<f64> = data.labels().iter().map(|l| l.sign()).collect();
    let qdiag: Vec<f64> = data
        .rows()
        .map(|x| x.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() + 1.0)
        .collect();

    let c = params.c;
    let mut alpha = vec![0.0f64; n];
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = SolverTrace::default();
    let mut best = (f64::INFINITY, w.clone(), b);

    for epoch in 0..params.max_epochs.max(1) {
        let mut rng = seed::rng(params.seed, seed::stream::SVM_ORDER, epoch as u64);
        order.shuffle(&mut rng);
        for &i in &order {
            let x = data.row(i);
            let g = y[i] * (dot(&w, x) + b) - 1.0;
            let a_old = alpha[i];
            let a_new = (a_old - g / qdiag[i]).clamp(0.0, c);
            let delta = (a_new - a_old) * y[i];
            if delta != 0.0 {
                alpha[i] = a_new;
                for (wj, &xj) in w.iter_mut().zip(x) {
                    *wj += delta * f64::from(xj);
                }
                b += delta;
            }
        }

        let half_norm = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
        let hinge: f64 = (0..n)
            .map(|i| (1.0 - y[i] * (dot(&w, data.row(i)) + b)).max(0.0))
            .sum();
        let primal = half_norm + c * hinge;
        let dual = alpha.iter().sum::<f64>() - half_norm;
        if primal < best.0 {
            best = (primal, w.clone(), b);
        }
        trace.iterate_primal.push(primal);
        trace.primal.push(best.0);
        trace.dual.push(dual);
        // weak duality: best.0 >= optimum >= dual, so this bounds the returned model's suboptimality
        if best.0 - dual <= params.tol * (1.0 + best.0.abs()) {
            break;
        }
    }

    let (_, weights, bias) = best;
    Ok((
        LinearSvmModel {
            weights,
            bias,
            params: params.clone(),
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, spread: f64, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut d = Dataset::new(2);
        for i in 0..n {
            let (c, l) = if i % 2 == 0 { (2.0, Label::Genuine) } else { (-2.0, Label::Impostor) };
            let x = [(c + noise.sample(&mut rng)) as f32, (c + noise.sample(&mut rng)) as f32];
            d.push(&x, l).unwrap();
        }
        d
    }

    fn accuracy(m: &LinearSvmModel, d: &Dataset) -> f64 {
        let ok = (0..d.len())
            .filter(|&i| (m.decision(d.row(i)) > 0.0) == d.label(i).is_genuine())
            .count();
        ok as f64 / d.len() as f64
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let d = blobs(100, 0.3, 1);
        let (m, trace) = train_linear_svm_traced(&d, &LinearSvmParams::default()).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
        let p = *trace.primal.last().unwrap();
        assert!(trace.final_gap() <= 1e-3 * (1.0 + p.abs()));
    }

    #[test]
    fn flipped_labels_negate_decision() {
        let d = blobs(60, 0.8, 2);
        let m = train_linear_svm(&d, &LinearSvmParams::default()).unwrap();
        let f = train_linear_svm(&d.with_flipped_labels(), &LinearSvmParams::default()).unwrap();
        for x in d.rows() {
            assert_eq!(m.decision(x), -f.decision(x));
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let mut d = Dataset::new(1);
        d.push(&[1.0], Label::Genuine).unwrap();
        d.push(&[2.0], Label::Genuine).unwrap();
        assert!(matches!(
            train_linear_svm(&d, &LinearSvmParams::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn dual_never_exceeds_primal() {
        let d = blobs(80, 1.5, 3);
        let (_, trace) = train_linear_svm_traced(&d, &LinearSvmParams::default()).unwrap();
        for (p, q) in trace.primal.iter().zip(&trace.dual) {
            assert!(q <= &(p + 1e-9));
        }
        assert!(trace.dual.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
}
