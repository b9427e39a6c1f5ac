//! Power-mean kernel SVM.
//!
//! The kernel is additive, `K(x, z) = Σ_d M_p(x_d, z_d)`, so the decision
//! function splits into one scalar function per dimension,
//! `g_d(t) = Σ_i α_i y_i M_p(x_id, t)`. Training runs dual coordinate descent
//! with each `g_d` approximated by a low-order polynomial fitted by least
//! squares over sampled training values of that dimension; the polynomial
//! coefficients update in `O(dim · degree)` per step. After training, each
//! `g_d` is tabulated exactly on a grid and predictions interpolate the tables.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codec::{Reader, Writer};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmSvmParams {
    /// Power index, `p <= 0`; `-inf` selects the minimum kernel.
    pub p: f64,
    /// Regularization weight of `ω/2 ‖w‖² + (1/n) Σ hinge`.
    pub omega: f64,
    /// Stop once the projected-gradient spread falls below this.
    pub tol: f64,
    pub max_epochs: usize,
    /// Degree of the per-dimension gradient polynomials.
    pub degree: usize,
    /// Sampled training values per dimension used for the polynomial fit.
    pub fit_points: usize,
    /// Lookup-table intervals per dimension.
    pub table_bins: usize,
    pub seed: u64,
}

impl Default for PmSvmParams {
    fn default() -> Self {
        Self {
            p: -1.0,
            omega: 0.01,
            tol: 1e-3,
            max_epochs: 1000,
            degree: 3,
            fit_points: 32,
            table_bins: 512,
            seed: 0,
        }
    }
}

/// Power mean `M_p(a, b)` of two non-negative numbers.
#[inline]
pub fn power_mean(a: f64, b: f64, p: f64) -> f64 {
    if p == f64::NEG_INFINITY {
        return a.min(b);
    }
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    if p == -1.0 {
        2.0 * a * b / (a + b)
    } else if p == 0.0 {
        (a * b).sqrt()
    } else {
        ((a.powf(p) + b.powf(p)) / 2.0).powf(1.0 / p)
    }
}

/// `Σ_i M_p(x_i, z_i)`; every component must be non-negative.
pub fn power_mean_kernel(x: &[f64], z: &[f64], p: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::dim_mismatch(x.len(), z.len()));
    }
    if p > 0.0 || p.is_nan() {
        return Err(Error::InvalidParameter(format!("power index must be <= 0, got {p}")));
    }
    let mut sum = 0.0;
    for (d, (&a, &b)) in x.iter().zip(z).enumerate() {
        for v in [a, b] {
            if !(v >= 0.0) {
                return Err(Error::NegativeFeature { dim: d, value: v });
            }
        }
        sum += power_mean(a, b, p);
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmSvmModel {
    params: PmSvmParams,
    dim: usize,
    bias: f64,
    /// Upper end of each dimension's table grid (largest training value).
    ranges: Vec<f64>,
    /// `dim × (table_bins + 1)` exact values of `g_d` at `range_d · (j / bins)²`.
    tables: Vec<f64>,
}

/// Model plus the dual solution it was tabulated from.
#[derive(Clone, Debug)]
pub struct PmSvmFit {
    pub model: PmSvmModel,
    /// `α_i y_i` per training sample.
    pub dual_coef: Vec<f64>,
    pub epochs: usize,
}

impl PmSvmModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn params(&self) -> &PmSvmParams {
        &self.params
    }

    fn bins(&self) -> usize {
        self.params.table_bins
    }

    fn table_value(&self, d: usize, t: f64) -> f64 {
        let hi = self.ranges[d];
        if hi <= 0.0 {
            return 0.0;
        }
        let bins = self.bins();
        let row = &self.tables[d * (bins + 1)..(d + 1) * (bins + 1)];
        let t = t.max(0.0);
        let j = (((t / hi).sqrt() * bins as f64).floor() as usize).min(bins - 1);
        let node = |k: usize| hi * (k as f64 / bins as f64).powi(2);
        let (t0, t1) = (node(j), node(j + 1));
        let frac = (t - t0) / (t1 - t0);
        row[j] + frac * (row[j + 1] - row[j])
    }

    /// Decision value from the lookup tables.
    pub fn decision(&self, x: &[f32]) -> f64 {
        self.bias
            + x.iter()
                .enumerate()
                .map(|(d, &v)| self.table_value(d, f64::from(v)))
                .sum::<f64>()
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        let p = &self.params;
        for v in [p.p, p.omega, p.tol] {
            w.f64(v);
        }
        for v in [p.max_epochs, p.degree, p.fit_points, p.table_bins] {
            w.u64(v as u64);
        }
        w.u64(p.seed);
        w.u64(self.dim as u64);
        w.f64(self.bias);
        w.f64s(&self.ranges);
        w.f64s(&self.tables);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let params = PmSvmParams {
            p: r.f64()?,
            omega: r.f64()?,
            tol: r.f64()?,
            max_epochs: r.u64()? as usize,
            degree: r.u64()? as usize,
            fit_points: r.u64()? as usize,
            table_bins: r.u64()? as usize,
            seed: r.u64()?,
        };
        let dim = r.u64()? as usize;
        let bias = r.f64()?;
        let ranges = r.f64s()?;
        let tables = r.f64s()?;
        if ranges.len() != dim || tables.len() != dim * (params.table_bins + 1) || params.table_bins == 0 {
            return Err(Error::Format("inconsistent PmSVM table sizes".into()));
        }
        Ok(Self {
            params,
            dim,
            bias,
            ranges,
            tables,
        })
    }
}

/// Solves the small symmetric system `a x = b` by Gaussian elimination with partial pivoting.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..n {
            let f = a[row][col] / d;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = if a[row][row].abs() < 1e-300 { 0.0 } else { (b[row] - s) / a[row][row] };
    }
    x
}

/// Per-dimension least-squares fit of `t ↦ M_p(v, t)` over the sample points.
struct DimFit {
    hi: f64,
    points: Vec<f64>,
    /// `(degree+1) × points` projection `(ΦᵀΦ + εI)⁻¹ Φᵀ`, row-major.
    projection: Vec<f64>,
}

impl DimFit {
    fn new(values: &mut [f64], fit_points: usize, degree: usize) -> Self {
        values.sort_by(f64::total_cmp);
        let hi = *values.last().unwrap_or(&0.0);
        let k = degree + 1;
        if hi <= 0.0 {
            return Self {
                hi,
                points: Vec::new(),
                projection: Vec::new(),
            };
        }
        let m = fit_points.max(k);
        let mut points: Vec<f64> = (0..m)
            .map(|j| values[j * (values.len() - 1) / (m - 1).max(1)])
            .collect();
        points.dedup();
        let phi: Vec<Vec<f64>> = points
            .iter()
            .map(|&t| basis(t / hi, degree))
            .collect();
        let mut gram = vec![vec![0.0; k]; k];
        for row in &phi {
            for a in 0..k {
                for b in 0..k {
                    gram[a][b] += row[a] * row[b];
                }
            }
        }
        for (a, g) in gram.iter_mut().enumerate() {
            g[a] += 1e-9;
        }
        // column j of the projection solves gram · c = φ(point_j)
        let mut projection = vec![0.0; k * points.len()];
        for (j, row) in phi.iter().enumerate() {
            let c = solve_small(gram.clone(), row.clone());
            for a in 0..k {
                projection[a * points.len() + j] = c[a];
            }
        }
        Self {
            hi,
            points,
            projection,
        }
    }

    /// Polynomial coefficients approximating `t ↦ M_p(v, t)`.
    fn coefficients(&self, v: f64, p: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        if self.hi <= 0.0 || v == 0.0 {
            return;
        }
        let m = self.points.len();
        for (j, &t) in self.points.iter().enumerate() {
            let target = power_mean(v, t, p);
            for (a, c) in out.iter_mut().enumerate() {
                *c += self.projection[a * m + j] * target;
            }
        }
    }
}

#[inline]
fn basis(s: f64, degree: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(degree + 1);
    let mut v = 1.0;
    for _ in 0..=degree {
        out.push(v);
        v *= s;
    }
    out
}

pub fn train_pmsvm(data: &Dataset, params: &PmSvmParams) -> Result<PmSvmModel> {
    train_pmsvm_detailed(data, params).map(|f| f.model)
}

pub fn train_pmsvm_detailed(data: &Dataset, params: &PmSvmParams) -> Result<PmSvmFit> {
    if params.p > 0.0 || params.p.is_nan() {
        return Err(Error::InvalidParameter(format!("power index must be <= 0, got {}", params.p)));
    }
    if !(params.omega > 0.0) {
        return Err(Error::InvalidParameter(format!("omega must be > 0, got {}", params.omega)));
    }
    if params.table_bins == 0 {
        return Err(Error::InvalidParameter("table_bins must be >= 1".into()));
    }
    for (i, x) in data.rows().enumerate() {
        if let Some((d, &v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            let _ = i;
            return Err(Error::NegativeFeature { dim: d, value: f64::from(v) });
        }
    }
    data.require_both_classes()?;

    let n = data.len();
    let dim = data.dim();
    let k = params.degree + 1;
    let p = params.p;
    let c = 1.0 / (params.omega * n as f64);
    let y: Vec<f64> = data.labels().iter().map(|l| l.sign()).collect();

    let fits: Vec<DimFit> = (0..dim)
        .into_par_iter()
        .map(|d| {
            let mut vals: Vec<f64> = data.rows().map(|x| f64::from(x[d])).collect();
            DimFit::new(&mut vals, params.fit_points, params.degree)
        })
        .collect();

    // per sample: coefficients of M_p(x_id, ·) and basis values at x_id, dim × k each
    let (coef, phi): (Vec<Vec<f32>>, Vec<Vec<f32>>) = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = data.row(i);
            let mut a = vec![0f32; dim * k];
            let mut b = vec![0f32; dim * k];
            let mut buf = vec![0.0; k];
            for d in 0..dim {
                let v = f64::from(x[d]);
                let fit = &fits[d];
                fit.coefficients(v, p, &mut buf);
                for j in 0..k {
                    a[d * k + j] = buf[j] as f32;
                }
                if fit.hi > 0.0 {
                    for (j, s) in basis(v / fit.hi, params.degree).into_iter().enumerate() {
                        b[d * k + j] = s as f32;
                    }
                }
            }
            (a, b)
        })
        .unzip();
    // K(x, x) = Σ x_d exactly since M_p(a, a) = a; +1 for the bias feature
    let qdiag: Vec<f64> = data
        .rows()
        .map(|x| x.iter().map(|&v| f64::from(v)).sum::<f64>() + 1.0)
        .collect();

    let mut alpha = vec![0.0f64; n];
    let mut poly = vec![0.0f64; dim * k];
    let mut bias = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = 0;
    for epoch in 0..params.max_epochs.max(1) {
        epochs = epoch + 1;
        let mut rng = seed::rng(params.seed, seed::stream::SVM_ORDER, epoch as u64);
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let f: f64 = poly
                .iter()
                .zip(&phi[i])
                .map(|(&cf, &b)| cf * f64::from(b))
                .sum::<f64>()
                + bias;
            let g = y[i] * f - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg == 0.0 {
                continue;
            }
            let a_new = (alpha[i] - g / qdiag[i]).clamp(0.0, c);
            let delta = (a_new - alpha[i]) * y[i];
            if delta != 0.0 {
                alpha[i] = a_new;
                for (cf, &a) in poly.iter_mut().zip(&coef[i]) {
                    *cf += delta * f64::from(a);
                }
                bias += delta;
            }
        }
        if pg_max - pg_min <= params.tol {
            break;
        }
    }

    let dual_coef: Vec<f64> = alpha.iter().zip(&y).map(|(a, y)| a * y).collect();
    let support: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    let bins = params.table_bins;
    let ranges: Vec<f64> = fits.iter().map(|f| f.hi).collect();
    let tables: Vec<f64> = (0..dim)
        .into_par_iter()
        .flat_map_iter(|d| {
            let hi = ranges[d];
            let support = &support;
            let dual_coef = &dual_coef;
            (0..=bins).map(move |j| {
                if hi <= 0.0 {
                    return 0.0;
                }
                let t = hi * (j as f64 / bins as f64).powi(2);
                support
                    .iter()
                    .map(|&i| dual_coef[i] * power_mean(f64::from(data.row(i)[d]), t, p))
                    .sum()
            })
        })
        .collect();

    Ok(PmSvmFit {
        model: PmSvmModel {
            params: params.clone(),
            dim,
            bias,
            ranges,
            tables,
        },
        dual_coef,
        epochs,
    })
}
