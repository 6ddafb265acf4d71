//! Closed-form Hessian spectra and their comparison with measured ones.
//!
//! In the product basis `u_i ⊗ v_j` the Gram-side matrix is diagonal with
//! entries `ν_ij = Σ_l λ_i^{2(L−l)} λ_j^{2(l−1)}`, where `λ` vanishes past
//! the rank `r` and `j` runs over the `q` frame directions inside the
//! support of `Σ_xx`. That yields `r²` dominant values, bulk values
//! `λ_i^{2(L−1)}` of multiplicity `(q − r) + (d_L − r)` each, and zeros.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::OuterFactor;
use crate::matrix::{kron, orthonormal_completion, Matrix};
use crate::network::{spectral_state, InputSupport, NetworkDims, WeightStack};

/// Relative floor below which an eigenvalue counts as zero regardless of
/// the slack.
pub const ZERO_FLOOR: f64 = 1e-8;

/// Rounding allowance, relative to the largest eigenvalue, added to every
/// interval and to the Weyl check.
pub const ROUNDING: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLabel {
    Dominant,
    Bulk,
    Zero,
}

impl ClusterLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterLabel::Dominant => "dominant",
            ClusterLabel::Bulk => "bulk",
            ClusterLabel::Zero => "zero",
        }
    }
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPrediction {
    pub depth: usize,
    pub lambdas: Vec<f64>,
    /// `ν_ij` for `i, j ≤ r`, descending.
    pub dominant_values: Vec<f64>,
    /// `λ_i^{2(L−1)}` repeated by multiplicity, descending.
    pub bulk_values: Vec<f64>,
    pub dominant_count: usize,
    pub bulk_count: usize,
    /// Zeros of the `d_L d_0` Gram-side matrix.
    pub zero_count: usize,
    /// Zeros of the full `P x P` Hessian.
    pub param_zero_count: usize,
    pub m: f64,
    pub delta: f64,
    pub gap_condition_ok: bool,
}

/// `Σ_{l=1}^{L} a^{2(L−l)} b^{2(l−1)}`.
pub fn nu(a: f64, b: f64, depth: usize) -> f64 {
    (1..=depth)
        .map(|l| a.powi(2 * (depth - l) as i32) * b.powi(2 * (l - 1) as i32))
        .sum()
}

/// `(m + δ)/(m − δ) < L^{1/(2(L−1))}`.
pub fn gap_condition(m: f64, delta: f64, depth: usize) -> bool {
    let lower = m - delta;
    lower > 0.0 && (m + delta) / lower < (depth as f64).powf(1.0 / (2.0 * (depth as f64 - 1.0)))
}

pub fn predict_spectrum(
    lambdas: &[f64],
    dims: &NetworkDims,
    support: InputSupport,
) -> Result<SpectrumPrediction> {
    let r = lambdas.len();
    if r == 0 || r > dims.d_star() {
        return Err(Error::Domain(format!(
            "{r} aligned values for d* = {}",
            dims.d_star()
        )));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::Domain(format!("aligned value {bad} must be positive")));
    }
    let depth = dims.depth();
    let q = support.rank(dims).max(r);
    let dl = dims.output();
    let mut dominant_values = Vec::with_capacity(r * r);
    for &a in lambdas {
        for &b in lambdas {
            dominant_values.push(nu(a, b, depth));
        }
    }
    dominant_values.sort_by(|a, b| b.total_cmp(a));
    let multiplicity = (q - r) + (dl - r);
    let mut bulk_values: Vec<f64> = lambdas
        .iter()
        .flat_map(|l| std::iter::repeat_n(l.powi(2 * depth as i32 - 2), multiplicity))
        .collect();
    bulk_values.sort_by(|a, b| b.total_cmp(a));
    let (lo, hi) = lambdas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    let m = 0.5 * (hi + lo);
    let delta = 0.5 * (hi - lo);
    let nonzero = r * r + bulk_values.len();
    Ok(SpectrumPrediction {
        depth,
        lambdas: lambdas.to_vec(),
        dominant_count: r * r,
        bulk_count: bulk_values.len(),
        zero_count: dl * dims.input() - nonzero,
        param_zero_count: dims.param_count() - nonzero,
        dominant_values,
        bulk_values,
        m,
        delta,
        gap_condition_ok: gap_condition(m, delta, depth),
    })
}

impl SpectrumPrediction {
    /// Predicted eigenvalues, descending, padded with zeros to length `n`.
    pub fn multiset(&self, n: usize) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .dominant_values
            .iter()
            .chain(&self.bulk_values)
            .copied()
            .collect();
        all.sort_by(|a, b| b.total_cmp(a));
        all.resize(n.max(all.len()), 0.0);
        all
    }

    /// `[L (m−δ)^{2(L−1)}, L (m+δ)^{2(L−1)}]`.
    pub fn dominant_interval(&self) -> (f64, f64) {
        let p = 2 * self.depth as i32 - 2;
        let l = self.depth as f64;
        (l * (self.m - self.delta).powi(p), l * (self.m + self.delta).powi(p))
    }

    /// `[(m−δ)^{2(L−1)}, (m+δ)^{2(L−1)}]`.
    pub fn bulk_interval(&self) -> (f64, f64) {
        let p = 2 * self.depth as i32 - 2;
        ((self.m - self.delta).powi(p), (self.m + self.delta).powi(p))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub dominant: usize,
    pub bulk: usize,
    pub zero: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchErrors {
    pub dominant: f64,
    pub bulk: f64,
    pub zero: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub cluster_of: Vec<ClusterLabel>,
    /// Predicted value each eigenvalue was matched to.
    pub predicted: Vec<f64>,
    pub counts: ClusterCounts,
    /// Label counts agree with the prediction.
    pub counts_match: bool,
    /// Mean dominant over mean bulk.
    pub ratio: f64,
    /// (min dominant / max bulk, max dominant / min bulk).
    pub ratio_range: (f64, f64),
    /// Each dominant eigenvalue over the mean bulk eigenvalue.
    pub dominant_ratios: Vec<f64>,
    pub weyl_slack: f64,
    pub prediction: SpectrumPrediction,
    pub match_errors: MatchErrors,
    /// Indices that fell in both widened intervals.
    pub ambiguous: Vec<usize>,
    /// Indices outside both widened intervals and above the zero threshold.
    pub unmatched: Vec<usize>,
}

fn nearest(values: &[f64], x: f64) -> f64 {
    values
        .iter()
        .copied()
        .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()))
        .unwrap_or(0.0)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Labels measured eigenvalues by the predicted intervals widened by
/// `slack` (the measured `‖H_f‖₂`) plus rounding.
pub fn classify_clusters(
    eigenvalues: &[f64],
    prediction: &SpectrumPrediction,
    slack: f64,
) -> Result<SpectrumReport> {
    if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Contract("eigenvalues must be sorted descending".into()));
    }
    if !(slack >= 0.0) {
        return Err(Error::Domain(format!("slack {slack} must be nonnegative")));
    }
    let top = eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let widen = slack + ROUNDING * top;
    // Null-space eigenvalues of H_o can be moved by exactly ‖H_f‖₂, so the
    // zero band gets the same rounding allowance as the intervals.
    let zero_threshold = widen.max(ZERO_FLOOR * top);
    let span = |vals: &[f64]| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo - widen, hi + widen)
    };
    let dom = span(&prediction.dominant_values);
    let bulk = span(&prediction.bulk_values);
    let inside = |(lo, hi): (f64, f64), x: f64| x >= lo && x <= hi;

    let mut cluster_of = Vec::with_capacity(eigenvalues.len());
    let mut ambiguous = Vec::new();
    let mut unmatched = Vec::new();
    for (k, &x) in eigenvalues.iter().enumerate() {
        let label = if x.abs() <= zero_threshold {
            ClusterLabel::Zero
        } else {
            match (inside(dom, x), inside(bulk, x)) {
                (true, false) => ClusterLabel::Dominant,
                (false, true) => ClusterLabel::Bulk,
                (both, _) => {
                    if both {
                        ambiguous.push(k);
                    } else {
                        unmatched.push(k);
                    }
                    let d = (nearest(&prediction.dominant_values, x) - x).abs();
                    let b = (nearest(&prediction.bulk_values, x) - x).abs();
                    if d <= b {
                        ClusterLabel::Dominant
                    } else {
                        ClusterLabel::Bulk
                    }
                }
            }
        };
        cluster_of.push(label);
    }

    let pick = |label: ClusterLabel| -> Vec<usize> {
        (0..eigenvalues.len()).filter(|&k| cluster_of[k] == label).collect()
    };
    let (dom_idx, bulk_idx, zero_idx) = (
        pick(ClusterLabel::Dominant),
        pick(ClusterLabel::Bulk),
        pick(ClusterLabel::Zero),
    );
    let counts = ClusterCounts {
        dominant: dom_idx.len(),
        bulk: bulk_idx.len(),
        zero: zero_idx.len(),
    };

    // Pair measured and predicted values in sorted order when the counts
    // agree, otherwise fall back to the nearest predicted value.
    let mut predicted = vec![0.0; eigenvalues.len()];
    let mut assign = |idx: &[usize], values: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for (n, &k) in idx.iter().enumerate() {
            let p = if idx.len() == values.len() {
                values[n]
            } else {
                nearest(values, eigenvalues[k])
            };
            predicted[k] = p;
            worst = worst.max((eigenvalues[k] - p).abs());
        }
        worst
    };
    let match_errors = MatchErrors {
        dominant: assign(&dom_idx, &prediction.dominant_values),
        bulk: assign(&bulk_idx, &prediction.bulk_values),
        zero: zero_idx.iter().fold(0.0, |m: f64, &k| m.max(eigenvalues[k].abs())),
    };

    let dom_vals: Vec<f64> = dom_idx.iter().map(|&k| eigenvalues[k]).collect();
    let bulk_vals: Vec<f64> = bulk_idx.iter().map(|&k| eigenvalues[k]).collect();
    let bulk_mean = mean(&bulk_vals);
    let ratio = mean(&dom_vals) / bulk_mean;
    let ratio_range = match (dom_vals.first(), dom_vals.last(), bulk_vals.first(), bulk_vals.last()) {
        (Some(&dmax), Some(&dmin), Some(&bmax), Some(&bmin)) => (dmin / bmax, dmax / bmin),
        _ => (f64::NAN, f64::NAN),
    };
    let expected_zero = eigenvalues.len().saturating_sub(prediction.dominant_count + prediction.bulk_count);
    let counts_match = counts.dominant == prediction.dominant_count
        && counts.bulk == prediction.bulk_count
        && counts.zero == expected_zero;

    Ok(SpectrumReport {
        eigenvalues: eigenvalues.to_vec(),
        cluster_of,
        predicted,
        counts,
        counts_match,
        ratio,
        ratio_range,
        dominant_ratios: dom_vals.iter().map(|d| d / bulk_mean).collect(),
        weyl_slack: slack,
        prediction: prediction.clone(),
        match_errors,
        ambiguous,
        unmatched,
    })
}

/// `max_k max(0, |h_k − o_k| − ‖H_f‖₂)` over two descending spectra.
pub fn verify_weyl_sandwich(h_eigs: &[f64], h_o_eigs: &[f64], hf_norm: f64) -> Result<f64> {
    if h_eigs.len() != h_o_eigs.len() {
        return Err(Error::Contract(format!(
            "spectra of lengths {} and {} cannot be compared; pad the shorter with zeros",
            h_eigs.len(),
            h_o_eigs.len()
        )));
    }
    Ok(h_eigs
        .iter()
        .zip(h_o_eigs)
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs() - hf_norm)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvectorCheck {
    /// Largest `‖H_o v − ρ v‖ / ‖v‖` over the nonzero index pairs.
    pub max_residual: f64,
    /// Largest `|ρ − ν_ij|` over the nonzero index pairs.
    pub max_rayleigh_error: f64,
    /// Largest `‖v‖` over the pairs that should map to zero.
    pub max_zero_norm: f64,
    pub pairs_checked: usize,
}

/// Checks that `v = A_o B_o^{1/2} (u_i ⊗ v_j)` are eigenvectors of `H_o`
/// with the predicted eigenvalues, for every `i ≤ d_L` and every frame
/// direction `j` inside the support of `Σ_xx`.
pub fn verify_eigenvectors(
    w: &WeightStack,
    support: InputSupport,
    factor: &OuterFactor,
    h_o: &Matrix,
) -> Result<EigenvectorCheck> {
    let dims = &w.dims;
    let (r, q, dl, depth) = (dims.rank(), support.rank(dims), dims.output(), dims.depth());
    let lambdas = spectral_state(w).lambdas;
    let lam = |i: usize| if i < r { lambdas[i] } else { 0.0 };
    let u_full = orthonormal_completion(&w.frames.u)?;
    let mut out = EigenvectorCheck {
        max_residual: 0.0,
        max_rayleigh_error: 0.0,
        max_zero_norm: 0.0,
        pairs_checked: 0,
    };
    for i in 0..dl {
        let ui = Matrix::from_vec(dl, 1, u_full.column(i))?;
        for j in 0..q {
            let vj = Matrix::from_vec(dims.input(), 1, w.frames.v.column(j))?;
            let product = kron(&ui, &vj)?;
            let v = factor.scaled.mul_vec(product.as_slice());
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expected = nu(lam(i), lam(j), depth);
            out.pairs_checked += 1;
            if i >= r && j >= r {
                out.max_zero_norm = out.max_zero_norm.max(norm);
                continue;
            }
            if norm < 1e-12 {
                return Err(Error::Structure(format!(
                    "A_o (u_{} ⊗ v_{}) vanishes although its predicted eigenvalue is {expected:e}",
                    i + 1,
                    j + 1
                )));
            }
            let hv = h_o.mul_vec(&v);
            let rho = hv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (norm * norm);
            let resid = hv
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - rho * b).powi(2))
                .sum::<f64>()
                .sqrt()
                / norm;
            out.max_residual = out.max_residual.max(resid);
            out.max_rayleigh_error = out.max_rayleigh_error.max((rho - expected).abs());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub depth: usize,
    pub ratio: f64,
    pub m: f64,
    pub delta: f64,
}

impl From<&SpectrumReport> for RatioPoint {
    fn from(r: &SpectrumReport) -> Self {
        Self {
            depth: r.prediction.depth,
            ratio: r.ratio,
            m: r.prediction.m,
            delta: r.prediction.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioFit {
    pub slope: f64,
    pub intercept: f64,
    /// `max |ratio − L| / L` over the points.
    pub max_rel_dev: f64,
    /// Every ratio lies in `[L ((m−δ)/(m+δ))^{2(L−1)}, L ((m+δ)/(m−δ))^{2(L−1)}]`.
    pub envelope_ok: bool,
}

/// Least-squares fit of the dominant-to-bulk ratio against depth.
pub fn ratio_theta_l(points: &[RatioPoint]) -> Result<RatioFit> {
    let mut depths: Vec<usize> = points.iter().map(|p| p.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    if depths.len() < 3 {
        return Err(Error::Domain(format!(
            "a ratio fit needs at least 3 depths, got {}",
            depths.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !p.ratio.is_finite()) {
        return Err(Error::Numerical(format!("ratio at depth {} is not finite", p.depth)));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.depth as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.ratio).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.depth as f64 - mx) * (p.ratio - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.depth as f64 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let max_rel_dev = points
        .iter()
        .map(|p| (p.ratio - p.depth as f64).abs() / p.depth as f64)
        .fold(0.0, f64::max);
    let envelope_ok = points.iter().all(|p| {
        let l = p.depth as f64;
        let q = ((p.m - p.delta) / (p.m + p.delta)).powi(2 * p.depth as i32 - 2);
        let tol = 1e-9 * l;
        p.ratio >= l * q - tol && p.ratio <= l / q + tol
    });
    Ok(RatioFit {
        slope,
        intercept: my - slope * mx,
        max_rel_dev,
        envelope_ok,
    })
}

/// Data-driven labels for spectra outside the theory's assumptions: values
/// at or below `zero_floor` are zero, the rest are split by two-means on
/// their logarithms.
pub fn kmeans_log_clusters(eigenvalues: &[f64], zero_floor: f64) -> Vec<ClusterLabel> {
    let logs: Vec<Option<f64>> = eigenvalues
        .iter()
        .map(|&x| (x > zero_floor).then(|| x.ln()))
        .collect();
    let present: Vec<f64> = logs.iter().flatten().copied().collect();
    if present.is_empty() {
        return vec![ClusterLabel::Zero; eigenvalues.len()];
    }
    let mut lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..100 {
        let (mut s_lo, mut n_lo, mut s_hi, mut n_hi) = (0.0, 0usize, 0.0, 0usize);
        for &x in &present {
            if (x - hi).abs() < (x - lo).abs() {
                s_hi += x;
                n_hi += 1;
            } else {
                s_lo += x;
                n_lo += 1;
            }
        }
        let next_lo = if n_lo > 0 { s_lo / n_lo as f64 } else { lo };
        let next_hi = if n_hi > 0 { s_hi / n_hi as f64 } else { hi };
        if next_lo == lo && next_hi == hi {
            break;
        }
        lo = next_lo;
        hi = next_hi;
    }
    logs.iter()
        .map(|x| match x {
            None => ClusterLabel::Zero,
            Some(x) if (x - hi).abs() < (x - lo).abs() => ClusterLabel::Dominant,
            Some(_) => ClusterLabel::Bulk,
        })
        .collect()
}
