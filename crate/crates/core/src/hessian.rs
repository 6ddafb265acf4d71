//! Population Hessian of the deep linear network split as `H = H_o + H_f`.
//!
//! Parameters are flattened layer 1 first, each layer row-wise. Writing the
//! end-to-end map as `P = S_k W_k R_k` with `S_k` the product of the layers
//! above `k` and `R_k` the product below, the Jacobian of `vec_r(P)` has
//! block column `S_k ⊗ R_kᵀ`. `A_o` is its transpose, `B_o = I ⊗ Σ_xx`, and
//! `H_o = A_o B_o A_oᵀ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{kron, spectral_norm, sym_eig, Matrix, DEFAULT_KRON_CAP};
use crate::network::{chain_factors, DataModel, WeightStack};

/// Largest parameter count the finite-difference oracle accepts.
pub const FD_ORACLE_CAP: usize = 600;

/// Default step of the finite-difference oracle.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct HessianPair {
    pub h_o: Matrix,
    pub h_f: Matrix,
    pub h_total: Matrix,
    /// Layer block starts followed by `P`.
    pub layer_offsets: Vec<usize>,
}

impl HessianPair {
    pub fn param_count(&self) -> usize {
        self.h_o.rows()
    }

    /// Block `(k, l)` of `m` under this pair's layer partition.
    pub fn block(&self, m: &Matrix, k: usize, l: usize) -> Matrix {
        let o = &self.layer_offsets;
        m.submatrix(o[k], o[l], o[k + 1] - o[k], o[l + 1] - o[l])
    }
}

/// `A_o` and `C = A_o B_o^{1/2}`, so that `H_o = C Cᵀ` and the Gram-side
/// matrix is `Cᵀ C`.
#[derive(Clone, Debug)]
pub struct OuterFactor {
    pub a_o: Matrix,
    pub scaled: Matrix,
}

impl OuterFactor {
    pub fn hessian(&self) -> Matrix {
        (&self.scaled * &self.scaled.transpose()).symmetrized()
    }

    /// `B_o^{1/2} A_oᵀ A_o B_o^{1/2}`, size `d_L d_0`.
    pub fn gram(&self) -> Matrix {
        (&self.scaled.transpose() * &self.scaled).symmetrized()
    }
}

fn check_assembly_size(w: &WeightStack) -> Result<usize> {
    let p = w.dims.param_count();
    if p.saturating_mul(p) > DEFAULT_KRON_CAP {
        return Err(Error::Dimension(format!(
            "a {p}x{p} Hessian exceeds the {DEFAULT_KRON_CAP}-entry cap"
        )));
    }
    Ok(p)
}

fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(&s.symmetrized())?;
    let n = s.rows();
    let mut out = Matrix::zeros(n, n);
    for (c, &val) in eig.values.iter().enumerate() {
        let root = val.max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += root * eig.vectors[(i, c)] * eig.vectors[(j, c)];
            }
        }
    }
    Ok(out)
}

pub fn outer_factor(w: &WeightStack, data: &DataModel) -> Result<OuterFactor> {
    let p = check_assembly_size(w)?;
    let (d0, dl) = (w.dims.input(), w.dims.output());
    let chain = chain_factors(w);
    let offsets = w.dims.layer_offsets();
    let mut a_o = Matrix::zeros(p, dl * d0);
    for (k, &offset) in offsets[..w.depth()].iter().enumerate() {
        let block = kron(&chain.suffix[k].transpose(), &chain.prefix[k])?;
        a_o.set_submatrix(offset, 0, &block);
    }
    let scaled = match data.whitened_rank {
        // B_o is a 0/1 diagonal: keep the columns whose input index lies in
        // the support.
        Some(q) => {
            let mut c = a_o.clone();
            for row in 0..p {
                for col in 0..dl * d0 {
                    if col % d0 >= q {
                        c[(row, col)] = 0.0;
                    }
                }
            }
            c
        }
        None => {
            let root = psd_sqrt(&data.sigma_xx)?;
            &a_o * &kron(&Matrix::identity(dl), &root)?
        }
    };
    Ok(OuterFactor { a_o, scaled })
}

pub fn assemble_outer(w: &WeightStack, data: &DataModel) -> Result<Matrix> {
    Ok(outer_factor(w, data)?.hessian())
}

pub fn outer_gram(w: &WeightStack, data: &DataModel) -> Result<Matrix> {
    Ok(outer_factor(w, data)?.gram())
}

/// The residual-weighted part. For layers `k < l` the block entry at row
/// `(c, d)` of layer `k` and column `(a, b)` of layer `l` is
/// `M[b, c] · Y[a, d]` with `M = W_{l−1} ⋯ W_{k+1}` (identity when
/// adjacent) and `Y = S_lᵀ Ω R_kᵀ`. Blocks with `k > l` mirror these and
/// diagonal blocks vanish.
pub fn assemble_functional(w: &WeightStack, data: &DataModel) -> Result<Matrix> {
    let p = check_assembly_size(w)?;
    let chain = chain_factors(w);
    let depth = w.depth();
    let omega = data.residual(&chain.prefix[depth]);
    let offsets = w.dims.layer_offsets();
    let widths = w.dims.widths();
    let mut h = Matrix::zeros(p, p);
    for k in 0..depth {
        let mut between = Matrix::identity(widths[k + 1]);
        for l in (k + 1)..depth {
            if l > k + 1 {
                between = &w.weights[l - 1] * &between;
            }
            let y = &(&chain.suffix[l].transpose() * &omega) * &chain.prefix[k].transpose();
            let (rows_k, cols_k) = (widths[k + 1], widths[k]);
            let (rows_l, cols_l) = (widths[l + 1], widths[l]);
            for c in 0..rows_k {
                for d in 0..cols_k {
                    let i = offsets[k] + c * cols_k + d;
                    for a in 0..rows_l {
                        let y_ad = y[(a, d)];
                        for b in 0..cols_l {
                            let j = offsets[l] + a * cols_l + b;
                            let v = between[(b, c)] * y_ad;
                            h[(i, j)] = v;
                            h[(j, i)] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(h)
}

pub fn assemble(w: &WeightStack, data: &DataModel) -> Result<HessianPair> {
    let h_o = assemble_outer(w, data)?;
    let h_f = assemble_functional(w, data)?;
    let h_total = &h_o + &h_f;
    Ok(HessianPair {
        h_o,
        h_f,
        h_total,
        layer_offsets: w.dims.layer_offsets(),
    })
}

fn excess_loss_of_layers(weights: &[Matrix], data: &DataModel) -> f64 {
    let mut p = weights[0].clone();
    for layer in &weights[1..] {
        p = layer * &p;
    }
    data.excess_loss_of(&p)
}

/// Central second differences of the trace-formula loss, with the default
/// parameter cap.
pub fn finite_difference_hessian(w: &WeightStack, data: &DataModel, step: f64) -> Result<Matrix> {
    finite_difference_hessian_capped(w, data, step, FD_ORACLE_CAP)
}

pub fn finite_difference_hessian_capped(
    w: &WeightStack,
    data: &DataModel,
    step: f64,
    cap: usize,
) -> Result<Matrix> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step {step} must be positive")));
    }
    let p = w.dims.param_count();
    if p > cap {
        return Err(Error::OracleCap { params: p, cap });
    }
    let offsets = w.dims.layer_offsets();
    let locate = |idx: usize| {
        let k = offsets.partition_point(|&o| o <= idx) - 1;
        (k, idx - offsets[k])
    };
    let loss_with = |shifts: &[(usize, f64)]| {
        let mut weights = w.weights.clone();
        for &(idx, delta) in shifts {
            let (k, off) = locate(idx);
            weights[k].as_mut_slice()[off] += delta;
        }
        excess_loss_of_layers(&weights, data)
    };
    let f0 = loss_with(&[]);
    let h2 = step * step;
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; p - i];
            row[0] = (loss_with(&[(i, step)]) - 2.0 * f0 + loss_with(&[(i, -step)])) / h2;
            for j in (i + 1)..p {
                let pp = loss_with(&[(i, step), (j, step)]);
                let pm = loss_with(&[(i, step), (j, -step)]);
                let mp = loss_with(&[(i, -step), (j, step)]);
                let mm = loss_with(&[(i, -step), (j, -step)]);
                row[j - i] = (pp - pm - mp + mm) / (4.0 * h2);
            }
            row
        })
        .collect();
    let mut h = Matrix::zeros(p, p);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            h[(i, i + off)] = v;
            h[(i + off, i)] = v;
        }
    }
    Ok(h)
}

/// `Ω = W^{L:1} Σ_xx − Σ_yx`.
#[derive(Clone, Debug)]
pub struct ResidualModel {
    pub omega: Matrix,
}

impl ResidualModel {
    pub fn new(w: &WeightStack, data: &DataModel) -> Self {
        Self {
            omega: data.residual(&crate::network::end_to_end(w)),
        }
    }

    pub fn norm(&self) -> f64 {
        spectral_norm(&self.omega)
    }
}

/// `√(2 r ε)`.
pub fn omega_norm_bound(epsilon: f64, rank: usize) -> f64 {
    (2.0 * rank as f64 * epsilon.max(0.0)).sqrt()
}

/// `λ_max^{L−2} √(2 L (L−1) r ε)` with `λ_max = ‖Σ^{1/L}‖₂`.
pub fn hf_norm_bound_from(lambda_max: f64, epsilon: f64, rank: usize, depth: usize) -> f64 {
    let l = depth as f64;
    lambda_max.powi(depth as i32 - 2) * (2.0 * l * (l - 1.0) * rank as f64 * epsilon.max(0.0)).sqrt()
}

/// The functional-Hessian bound for a stack in the shared-structure regime,
/// with `ε` its current excess loss.
pub fn hf_norm_bound(w: &WeightStack, epsilon: f64) -> f64 {
    let state = crate::network::spectral_state(w);
    let lambda_max = state.lambdas.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    hf_norm_bound_from(lambda_max, epsilon, w.dims.rank(), w.depth())
}

/// `√(Σ_{k,l} ‖H_{kl}‖₂²)` over the layer partition given by `offsets`.
pub fn block_norm_bound(h: &Matrix, offsets: &[usize]) -> f64 {
    let n = offsets.len() - 1;
    let mut total = 0.0;
    for k in 0..n {
        for l in 0..n {
            let block = h.submatrix(
                offsets[k],
                offsets[l],
                offsets[k + 1] - offsets[k],
                offsets[l + 1] - offsets[l],
            );
            if block.max_abs() > 0.0 {
                total += spectral_norm(&block).powi(2);
            }
        }
    }
    total.sqrt()
}
