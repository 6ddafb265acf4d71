//! The deep linear network `F(x) = W^L ⋯ W^1 x`: dimensions, balanced
//! initialization, population moments, gradients and synchronous GD.
//!
//! Layers are 0-based in code: `weights[k]` is layer `k + 1` and has shape
//! `widths[k + 1] x widths[k]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::max_step_size;
use crate::error::{Error, Result};
use crate::matrix::{orthonormality_defect, pad_embed, svd, sym_eig, Matrix};

/// Largest off-pattern entry tolerated before a stack counts as having left
/// the shared-spectral-structure regime.
pub const STRUCTURE_TOLERANCE: f64 = 1e-9;

const FRAME_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    widths: Vec<usize>,
    rank: usize,
}

impl NetworkDims {
    /// `widths` lists `d_0, …, d_L`.
    pub fn new(widths: Vec<usize>, rank: usize) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Config(format!(
                "depth must be at least 2, got {} width(s)",
                widths.len()
            )));
        }
        if let Some(k) = widths.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("width d_{k} is zero")));
        }
        let d_star = widths[0].min(*widths.last().unwrap());
        let hidden = &widths[1..widths.len() - 1];
        if let Some((k, &d)) = hidden.iter().enumerate().find(|(_, &d)| d < d_star) {
            return Err(Error::Config(format!(
                "hidden width d_{} = {d} is below d* = min(d_0, d_L) = {d_star}",
                k + 1
            )));
        }
        if rank == 0 || rank > d_star {
            return Err(Error::Config(format!("rank r = {rank} must lie in 1..={d_star}")));
        }
        Ok(Self { widths, rank })
    }

    /// Input `d_0`, `depth - 1` hidden layers of width `hidden`, output `d_L`.
    pub fn uniform(depth: usize, input: usize, hidden: usize, output: usize, rank: usize) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {depth}")));
        }
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth - 1));
        widths.push(output);
        Self::new(widths, rank)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        self.widths[self.depth()]
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn d_star(&self) -> usize {
        self.input().min(self.output())
    }

    /// Shape `(rows, cols)` of layer `k` (0-based).
    pub fn layer_shape(&self, k: usize) -> (usize, usize) {
        (self.widths[k + 1], self.widths[k])
    }

    /// Total number of scalar parameters `P`.
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Start index of each layer's block in the flattened parameter vector,
    /// followed by `P`.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0];
        for w in self.widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1]);
        }
        offsets
    }

    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        Self::new(self.widths.clone(), rank)
    }
}

/// Rank `q` of the input second moment: `Σ_xx = pad(I_q)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSupport {
    /// `q = d*`.
    #[default]
    Full,
    /// `q = r`.
    Rank,
}

impl InputSupport {
    pub fn rank(self, dims: &NetworkDims) -> usize {
        match self {
            InputSupport::Full => dims.d_star(),
            InputSupport::Rank => dims.rank(),
        }
    }
}

/// Singular-vector frames `U` (`d_L x d*`) and `V` (`d_0 x d*`).
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub u: Matrix,
    pub v: Matrix,
}

impl Frames {
    pub fn new(dims: &NetworkDims, u: Matrix, v: Matrix) -> Result<Self> {
        let k = dims.d_star();
        if u.shape() != (dims.output(), k) || v.shape() != (dims.input(), k) {
            return Err(Error::Dimension(format!(
                "frames must be {}x{k} and {}x{k}, got {:?} and {:?}",
                dims.output(),
                dims.input(),
                u.shape(),
                v.shape()
            )));
        }
        let (du, dv) = (orthonormality_defect(&u), orthonormality_defect(&v));
        if du > FRAME_TOLERANCE || dv > FRAME_TOLERANCE {
            return Err(Error::Domain(format!(
                "frames are not orthonormal (defects {du:e}, {dv:e})"
            )));
        }
        Ok(Self { u, v })
    }

    /// Draws frames aligned with the support of `Σ_xx`.
    ///
    /// With full support the frames are the singular vectors of a Gaussian
    /// `d_L x d_0` matrix whose columns past `d*` are zeroed, so that `V`
    /// stays inside `span(e_1..e_d*)`. With rank support the first `r`
    /// columns of `V` span `e_1..e_r` and the rest are orthogonal to it.
    pub fn sample(dims: &NetworkDims, support: InputSupport, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d0, dl, k, r) = (dims.input(), dims.output(), dims.d_star(), dims.rank());
        let mut gaussian = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
        };
        match support {
            InputSupport::Full => {
                let g = gaussian(dl, k);
                let s = svd(&g)?;
                let v = pad_embed(&s.v, d0, k)?;
                Self::new(dims, s.u, v)
            }
            InputSupport::Rank => {
                let u = svd(&gaussian(dl, k))?.u;
                let head = svd(&gaussian(r, r))?.u;
                let mut v = Matrix::zeros(d0, k);
                v.set_submatrix(0, 0, &head);
                if k > r {
                    let tail = svd(&gaussian(d0 - r, k - r))?.u;
                    v.set_submatrix(r, r, &tail);
                }
                Self::new(dims, u, v)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum FrameSource {
    Explicit(Frames),
    Seed { seed: u64, support: InputSupport },
}

/// Population second moments `Σ_xx = E[x xᵀ]` and `Σ_yx = E[y xᵀ]`.
#[derive(Clone, Debug)]
pub struct DataModel {
    pub sigma_xx: Matrix,
    pub sigma_yx: Matrix,
    pub rank: usize,
    /// `Some(q)` when `Σ_xx = pad(I_q)` exactly.
    pub whitened_rank: Option<usize>,
    min_loss_offset: f64,
}

impl DataModel {
    /// `Σ_xx = pad(I_q)` and `Σ_yx = U pad(I_r) Vᵀ`.
    pub fn whitened(dims: &NetworkDims, frames: &Frames, support: InputSupport) -> Result<Self> {
        let (d0, r) = (dims.input(), dims.rank());
        let q = support.rank(dims);
        let sigma_xx = pad_embed(&Matrix::identity(q), d0, d0)?;
        let u_r = frames.u.submatrix(0, 0, dims.output(), r);
        let v_r = frames.v.submatrix(0, 0, d0, r);
        let sigma_yx = &u_r * &v_r.transpose();
        // Σ_xx⁺ is the support projector, so ½ tr(Σ_yx Σ_xx⁺ Σ_yxᵀ) is the
        // squared mass of Σ_yx inside the support.
        let inside = &sigma_yx * &sigma_xx;
        let offset = 0.5 * inside.frobenius_norm().powi(2);
        Ok(Self {
            sigma_xx,
            sigma_yx,
            rank: r,
            whitened_rank: Some(q),
            min_loss_offset: offset,
        })
    }

    /// Arbitrary moments. `Σ_xx` must be symmetric positive semidefinite.
    pub fn new(sigma_xx: Matrix, sigma_yx: Matrix, rank: usize) -> Result<Self> {
        if !sigma_xx.is_square() || sigma_yx.cols() != sigma_xx.rows() {
            return Err(Error::Dimension(format!(
                "moments of shapes {:?} and {:?} do not conform",
                sigma_xx.shape(),
                sigma_yx.shape()
            )));
        }
        let eig = sym_eig(&sigma_xx)?;
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let floor = 1e-12 * top.max(1.0);
        if eig.values.iter().any(|&v| v < -floor) {
            return Err(Error::Domain("sigma_xx is not positive semidefinite".into()));
        }
        let n = sigma_xx.rows();
        let mut pinv = Matrix::zeros(n, n);
        for (c, &val) in eig.values.iter().enumerate() {
            if val > floor {
                let vec = eig.vectors.column(c);
                for i in 0..n {
                    for j in 0..n {
                        pinv[(i, j)] += vec[i] * vec[j] / val;
                    }
                }
            }
        }
        let offset = 0.5 * (&(&sigma_yx * &pinv) * &sigma_yx.transpose()).trace();
        Ok(Self {
            sigma_xx,
            sigma_yx,
            rank,
            whitened_rank: None,
            min_loss_offset: offset,
        })
    }

    /// Empirical moments from `n` Gaussian inputs drawn inside the support
    /// of the whitened model, with noiseless targets `y = Σ_yx x`.
    pub fn sampled(
        dims: &NetworkDims,
        frames: &Frames,
        support: InputSupport,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("finite-sample mode needs at least one sample".into()));
        }
        let population = Self::whitened(dims, frames, support)?;
        let d0 = dims.input();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::from_fn(d0, n, |_, _| StandardNormal.sample(&mut rng));
        let x = &population.sigma_xx * &z;
        let sigma_xx = (&x * &x.transpose()).scale(1.0 / n as f64).symmetrized();
        let sigma_yx = &population.sigma_yx * &sigma_xx;
        Self::new(sigma_xx, sigma_yx, dims.rank())
    }

    /// `Ω = P Σ_xx − Σ_yx` for the end-to-end map `P`.
    pub fn residual(&self, end_to_end: &Matrix) -> Matrix {
        &(end_to_end * &self.sigma_xx) - &self.sigma_yx
    }

    /// `½ E‖y − P x‖² − L_min` by the trace formula.
    pub fn excess_loss_of(&self, end_to_end: &Matrix) -> f64 {
        let quad = 0.5 * (&(end_to_end * &self.sigma_xx) * &end_to_end.transpose()).trace();
        let cross = (end_to_end * &self.sigma_yx.transpose()).trace();
        quad - cross + self.min_loss_offset
    }

    /// Per-coordinate coefficients `(s_i, t_i) = (v_iᵀ Σ_xx v_i, u_iᵀ Σ_yx v_i)`
    /// of the reduced dynamics.
    pub fn coordinate_coefficients(&self, frames: &Frames) -> (Vec<f64>, Vec<f64>) {
        let k = frames.u.cols();
        let sv = &self.sigma_xx * &frames.v;
        let yv = &self.sigma_yx * &frames.v;
        let s = (0..k)
            .map(|i| (0..frames.v.rows()).map(|a| frames.v[(a, i)] * sv[(a, i)]).sum())
            .collect();
        let t = (0..k)
            .map(|i| (0..frames.u.rows()).map(|a| frames.u[(a, i)] * yv[(a, i)]).sum())
            .collect();
        (s, t)
    }
}

#[derive(Clone, Debug)]
pub struct WeightStack {
    pub dims: NetworkDims,
    pub weights: Vec<Matrix>,
    pub frames: Frames,
}

impl WeightStack {
    pub fn new(dims: NetworkDims, weights: Vec<Matrix>, frames: Frames) -> Result<Self> {
        if weights.len() != dims.depth() {
            return Err(Error::Dimension(format!(
                "{} weight matrices for depth {}",
                weights.len(),
                dims.depth()
            )));
        }
        for (k, w) in weights.iter().enumerate() {
            if w.shape() != dims.layer_shape(k) {
                return Err(Error::Dimension(format!(
                    "layer {} is {:?}, expected {:?}",
                    k + 1,
                    w.shape(),
                    dims.layer_shape(k)
                )));
            }
        }
        Ok(Self { dims, weights, frames })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// Row-wise flattening, layer 1 first.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }

    pub fn from_flat(&self, theta: &[f64]) -> Result<Self> {
        let offsets = self.dims.layer_offsets();
        if theta.len() != *offsets.last().unwrap() {
            return Err(Error::Dimension(format!(
                "flat vector of length {} for {} parameters",
                theta.len(),
                offsets.last().unwrap()
            )));
        }
        let weights = (0..self.depth())
            .map(|k| {
                let (r, c) = self.dims.layer_shape(k);
                Matrix::from_vec(r, c, theta[offsets[k]..offsets[k + 1]].to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dims: self.dims.clone(),
            weights,
            frames: self.frames.clone(),
        })
    }
}

/// The layers a balanced stack with per-layer values `lambdas` must have.
fn balanced_layers(dims: &NetworkDims, frames: &Frames, lambdas: &[f64]) -> Result<Vec<Matrix>> {
    let depth = dims.depth();
    let lam = Matrix::from_diag(lambdas);
    (0..depth)
        .map(|k| {
            let (rows, cols) = dims.layer_shape(k);
            if k == 0 {
                pad_embed(&(&lam * &frames.v.transpose()), rows, cols)
            } else if k == depth - 1 {
                pad_embed(&(&frames.u * &lam), rows, cols)
            } else {
                pad_embed(&lam, rows, cols)
            }
        })
        .collect()
}

/// Balanced initialization: every layer carries `singular_values^(1/L)`.
pub fn balanced_init(
    dims: &NetworkDims,
    singular_values: &[f64],
    frame_source: FrameSource,
) -> Result<WeightStack> {
    if singular_values.len() != dims.d_star() {
        return Err(Error::Dimension(format!(
            "{} singular values for d* = {}",
            singular_values.len(),
            dims.d_star()
        )));
    }
    if let Some(bad) = singular_values.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Domain(format!("singular value {bad} is not a nonnegative number")));
    }
    if singular_values.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Domain("singular values must be sorted descending".into()));
    }
    let frames = match frame_source {
        FrameSource::Explicit(f) => Frames::new(dims, f.u, f.v)?,
        FrameSource::Seed { seed, support } => Frames::sample(dims, support, seed)?,
    };
    let inv_depth = 1.0 / dims.depth() as f64;
    let lambdas: Vec<f64> = singular_values.iter().map(|s| s.powf(inv_depth)).collect();
    let weights = balanced_layers(dims, &frames, &lambdas)?;
    WeightStack::new(dims.clone(), weights, frames)
}

pub fn end_to_end(w: &WeightStack) -> Matrix {
    let mut p = w.weights[0].clone();
    for layer in &w.weights[1..] {
        p = layer * &p;
    }
    p
}

/// Partial products of a stack: `prefix[k] = W_{k-1} ⋯ W_0` (identity for
/// `k = 0`, end-to-end map for `k = L`) and
/// `suffix[k] = W_{L-1} ⋯ W_{k+1}` (identity for `k = L - 1`).
#[derive(Clone, Debug)]
pub struct ChainFactors {
    pub prefix: Vec<Matrix>,
    pub suffix: Vec<Matrix>,
}

pub fn chain_factors(w: &WeightStack) -> ChainFactors {
    let depth = w.depth();
    let mut prefix = Vec::with_capacity(depth + 1);
    prefix.push(Matrix::identity(w.dims.input()));
    for k in 0..depth {
        let next = &w.weights[k] * &prefix[k];
        prefix.push(next);
    }
    let mut suffix = vec![Matrix::identity(w.dims.output()); depth];
    for k in (0..depth - 1).rev() {
        suffix[k] = &suffix[k + 1] * &w.weights[k + 1];
    }
    ChainFactors { prefix, suffix }
}

/// Gradients of the population loss for all layers from one chain pass.
pub fn population_gradients(w: &WeightStack, data: &DataModel) -> Vec<Matrix> {
    let chain = chain_factors(w);
    let omega = data.residual(&chain.prefix[w.depth()]);
    (0..w.depth())
        .map(|k| &(&chain.suffix[k].transpose() * &omega) * &chain.prefix[k].transpose())
        .collect()
}

/// Gradient for layer `layer` (1-based):
/// `(W^L ⋯ W^{l+1})ᵀ Ω (W^{l-1} ⋯ W^1)ᵀ`.
pub fn population_gradient(w: &WeightStack, data: &DataModel, layer: usize) -> Result<Matrix> {
    if layer == 0 || layer > w.depth() {
        return Err(Error::Domain(format!("layer {layer} outside 1..={}", w.depth())));
    }
    Ok(population_gradients(w, data).swap_remove(layer - 1))
}

/// One synchronous gradient step; every layer reads the pre-step stack.
pub fn gd_step(w: &WeightStack, data: &DataModel, eta: f64) -> WeightStack {
    let grads = population_gradients(w, data);
    let weights = w
        .weights
        .iter()
        .zip(&grads)
        .map(|(wk, gk)| wk - &gk.scale(eta))
        .collect();
    WeightStack {
        dims: w.dims.clone(),
        weights,
        frames: w.frames.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    /// Per-layer values `λ_1..λ_d*`.
    pub lambdas: Vec<f64>,
    /// Largest entry by which any layer departs from the balanced pattern
    /// built from `lambdas`.
    pub residual: f64,
}

pub fn spectral_state(w: &WeightStack) -> SpectralState {
    let k = w.dims.d_star();
    let lambdas: Vec<f64> = if w.depth() == 2 {
        let projected = &w.frames.u.transpose() * &w.weights[1];
        (0..k).map(|i| projected[(i, i)]).collect()
    } else {
        (0..k).map(|i| w.weights[1][(i, i)]).collect()
    };
    let residual = match balanced_layers(&w.dims, &w.frames, &lambdas) {
        Ok(expected) => w
            .weights
            .iter()
            .zip(&expected)
            .fold(0.0, |m: f64, (a, b)| m.max(a.max_abs_diff(b))),
        Err(_) => f64::INFINITY,
    };
    SpectralState { lambdas, residual }
}

/// Excess loss of a stack in the shared-structure regime, from its
/// per-layer values: `½ Σ_i (s_i σ_i² − 2 t_i σ_i + t_i)` with
/// `σ_i = λ_i^L`, which is `½ Σ_{i≤r} (1 − σ_i)²` for the default data.
/// Evaluated as `s (σ − t/s)² + t − t²/s` so that it stays accurate near
/// the minimum.
pub fn population_excess_loss(w: &WeightStack, data: &DataModel) -> Result<f64> {
    let state = spectral_state(w);
    if !(state.residual <= STRUCTURE_TOLERANCE) {
        return Err(Error::Regime {
            residual: state.residual,
            tolerance: STRUCTURE_TOLERANCE,
        });
    }
    let (s, t) = match data.whitened_rank {
        // Whitened data is built from the same frames, so the coefficients
        // are exactly 0 or 1.
        Some(q) => (0..state.lambdas.len())
            .map(|i| ((i < q) as u8 as f64, (i < data.rank) as u8 as f64))
            .unzip(),
        None => data.coordinate_coefficients(&w.frames),
    };
    let depth = w.depth() as i32;
    Ok(0.5
        * state
            .lambdas
            .iter()
            .zip(s.iter().zip(&t))
            .map(|(lam, (&s, &t))| {
                let sigma = lam.powi(depth);
                if s > 0.0 {
                    s * (sigma - t / s).powi(2) + (t - t * t / s).max(0.0)
                } else {
                    t
                }
            })
            .sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub checkpoint_stride: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Checks `0 < η < min{1/L, 2/((2L−1) M^{2L−2})}` with
    /// `M = max{1, λ_{i,0}}` over the initial per-layer values.
    pub fn validate(&self, depth: usize, initial_lambdas: &[f64]) -> Result<()> {
        let m = initial_lambdas.iter().fold(1.0_f64, |m, &l| m.max(l));
        let bound = max_step_size(depth, m);
        if !(self.eta > 0.0 && self.eta < bound) {
            return Err(Error::Config(format!(
                "step size eta = {} must lie in (0, {bound}) for L = {depth}, M = {m}",
                self.eta
            )));
        }
        Ok(())
    }
}
