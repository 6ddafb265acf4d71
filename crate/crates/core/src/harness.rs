//! Experiment configuration, the training loop with checkpoint analyses,
//! verdicts, and the CSV/JSON artifacts a run leaves behind.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{coordinate_step, loss_decay_bound, max_step_size, DynamicsReport};
use crate::error::{Error, Result};
use crate::hessian::{
    assemble_functional, finite_difference_hessian, hf_norm_bound_from, omega_norm_bound,
    outer_factor, ResidualModel, FD_ORACLE_CAP, FD_STEP,
};
use crate::matrix::{sym_eigenvalues, sym_spectral_norm, DEFAULT_KRON_CAP};
use crate::network::{
    balanced_init, end_to_end, gd_step, population_excess_loss, spectral_state, DataModel,
    FrameSource, InputSupport, NetworkDims, TrainConfig, WeightStack, STRUCTURE_TOLERANCE,
};
use crate::spectrum::{
    classify_clusters, predict_spectrum, ratio_theta_l, verify_eigenvectors, verify_weyl_sandwich,
    ClusterCounts, ClusterLabel, EigenvectorCheck, MatchErrors, RatioFit, RatioPoint,
};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "HBL_OUTPUT_DIR";

pub const DEFAULT_HESSIAN_CAP: usize = 3000;

/// Scalar and matrix runs may drift apart by this much per 1000 steps.
pub const SCALAR_MATRIX_TOLERANCE: f64 = 1e-10;

// Bound checks compare quantities that reach the rounding floor at
// convergence, so each carries a relative allowance plus an absolute floor.
const BOUND_REL: f64 = 1e-9;
const HF_FLOOR: f64 = 1e-12;
const OMEGA_FLOOR: f64 = 1e-14;
const LOSS_FLOOR: f64 = 1e-24;
const WEYL_REL: f64 = 1e-9;
const EIGVEC_REL: f64 = 1e-8;
const FD_REL: f64 = 1e-5;
const FRAME_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Full width list `d_0..d_L`; replaces the four fields above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    pub rank: usize,
    #[serde(default)]
    pub input_support: InputSupport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every aligned per-layer value equals `mu`.
    Usi,
    /// Aligned per-layer values listed in `values`.
    Spectrum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub mode: InitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// Per-layer value of the coordinates `r+1..d*`.
    #[serde(default)]
    pub tail: f64,
    /// Seed of the singular-vector frames.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckpointSpec {
    /// `"geometric"` (0, 1, 2, 4, … plus the final step) or `"endpoints"`
    /// (0 and the final step).
    Named(String),
    Stride { stride: usize },
    List(Vec<usize>),
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec::Named("geometric".into())
    }
}

fn default_eta_fraction() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Used when `eta` is absent: `eta = eta_fraction · max_step_size`.
    #[serde(default = "default_eta_fraction")]
    pub eta_fraction: f64,
    /// Stop once the excess loss reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_loss: Option<f64>,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyses {
    pub assemble_hessian: bool,
    pub fd_oracle: bool,
    pub eigenvectors: bool,
    pub weyl: bool,
    /// Full `P x P` eigendecomposition of `H_o` alongside the Gram route.
    pub validation: bool,
    /// Largest `P` for which Hessians are assembled; above it the
    /// predicted spectrum is emitted instead.
    pub hessian_cap: usize,
}

impl Default for Analyses {
    fn default() -> Self {
        Self {
            assemble_hessian: true,
            fd_oracle: false,
            eigenvectors: false,
            weyl: true,
            validation: false,
            hessian_cap: DEFAULT_HESSIAN_CAP,
        }
    }
}

fn default_name() -> String {
    "run".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dims: DimsConfig,
    pub init: InitConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub analyses: Analyses,
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub eta: Option<f64>,
    pub out: Option<PathBuf>,
    pub no_hessian: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.init.seed = seed;
        }
        if let Some(steps) = o.steps {
            self.train.steps = steps;
        }
        if let Some(eta) = o.eta {
            self.train.eta = Some(eta);
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
        if o.no_hessian {
            self.analyses.assemble_hessian = false;
            self.analyses.eigenvectors = false;
            self.analyses.fd_oracle = false;
            self.analyses.validation = false;
        }
    }

    /// Output directory: the configured one, else `$HBL_OUTPUT_DIR/<name>`,
    /// else `runs/<name>`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output_dir {
            return dir.clone();
        }
        let root = std::env::var_os(OUTPUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }

    fn network_dims(&self) -> Result<NetworkDims> {
        let d = &self.dims;
        let widths = match (&d.widths, d.depth, d.input, d.output, d.hidden) {
            (Some(w), None, None, None, None) => w.clone(),
            (None, Some(depth), Some(input), Some(output), Some(hidden)) => {
                return NetworkDims::uniform(depth, input, hidden, output, d.rank)
            }
            _ => {
                return Err(Error::Config(
                    "dims needs either `widths` alone or all of `depth`, `input`, `output`, `hidden`"
                        .into(),
                ))
            }
        };
        NetworkDims::new(widths, d.rank)
    }

    /// Checks every precondition and derives the run parameters without
    /// doing any training.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let dims = self.network_dims()?;
        let (r, k) = (dims.rank(), dims.d_star());
        let init = &self.init;
        if !(init.tail >= 0.0 && init.tail.is_finite()) {
            return Err(Error::Config(format!("init.tail = {} must be nonnegative", init.tail)));
        }
        let head: Vec<f64> = match init.mode {
            InitMode::Usi => {
                let mu = init
                    .mu
                    .ok_or_else(|| Error::Config("init.mode = \"usi\" needs init.mu".into()))?;
                vec![mu; r]
            }
            InitMode::Spectrum => {
                let values = init.values.clone().ok_or_else(|| {
                    Error::Config("init.mode = \"spectrum\" needs init.values".into())
                })?;
                if values.len() != r {
                    return Err(Error::Config(format!(
                        "init.values has {} entries, dims.rank is {r}",
                        values.len()
                    )));
                }
                values
            }
        };
        if let Some(bad) = head.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("initial value {bad} must be positive")));
        }
        if head.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config("init.values must be sorted descending".into()));
        }
        if init.tail > *head.last().unwrap() {
            return Err(Error::Config(format!(
                "init.tail = {} exceeds the smallest aligned value",
                init.tail
            )));
        }
        let mut lambda0 = head;
        lambda0.resize(k, init.tail);

        let depth = dims.depth();
        let m = lambda0.iter().fold(1.0_f64, |m, &l| m.max(l));
        let bound = max_step_size(depth, m);
        let train = &self.train;
        let eta = match train.eta {
            Some(eta) => eta,
            None => {
                if !(train.eta_fraction > 0.0 && train.eta_fraction < 1.0) {
                    return Err(Error::Config(format!(
                        "train.eta_fraction = {} must lie in (0, 1)",
                        train.eta_fraction
                    )));
                }
                train.eta_fraction * bound
            }
        };
        if let Some(target) = train.target_loss {
            if !(target >= 0.0) {
                return Err(Error::Config(format!("train.target_loss = {target} must be nonnegative")));
            }
        }
        let stride = match &train.checkpoints {
            CheckpointSpec::Stride { stride } => *stride,
            _ => 0,
        };
        let tc = TrainConfig {
            eta,
            steps: train.steps,
            checkpoint_stride: stride,
            seed: init.seed,
        };
        tc.validate(depth, &lambda0)?;
        let schedule = checkpoint_schedule(&train.checkpoints, train.steps)?;

        let p = dims.param_count();
        let a = &self.analyses;
        if a.hessian_cap.saturating_mul(a.hessian_cap) > DEFAULT_KRON_CAP {
            return Err(Error::Config(format!(
                "analyses.hessian_cap = {} would exceed the {DEFAULT_KRON_CAP}-entry matrix cap",
                a.hessian_cap
            )));
        }
        let assemble = a.assemble_hessian && p <= a.hessian_cap;
        if (a.eigenvectors || a.validation || a.fd_oracle) && !assemble {
            return Err(Error::Config(format!(
                "eigenvector, validation and oracle analyses need assembled Hessians (P = {p}, cap {}, assemble_hessian = {})",
                a.hessian_cap, a.assemble_hessian
            )));
        }
        if a.fd_oracle && p > FD_ORACLE_CAP {
            return Err(Error::OracleCap { params: p, cap: FD_ORACLE_CAP });
        }
        Ok(ResolvedConfig {
            support: self.dims.input_support,
            dims,
            lambda0,
            m,
            step_bound: bound,
            train: tc,
            schedule,
            assemble,
        })
    }
}

fn checkpoint_schedule(spec: &CheckpointSpec, steps: usize) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    match spec {
        CheckpointSpec::Named(name) if name == "geometric" => {
            set.insert(0);
            let mut s = 1;
            while s <= steps {
                set.insert(s);
                s *= 2;
            }
        }
        CheckpointSpec::Named(name) if name == "endpoints" => {
            set.insert(0);
        }
        CheckpointSpec::Named(name) => {
            return Err(Error::Config(format!(
                "train.checkpoints = \"{name}\" is not one of \"geometric\", \"endpoints\""
            )))
        }
        CheckpointSpec::Stride { stride } => {
            if *stride == 0 {
                return Err(Error::Config("train.checkpoints.stride must be positive".into()));
            }
            set.extend((0..=steps).step_by(*stride));
        }
        CheckpointSpec::List(list) => {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("train.checkpoints must be strictly increasing".into()));
            }
            if let Some(bad) = list.iter().find(|&&s| s > steps) {
                return Err(Error::Config(format!(
                    "checkpoint {bad} lies beyond train.steps = {steps}"
                )));
            }
            set.extend(list.iter().copied());
        }
    }
    set.insert(steps);
    Ok(set)
}

#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub dims: NetworkDims,
    pub support: InputSupport,
    /// Initial per-layer values for all `d*` coordinates.
    pub lambda0: Vec<f64>,
    pub m: f64,
    pub step_bound: f64,
    pub train: TrainConfig,
    /// Scheduled checkpoint steps, the final scheduled step included.
    pub schedule: BTreeSet<usize>,
    /// Whether Hessians are assembled at checkpoints.
    pub assemble: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Measured,
    Predicted,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Measured => "measured",
            Source::Predicted => "predicted",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub eigenvalue: f64,
    pub cluster: ClusterLabel,
    pub predicted_value: f64,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    /// Aligned per-layer values `λ_1..λ_r`.
    pub lambdas: Vec<f64>,
    pub excess_loss: f64,
    pub hf_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub lambdas: Vec<f64>,
    pub excess_loss: f64,
    pub source: Source,
    pub omega_norm: f64,
    pub omega_bound: f64,
    pub hf_norm: Option<f64>,
    pub hf_bound: f64,
    /// Largest eigenvalue of `H_o`.
    pub h_o_max: Option<f64>,
    /// Largest eigenvalue of `H_L`.
    pub h_max: Option<f64>,
    pub weyl_violation: Option<f64>,
    /// `L̃_0 e^{−2Lαηt}` with the trajectory-wide `α`.
    pub loss_bound: Option<f64>,
    pub counts: ClusterCounts,
    pub expected_counts: ClusterCounts,
    pub counts_match: bool,
    pub gap_condition_ok: bool,
    pub ratio: Option<f64>,
    pub ratio_range: Option<(f64, f64)>,
    pub match_errors: MatchErrors,
    /// Largest `|λ|` labeled zero.
    pub zero_max: f64,
    pub ambiguous: usize,
    pub unmatched: usize,
    pub eigenvectors: Option<EigenvectorCheck>,
    pub fd_max_error: Option<f64>,
    pub fd_scale: Option<f64>,
    /// Largest gap between full-space and Gram-side `H_o` eigenvalues.
    pub gram_agreement: Option<f64>,
    pub h_o_min: Option<f64>,
    #[serde(skip)]
    pub spectrum: Vec<SpectrumRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// Largest `measured − allowed` over the instances checked; nonpositive
    /// when the check passes.
    pub max_excess: f64,
    pub checked: usize,
    pub detail: String,
}

impl Verdict {
    fn from_excesses(name: &str, excesses: &[f64], detail: impl Into<String>) -> Self {
        let max_excess = excesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let max_excess = if excesses.is_empty() { 0.0 } else { max_excess };
        Self {
            name: name.into(),
            passed: excesses.iter().all(|e| *e <= 0.0),
            max_excess,
            checked: excesses.len(),
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub widths: Vec<usize>,
    pub depth: usize,
    pub rank: usize,
    pub d_star: usize,
    pub support_rank: usize,
    pub param_count: usize,
    pub eta: f64,
    pub step_bound: f64,
    pub m: f64,
    pub lambda0: Vec<f64>,
    pub hessian_assembled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub name: String,
    pub config: ExperimentConfig,
    pub derived: Derived,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub dynamics: DynamicsReport,
    /// Largest per-coordinate gap between the matrix run and the scalar
    /// recursion.
    pub scalar_matrix_deviation: f64,
    pub max_structure_residual: f64,
    pub trajectory: Vec<TrajectoryRow>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
}

impl RunArtifacts {
    pub fn final_checkpoint(&self) -> &CheckpointRecord {
        self.checkpoints.last().expect("a run always has a final checkpoint")
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Snaps coefficients within rounding of 0 or 1 to the exact value.
fn snap(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else if (x - 1.0).abs() < 1e-12 {
        1.0
    } else {
        x
    }
}

fn analyze_checkpoint(
    w: &WeightStack,
    data: &DataModel,
    resolved: &ResolvedConfig,
    analyses: &Analyses,
    step: usize,
    loss: f64,
) -> Result<CheckpointRecord> {
    let dims = &w.dims;
    let (r, p) = (dims.rank(), dims.param_count());
    let state = spectral_state(w);
    let lambdas: Vec<f64> = state.lambdas[..r].to_vec();
    let lambda_max = state.lambdas.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let prediction = predict_spectrum(&lambdas, dims, resolved.support)?;
    let omega_norm = ResidualModel::new(w, data).norm();
    let hf_bound = hf_norm_bound_from(lambda_max, loss, r, dims.depth());

    let mut rec = CheckpointRecord {
        step,
        lambdas,
        excess_loss: loss,
        source: Source::Predicted,
        omega_norm,
        omega_bound: omega_norm_bound(loss, r),
        hf_norm: None,
        hf_bound,
        h_o_max: None,
        h_max: None,
        weyl_violation: None,
        loss_bound: None,
        counts: ClusterCounts::default(),
        expected_counts: ClusterCounts {
            dominant: prediction.dominant_count,
            bulk: prediction.bulk_count,
            zero: prediction.param_zero_count,
        },
        counts_match: false,
        gap_condition_ok: prediction.gap_condition_ok,
        ratio: None,
        ratio_range: None,
        match_errors: MatchErrors::default(),
        zero_max: 0.0,
        ambiguous: 0,
        unmatched: 0,
        eigenvectors: None,
        fd_max_error: None,
        fd_scale: None,
        gram_agreement: None,
        h_o_min: None,
        spectrum: Vec::new(),
    };

    let report = if resolved.assemble {
        let factor = outer_factor(w, data)?;
        let h_o = factor.hessian();
        let h_f = assemble_functional(w, data)?;
        let h = &h_o + &h_f;
        let eigs = sym_eigenvalues(&h)?;
        let hf_norm = sym_spectral_norm(&h_f)?;
        let mut h_o_eigs = sym_eigenvalues(&factor.gram())?;
        h_o_eigs.resize(p, 0.0);
        h_o_eigs.sort_by(|a, b| b.total_cmp(a));
        if analyses.validation {
            let full = sym_eigenvalues(&h_o)?;
            rec.gram_agreement = Some(
                full.iter()
                    .zip(&h_o_eigs)
                    .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs())),
            );
            rec.h_o_min = full.last().copied();
            h_o_eigs = full;
        }
        if analyses.weyl {
            rec.weyl_violation = Some(verify_weyl_sandwich(&eigs, &h_o_eigs, hf_norm)?);
        }
        if analyses.eigenvectors {
            rec.eigenvectors = Some(verify_eigenvectors(w, resolved.support, &factor, &h_o)?);
        }
        if analyses.fd_oracle {
            let fd = finite_difference_hessian(w, data, FD_STEP)?;
            rec.fd_max_error = Some(fd.max_abs_diff(&h));
            rec.fd_scale = Some(h.max_abs());
        }
        rec.source = Source::Measured;
        rec.hf_norm = Some(hf_norm);
        rec.h_o_max = h_o_eigs.first().copied();
        rec.h_max = eigs.first().copied();
        classify_clusters(&eigs, &prediction, hf_norm)?
    } else {
        classify_clusters(&prediction.multiset(p), &prediction, 0.0)?
    };

    rec.counts = report.counts.clone();
    rec.counts_match = report.counts_match;
    rec.ratio = report.ratio.is_finite().then_some(report.ratio);
    rec.ratio_range = (report.ratio_range.0.is_finite() && report.ratio_range.1.is_finite())
        .then_some(report.ratio_range);
    rec.match_errors = report.match_errors.clone();
    rec.zero_max = report.match_errors.zero;
    rec.ambiguous = report.ambiguous.len();
    rec.unmatched = report.unmatched.len();
    rec.spectrum = report
        .eigenvalues
        .iter()
        .zip(&report.cluster_of)
        .zip(&report.predicted)
        .map(|((&e, &c), &pv)| SpectrumRow {
            eigenvalue: e,
            cluster: c,
            predicted_value: pv,
            source: rec.source,
        })
        .collect();
    Ok(rec)
}

/// Runs the experiment in memory.
pub fn simulate(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let resolved = config.resolve()?;
    let dims = resolved.dims.clone();
    let (r, depth) = (dims.rank(), dims.depth());
    let eta = resolved.train.eta;
    let steps = resolved.train.steps;
    let target = config.train.target_loss;

    let singular_values: Vec<f64> = resolved.lambda0.iter().map(|l| l.powi(depth as i32)).collect();
    let mut w = balanced_init(
        &dims,
        &singular_values,
        FrameSource::Seed {
            seed: config.init.seed,
            support: resolved.support,
        },
    )?;
    let data = DataModel::whitened(&dims, &w.frames, resolved.support)?;
    let (s, t) = data.coordinate_coefficients(&w.frames);
    let (s, t): (Vec<f64>, Vec<f64>) = (s.into_iter().map(snap).collect(), t.into_iter().map(snap).collect());

    let mut scalar = spectral_state(&w).lambdas;
    let limit = 2.0 * resolved.m;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut trajectory = Vec::new();
    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut deviation: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let mut losses = Vec::new();
    let mut steps_run = 0;
    let mut stopped_early = false;

    for step in 0..=steps {
        if step > 0 {
            w = gd_step(&w, &data, eta);
            for (i, l) in scalar.iter_mut().enumerate() {
                *l = coordinate_step(*l, eta, depth, s[i], t[i]);
            }
            if let Some(&bad) = scalar[..r].iter().find(|l| !(**l > 0.0 && **l <= limit)) {
                return Err(Error::Divergence { step, value: bad, limit });
            }
        }
        let state = spectral_state(&w);
        max_residual = max_residual.max(state.residual);
        for (a, b) in state.lambdas.iter().zip(&scalar) {
            deviation = deviation.max((a - b).abs());
        }
        let loss = population_excess_loss(&w, &data)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("excess loss is {loss} at step {step}")));
        }
        let reached = target.is_some_and(|tl| loss <= tl);
        let is_final = step == steps || reached;
        let mut hf_norm = None;
        if resolved.schedule.contains(&step) || is_final {
            let rec = analyze_checkpoint(&w, &data, &resolved, &config.analyses, step, loss)?;
            hf_norm = rec.hf_norm;
            checkpoints.push(rec);
        }
        history.push(state.lambdas[..r].to_vec());
        losses.push(loss);
        trajectory.push(TrajectoryRow {
            step,
            lambdas: state.lambdas[..r].to_vec(),
            excess_loss: loss,
            hf_norm,
        });
        steps_run = step;
        if reached && step < steps {
            stopped_early = true;
            break;
        }
    }

    let dynamics = DynamicsReport::from_values(&history, depth, eta);
    let l0 = losses[0];
    let loss_bound = |t: usize| loss_decay_bound(l0, dynamics.alpha_trajectory, eta, depth, t);
    for rec in &mut checkpoints {
        rec.loss_bound = Some(loss_bound(rec.step));
    }

    let verdicts = build_verdicts(
        config,
        &resolved,
        &checkpoints,
        &losses,
        &loss_bound,
        deviation,
        max_residual,
        &w,
    );
    let passed = verdicts.iter().all(|v| v.passed);
    Ok(RunArtifacts {
        name: config.name.clone(),
        config: config.clone(),
        derived: Derived {
            widths: dims.widths().to_vec(),
            depth,
            rank: r,
            d_star: dims.d_star(),
            support_rank: resolved.support.rank(&dims),
            param_count: dims.param_count(),
            eta,
            step_bound: resolved.step_bound,
            m: resolved.m,
            lambda0: resolved.lambda0.clone(),
            hessian_assembled: resolved.assemble,
        },
        steps_run,
        stopped_early,
        dynamics,
        scalar_matrix_deviation: deviation,
        max_structure_residual: max_residual,
        trajectory,
        checkpoints,
        verdicts,
        passed,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_verdicts(
    config: &ExperimentConfig,
    resolved: &ResolvedConfig,
    checkpoints: &[CheckpointRecord],
    losses: &[f64],
    loss_bound: &dyn Fn(usize) -> f64,
    deviation: f64,
    max_residual: f64,
    w: &WeightStack,
) -> Vec<Verdict> {
    let steps = losses.len() - 1;
    let mut out = Vec::new();
    out.push(Verdict::from_excesses(
        "shared_structure",
        &[max_residual - STRUCTURE_TOLERANCE],
        format!("max structure residual {max_residual:e}"),
    ));
    let scalar_tol = SCALAR_MATRIX_TOLERANCE * (steps as f64 / 1000.0).max(1.0);
    out.push(Verdict::from_excesses(
        "scalar_matrix",
        &[deviation - scalar_tol],
        format!("max deviation {deviation:e}, allowed {scalar_tol:e}"),
    ));
    let monotone: Vec<f64> = losses
        .windows(2)
        .map(|p| p[1] - (p[0] * (1.0 + 1e-12) + LOSS_FLOOR))
        .collect();
    out.push(Verdict::from_excesses("monotone_loss", &monotone, "excess loss non-increasing"));

    let loss_ex: Vec<f64> = losses
        .iter()
        .enumerate()
        .map(|(t, &l)| l - (loss_bound(t) * (1.0 + BOUND_REL) + LOSS_FLOOR))
        .collect();
    out.push(Verdict::from_excesses(
        "loss_decay",
        &loss_ex,
        "excess loss below L0 exp(-2 L alpha eta t) at every step, alpha over the whole trajectory",
    ));
    let omega_ex: Vec<f64> = checkpoints
        .iter()
        .map(|c| c.omega_norm - (c.omega_bound * (1.0 + BOUND_REL) + OMEGA_FLOOR))
        .collect();
    out.push(Verdict::from_excesses("omega_bound", &omega_ex, "||Omega|| <= sqrt(2 r eps)"));

    if resolved.assemble {
        let hf_ex: Vec<f64> = checkpoints
            .iter()
            .filter_map(|c| {
                let scale = c.h_o_max.unwrap_or(1.0).max(1.0);
                c.hf_norm
                    .map(|n| n - (c.hf_bound * (1.0 + BOUND_REL) + HF_FLOOR * scale))
            })
            .collect();
        out.push(Verdict::from_excesses("hf_bound", &hf_ex, "||H_f|| below the loss-based bound"));
        if config.analyses.weyl {
            let weyl_ex: Vec<f64> = checkpoints
                .iter()
                .filter_map(|c| {
                    c.weyl_violation
                        .map(|v| v - WEYL_REL * c.h_max.unwrap_or(0.0).abs().max(1e-300))
                })
                .collect();
            out.push(Verdict::from_excesses("weyl", &weyl_ex, "|l_k(H) - l_k(H_o)| <= ||H_f||"));
        }
        if config.analyses.eigenvectors {
            let ex: Vec<f64> = checkpoints
                .iter()
                .filter_map(|c| {
                    let e = c.eigenvectors.as_ref()?;
                    let scale = c.h_o_max.unwrap_or(1.0).max(1.0);
                    Some(
                        (e.max_residual - EIGVEC_REL * scale)
                            .max(e.max_rayleigh_error - EIGVEC_REL * scale)
                            .max(e.max_zero_norm - EIGVEC_REL * scale.sqrt()),
                    )
                })
                .collect();
            out.push(Verdict::from_excesses("eigenvectors", &ex, "A_o(u_i x v_j) are eigenvectors of H_o"));
        }
        if config.analyses.fd_oracle {
            let ex: Vec<f64> = checkpoints
                .iter()
                .filter_map(|c| Some(c.fd_max_error? - FD_REL * (1.0 + c.fd_scale?)))
                .collect();
            out.push(Verdict::from_excesses("fd_oracle", &ex, "assembled Hessian matches finite differences"));
        }
        if config.analyses.validation {
            let ex: Vec<f64> = checkpoints
                .iter()
                .filter_map(|c| {
                    let scale = c.h_o_max?.abs();
                    Some(
                        (c.gram_agreement? - 1e-9 * scale).max(-c.h_o_min? - 1e-9 * scale),
                    )
                })
                .collect();
            out.push(Verdict::from_excesses(
                "gram_agreement",
                &ex,
                "full-space and Gram-side H_o spectra agree; H_o is PSD",
            ));
        }
        let last = checkpoints.last().unwrap();
        let (ex, detail) = if last.gap_condition_ok {
            (
                vec![if last.counts_match { -1.0 } else { 1.0 }],
                format!(
                    "final counts {}/{}/{} vs predicted {}/{}/{}",
                    last.counts.dominant,
                    last.counts.bulk,
                    last.counts.zero,
                    last.expected_counts.dominant,
                    last.expected_counts.bulk,
                    last.expected_counts.zero
                ),
            )
        } else {
            (Vec::new(), "gap condition fails at the final checkpoint; counts not asserted".into())
        };
        out.push(Verdict::from_excesses("cluster_counts", &ex, detail));
    }

    if resolved.lambda0[w.dims.rank()..].iter().all(|&l| l == 0.0) {
        let misalignment = frame_misalignment(w);
        out.push(Verdict::from_excesses(
            "frame_alignment",
            &[misalignment - FRAME_TOLERANCE],
            format!("end-to-end map leaves the frames by {misalignment:e} (relative)"),
        ));
    }
    out
}

/// `‖P − U_r U_rᵀ P V_r V_rᵀ‖_max / ‖P‖_max`.
fn frame_misalignment(w: &WeightStack) -> f64 {
    let r = w.dims.rank();
    let p = end_to_end(w);
    let u = w.frames.u.submatrix(0, 0, w.frames.u.rows(), r);
    let v = w.frames.v.submatrix(0, 0, w.frames.v.rows(), r);
    let projected = &(&(&u * &u.transpose()) * &p) * &(&v * &v.transpose());
    let scale = p.max_abs();
    if scale == 0.0 {
        0.0
    } else {
        p.max_abs_diff(&projected) / scale
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:e}")
}

/// `step,lambda_1..lambda_r,excess_loss,hf_norm`; `hf_norm` is empty on
/// steps without a measured Hessian.
pub fn trajectory_csv(artifacts: &RunArtifacts) -> String {
    let r = artifacts.derived.rank;
    let mut s = String::from("step");
    for i in 1..=r {
        write!(s, ",lambda_{i}").unwrap();
    }
    s.push_str(",excess_loss,hf_norm\n");
    for row in &artifacts.trajectory {
        write!(s, "{}", row.step).unwrap();
        for l in &row.lambdas {
            write!(s, ",{}", fmt_f(*l)).unwrap();
        }
        write!(s, ",{},", fmt_f(row.excess_loss)).unwrap();
        if let Some(h) = row.hf_norm {
            s.push_str(&fmt_f(h));
        }
        s.push('\n');
    }
    s
}

/// `eigenvalue,cluster,predicted_value,source`, eigenvalues descending.
pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut s = String::from("eigenvalue,cluster,predicted_value,source\n");
    for row in rows {
        writeln!(
            s,
            "{},{},{},{}",
            fmt_f(row.eigenvalue),
            row.cluster,
            fmt_f(row.predicted_value),
            row.source.as_str()
        )
        .unwrap();
    }
    s
}

pub fn summary_json(artifacts: &RunArtifacts) -> Result<String> {
    Ok(serde_json::to_string_pretty(artifacts)? + "\n")
}

fn without_trajectory(artifacts: &RunArtifacts) -> RunArtifacts {
    RunArtifacts {
        trajectory: Vec::new(),
        ..artifacts.clone()
    }
}

pub fn write_artifacts(dir: &Path, artifacts: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join("error.json"));
    fs::write(dir.join("trajectory.csv"), trajectory_csv(artifacts))?;
    for rec in &artifacts.checkpoints {
        fs::write(dir.join(format!("spectrum_{}.csv", rec.step)), spectrum_csv(&rec.spectrum))?;
    }
    // The trajectory already lives in its CSV.
    fs::write(dir.join("summary.json"), summary_json(&without_trajectory(artifacts))?)?;
    Ok(())
}

pub fn error_json(err: &Error) -> String {
    let value = json!({
        "kind": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    });
    serde_json::to_string_pretty(&value).unwrap() + "\n"
}

/// Simulates and writes the artifacts. On failure, writes `error.json` into
/// the output directory (when it can be created) and returns the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let dir = config.resolved_output_dir();
    match simulate(config) {
        Ok(artifacts) => {
            write_artifacts(&dir, &artifacts)?;
            Ok(artifacts)
        }
        Err(err) => {
            if fs::create_dir_all(&dir).is_ok() {
                let _ = fs::write(dir.join("error.json"), error_json(&err));
            }
            Err(err)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth: usize,
    pub rank: usize,
    pub status: String,
    pub steps_run: Option<usize>,
    pub final_excess_loss: Option<f64>,
    pub ratio: Option<f64>,
    pub counts: Option<ClusterCounts>,
    pub expected_counts: Option<ClusterCounts>,
    pub counts_match: Option<bool>,
    /// Largest `measured − allowed` over the bound verdicts of the point.
    pub max_bound_violation: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankFit {
    pub rank: usize,
    pub fit: Option<RatioFit>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub points: Vec<SweepRow>,
    /// Ratio-versus-depth fit for each rank.
    pub fits: Vec<RankFit>,
    /// Fit over every successful point.
    pub pooled_fit: Option<RatioFit>,
    pub passed: bool,
}

const BOUND_VERDICTS: [&str; 4] = ["hf_bound", "weyl", "loss_decay", "omega_bound"];

fn sweep_row(depth: usize, rank: usize, result: &Result<RunArtifacts>) -> SweepRow {
    match result {
        Ok(a) => {
            let last = a.final_checkpoint();
            let bound = a
                .verdicts
                .iter()
                .filter(|v| BOUND_VERDICTS.contains(&v.name.as_str()) && v.checked > 0)
                .map(|v| v.max_excess)
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            SweepRow {
                depth,
                rank,
                status: if a.passed { "passed" } else { "failed" }.into(),
                steps_run: Some(a.steps_run),
                final_excess_loss: Some(last.excess_loss),
                ratio: last.ratio,
                counts: Some(last.counts.clone()),
                expected_counts: Some(last.expected_counts.clone()),
                counts_match: Some(last.counts_match),
                max_bound_violation: bound,
                error: None,
            }
        }
        Err(e) => SweepRow {
            depth,
            rank,
            status: "error".into(),
            steps_run: None,
            final_excess_loss: None,
            ratio: None,
            counts: None,
            expected_counts: None,
            counts_match: None,
            max_bound_violation: None,
            error: Some(format!("{}: {e}", e.kind())),
        },
    }
}

/// Derives the configuration of one sweep point.
pub fn sweep_point_config(base: &ExperimentConfig, depth: usize, rank: usize) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.dims.depth = Some(depth);
    cfg.dims.rank = rank;
    let root = base.resolved_output_dir();
    cfg.output_dir = Some(root.join(format!("L{depth}_r{rank}")));
    cfg.name = format!("{}_L{depth}_r{rank}", base.name);
    cfg
}

/// Runs every `(L, r)` grid point, at most `workers` at a time, and writes
/// `sweep_summary.csv` and `sweep_summary.json` under the base output
/// directory. Failed points are recorded and do not stop the sweep.
pub fn run_sweep(
    base: &ExperimentConfig,
    depths: &[usize],
    ranks: &[usize],
    workers: usize,
) -> Result<(SweepSummary, Vec<Result<RunArtifacts>>)> {
    if base.dims.widths.is_some() {
        return Err(Error::Config(
            "sweeps vary the depth, so dims must use depth/input/output/hidden rather than widths"
                .into(),
        ));
    }
    let grid: Vec<(usize, usize)> = depths
        .iter()
        .flat_map(|&l| ranks.iter().map(move |&r| (l, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<Result<RunArtifacts>> = pool.install(|| {
        grid.par_iter()
            .map(|&(l, r)| run_experiment(&sweep_point_config(base, l, r)))
            .collect()
    });
    let summary = summarize_sweep(base, &grid, &results);
    let root = base.resolved_output_dir();
    fs::create_dir_all(&root)?;
    fs::write(root.join("sweep_summary.csv"), sweep_csv(&summary))?;
    fs::write(root.join("sweep_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((summary, results))
}

pub fn summarize_sweep(
    base: &ExperimentConfig,
    grid: &[(usize, usize)],
    results: &[Result<RunArtifacts>],
) -> SweepSummary {
    let points: Vec<SweepRow> = grid
        .iter()
        .zip(results)
        .map(|(&(l, r), res)| sweep_row(l, r, res))
        .collect();
    let ratio_point = |res: &Result<RunArtifacts>| -> Option<RatioPoint> {
        let a = res.as_ref().ok()?;
        let last = a.final_checkpoint();
        let lo = last.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = last.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(RatioPoint {
            depth: a.derived.depth,
            ratio: last.ratio?,
            m: 0.5 * (hi + lo),
            delta: 0.5 * (hi - lo),
        })
    };
    let mut ranks: Vec<usize> = grid.iter().map(|g| g.1).collect();
    ranks.sort_unstable();
    ranks.dedup();
    let fits = ranks
        .iter()
        .map(|&rank| {
            let pts: Vec<RatioPoint> = grid
                .iter()
                .zip(results)
                .filter(|(g, _)| g.1 == rank)
                .filter_map(|(_, res)| ratio_point(res))
                .collect();
            match ratio_theta_l(&pts) {
                Ok(fit) => RankFit { rank, fit: Some(fit), error: None },
                Err(e) => RankFit { rank, fit: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let all: Vec<RatioPoint> = results.iter().filter_map(ratio_point).collect();
    let pooled_fit = ratio_theta_l(&all).ok();
    let passed = points.iter().all(|p| p.status == "passed");
    SweepSummary {
        name: base.name.clone(),
        points,
        fits,
        pooled_fit,
        passed,
    }
}

fn opt_f(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn opt_u(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per grid point:
/// `depth,rank,status,steps_run,final_excess_loss,ratio,dominant_count,bulk_count,zero_count,expected_dominant,expected_bulk,expected_zero,counts_match,max_bound_violation,error`.
pub fn sweep_csv(summary: &SweepSummary) -> String {
    let mut s = String::from(
        "depth,rank,status,steps_run,final_excess_loss,ratio,dominant_count,bulk_count,zero_count,expected_dominant,expected_bulk,expected_zero,counts_match,max_bound_violation,error\n",
    );
    for p in &summary.points {
        let c = p.counts.as_ref();
        let e = p.expected_counts.as_ref();
        // Commas and quotes in messages would break the row.
        let err = p.error.as_deref().unwrap_or("").replace([',', '"', '\n'], ";");
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.depth,
            p.rank,
            p.status,
            opt_u(p.steps_run),
            opt_f(p.final_excess_loss),
            opt_f(p.ratio),
            opt_u(c.map(|c| c.dominant)),
            opt_u(c.map(|c| c.bulk)),
            opt_u(c.map(|c| c.zero)),
            opt_u(e.map(|c| c.dominant)),
            opt_u(e.map(|c| c.bulk)),
            opt_u(e.map(|c| c.zero)),
            p.counts_match.map(|b| b.to_string()).unwrap_or_default(),
            opt_f(p.max_bound_violation),
            err
        )
        .unwrap();
    }
    s
}

/// Text summary of an existing run or sweep directory and whether it
/// passed.
pub fn report(dir: &Path) -> Result<(String, bool)> {
    let read = |name: &str| -> Result<serde_json::Value> {
        let text = fs::read_to_string(dir.join(name))?;
        Ok(serde_json::from_str(&text)?)
    };
    let mut out = String::new();
    if dir.join("sweep_summary.json").exists() {
        let v = read("sweep_summary.json")?;
        writeln!(out, "sweep {}", v["name"].as_str().unwrap_or("?")).unwrap();
        for p in v["points"].as_array().into_iter().flatten() {
            writeln!(
                out,
                "  L={} r={} {} ratio={} counts_match={}",
                p["depth"], p["rank"], p["status"].as_str().unwrap_or("?"), p["ratio"], p["counts_match"]
            )
            .unwrap();
        }
        for f in v["fits"].as_array().into_iter().flatten() {
            writeln!(out, "  fit r={}: slope={} intercept={}", f["rank"], f["fit"]["slope"], f["fit"]["intercept"]).unwrap();
        }
        let passed = v["passed"].as_bool().unwrap_or(false);
        writeln!(out, "{}", if passed { "PASS" } else { "FAIL" }).unwrap();
        return Ok((out, passed));
    }
    if dir.join("summary.json").exists() {
        let v = read("summary.json")?;
        writeln!(
            out,
            "run {}: {} steps, L={}, r={}, P={}",
            v["name"].as_str().unwrap_or("?"),
            v["steps_run"],
            v["derived"]["depth"],
            v["derived"]["rank"],
            v["derived"]["param_count"]
        )
        .unwrap();
        if let Some(last) = v["checkpoints"].as_array().and_then(|c| c.last()) {
            writeln!(
                out,
                "  final: excess_loss={} ratio={} counts={}/{}/{}",
                last["excess_loss"],
                last["ratio"],
                last["counts"]["dominant"],
                last["counts"]["bulk"],
                last["counts"]["zero"]
            )
            .unwrap();
        }
        for verdict in v["verdicts"].as_array().into_iter().flatten() {
            let ok = verdict["passed"].as_bool().unwrap_or(false);
            writeln!(
                out,
                "  {} {}: {}",
                if ok { "PASS" } else { "FAIL" },
                verdict["name"].as_str().unwrap_or("?"),
                verdict["detail"].as_str().unwrap_or("")
            )
            .unwrap();
        }
        let passed = v["passed"].as_bool().unwrap_or(false);
        writeln!(out, "{}", if passed { "PASS" } else { "FAIL" }).unwrap();
        return Ok((out, passed));
    }
    if dir.join("error.json").exists() {
        let v = read("error.json")?;
        writeln!(out, "run failed: {}", v["message"].as_str().unwrap_or("?")).unwrap();
        return Ok((out, false));
    }
    Err(Error::Config(format!(
        "{} holds no summary.json, sweep_summary.json or error.json",
        dir.display()
    )))
}

/// Reads back a file written by [`spectrum_csv`].
pub fn parse_spectrum_csv(text: &str) -> Result<Vec<SpectrumRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("eigenvalue,cluster,predicted_value,source") => {}
        other => return Err(Error::Parse(format!("unexpected spectrum header {other:?}"))),
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("malformed spectrum row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
            let cluster = match f[1] {
                "dominant" => ClusterLabel::Dominant,
                "bulk" => ClusterLabel::Bulk,
                "zero" => ClusterLabel::Zero,
                x => return Err(Error::Parse(format!("unknown cluster {x:?}"))),
            };
            let source = match f[3] {
                "measured" => Source::Measured,
                "predicted" => Source::Predicted,
                x => return Err(Error::Parse(format!("unknown source {x:?}"))),
            };
            Ok(SpectrumRow {
                eigenvalue: num(f[0])?,
                cluster,
                predicted_value: num(f[2])?,
                source,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
[dims]
depth = 2
input = 3
output = 4
hidden = 5
rank = 2
[init]
mode = "usi"
mu = 0.5
seed = 1
[train]
steps = 40
checkpoints = "endpoints"
"#;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(BASE).unwrap()
    }

    #[test]
    fn parses_and_resolves() {
        let r = base().resolve().unwrap();
        assert_eq!(r.dims.widths(), &[3, 5, 4]);
        assert_eq!(r.lambda0, vec![0.5, 0.5, 0.0]);
        assert!((r.train.eta - 0.25).abs() < 1e-15);
        assert_eq!(r.schedule.iter().copied().collect::<Vec<_>>(), vec![0, 40]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let typo = BASE.replace("hidden = 5", "hiden = 5");
        assert!(matches!(ExperimentConfig::from_toml_str(&typo), Err(Error::Parse(_))));
        let mut c = base();
        c.train.eta = Some(0.6);
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = base();
        c.dims.hidden = Some(2);
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = base();
        c.init.mode = InitMode::Spectrum;
        assert!(matches!(c.resolve(), Err(Error::Config(_))));
        let mut c = base();
        c.train.checkpoints = CheckpointSpec::List(vec![0, 5, 3]);
        assert!(c.resolve().is_err());
        let mut c = base();
        c.analyses.fd_oracle = true;
        c.dims.input = Some(20);
        c.dims.hidden = Some(20);
        c.dims.output = Some(20);
        assert!(matches!(c.resolve(), Err(Error::OracleCap { .. })));
    }

    #[test]
    fn geometric_schedule() {
        let s = checkpoint_schedule(&CheckpointSpec::default(), 10).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 4, 8, 10]);
        let s = checkpoint_schedule(&CheckpointSpec::Stride { stride: 4 }, 10).unwrap();
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![0, 4, 8, 10]);
    }

    #[test]
    fn small_run_passes_every_verdict() {
        let mut c = base();
        c.analyses.eigenvectors = true;
        c.analyses.fd_oracle = true;
        c.analyses.validation = true;
        let a = simulate(&c).unwrap();
        for v in &a.verdicts {
            assert!(v.passed, "{v:?}");
        }
        assert_eq!(a.checkpoints.len(), 2);
        assert_eq!(a.trajectory.len(), 41);
    }

    #[test]
    fn zero_step_run_has_only_initial_analysis() {
        let mut c = base();
        c.train.steps = 0;
        let a = simulate(&c).unwrap();
        assert_eq!(a.checkpoints.len(), 1);
        assert_eq!(a.checkpoints[0].step, 0);
        assert_eq!(a.trajectory.len(), 1);
    }

    #[test]
    fn target_loss_stops_early() {
        let mut c = base();
        c.train.steps = 10_000;
        c.train.target_loss = Some(1e-12);
        let a = simulate(&c).unwrap();
        assert!(a.stopped_early);
        assert!(a.final_checkpoint().excess_loss <= 1e-12);
        assert_eq!(a.final_checkpoint().step, a.steps_run);
    }

    #[test]
    fn predicted_mode_without_hessian() {
        let mut c = base();
        c.apply(&Overrides { no_hessian: true, ..Default::default() });
        let a = simulate(&c).unwrap();
        let last = a.final_checkpoint();
        assert_eq!(last.source, Source::Predicted);
        assert!(last.spectrum.iter().all(|r| r.source == Source::Predicted));
        assert!(last.counts_match);
    }

    #[test]
    fn csv_round_trip() {
        let a = simulate(&base()).unwrap();
        let text = spectrum_csv(&a.final_checkpoint().spectrum);
        let rows = parse_spectrum_csv(&text).unwrap();
        assert_eq!(rows, a.final_checkpoint().spectrum);
        let traj = trajectory_csv(&a);
        assert!(traj.starts_with("step,lambda_1,lambda_2,excess_loss,hf_norm\n"));
    }
}
