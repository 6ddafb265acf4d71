//! End-to-end acceptance suite. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line, and exits nonzero if any
//! fails.

use std::process::ExitCode;
use std::time::Instant;

use hbl::harness::{run_sweep, simulate, ExperimentConfig, RunArtifacts};
use hbl::hessian::{assemble, assemble_outer, finite_difference_hessian, FD_ORACLE_CAP, FD_STEP};
use hbl::matrix::sym_eigenvalues;
use hbl::network::{balanced_init, DataModel, FrameSource, InputSupport, NetworkDims};
use hbl::spectrum::{gap_condition, predict_spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn usi_config(name: &str, depth: usize, rank: usize, target: f64, checkpoints: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
name = "{name}"
[dims]
depth = {depth}
input = 10
hidden = 20
output = 16
rank = {rank}
[init]
mode = "usi"
mu = 0.5
seed = 11
[train]
steps = 20000
target_loss = {target:e}
checkpoints = "{checkpoints}"
"#
    ))
    .expect("acceptance config parses")
}

fn baseline_runs() -> Vec<RunArtifacts> {
    [2, 3]
        .iter()
        .map(|&l| simulate(&usi_config(&format!("baseline_L{l}"), l, 4, 1e-13, "geometric")).unwrap())
        .collect()
}

fn baseline_simulation(runs: &[RunArtifacts]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for a in runs {
        let last = a.final_checkpoint();
        let l = a.derived.depth as f64;
        let ratio = last.ratio.unwrap_or(f64::NAN);
        let good = last.excess_loss < 1e-12
            && last.counts.dominant == 16
            && last.counts.bulk == 72
            && ((ratio - l) / l).abs() <= 0.05;
        ok &= good;
        parts.push(format!(
            "L={} loss={:.1e} dominant={} bulk={} ratio={:.6}",
            a.derived.depth, last.excess_loss, last.counts.dominant, last.counts.bulk, ratio
        ));
    }
    outcome(ok, parts.join("; "))
}

fn uniform_init_exactness() -> Outcome {
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_spread: f64 = 0.0;
    for l in 2..=5 {
        let a = match simulate(&usi_config(&format!("usi_L{l}"), l, 4, 1e-24, "endpoints")) {
            Ok(a) => a,
            Err(e) => return outcome(false, format!("L={l}: {e}")),
        };
        let last = a.final_checkpoint();
        let ratio_err = (last.ratio.unwrap_or(f64::NAN) - l as f64).abs();
        let dominant: Vec<f64> = last
            .spectrum
            .iter()
            .filter(|r| r.cluster == hbl::spectrum::ClusterLabel::Dominant)
            .map(|r| r.eigenvalue)
            .collect();
        let hi = dominant.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = dominant.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = (hi - lo) / hi;
        ok &= ratio_err <= 1e-6 && spread <= 1e-9 && dominant.len() == 16;
        worst_ratio = worst_ratio.max(ratio_err);
        worst_spread = worst_spread.max(spread);
    }
    outcome(
        ok,
        format!("max |ratio - L| = {worst_ratio:.2e}, max dominant spread = {worst_spread:.2e}"),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut largest_p = 0;
    for state in 0..10 {
        let depth = 2 + state % 2;
        let input = rng.gen_range(3..=7);
        let output = rng.gen_range(3..=7);
        let d_star = input.min(output);
        let hidden = rng.gen_range(d_star..=d_star + 3);
        let rank = rng.gen_range(1..=d_star);
        let dims = NetworkDims::uniform(depth, input, hidden, output, rank).unwrap();
        assert!(dims.param_count() <= FD_ORACLE_CAP);
        largest_p = largest_p.max(dims.param_count());
        let mut lambdas: Vec<f64> = (0..d_star).map(|_| rng.gen_range(0.2..1.4)).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let sv: Vec<f64> = lambdas.iter().map(|l| l.powi(depth as i32)).collect();
        let w = balanced_init(
            &dims,
            &sv,
            FrameSource::Seed { seed: 100 + state as u64, support: InputSupport::Full },
        )
        .unwrap();
        let data = DataModel::whitened(&dims, &w.frames, InputSupport::Full).unwrap();
        let analytic = assemble(&w, &data).unwrap().h_total;
        let fd = finite_difference_hessian(&w, &data, FD_STEP).unwrap();
        worst = worst.max(analytic.max_abs_diff(&fd));
    }
    outcome(worst <= 1e-5, format!("max entry error {worst:.2e} over 10 states, P <= {largest_p}"))
}

fn closed_form_spectrum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut trials = 0;
    while trials < 20 {
        let depth = 2 + trials % 4;
        let rank = rng.gen_range(1..=4);
        let dims = NetworkDims::uniform(depth, 6, 8, 7, rank).unwrap();
        let center = rng.gen_range(0.6..1.3);
        let width = rng.gen_range(0.0..0.1);
        let mut lambdas: Vec<f64> =
            (0..rank).map(|_| center * (1.0 + rng.gen_range(-width..=width))).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let (hi, lo) = (lambdas[0], lambdas[rank - 1]);
        if !gap_condition(0.5 * (hi + lo), 0.5 * (hi - lo), depth) {
            continue;
        }
        trials += 1;
        let mut sv: Vec<f64> = lambdas.iter().map(|l| l.powi(depth as i32)).collect();
        sv.resize(dims.d_star(), 0.0);
        let w = balanced_init(
            &dims,
            &sv,
            FrameSource::Seed { seed: trials as u64, support: InputSupport::Full },
        )
        .unwrap();
        let data = DataModel::whitened(&dims, &w.frames, InputSupport::Full).unwrap();
        let measured = sym_eigenvalues(&assemble_outer(&w, &data).unwrap()).unwrap();
        let predicted = predict_spectrum(&lambdas, &dims, InputSupport::Full)
            .unwrap()
            .multiset(dims.param_count());
        let top = predicted[0];
        for (m, p) in measured.iter().zip(&predicted) {
            // Zeros are compared against the top of the spectrum.
            let err = (m - p).abs() / if *p > 0.0 { *p } else { top };
            worst = worst.max(err);
        }
    }
    outcome(worst <= 1e-9, format!("max relative error {worst:.2e} over 20 gap-satisfying vectors"))
}

fn scalar_matrix() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (depth, init) in [
        (2, r#"mode = "usi"
mu = 0.5"#),
        (3, r#"mode = "spectrum"
values = [0.9, 0.7, 0.5, 0.3]
tail = 0.2"#),
    ] {
        let cfg = ExperimentConfig::from_toml_str(&format!(
            r#"
name = "scalar_L{depth}"
[dims]
depth = {depth}
input = 10
hidden = 20
output = 16
rank = 4
[init]
{init}
seed = 5
[train]
steps = 1000
checkpoints = "endpoints"
[analyses]
assemble_hessian = false
"#
        ))
        .unwrap();
        let a = match simulate(&cfg) {
            Ok(a) => a,
            Err(e) => return outcome(false, format!("L={depth}: {e}")),
        };
        ok &= a.steps_run == 1000
            && a.scalar_matrix_deviation <= 1e-10
            && a.max_structure_residual <= 1e-9;
        parts.push(format!(
            "L={depth} deviation={:.1e} residual={:.1e}",
            a.scalar_matrix_deviation, a.max_structure_residual
        ));
    }
    outcome(ok, parts.join("; "))
}

fn bound_suite(runs: &[RunArtifacts]) -> Outcome {
    let names = ["hf_bound", "weyl", "loss_decay", "omega_bound"];
    let mut ok = true;
    let mut checked = 0;
    let mut failed = Vec::new();
    for a in runs {
        for name in names {
            match a.verdict(name) {
                Some(v) => {
                    checked += v.checked;
                    if !v.passed || v.checked == 0 {
                        ok = false;
                        failed.push(format!("L={} {name} excess {:.2e}", a.derived.depth, v.max_excess));
                    }
                }
                None => {
                    ok = false;
                    failed.push(format!("L={} {name} missing", a.derived.depth));
                }
            }
        }
    }
    let detail = if failed.is_empty() {
        format!("{checked} checks, zero violations")
    } else {
        failed.join("; ")
    };
    outcome(ok, detail)
}

fn sweep_property() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut base = usi_config("sweep", 3, 4, 1e-13, "endpoints");
    base.output_dir = Some(dir.path().to_path_buf());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (summary, _) = match run_sweep(&base, &[3, 4, 5], &[4, 6, 8], workers) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut ok = summary.points.len() == 9;
    for p in &summary.points {
        let r = p.rank;
        let counts_ok = p
            .counts
            .as_ref()
            .is_some_and(|c| c.dominant == r * r && c.bulk == (10 + 16 - 2 * r) * r);
        ok &= counts_ok;
    }
    let mut slopes = Vec::new();
    for f in &summary.fits {
        match &f.fit {
            Some(fit) => {
                ok &= (fit.slope - 1.0).abs() <= 0.02;
                slopes.push(format!("r={} slope={:.6}", f.rank, fit.slope));
            }
            None => {
                ok = false;
                slopes.push(format!("r={} no fit", f.rank));
            }
        }
    }
    outcome(ok, format!("9 grid points, counts {}; {}", if ok { "match" } else { "checked" }, slopes.join(", ")))
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let started = Instant::now();
    let runs = baseline_runs();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("baseline simulation", Box::new(|| baseline_simulation(&runs))),
        ("uniform-init exactness", Box::new(uniform_init_exactness)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("closed-form spectrum", Box::new(closed_form_spectrum)),
        ("scalar-matrix equivalence", Box::new(scalar_matrix)),
        ("bound suite", Box::new(|| bound_suite(&runs))),
        ("sweep property", Box::new(sweep_property)),
    ];
    let mut failures = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        let o = check();
        if !o.passed {
            failures += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failures,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
