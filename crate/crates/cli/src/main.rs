use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hbl::harness::{self, ExperimentConfig, Overrides, RunArtifacts};
use hbl::Error;

#[derive(Parser)]
#[command(name = "hbl", version, about = "Deep linear network Hessian experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run a grid over depth and rank.
    Sweep {
        config: PathBuf,
        /// Depths, comma separated.
        #[arg(long = "L", value_delimiter = ',', required = true)]
        depths: Vec<usize>,
        /// Ranks, comma separated.
        #[arg(long = "r", value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Validate a configuration and print the derived run parameters.
    Check {
        config: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Summarize an existing run or sweep directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip Hessian assembly and emit predicted spectra.
    #[arg(long)]
    no_hessian: bool,
}

impl OverrideArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            eta: self.eta,
            out: self.out.clone(),
            no_hessian: self.no_hessian,
        }
    }
}

fn load(path: &Path, o: &OverrideArgs) -> hbl::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    cfg.apply(&o.overrides());
    Ok(cfg)
}

fn print_run(a: &RunArtifacts) {
    let last = a.final_checkpoint();
    println!(
        "{}: {} steps, excess loss {:e}, ratio {}",
        a.name,
        a.steps_run,
        last.excess_loss,
        last.ratio.map_or("n/a".into(), |r| format!("{r:.6}"))
    );
    for v in &a.verdicts {
        println!("  {} {} ({})", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error [{}]: {err}", err.kind());
    ExitCode::from(err.exit_code() as u8)
}

fn verdict_code(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = match load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match harness::run_experiment(&cfg) {
                Ok(a) => {
                    print_run(&a);
                    println!("artifacts in {}", cfg.resolved_output_dir().display());
                    verdict_code(a.passed)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep {
            config,
            depths,
            ranks,
            workers,
            overrides,
        } => {
            let cfg = match load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match harness::run_sweep(&cfg, &depths, &ranks, workers) {
                Ok((summary, _)) => {
                    for p in &summary.points {
                        println!(
                            "L={} r={} {} ratio={}{}",
                            p.depth,
                            p.rank,
                            p.status,
                            p.ratio.map_or("n/a".into(), |r| format!("{r:.6}")),
                            p.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
                        );
                    }
                    for f in &summary.fits {
                        if let Some(fit) = &f.fit {
                            println!("r={} slope={:.6} intercept={:.6}", f.rank, fit.slope, fit.intercept);
                        }
                    }
                    println!("artifacts in {}", cfg.resolved_output_dir().display());
                    verdict_code(summary.passed)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Check { config, overrides } => {
            let resolved = match load(&config, &overrides).and_then(|c| c.resolve()) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
            println!("widths {:?}, rank {}", resolved.dims.widths(), resolved.dims.rank());
            println!("parameters {}", resolved.dims.param_count());
            println!(
                "eta {:e} (bound {:e}, M = {})",
                resolved.train.eta, resolved.step_bound, resolved.m
            );
            println!("checkpoints {:?}", resolved.schedule);
            println!("hessian {}", if resolved.assemble { "assembled" } else { "predicted" });
            ExitCode::SUCCESS
        }
        Command::Report { dir } => match harness::report(&dir) {
            Ok((text, passed)) => {
                print!("{text}");
                verdict_code(passed)
            }
            Err(e) => fail(&e),
        },
    }
}
