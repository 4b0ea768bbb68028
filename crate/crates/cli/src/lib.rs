//! Command-line driver: `run`, `sweep`, `verify-spectral`, `align-demo`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dimat::align::{apply_permutation, LayerPermutation};
use dimat::config::ExperimentConfig;
use dimat::linalg::RngStream;
use dimat::merge::{align_pair, average_model, MergeMode};
use dimat::nn::ModelParams;
use dimat::report::{write_metrics_csv, Stat, Summary};
use dimat::sim::{run_repeat, streams, Experiment, RunResult};
use dimat::topology::verify_rho_prime;
use dimat::{checkpoint, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dimat", version, about = "Decentralized iterative merging-and-training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ConfigArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (same as the `out` key).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` overrides applied after the file.
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            overrides.push(format!("out={}", out.display()));
        }
        Ok(ExperimentConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment (`repeats` seeds) and write metrics.csv, summary.json, config.echo.
    Run(ConfigArgs),
    /// Run the experiment once per value of one key, each in its own subdirectory.
    Sweep {
        /// Key to vary.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Spectral report of the mixing matrix and the rho' sampling check.
    VerifySpectral(ConfigArgs),
    /// Align two checkpoints under every merge mode and compare merged losses.
    AlignDemo {
        /// Reference checkpoint; a fresh initialisation when omitted.
        #[arg(long)]
        model_a: Option<PathBuf>,
        /// Candidate checkpoint; a random unit permutation of model A when omitted.
        #[arg(long)]
        model_b: Option<PathBuf>,
        #[command(flatten)]
        common: ConfigArgs,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

pub fn execute(command: &Command) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let outcome = cmd_run(&cfg)?;
            print_summary(&outcome.summary);
            Ok(outcome.exit_code())
        }
        Command::Sweep { param, values, common } => cmd_sweep(&common.load()?, param, values),
        Command::VerifySpectral(args) => {
            let report = cmd_verify_spectral(&args.load()?)?;
            println!("{}", report.verdict());
            Ok(EXIT_OK)
        }
        Command::AlignDemo { model_a, model_b, common } => {
            let report = cmd_align_demo(&common.load()?, model_a.as_deref(), model_b.as_deref())?;
            for m in &report.modes {
                println!(
                    "{:<16} fixed-point {:.3}  residual {:.3}  merged loss {:.6}",
                    m.mode, m.fixed_point_fraction, m.residual_fixed_point_fraction, m.merged_loss
                );
            }
            Ok(EXIT_OK)
        }
    }
}

fn print_summary(summary: &Summary) {
    match &summary.final_accuracy {
        Some(acc) => println!(
            "final accuracy {:.4} ± {:.4} over {} repeat(s), {} communication rounds",
            acc.mean, acc.std, summary.repeats, summary.total_comm_rounds
        ),
        None => println!(
            "final test loss {:.6} ± {:.6} over {} repeat(s), {} communication rounds",
            summary.final_test_loss.mean, summary.final_test_loss.std, summary.repeats, summary.total_comm_rounds
        ),
    }
    for d in &summary.divergences {
        eprintln!("diverged at iteration {} (agent {}): {}", d.iteration, d.agent, d.reason);
    }
}

pub struct RunOutcome {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.summary.diverged {
            EXIT_DIVERGED
        } else {
            EXIT_OK
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs every repeat and writes `metrics.csv`, `summary.json`,
/// `config.echo` and the final averaged model `model.ckpt`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let out = cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.echo"), cfg.echo()).context("writing config.echo")?;

    let runs = (0..cfg.repeats)
        .map(|r| run_repeat(cfg, r))
        .collect::<dimat::Result<Vec<_>>>()?;
    let records: Vec<_> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let file = fs::File::create(out.join("metrics.csv")).context("creating metrics.csv")?;
    write_metrics_csv(std::io::BufWriter::new(file), &records)?;

    let summary = Summary::from_runs(&runs)?;
    write_json(&out.join("summary.json"), &summary)?;
    checkpoint::save(&out.join("model.ckpt"), &runs[0].final_average)?;
    Ok(RunOutcome {
        runs,
        summary,
        out_dir: out,
    })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: String,
    final_accuracy: Option<Stat>,
    final_test_loss: Stat,
    comm_rounds: f64,
    diverged: bool,
}

pub fn cmd_sweep(base: &ExperimentConfig, param: &str, values: &[String]) -> Result<i32> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut rows = Vec::new();
    let mut code = EXIT_OK;
    for v in values {
        let mut cfg = base.clone();
        cfg.set(param, v)?;
        cfg.out = base.out.join(format!("{param}={v}"));
        cfg.validate()?;
        let outcome = cmd_run(&cfg)?;
        print!("{param}={v}: ");
        print_summary(&outcome.summary);
        code = code.max(outcome.exit_code());
        rows.push(SweepRow {
            value: v.clone(),
            final_accuracy: outcome.summary.final_accuracy,
            final_test_loss: outcome.summary.final_test_loss,
            comm_rounds: outcome.summary.total_comm_rounds,
            diverged: outcome.summary.diverged,
        });
    }
    fs::create_dir_all(&base.out)?;
    write_json(&base.out.join("sweep.json"), &rows)?;
    Ok(code)
}

pub fn cmd_verify_spectral(cfg: &ExperimentConfig) -> Result<dimat::topology::SpectralReport> {
    let topo = cfg.topology()?;
    let pi = dimat::topology::build_mixing(&topo)?;
    let mut rng = RngStream::derive(cfg.seed, streams::SPECTRAL, 0);
    let report = verify_rho_prime(&pi, cfg.spectral_d, cfg.spectral_trials, &mut rng).map_err(|e| match e {
        Error::InvalidInput(msg) => anyhow::anyhow!(msg),
        other => other.into(),
    })?;
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("spectral.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct ModeReport {
    pub mode: String,
    pub permutation: LayerPermutation,
    pub fixed_point_fraction: f64,
    /// Fixed-point fraction when matching again after applying the
    /// recovered permutation; 1.0 means the alignment is self-consistent.
    pub residual_fixed_point_fraction: f64,
    pub merged_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct AlignReport {
    pub loss_a: f64,
    pub loss_b: f64,
    pub modes: Vec<ModeReport>,
}

/// Loads or synthesises the pair, then for each mode aligns B to A, merges
/// them with equal weights and evaluates the merged model on the probe set
/// (the configured dataset's test split).
pub fn cmd_align_demo(cfg: &ExperimentConfig, model_a: Option<&Path>, model_b: Option<&Path>) -> Result<AlignReport> {
    let experiment = Experiment::prepare(cfg, cfg.seed)?;
    let a = match model_a {
        Some(p) => checkpoint::load(p)?,
        None => ModelParams::init(&experiment.dims, cfg.activation, &mut RngStream::derive(cfg.seed, streams::INIT, 0)),
    };
    let b = match model_b {
        Some(p) => checkpoint::load(p)?,
        None => {
            let mut rng = RngStream::derive(cfg.seed, streams::INIT, 1);
            let sigma = LayerPermutation::new(a.hidden_widths().iter().map(|&w| rng.permutation(w)).collect())?;
            apply_permutation(&a, &sigma)?
        }
    };
    a.ensure_same_architecture(&b)?;
    if a.dims() != experiment.dims {
        bail!(
            "checkpoint architecture {:?} does not fit the probe data (expected {:?})",
            a.dims(),
            experiment.dims
        );
    }
    let probe = &experiment.test;
    let batch_rows: Vec<usize> = (0..probe.len().min(cfg.matching_batch)).collect();
    let batch = probe.features.select_rows(&batch_rows);
    let (loss_a, _) = probe.evaluate(&a)?;
    let (loss_b, _) = probe.evaluate(&b)?;

    let mut modes = Vec::new();
    for mode in [MergeMode::ActivationMatch, MergeMode::WeightMatch, MergeMode::Identity] {
        let mut plan = cfg.merge_plan();
        plan.mode = mode;
        let p = align_pair(&a, &b, &plan, &batch)?;
        let aligned = apply_permutation(&b, &p)?;
        let residual = align_pair(&a, &aligned, &plan, &batch)?;
        let merged = average_model(&[a.clone(), aligned])?;
        modes.push(ModeReport {
            mode: mode.name().into(),
            fixed_point_fraction: p.fixed_point_fraction(),
            residual_fixed_point_fraction: residual.fixed_point_fraction(),
            permutation: p,
            merged_loss: probe.evaluate(&merged)?.0,
        });
    }
    let report = AlignReport { loss_a, loss_b, modes };
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("align_report.json"), &report)?;
    Ok(report)
}
