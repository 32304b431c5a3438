//! `nem` command line: run single trials, sweep noise intensities, compare
//! injection modes, and evaluate the noise-benefit diagnostics.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nem_core::diagnostics::{estimate_positivity, q_noise_benefit, relative_entropy_gap};
use nem_core::harness::{
    compare_outcomes, generate_data, run_generated_trial, run_sweep, split_seed, BootstrapResult,
    SweepOutcome, SweepSummary,
};
use nem_core::runner::initial_params;
use nem_core::{GmmParams, InjectionMode, NoisePolicy, TrialRecord};

use config::{Config, Metadata, Overrides};

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

fn runtime<E: fmt::Display>(e: E) -> AppError {
    AppError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "nem",
    version,
    about = "Noise-boosted EM benchmark harness for one-dimensional Gaussian mixtures"
)]
struct Cli {
    /// Config file (TOML or JSON), or a bundled preset name: fig1, fig2
    #[arg(long, global = true, env = "NEM_CONFIG")]
    config: Option<String>,

    /// Directory for output files
    #[arg(long, global = true, env = "NEM_OUT")]
    out: Option<PathBuf>,

    /// Override the base seed
    #[arg(long, global = true, env = "NEM_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: machine parallelism)
    #[arg(long, global = true, env = "NEM_THREADS")]
    threads: Option<usize>,

    /// Override the noise intensity sigma_n
    #[arg(long, global = true, env = "NEM_SIGMA")]
    sigma: Option<f64>,

    /// Override the noise policy
    #[arg(long, global = true, env = "NEM_POLICY", value_enum)]
    policy: Option<PolicyArg>,

    /// Override the injection mode
    #[arg(long, global = true, env = "NEM_MODE", value_enum)]
    mode: Option<ModeArg>,

    /// Override the noise decay exponent tau
    #[arg(long, global = true, env = "NEM_TAU")]
    tau: Option<f64>,

    /// Increase logging on stderr (-v, -vv)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and print its record as JSON
    Run,
    /// Sweep noise intensity; writes sweep.csv and trials.jsonl
    Sweep,
    /// Run both configured sweeps and bootstrap the difference at the optima
    Compare,
    /// Monte-Carlo noise-benefit diagnostics as JSON
    Diag,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Nem,
    Blind,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Additive,
    Multiplicative,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ AppError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e @ AppError::Runtime(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    let source = cli
        .config
        .as_deref()
        .ok_or_else(|| AppError::Config("--config is required (path or fig1/fig2)".into()))?;
    let overrides = Overrides {
        seed: cli.seed,
        sigma: cli.sigma,
        policy: cli.policy.map(|p| match p {
            PolicyArg::Nem => NoisePolicy::NemConstrained,
            PolicyArg::Blind => NoisePolicy::Blind,
            PolicyArg::Off => NoisePolicy::Off,
        }),
        mode: cli.mode.map(|m| match m {
            ModeArg::Additive => InjectionMode::Additive,
            ModeArg::Multiplicative => InjectionMode::Multiplicative,
        }),
        tau: cli.tau,
    };
    let resolved = config::load(source)?.resolve(&overrides)?;
    let meta = Metadata::for_config(&resolved);
    if cli.verbose > 0 {
        eprintln!("config {} (sha256 {})", source, &meta.config_sha256[..12]);
    }
    match cli.command {
        Command::Run => cmd_run(&resolved, &meta, cli.out.as_deref()),
        Command::Sweep => cmd_sweep(&resolved, &meta, cli.out.as_deref(), cli.verbose),
        Command::Compare => cmd_compare(&resolved, &meta, cli.out.as_deref(), cli.verbose),
        Command::Diag => cmd_diag(&resolved, &meta, cli.out.as_deref()),
    }
}

#[derive(Serialize)]
struct TrialOutput<'a> {
    meta: &'a Metadata,
    dist_to_truth: f64,
    record: &'a TrialRecord,
}

fn cmd_run(cfg: &Config, meta: &Metadata, out: Option<&Path>) -> Result<(), AppError> {
    let model = cfg.model.to_params()?;
    let noise = cfg.noise_spec()?;
    let run = cfg.run_config()?;
    let (record, dist) =
        run_generated_trial(&model, cfg.run.sample_size, &noise, &run).map_err(runtime)?;
    println!("{}", serde_json::to_string(&record).map_err(runtime)?);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let payload = TrialOutput {
            meta,
            dist_to_truth: dist,
            record: &record,
        };
        write_file(
            &dir.join("trial.json"),
            &serde_json::to_string_pretty(&payload).map_err(runtime)?,
        )?;
    }
    Ok(())
}

fn cmd_sweep(
    cfg: &Config,
    meta: &Metadata,
    out: Option<&Path>,
    verbose: u8,
) -> Result<(), AppError> {
    let sweep_cfg = cfg.sweep_config()?;
    if verbose > 0 {
        eprintln!(
            "sweep: {} grid points x {} trials, M = {}",
            sweep_cfg.sigma_grid.len(),
            sweep_cfg.trials_per_point,
            sweep_cfg.sample_size
        );
    }
    let outcome = run_sweep(&sweep_cfg).map_err(runtime)?;
    print_summary(&outcome.summary);
    let dir = require_out(out)?;
    write_sweep_files(dir, meta, &outcome, "sweep.csv", "trials.jsonl")?;
    println!(
        "wrote {} and {}",
        dir.join("sweep.csv").display(),
        dir.join("trials.jsonl").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CompareOutput<'a> {
    meta: &'a Metadata,
    bootstrap: BootstrapResult,
    summary_a: &'a SweepSummary,
    summary_b: &'a SweepSummary,
}

fn cmd_compare(
    cfg: &Config,
    meta: &Metadata,
    out: Option<&Path>,
    verbose: u8,
) -> Result<(), AppError> {
    let compare = cfg
        .compare
        .as_ref()
        .ok_or_else(|| AppError::Config("compare requires a [compare] section".into()))?;
    let config_a = cfg.arm_sweep_config(&compare.a)?;
    let config_b = cfg.arm_sweep_config(&compare.b)?;
    if verbose > 0 {
        eprintln!("compare: sweeping both arms");
    }
    let outcome_a = run_sweep(&config_a).map_err(runtime)?;
    let outcome_b = run_sweep(&config_b).map_err(runtime)?;
    let cmp = compare_outcomes(
        &outcome_a,
        &outcome_b,
        cfg.bootstrap.num_resamples,
        cfg.bootstrap.level,
        cfg.run.seed,
    )
    .map_err(runtime)?;
    let b = cmp.bootstrap;
    println!(
        "sigma*_a = {} (mean {:.3}), sigma*_b = {} (mean {:.3})",
        cmp.summary_a.sigma_star,
        cmp.summary_a.rows[cmp.summary_a.sigma_star_index]
            .mean_iterations
            .unwrap_or(f64::NAN),
        cmp.summary_b.sigma_star,
        cmp.summary_b.rows[cmp.summary_b.sigma_star_index]
            .mean_iterations
            .unwrap_or(f64::NAN),
    );
    println!(
        "mean-iteration difference a-b: {:.4}, {:.0}% CI [{:.4}, {:.4}], p = {:.4} ({} resamples)",
        b.point_estimate,
        100.0 * b.level,
        b.ci_low,
        b.ci_high,
        b.p_value,
        b.num_resamples
    );
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_sweep_files(dir, meta, &outcome_a, "sweep_a.csv", "trials_a.jsonl")?;
        write_sweep_files(dir, meta, &outcome_b, "sweep_b.csv", "trials_b.jsonl")?;
        let payload = CompareOutput {
            meta,
            bootstrap: b,
            summary_a: &cmp.summary_a,
            summary_b: &cmp.summary_b,
        };
        write_file(
            &dir.join("bootstrap.json"),
            &serde_json::to_string_pretty(&payload).map_err(runtime)?,
        )?;
        println!("wrote {}", dir.join("bootstrap.json").display());
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagOutput<'a> {
    meta: &'a Metadata,
    positivity: nem_core::diagnostics::PositivityEstimate,
    relative_entropy_gap: f64,
    q_noise_benefit: f64,
}

fn cmd_diag(cfg: &Config, meta: &Metadata, out: Option<&Path>) -> Result<(), AppError> {
    let model = cfg.model.to_params()?;
    let noise = cfg.noise_spec()?;
    let seed = cfg.run.seed;
    let current: GmmParams = match &cfg.diag.current {
        Some(section) => section.to_params()?,
        None => {
            let data =
                generate_data(&model, cfg.run.sample_size, split_seed(seed, 1)).map_err(runtime)?;
            initial_params(&data, model.k(), cfg.run.init, split_seed(seed, 2)).map_err(runtime)?
        }
    };
    let positivity = estimate_positivity(
        &model,
        &current,
        &noise,
        cfg.diag.iteration,
        cfg.diag.num_draws,
        cfg.diag.conditioning,
        seed,
    );
    let gap = relative_entropy_gap(
        &model,
        &current,
        &noise,
        cfg.diag.iteration,
        cfg.diag.num_draws,
        cfg.diag.conditioning,
        seed,
    );
    let data = generate_data(&model, cfg.run.sample_size, split_seed(seed, 1)).map_err(runtime)?;
    let q_gap = q_noise_benefit(
        &model,
        &current,
        &noise,
        &data,
        cfg.diag.iteration,
        cfg.diag.q_num_draws,
        split_seed(seed, 3),
    );
    let payload = DiagOutput {
        meta,
        positivity,
        relative_entropy_gap: gap,
        q_noise_benefit: q_gap,
    };
    println!("{}", serde_json::to_string(&payload).map_err(runtime)?);
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(
            &dir.join("diag.json"),
            &serde_json::to_string_pretty(&payload).map_err(runtime)?,
        )?;
    }
    Ok(())
}

fn print_summary(summary: &SweepSummary) {
    println!("sigma_n  mean_iter  std_err  conv_rate  speedup%");
    for r in &summary.rows {
        println!(
            "{:7.3}  {:>9}  {:>7}  {:9.3}  {:>8}",
            r.sigma_n,
            r.mean_iterations
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            r.std_error
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            r.convergence_rate,
            r.speedup_percent
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".into()),
        );
    }
    println!("empirical sigma* = {}", summary.sigma_star);
}

fn write_sweep_files(
    dir: &Path,
    meta: &Metadata,
    outcome: &SweepOutcome,
    csv_name: &str,
    jsonl_name: &str,
) -> Result<(), AppError> {
    ensure_dir(dir)?;
    let csv = format!("{}{}", meta.comment_header(), outcome.summary.to_csv());
    write_file(&dir.join(csv_name), &csv)?;
    let mut jsonl = String::new();
    jsonl.push_str(&format!(
        "{{\"meta\":{}}}\n",
        serde_json::to_string(meta).map_err(runtime)?
    ));
    for trial in &outcome.trials {
        jsonl.push_str(&serde_json::to_string(trial).map_err(runtime)?);
        jsonl.push('\n');
    }
    write_file(&dir.join(jsonl_name), &jsonl)
}

fn require_out(out: Option<&Path>) -> Result<&Path, AppError> {
    out.ok_or_else(|| AppError::Config("--out is required for this subcommand".into()))
}

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    std::fs::write(path, contents)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}
