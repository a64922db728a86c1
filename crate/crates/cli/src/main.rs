use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sanbus::experiment::{
    figure_data, from_json, parse_config, render, run_sweep, ExperimentPlan, FigureId, Format,
    Mode, SweepResults,
};
use sanbus::metrics::LITTLE_THRESHOLD;

/// Cycle-level simulator and exact solver for prioritised shared-bus systems.
#[derive(Debug, Parser)]
#[command(name = "sanbus", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the base architecture of a config (sweep and series ignored).
    Simulate(RunArgs),
    /// Solve the base architecture exactly (geometric durations only).
    Oracle(RunArgs),
    /// Run every series at every sweep value of a config.
    Sweep(RunArgs),
    /// Extract plot data for one figure from JSON sweep results.
    Figdata {
        /// fig5a, fig5b, fig6a or fig6b.
        fig_id: String,
        /// Results written by `sweep --format json`.
        results: PathBuf,
        /// PE to plot instead of the figure default.
        #[arg(long)]
        pe: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Measured cycles per simulation.
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    /// Evaluate sweep points one at a time.
    #[arg(long)]
    serial: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

fn load_plan(args: &RunArgs) -> Result<ExperimentPlan> {
    let mut plan = parse_config(&args.config)
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        plan.sim.seed = seed;
    }
    if let Some(c) = args.cycles {
        plan.sim.measured_cycles = c;
    }
    if let Some(b) = args.batches {
        plan.sim.batches = b;
    }
    plan.validate().context("invalid overrides")?;
    Ok(plan)
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn label(row: &sanbus::experiment::ResultRow) -> String {
    let mut parts = Vec::new();
    if !row.series.is_empty() {
        parts.push(format!("series {:?}", row.series));
    }
    if let Some(v) = row.sweep_value {
        parts.push(format!("sweep value {v}"));
    }
    if parts.is_empty() {
        "run".to_string()
    } else {
        parts.join(", ")
    }
}

/// Prints per-row diagnostics; returns whether any row failed.
fn report_rows(results: &SweepResults) -> bool {
    for row in results.little_warnings() {
        eprintln!(
            "warning: {}: Little's law residual {:.2}% exceeds {}%; run may be too short",
            label(row),
            100.0 * row.little_residual.unwrap_or(0.0),
            100.0 * LITTLE_THRESHOLD
        );
    }
    let mut failed = false;
    for row in results.errors() {
        eprintln!("error: {}: {}", label(row), row.error.as_deref().unwrap_or(""));
        failed = true;
    }
    failed
}

fn run(args: &RunArgs, mode: Option<Mode>) -> Result<bool> {
    let mut plan = load_plan(args)?;
    if let Some(mode) = mode {
        plan.mode = mode;
        plan.sweep = None;
        plan.series.clear();
    }
    let results = run_sweep(&plan, !args.serial);
    emit(&render(&results, args.format.into()), args.output.as_deref())?;
    Ok(report_rows(&results))
}

fn figdata(fig: &str, results: &Path, pe: Option<&str>, output: Option<&Path>) -> Result<bool> {
    let figure: FigureId = fig.parse()?;
    let text = fs::read_to_string(results)
        .with_context(|| format!("reading {}", results.display()))?;
    let results = from_json(&text).context("figdata expects results from `sweep --format json`")?;
    emit(&figure_data(&results, figure, pe)?, output)?;
    Ok(false)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate(a) => run(a, Some(Mode::Simulate)),
        Command::Oracle(a) => run(a, Some(Mode::Oracle)),
        Command::Sweep(a) => run(a, None),
        Command::Figdata { fig_id, results, pe, output } => {
            figdata(fig_id, results, pe.as_deref(), output.as_deref())
        }
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
