use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use tvsdp::scenario::{self, Format, OfflineReport, RunReport, Scenario, ScenarioConfig, X0Config};
use tvsdp::Error;

/// Set to any value other than `0` to print the backend's iteration log.
const VERBOSE_ENV: &str = "TVSDP_SOLVER_VERBOSE";

#[derive(Parser)]
#[command(name = "tvsdp", version, about = "Online SDP control benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory.
    Run(RunArgs),
    /// Monte-Carlo runs from seeded initial states.
    Sweep(SweepArgs),
    /// Synthesize an offline certificate over the configured domain.
    CertifyOffline(OfflineArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output].dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Initial state, comma separated (replaces `[x0]`).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, conflicts_with = "seed")]
    x0: Option<Vec<f64>>,
    /// Draw the initial state from the plant's box (replaces `[x0]`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    runs: usize,
    /// Parallel runs (overrides `[sweep].workers`).
    #[arg(long)]
    workers: Option<usize>,
    /// Base seed (overrides `[sweep].seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<Scenario>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct OfflineArgs {
    #[command(flatten)]
    common: Common,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    if std::env::var(VERBOSE_ENV).is_ok_and(|v| v != "0") {
        cfg.solver.verbose = true;
    }
    Ok(cfg)
}

fn summary(r: &RunReport) -> String {
    let counts: Vec<String> = r.status_counts().iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut line = format!(
        "{} {} J={} |x_T|={:e} {}",
        r.label,
        r.scenario,
        r.j,
        r.x_final().norm(),
        counts.join(" ")
    );
    if let Some(g) = r.gamma_bar {
        line += &format!(" gamma_bar={g}");
    }
    if let Some(f) = &r.failure {
        line += &format!(" failure=\"{f}\"");
    }
    line
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.common)?;
    if let Some(x0) = args.x0 {
        cfg.x0 = X0Config::explicit(x0);
    }
    if let Some(seed) = args.seed {
        cfg.x0 = X0Config::seeded(seed);
    }
    if let Some(sc) = args.scenario {
        cfg.scenario = sc;
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    let report = scenario::run_scenario(&cfg)?;
    let path = scenario::emit(&report, cfg.output.format, &cfg.output.dir)?;
    println!("{}", summary(&report));
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = load(&args.common)?;
    if args.runs == 0 {
        return Err(Error::Config("--runs must be positive".into()).into());
    }
    if let Some(w) = args.workers {
        cfg.sweep.workers = Some(w);
    }
    if let Some(s) = args.seed {
        cfg.sweep.seed = s;
    }
    if let Some(sc) = args.scenario {
        cfg.scenario = sc;
    }
    if let Some(f) = args.format {
        cfg.output.format = f;
    }
    let reports = scenario::sweep(&cfg, args.runs)?;
    for r in &reports {
        scenario::emit(r, cfg.output.format, &cfg.output.dir)?;
        info!("{}", summary(r));
    }
    let path = scenario::emit_sweep_summary(&reports, &cfg.output.dir, &cfg.stem())?;
    let finite: Vec<f64> = reports.iter().map(|r| r.j).filter(|j| j.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let failed = reports.iter().filter(|r| r.count("failed") > 0 || r.failure.is_some()).count();
    let fallback = reports.iter().filter(|r| r.count("infeasible_fallback") > 0).count();
    println!(
        "{} runs: mean J={mean} over {} finite, {failed} with failed steps, {fallback} using fallback",
        reports.len(),
        finite.len()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn certify(args: OfflineArgs) -> anyhow::Result<()> {
    let cfg = load(&args.common)?;
    let report: OfflineReport = scenario::certify_plant_offline(&cfg)?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{}_offline.json", report.plant));
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    match report.outcome.cert() {
        Some(c) => println!(
            "certified: gamma_bar={} alpha={} eps1={} violations={}",
            c.gamma_bar, c.alpha, c.eps1, report.violations
        ),
        None => println!("no certificate: {:?}", report.outcome),
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::CertifyOffline(a) => certify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_) | Error::InvalidInput(_) | Error::DimensionMismatch { .. }) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
