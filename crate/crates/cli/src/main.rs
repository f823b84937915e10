//! `tsrate` command line: validate configs, run the rating pipeline, rate
//! existing score files, and render the image corpus.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsrate::perturb::SlopeSignProvider;
use tsrate::pipeline;
use tsrate::{Direction, Error, RatingTable, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const DEFAULT_OUT: &str = "tsrate-out";

#[derive(Parser)]
#[command(name = "tsrate", version, about = "Rate forecasting models for robustness and accuracy under input perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run config and list every problem found.
    Validate(ConfigArgs),
    /// Run the full pipeline and write reports.
    Run(RunArgs),
    /// Rate a raw-score CSV without rerunning the pipeline.
    Rate(RateArgs),
    /// Write spectrogram and line-plot images for every window.
    Images(ImageArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of rating levels L (overrides the config).
    #[arg(long = "l-levels")]
    l_levels: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RateArgs {
    /// CSV with columns metric, model_id, perturbation, confounder, value.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long = "l-levels", default_value_t = tsrate::rating::DEFAULT_LEVELS)]
    l_levels: usize,
    /// `lower` or `higher`; defaults to each metric's own direction.
    #[arg(long)]
    direction: Option<Direction>,
    /// Also write `ratings.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only the first N windows (by window id).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidParameter { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let cfg = RunConfig::from_path(path).map_err(|e| Failure::Config(e.to_string()))?;
    check(&cfg)?;
    Ok(cfg)
}

fn check(cfg: &RunConfig) -> Result<(), Failure> {
    let issues = cfg.validate();
    if issues.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = issues.iter().map(|i| format!("  - {i}")).collect();
    Err(Failure::Config(format!("invalid config:\n{}", lines.join("\n"))))
}

fn print_tables(tables: &[RatingTable]) {
    for t in tables {
        for (p, entries) in &t.perturbations {
            let cells: Vec<String> = entries
                .iter()
                .map(|e| format!("{}={} ({:.6})", e.model_id, e.rating, e.score))
                .collect();
            println!("{} {}: {}", t.metric, p, cells.join(", "));
        }
    }
}

fn validate(args: ConfigArgs) -> Result<(), Failure> {
    load_config(&args.config)?;
    println!("OK");
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(l) = args.l_levels {
        cfg.metrics.levels = l;
    }
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    check(&cfg)?;
    let out = args
        .out
        .or_else(|| cfg.out_dir.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let report = match pipeline::run(&cfg, &SlopeSignProvider::default()) {
        Ok(r) => r,
        Err(e) => {
            if let Err(m) = pipeline::write_failure_manifest(&cfg, &out, &e) {
                eprintln!("warning: could not write failure manifest: {m}");
            }
            return Err(Failure::Runtime(e.to_string()));
        }
    };
    pipeline::write_report(&report, &cfg, &out).map_err(|e| Failure::Runtime(e.to_string()))?;
    print_tables(&report.ratings);
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    if !report.rejects.is_empty() {
        eprintln!("{} external prediction row(s) rejected; see manifest.json", report.rejects.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn rate(args: RateArgs) -> Result<(), Failure> {
    if args.l_levels == 0 {
        return Err(Failure::Config("--l-levels must be at least 1".into()));
    }
    let scores = pipeline::read_scores(&args.scores).map_err(|e| Failure::Config(e.to_string()))?;
    let tables = pipeline::rate_scores(&scores, args.l_levels, args.direction)?;
    print_tables(&tables);
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(e.to_string()))?;
        pipeline::write_json(&out.join("ratings.json"), &tables)?;
    }
    Ok(())
}

fn images(args: ImageArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    check(&cfg)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT).join("images"));
    let written = pipeline::write_images(&cfg, &out, &SlopeSignProvider::default(), args.limit)
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("wrote {} images to {}", written.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(a) => validate(a),
        Command::Run(a) => run(a),
        Command::Rate(a) => rate(a),
        Command::Images(a) => images(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
