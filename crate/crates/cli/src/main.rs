use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use feir_cli::check::cmd_check;
use feir_cli::commands::{cmd_baseline, cmd_fit, Baseline};
use feir_cli::config::ExperimentConfig;
use feir_cli::generate::cmd_generate;
use feir_cli::report::{cmd_report, ReportConfig};
use feir_cli::run::{cmd_run, SOLUTIONS_FILE};
use feir_core::baselines::{default_shuffle_depth, CAConfig, RRConfig};
use feir_core::datagen::{Family, GenSpec};
use feir_core::matrix::load_scores;
use feir_core::{LossWeights, Parametrization, ScorePair, TrainConfig};

#[derive(Parser)]
#[command(name = "feir", version, about = "Fair post-processing of recommender scores under limited resources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Run every configured method over a k sweep into solutions.csv (resumable).
    Run(RunArgs),
    /// Pareto fronts and hypervolume tables from solutions.csv.
    Report(ReportArgs),
    /// Numerical self-checks of the loss implementation.
    Check(CheckArgs),
    /// Train one policy on score files.
    Fit(FitArgs),
    /// Run one baseline on score files.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// random, su_pair, item_groups or user_groups
    #[arg(long)]
    family: Family,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    group_fraction: Option<f64>,
    #[arg(long)]
    group_boost: Option<f64>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment JSON; relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding solutions.csv.
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// Defaults to the results directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
}

#[derive(Args)]
struct ScoreFiles {
    #[arg(long)]
    utility: PathBuf,
    /// Defaults to the utility matrix.
    #[arg(long)]
    suitability: Option<PathBuf>,
}

impl ScoreFiles {
    fn load(&self) -> Result<ScorePair> {
        load_scores(&self.utility, self.suitability.as_deref())
            .with_context(|| format!("loading scores from {}", self.utility.display()))
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    scores: ScoreFiles,
    /// Training config JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// envy,inferiority,utility,penalty
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    parametrization: Option<Parametrization>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "fit")]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// naive, shuffle, ca or rr
    method: String,
    #[command(flatten)]
    scores: ScoreFiles,
    #[arg(long)]
    k: usize,
    /// Shuffle pool size; 3k by default.
    #[arg(long)]
    depth: Option<usize>,
    /// CA entropy weight.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// RR suitability threshold.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Let RR give an item to several users.
    #[arg(long)]
    shared_items: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "baseline")]
    out: PathBuf,
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut spec = GenSpec::new(a.family, a.seed);
    spec.m = a.m.unwrap_or(spec.m);
    spec.n = a.n.unwrap_or(spec.n);
    spec.group_fraction = a.group_fraction.unwrap_or(spec.group_fraction);
    spec.group_boost = a.group_boost.unwrap_or(spec.group_boost);
    spec.validate()?;
    let files = cmd_generate(&spec, &a.out)?;
    println!("wrote {}", files.utility.display());
    for p in files.suitability.iter().chain(files.groups.iter()) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_file(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(out) = a.out {
        config.output_dir = std::env::current_dir()?.join(out);
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let summary = cmd_run(&config, base)?;
    println!(
        "{}: {} new, {} already present, {} failed",
        summary.path.display(),
        summary.added,
        summary.skipped,
        summary.failed
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.results.clone());
    let files = cmd_report(&a.results.join(SOLUTIONS_FILE), &out, &ReportConfig::default())?;
    println!("wrote {}", files.pareto.display());
    println!("wrote {}", files.hv_table.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let scores = a.scores.load()?;
    let mut config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::new(10, LossWeights::new(1.0, 1.0, 1.0, 0.0)?, 1.0),
    };
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(w) = a.weights {
        anyhow::ensure!(w.len() == 4, "--weights takes four comma-separated values, got {}", w.len());
        config.weights = LossWeights::new(w[0], w[1], w[2], w[3])?;
    }
    config.learning_rate = a.learning_rate.unwrap_or(config.learning_rate);
    config.max_steps = a.max_steps.unwrap_or(config.max_steps);
    config.convergence_tol = a.tol.unwrap_or(config.convergence_tol);
    config.parametrization = a.parametrization.unwrap_or(config.parametrization);
    config.seed = a.seed.unwrap_or(config.seed);
    let out = cmd_fit(&scores, &config, &a.out)?;
    println!("{}", serde_json::to_string(&out.record)?);
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let scores = a.scores.load()?;
    let method = match a.method.as_str() {
        "naive" => Baseline::Naive,
        "shuffle" => Baseline::Shuffle {
            depth: a.depth.unwrap_or_else(|| default_shuffle_depth(a.k).min(scores.items())),
            seed: a.seed,
        },
        "ca" => Baseline::Ca(CAConfig::new(a.epsilon)),
        "rr" => Baseline::Rr(RRConfig {
            tau: a.tau,
            seed: a.seed,
            exclusive: !a.shared_items,
        }),
        other => anyhow::bail!("unknown baseline {other:?} (expected naive, shuffle, ca or rr)"),
    };
    let out = cmd_baseline(&scores, &method, a.k, &a.out)?;
    println!("{}", serde_json::to_string(&out.record)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Fit(a) => fit(a),
        Command::Baseline(a) => baseline(a),
        Command::Check(a) => match cmd_check(a.seed, a.samples) {
            Ok(outcomes) => {
                for o in &outcomes {
                    println!("{o}");
                }
                return if outcomes.iter().all(|o| o.pass) { ExitCode::SUCCESS } else { ExitCode::FAILURE };
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
