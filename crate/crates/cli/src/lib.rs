//! Command-line driver: `lpbo train | eval | compare | list-suite | decode`.

pub mod artifacts;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use lpbo_core::bench::{self, NamedOptimizer, OptimizerResult};
use lpbo_core::meta_ga::{
    self, learned_factory, GenerationReport, GenomeFile, TrainCheckpoint, TrainSettings,
};
use lpbo_core::seed::{self, stream};
use lpbo_core::{CmaEs, FunctionFamily, Optimizer, RandomSearch, Split, FORMAT_VERSION};

use crate::artifacts::{ensure_dir, load_optimizer, write_json, write_with, Metadata};
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] lpbo_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed JSON at byte offset {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad invocations and configurations, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(lpbo_core::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lpbo",
    version,
    about = "Train and benchmark learned population-based optimizers"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "LPBO_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train a policy with the genetic algorithm.
    Train(TrainArgs),
    /// Benchmark a trained policy.
    Eval(EvalArgs),
    /// Benchmark a trained policy against baselines.
    Compare(CompareArgs),
    /// Print the task suite as CSV.
    ListSuite(ListArgs),
    /// Expand a genome into an explicit parameter file.
    Decode(DecodeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SuiteArgs {
    /// Comma-separated function families.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub lambda: Option<usize>,
    #[arg(long)]
    pub fe_max: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub runs_per_task: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub elites: Option<usize>,
    #[arg(long)]
    pub parents: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Genome file, training checkpoint or parameter file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated baselines: rs, cma-es.
    #[arg(long, value_delimiter = ',', default_value = "rs,cma-es")]
    pub baselines: Vec<String>,
    #[arg(long, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Only list this split.
    #[arg(long)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub genome: PathBuf,
    /// Destination file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub const BASELINES: [&str; 2] = ["rs", "cma-es"];

impl SuiteArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(names) = &self.families {
            cfg.suite.families = names
                .iter()
                .map(|n| n.trim().parse::<FunctionFamily>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("--families: {e}")))?;
        }
        if let Some(d) = self.dimension {
            cfg.suite.dimension = d;
        }
        if let Some(n) = self.instances {
            cfg.suite.instances = n;
        }
        if let Some(l) = self.lambda {
            cfg.episode.lambda = l;
        }
        if self.fe_max.is_some() {
            cfg.episode.fe_max = self.fe_max;
        }
        if let Some(t) = self.tolerance {
            cfg.episode.tolerance = t;
        }
        if let Some(r) = self.runs_per_task {
            cfg.runs_per_task = r;
        }
        Ok(())
    }
}

impl Cli {
    /// The configuration file overlaid by every flag that was given.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        match &self.command {
            Command::Train(a) => {
                a.suite.apply(&mut cfg)?;
                if let Some(g) = a.generations {
                    cfg.ga.generations = g;
                }
                if let Some(p) = a.population {
                    cfg.ga.population_size = p;
                }
                if let Some(e) = a.elites {
                    cfg.ga.n_elites = e;
                }
                if let Some(p) = a.parents {
                    cfg.ga.n_parents = p;
                }
                if let Some(c) = a.checkpoint_every {
                    cfg.checkpoint_every = c;
                }
            }
            Command::Eval(a) => a.suite.apply(&mut cfg)?,
            Command::Compare(a) => a.suite.apply(&mut cfg)?,
            Command::ListSuite(a) => a.suite.apply(&mut cfg)?,
            Command::Decode(_) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn command_name(&self) -> &'static str {
        match self.command {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::ListSuite(_) => "list-suite",
            Command::Decode(_) => "decode",
        }
    }
}

/// Parses `args` and runs the selected command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.resolve_config()?;
    if let Command::Train(a) = &cli.command {
        if a.generations == Some(0) {
            return Err(CliError::Usage("--generations must be at least 1".into()));
        }
    }
    if let Command::Compare(a) = &cli.command {
        for b in &a.baselines {
            if !BASELINES.contains(&b.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown baseline `{b}`; valid names: {}",
                    BASELINES.join(", ")
                )));
            }
        }
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", cfg.workers.unwrap_or(0))))?;
    let name = cli.command_name();
    pool.install(|| match &cli.command {
        Command::Train(_) => train(&cfg, name),
        Command::Eval(a) => eval(&cfg, a, name),
        Command::Compare(a) => compare(&cfg, a, name),
        Command::ListSuite(a) => list_suite(&cfg, a),
        Command::Decode(a) => decode(a),
    })
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    ensure_dir(cfg.out.as_deref().unwrap_or(Path::new("lpbo-out")))
}

fn write_metadata(dir: &Path, cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    write_json(
        &dir.join("metadata.json"),
        &Metadata {
            format_version: FORMAT_VERSION,
            command,
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            config: cfg,
        },
    )
}

fn bench_seed(cfg: &RunConfig) -> u64 {
    seed::derive(cfg.master_seed, &[stream::BENCH])
}

fn train(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    write_metadata(&dir, cfg, command)?;
    let suite = cfg.make_suite()?;
    let settings = TrainSettings {
        episode: cfg.episode_config(),
        runs_per_task: cfg.runs_per_task,
        master_seed: cfg.master_seed,
        fixed_episode_seeds: false,
    };
    let last = cfg.ga.generations;
    let mut history = lpbo_core::TrainHistory::default();
    let mut observer = |r: &GenerationReport<'_>| -> lpbo_core::Result<()> {
        let s = r.stats;
        eprintln!(
            "gen {:>4}  train_best {:>12.4}  val_best {:>12}  sigma {:.4}  {:>8.1}s",
            s.generation,
            s.train_best,
            s.val_best
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            s.sigma,
            r.elapsed_secs
        );
        history.entries.push(s.clone());
        let due =
            s.generation == last || (s.generation > 0 && s.generation.is_multiple_of(cfg.checkpoint_every));
        if due {
            let ckpt = TrainCheckpoint {
                format_version: FORMAT_VERSION,
                ga_config: cfg.ga,
                policy_config: cfg.policy,
                generation: s.generation,
                population: r.population.to_vec(),
                best: r.best.clone(),
                history: history.clone(),
            };
            let path = dir.join(format!("checkpoint_g{}.json", s.generation));
            let text = serde_json::to_string(&ckpt)?;
            std::fs::write(&path, text)?;
        }
        Ok(())
    };
    let outcome = meta_ga::train(&cfg.ga, cfg.policy, &suite, &settings, &mut observer)?;
    write_with(&dir.join("history.csv"), |w| outcome.history.write_csv(w))?;
    write_json(
        &dir.join("best_genome.json"),
        &GenomeFile::new(cfg.policy, outcome.best),
    )?;
    println!("best train meta-loss {:.6}", outcome.best_fitness);
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(cfg: &RunConfig, args: &EvalArgs, command: &str) -> Result<(), CliError> {
    let params = load_optimizer(&args.checkpoint)?.params()?;
    let dir = out_dir(cfg)?;
    write_metadata(&dir, cfg, command)?;
    let tasks = cfg.make_suite()?.split(args.split);
    if tasks.is_empty() {
        return Err(CliError::Config(format!(
            "split `{}` has no tasks",
            args.split.name()
        )));
    }
    let targets = cfg.targets()?;
    let episode = cfg.episode_config();
    let factory = learned_factory(params);
    let records = lpbo_core::meta_loss::run_task_episodes(
        &factory,
        &tasks,
        cfg.bench_runs(),
        &episode,
        bench_seed(cfg),
    )?;
    let ecdf = lpbo_core::EcdfCurve::from_records(&records, &targets, episode.fe_max);
    let ert = bench::ert_from_records(&tasks, &records, &targets, episode.fe_max)?;
    write_with(&dir.join("ecdf.csv"), |w| {
        bench::write_ecdf_csv(w, [("learned", &ecdf)])
    })?;
    write_with(&dir.join("ert.csv"), |w| {
        bench::write_ert_csv(w, [("learned", ert.as_slice())])
    })?;
    println!(
        "learned  tasks {}  auc {:.4}  final_fraction {:.4}",
        tasks.len(),
        ecdf.auc(),
        ecdf.final_fraction()
    );
    Ok(())
}

fn compare(cfg: &RunConfig, args: &CompareArgs, command: &str) -> Result<(), CliError> {
    let learned = match &args.checkpoint {
        Some(p) => Some(learned_factory(load_optimizer(p)?.params()?)),
        None => None,
    };
    let rs = || Box::new(RandomSearch::new()) as Box<dyn Optimizer>;
    let cma = || Box::new(CmaEs::default()) as Box<dyn Optimizer>;
    let mut entries: Vec<NamedOptimizer<'_>> = Vec::new();
    if let Some(f) = &learned {
        entries.push(NamedOptimizer {
            name: "learned".into(),
            factory: f,
            lambda: None,
        });
    }
    let mut seen = Vec::new();
    for b in &args.baselines {
        if seen.contains(b) {
            continue;
        }
        seen.push(b.clone());
        match b.as_str() {
            "rs" => entries.push(NamedOptimizer {
                name: "rs".into(),
                factory: &rs,
                lambda: None,
            }),
            _ => entries.push(NamedOptimizer {
                name: "cma-es".into(),
                factory: &cma,
                lambda: Some(cfg.cma_lambda()),
            }),
        }
    }
    if entries.len() < 2 {
        return Err(CliError::Usage(
            "a comparison needs at least two optimizers; pass --checkpoint or more baselines".into(),
        ));
    }
    let dir = out_dir(cfg)?;
    write_metadata(&dir, cfg, command)?;
    let tasks = cfg.make_suite()?.split(args.split);
    if tasks.is_empty() {
        return Err(CliError::Config(format!(
            "split `{}` has no tasks",
            args.split.name()
        )));
    }
    let report = bench::compare_on(
        &entries,
        &tasks,
        &cfg.targets()?,
        &cfg.episode_config(),
        cfg.bench_runs(),
        bench_seed(cfg),
    )?;
    let curves = || report.results.iter().map(|r| (r.name.as_str(), &r.ecdf));
    let tables = || report.results.iter().map(|r| (r.name.as_str(), r.ert.as_slice()));
    write_with(&dir.join("ecdf.csv"), |w| bench::write_ecdf_csv(w, curves()))?;
    write_with(&dir.join("ert.csv"), |w| bench::write_ert_csv(w, tables()))?;
    write_with(&dir.join("summary.csv"), |w| bench::write_summary_csv(w, &report))?;
    print_table(&report.results);
    Ok(())
}

fn print_table(results: &[OptimizerResult]) {
    println!(
        "{:<10} {:>6} {:>8} {:>14}",
        "optimizer", "lambda", "auc", "final_fraction"
    );
    for r in results {
        println!(
            "{:<10} {:>6} {:>8.4} {:>14.4}",
            r.name, r.lambda, r.auc, r.final_fraction
        );
    }
}

fn list_suite(cfg: &RunConfig, args: &ListArgs) -> Result<(), CliError> {
    let suite = cfg.make_suite()?;
    let stdout = std::io::stdout();
    let mut w = csv::Writer::from_writer(stdout.lock());
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["task_id", "family", "dimension", "split", "optimum_value"])
        .map_err(csv_err)?;
    for (task, split) in suite.iter() {
        if args.split.is_some_and(|s| s != split) {
            continue;
        }
        w.write_record([
            task.task_id.clone(),
            task.family.name().to_string(),
            task.dimension.to_string(),
            split.name().to_string(),
            task.optimum_value().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn decode(args: &DecodeArgs) -> Result<(), CliError> {
    let loaded = load_optimizer(&args.genome)?;
    if loaded.genome().is_none() {
        return Err(CliError::Usage(format!(
            "{} already holds explicit parameters",
            args.genome.display()
        )));
    }
    let ckpt = loaded.params()?.to_checkpoint();
    match &args.output {
        Some(path) => write_json(path, &ckpt),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer(&mut lock, &ckpt).map_err(lpbo_core::Error::from)?;
            writeln!(lock).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}
