//! The `textmatch` command line.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use textmatch::automl::{tune, TuneConfig};
use textmatch::dataset::Split;
use textmatch::experiment::{run_training, Dataset, DatasetFiles, ExperimentConfig};
use textmatch::store::{load_run, save_run, write_atomic};
use textmatch::train::{evaluate, Metric, TrainConfig};
use textmatch::{toy, Error};

use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "textmatch", version, about = "Train, tune, evaluate and serve neural text matching models")]
pub struct Cli {
    /// Master seed; overrides the seeds given in a manifest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted query/document overlap.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        queries: usize,
        #[arg(long, default_value_t = 20)]
        docs: usize,
    },
    /// Train the model described by a manifest and save the run.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print ranking metrics of a saved run on one split.
    Evaluate(EvaluateArgs),
    /// Random search over the manifest's `search` section.
    Tune {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one text pair with a saved run.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        left: String,
        #[arg(long)]
        right: String,
        /// Include the model's explanation.
        #[arg(long)]
        explain: bool,
    },
    /// Run the studio HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "studio-store")]
        store: PathBuf,
        #[arg(long, default_value_t = 1)]
        max_jobs: usize,
        /// Directory of built UI assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    /// Manifest whose dataset section names the files.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    manifest: Option<PathBuf>,
    /// Directory laid out like gen-toy output.
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, valid or test; defaults to the last split present.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',', default_value = "ndcg@10,map")]
    metrics: Vec<String>,
}

/// Everything a scripted run needs, as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: String,
    #[serde(default)]
    pub hyper_parameters: Map<String, Value>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Paths are relative to the manifest file.
    pub dataset: DatasetFiles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<TuneConfig>,
}

impl Manifest {
    pub fn load(path: &Path, seed: Option<u64>) -> textmatch::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.dataset = m.dataset.relative_to(base);
        m.embeddings = m.embeddings.map(|p| if p.is_relative() { base.join(p) } else { p });
        if let Some(seed) = seed {
            m.train.seed = seed;
            if let Some(s) = m.search.as_mut() {
                s.seed = seed;
            }
        }
        Ok(m)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            hyper_parameters: self.hyper_parameters.clone(),
            train: self.train.clone(),
            embeddings: self.embeddings.clone(),
        }
    }
}

/// Parses arguments, runs the command and maps errors to exit codes:
/// 2 for usage and configuration errors, 1 for everything else.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_usage() {
        2
    } else {
        1
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn line(out: &mut dyn Write, value: &impl Serialize) -> textmatch::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Runs one parsed command, writing its JSON output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> textmatch::Result<()> {
    match cli.command {
        Command::GenToy { out: dir, queries, docs } => {
            let paths = toy::write(&dir, queries, docs, cli.seed.unwrap_or(0))?;
            let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            line(out, &json!({"files": files}))
        }
        Command::Train { manifest, out: dir } => {
            let m = Manifest::load(&manifest, cli.seed)?;
            let config = m.experiment();
            let hp = config.validate()?;
            let dataset = Dataset::load(&m.dataset)?;
            let mut failed = None;
            let mut sink = |e: &textmatch::train::EpochEvent| match line(out, e) {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    failed = Some(e);
                    ControlFlow::Break(())
                }
            };
            let result = run_training(&config, &hp, &dataset, &mut sink);
            if let Some(e) = failed {
                return Err(e);
            }
            let run = result?;
            save_run(&dir, &run)?;
            tracing::info!("saved run to {}", dir.display());
            Ok(())
        }
        Command::Evaluate(args) => cmd_evaluate(args, cli.seed, out),
        Command::Tune { manifest, out: dir } => {
            let m = Manifest::load(&manifest, cli.seed)?;
            let search = m
                .search
                .clone()
                .ok_or_else(|| Error::config("manifest has no `search` section"))?;
            let dataset = Dataset::load(&m.dataset)?;
            let on_trial = |t: &textmatch::automl::Trial| {
                tracing::info!("trial {} {:?} {:?}", t.index, t.status, t.metric);
                ControlFlow::Continue(())
            };
            let outcome = tune(&m.experiment(), &dataset, &search, &on_trial)?;
            std::fs::create_dir_all(&dir)?;
            write_atomic(&dir.join("tune.json"), &serde_json::to_vec_pretty(&outcome.result)?)?;
            save_run(&dir.join("best"), &outcome.best_run)?;
            let best = outcome.result.best_trial();
            line(out, &json!({"best": best.index, "config": best.config, "metric": best.metric}))
        }
        Command::Score { run, left, right, explain } => {
            if left.trim().is_empty() || right.trim().is_empty() {
                return Err(Error::config("texts must be non-empty"));
            }
            let run = load_run(&run)?;
            let l = run.pipeline.transform(&left)?;
            let r = run.pipeline.transform(&right)?;
            if explain {
                let e = run.model.explain(&l, &r)?;
                line(out, &json!({"score": e.score(), "explanation": e}))
            } else {
                line(out, &json!({"score": run.model.score(&l, &r)?}))
            }
        }
        Command::Serve { host, port, store, max_jobs, static_dir } => {
            let mut config = ServiceConfig::new(store);
            config.max_jobs = max_jobs;
            config.static_dir = static_dir;
            serve_blocking(&host, port, config)
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs, seed: Option<u64>, out: &mut dyn Write) -> textmatch::Result<()> {
    let metrics = Metric::parse_list(&args.metrics)?;
    let files = match (&args.manifest, &args.data) {
        (Some(m), _) => Manifest::load(m, seed)?.dataset,
        (None, Some(d)) => DatasetFiles::in_dir(d),
        (None, None) => return Err(Error::config("give --manifest or --data")),
    };
    let dataset = Dataset::load(&files)?;
    let split = match args.split.as_deref() {
        Some("train") => Split::Train,
        Some("valid") => Split::Valid,
        Some("test") => Split::Test,
        Some(other) => return Err(Error::config(format!("unknown split `{other}` (train, valid, test)"))),
        None => [Split::Test, Split::Valid, Split::Train]
            .into_iter()
            .find(|s| dataset.has_split(*s))
            .unwrap_or(Split::Train),
    };
    let run = load_run(&args.run)?;
    let pack = dataset.pack(split)?.process(&run.pipeline)?;
    line(out, &evaluate(&run.model, &pack, &metrics)?)
}

fn serve_blocking(host: &str, port: u16, config: ServiceConfig) -> textmatch::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        service::serve(listener, config, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    });
    // running training stops at its next epoch boundary; do not wait for it
    runtime.shutdown_timeout(std::time::Duration::from_secs(1));
    Ok(result?)
}
