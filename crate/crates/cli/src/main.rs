use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "annoprop",
    version,
    about = "Harmonize noisy opinion annotations and grow a labeled corpus"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restricts training, evaluation and reports to one entity.
    #[arg(long, global = true)]
    pub entity: Option<String>,
    /// Restricts training, evaluation and reports to one task.
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,
    /// Append-only corpus log.
    #[arg(long, global = true, default_value = "annoprop.jsonl")]
    pub store: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Polarity,
    Aspect,
}

impl From<TaskArg> for annoprop::Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Polarity => annoprop::Task::Polarity,
            TaskArg::Aspect => annoprop::Task::Aspect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Corrections,
    Distribution,
    Influence,
    Kappa,
    Consistency,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic corpus (documents and one noisy annotation each).
    Synth {
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_docs: usize,
        /// Share of documents that get an annotation.
        #[arg(long, default_value_t = 1.0)]
        annotated: f64,
    },
    /// Adds documents and annotation records (JSON lines) to the store.
    Ingest {
        #[arg(long)]
        docs: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Runs the correction cascade and commits the corrected gold labels.
    Harmonize {
        /// Writes the review items to this file (JSON lines).
        #[arg(long)]
        reviews: Option<PathBuf>,
        /// Prints the report without committing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Trains committees on the gold labels, optionally tuning fusion weights
    /// on the most recent months.
    Train {
        #[arg(long, default_value = "models")]
        out: PathBuf,
        #[arg(long)]
        tune: bool,
        #[arg(long, default_value_t = 1)]
        dev_months: u32,
    },
    /// Runs the train / classify / review loop over the unlabeled documents.
    Propagate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continues from `--checkpoint` instead of starting over.
        #[arg(long)]
        resume: bool,
        /// Writes the documents sampled for review to this file.
        #[arg(long)]
        queue: Option<PathBuf>,
        /// Months of labeled documents held out for the performance stop.
        #[arg(long, default_value_t = 0)]
        dev_months: u32,
    },
    /// Trains on older gold labels and scores the most recent ones.
    Evaluate {
        #[arg(long, default_value_t = 1)]
        test_months: u32,
    },
    /// Prints a corpus report.
    Report {
        #[arg(value_enum)]
        kind: ReportKind,
        #[arg(long)]
        json: bool,
    },
    /// Serves the annotation API (and a UI bundle, if given).
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Review items (JSON lines) to put in the queue.
        #[arg(long)]
        queue: Option<PathBuf>,
    },
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = match &cli.global.config {
        Some(path) => annoprop::Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => annoprop::Config::default(),
    };
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    if let Some(e) = &cli.global.entity {
        if !config.entities.contains(e) {
            bail!("unknown entity `{e}`; configured entities: {:?}", config.entities);
        }
    }
    commands::run(&cli, &config)
}
