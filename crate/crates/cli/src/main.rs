use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gpl::eval::EvalReport;
use gpl::pipeline::{collect_reports, Method, Pipeline, PipelineConfig, Stage, StageRun, CACHE_ROOT_ENV};
use gpl::synthetic::{Experiment, ExperimentConfig};

/// Stage-based runner for generative pseudo labeling.
#[derive(Parser, Debug)]
#[command(name = "pipeline", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every stage of a method, reusing cached stages.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Method id, e.g. gpl, qgen, tsdae+gpl, bm25+ce.
        #[arg(long)]
        method: String,
    },
    /// Run a single stage; its upstream artifacts must exist.
    Stage {
        /// ingest, generate, mine, label, train, pretrain, evaluate or rerank.
        name: String,
        #[command(flatten)]
        common: ConfigArgs,
        /// Method whose stage directory is used by train, pretrain, evaluate and rerank.
        #[arg(long, default_value = "gpl")]
        method: String,
    },
    /// Summarise every report.json under a directory.
    Report {
        dir: PathBuf,
    },
    /// List valid method ids.
    Methods,
    /// Write a synthetic target/source dataset, zero-shot checkpoint and config.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generation temperature recorded in the config.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; overrides the environment variable and `paths.output`.
    #[arg(long, env = CACHE_ROOT_ENV)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.paths.output = out.clone();
        }
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match cli.command {
        Command::Run { common, method } => {
            let method: Method = method.parse()?;
            let mut pipeline = Pipeline::open(common.load()?)?;
            let run = pipeline.run(&method)?;
            for s in &run.stages {
                print_stage(s);
            }
            print_report(&method.id(), &run.report);
        }
        Command::Stage { name, common, method } => {
            let stage: Stage = name.parse()?;
            let method: Method = method.parse()?;
            let mut pipeline = Pipeline::open(common.load()?)?;
            let run = pipeline.run_stage(stage, &method)?;
            print_stage(&run);
            for o in &run.outputs {
                println!("  {}", o.display());
            }
        }
        Command::Report { dir } => report(&dir)?,
        Command::Methods => {
            for id in Method::valid_ids() {
                println!("{id}");
            }
        }
        Command::Synth { dir, seed, temperature } => {
            let cfg = ExperimentConfig { seed, temperature, ..ExperimentConfig::default() };
            let exp = Experiment::prepare(cfg)?;
            let path = exp.export(&dir)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_stage(s: &StageRun) {
    let status = if s.cached { "cached" } else { "ran" };
    println!("{:<10} {:<28} {status}", s.stage.as_str(), s.key);
}

fn print_report(name: &str, r: &EvalReport) {
    let metrics: Vec<String> = r.averages.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
    println!("{name:<28} queries={:<6} {}", r.n_queries, metrics.join(" "));
}

fn report(dir: &Path) -> Result<()> {
    let reports = collect_reports(dir).with_context(|| format!("scanning {}", dir.display()))?;
    if reports.is_empty() {
        bail!("no report.json found under {}", dir.display());
    }
    for (key, r) in &reports {
        print_report(key, r);
    }
    Ok(())
}
