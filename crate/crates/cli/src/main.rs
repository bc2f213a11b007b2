//! Command-line front end: benchmark runs over edit-request datasets,
//! re-judging and report re-rendering for existing runs, toy policy
//! training, and one-shot decomposition for inspection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use editflow_core::agents::{Decomposer, MockDecomposer, MockSequencer, Sequencer};
use editflow_core::bench::{
    build_judges, parse_run_config, rebuild_report, rejudge_run, run_benchmark, write_report_files,
    RunConfig,
};
use editflow_core::grpo::{generate_corpus, train_toy, write_curve_jsonl, GrpoConfig, ToyVocab};
use editflow_core::pipeline::ExecutionStrategy;
use editflow_core::rewards::RewardConfig;
use editflow_core::{serialize_decomposition, EditRequest, ImageRef};

#[derive(Parser)]
#[command(
    name = "editflow",
    version,
    about = "Decompose edit instructions, run benchmark pipelines, and train the toy policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark described by a TOML configuration
    Run(RunArgs),
    /// Re-judge the completed records of an existing run
    Judge(JudgeArgs),
    /// Re-render report files from a run directory's persisted records
    Report(ReportArgs),
    /// Train the toy policy on a synthetic corpus and write its curve
    TrainToy(TrainToyArgs),
    /// Decompose a single instruction with the rule-based agents
    Decompose(DecomposeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; the flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Line-delimited dataset of edit requests
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory receiving records, judgments and reports
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// single_turn or multi_turn
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<ExecutionStrategy>,
    /// Uniform sample of this many records (seeded)
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many new records; rerun to resume
    #[arg(long)]
    stop_after: Option<usize>,
    /// Concurrent record workers
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_strategy(s: &str) -> Result<ExecutionStrategy, String> {
    match s {
        "single_turn" => Ok(ExecutionStrategy::SingleTurn),
        "multi_turn" => Ok(ExecutionStrategy::MultiTurn),
        other => Err(format!(
            "unknown strategy {other:?} (expected single_turn or multi_turn)"
        )),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => parse_run_config(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => {
                let (Some(dataset), Some(output_dir)) = (&self.dataset, &self.output_dir) else {
                    bail!("either --config or both --dataset and --output-dir are required");
                };
                RunConfig::mock(dataset, output_dir)
            }
        };
        if let Some(dataset) = self.dataset {
            cfg.dataset = dataset;
        }
        if let Some(output_dir) = self.output_dir {
            cfg.output_dir = output_dir;
        }
        if let Some(strategy) = self.strategy {
            cfg.strategy = strategy;
        }
        if let Some(sample_size) = self.sample_size {
            cfg.sample_size = Some(sample_size);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(stop_after) = self.stop_after {
            cfg.stop_after = Some(stop_after);
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct JudgeArgs {
    /// An existing run directory
    run_dir: PathBuf,
    /// Run configuration supplying the judges; defaults to the run's
    /// own config snapshot
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// An existing run directory
    run_dir: PathBuf,
    /// Also rewrite report.json, report.txt and report.csv
    #[arg(long)]
    write: bool,
}

#[derive(Args)]
struct TrainToyArgs {
    /// JSONL file receiving one record per update step
    #[arg(long)]
    out: PathBuf,
    /// Synthetic requests in the training corpus
    #[arg(long, default_value_t = 2000)]
    corpus_size: usize,
    /// Seed for corpus generation
    #[arg(long, default_value_t = 17)]
    corpus_seed: u64,
    /// Update steps (0 writes an empty curve)
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for rollout sampling
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    /// Prompt groups per update step
    #[arg(long)]
    prompts_per_step: Option<usize>,
    /// Weight of the goal term in the reward (0 ablates it)
    #[arg(long)]
    goal_weight: Option<f64>,
}

#[derive(Args)]
struct DecomposeArgs {
    /// The edit instruction to decompose
    instruction: String,
    /// Source image URI (only recorded, never fetched)
    #[arg(long, default_value = "mock:inspect")]
    image: String,
    /// Also print the sequenced plan, one sub-request per line
    #[arg(long)]
    plan: bool,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.into_config()?;
    let summary = run_benchmark(&cfg).context("benchmark run failed")?;
    print!("{}", summary.rendered.table);
    if summary.remaining > 0 {
        println!(
            "stopped early: {} records remaining; rerun to resume",
            summary.remaining
        );
    }
    println!("run directory: {}", summary.run_dir.display());
    Ok(())
}

fn cmd_judge(args: JudgeArgs) -> Result<()> {
    let config_path = args
        .config
        .unwrap_or_else(|| args.run_dir.join("config.toml"));
    let cfg = parse_run_config(&config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let judges = build_judges(&cfg.judges).context("building judges")?;
    let rendered = rejudge_run(&args.run_dir, &judges).context("re-judging run")?;
    print!("{}", rendered.table);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let rendered = rebuild_report(&args.run_dir)
        .with_context(|| format!("rebuilding report from {}", args.run_dir.display()))?;
    if args.write {
        write_report_files(&args.run_dir, &rendered)?;
    }
    print!("{}", rendered.table);
    Ok(())
}

fn cmd_train_toy(args: TrainToyArgs) -> Result<()> {
    let mut cfg = GrpoConfig::default();
    if let Some(steps) = args.steps {
        cfg.train_steps = steps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(group_size) = args.group_size {
        cfg.group_size = group_size;
    }
    if let Some(prompts) = args.prompts_per_step {
        cfg.prompts_per_step = prompts;
    }
    let mut reward_cfg = RewardConfig::default();
    if let Some(w) = args.goal_weight {
        reward_cfg.w_goal = w;
    }

    let vocab = ToyVocab::standard();
    let corpus = generate_corpus(&vocab, args.corpus_size, args.corpus_seed);
    let report = train_toy(&corpus, &cfg, &reward_cfg).context("training failed")?;

    let file = File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    write_curve_jsonl(&report, &mut writer)
        .and_then(|()| writer.flush())
        .with_context(|| format!("writing {}", args.out.display()))?;

    match report.steps.last() {
        Some(last) => println!(
            "{} steps; final rewards: format {:.3} action {:.3} subject {:.3} goal {:.3}",
            report.steps.len(),
            last.mean_format,
            last.mean_action,
            last.mean_subject,
            last.mean_goal,
        ),
        None => println!("0 steps; curve file is empty"),
    }
    println!("curve written to {}", args.out.display());
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<()> {
    let image = ImageRef::uri(&args.image).context("invalid image reference")?;
    let request = EditRequest::new("inspect", &args.instruction, image)
        .context("invalid instruction")?;
    let outcome = MockDecomposer::new()
        .decompose(&request)
        .context("decomposition failed")?;
    println!("{}", serialize_decomposition(&outcome.decomposition)?);
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.decomposition)?
    );
    if args.plan {
        let plan = MockSequencer::new()
            .sequence(&request.source_image, &outcome.decomposition)
            .context("sequencing failed")?;
        for (i, step) in plan.iter().enumerate() {
            println!("{}. {step}", i + 1);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Judge(args) => cmd_judge(args),
        Command::Report(args) => cmd_report(args),
        Command::TrainToy(args) => cmd_train_toy(args),
        Command::Decompose(args) => cmd_decompose(args),
    }
}
