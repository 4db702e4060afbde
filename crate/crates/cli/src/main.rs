use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scenegraft::pipeline::{
    evaluate, gen_fixture_with, load_dataset, run_batch, EvalOptions, EvalTask, FixtureKind, FixtureOptions,
    PipelineError, RunConfig, SceneCheck, DEFAULT_COVERAGE_THRESHOLD, DEFAULT_FREESPACE_RADIUS,
};

const EXIT_IO: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "scenegraft", version, about = "Insert synthetic assets into multi-camera driving scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    SurroundFisheye,
    StereoPinhole,
    Parking,
}

impl From<Kind> for FixtureKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::SurroundFisheye => FixtureKind::SurroundFisheye,
            Kind::StereoPinhole => FixtureKind::StereoPinhole,
            Kind::Parking => FixtureKind::Parking,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Obstacle,
    Freespace,
}

#[derive(Subcommand)]
enum Command {
    /// Augment a dataset as described by a run config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config worker count.
        #[arg(long)]
        jobs: Option<usize>,
        /// Replace a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Check every scene of a dataset.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Minimum share of the sphere the cameras must cover.
        #[arg(long, default_value_t = DEFAULT_COVERAGE_THRESHOLD)]
        coverage: f64,
    },
    /// Write a synthetic toy dataset with catalog and config.
    Fixture {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scenes; the kind's default when absent.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        /// Ignore freespace bins farther than this in the ground truth (m).
        #[arg(long, default_value_t = DEFAULT_FREESPACE_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f64,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn exit_for(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_INVALID })
}

fn write_json(path: &PathBuf, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    match cli.command {
        Command::Generate { config, seed, jobs, overwrite } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let output = cfg.output.clone();
            let report = run_batch(cfg, overwrite)?;
            print!("{}", report.table());
            println!("wrote {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { dataset, coverage } => {
            if !(0.0..=1.0).contains(&coverage) {
                return Err(PipelineError::config("coverage must lie in [0, 1]"));
            }
            let results = load_dataset(&dataset, coverage)?;
            let (mut rejected, mut io) = (0, 0);
            for (v, _) in &results {
                match &v.check {
                    SceneCheck::Accepted { coverage } => println!("{}: ok (coverage {:.1}%)", v.scene, coverage * 100.0),
                    SceneCheck::Rejected { rejection } => {
                        rejected += 1;
                        println!("{}: rejected {rejection}", v.scene);
                    }
                    SceneCheck::IoError { message } => {
                        io += 1;
                        println!("{}: unreadable {message}", v.scene);
                    }
                }
            }
            println!("{} scenes, {} rejected, {} unreadable", results.len(), rejected, io);
            Ok(if io > 0 {
                ExitCode::from(EXIT_IO)
            } else if rejected > 0 {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Fixture { kind, out, seed, scenes } => {
            let kind = FixtureKind::from(kind);
            let mut options = FixtureOptions::for_kind(kind);
            if let Some(n) = scenes {
                options.scenes = n;
            }
            let info = gen_fixture_with(kind, &out, seed, &options)?;
            println!("{} scenes in {}", info.scene_ids.len(), info.dataset.display());
            println!("config {}", info.config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { pred, gt, task, radius, score_threshold, report } => {
            let task = match task {
                Task::Obstacle => EvalTask::Obstacle,
                Task::Freespace => EvalTask::Freespace,
            };
            let options = EvalOptions { radius_limit: radius, score_threshold, ..EvalOptions::default() };
            let r = evaluate(&pred, &gt, task, &options)?;
            print!("{}", r.table());
            if !r.missing_predictions.is_empty() {
                println!("{} ground-truth scenes had no prediction", r.missing_predictions.len());
            }
            match report {
                Some(path) => write_json(&path, &r)?,
                None => println!("{}", serde_json::to_string_pretty(&r).expect("serializable")),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => exit_for(&e),
    }
}
