//! Experiment harness CLI.
//!
//! Typical reproduction path:
//!
//! ```text
//! foresight --out-dir out gen-data
//! foresight --out-dir out train-policy
//! foresight --out-dir out train-worldmodel
//! foresight --out-dir out train-worldmodel --reward-weight 0 --out-name worldmodel-action-only.json
//! foresight --out-dir out eval --mode storm --flaky 2 --task put_on_target
//! foresight --out-dir out eval --mode reactive --flaky 2 --task put_on_target
//! foresight --out-dir out ablate
//! foresight --out-dir out report out/eval-storm-flaky2 out/eval-reactive-flaky2
//! ```
//!
//! Exit codes: 0 success, 2 validation error, 3 training divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use foresight_core::config::Config;
use foresight_core::env::TaskKind;
use foresight_core::error::{Error, Result};
use foresight_core::mcts::DecisionMode;
use foresight_core::pipeline;

#[derive(Parser)]
#[command(name = "foresight", version, about = "Search-guided tabletop planning harness")]
struct Cli {
    /// JSON config file; missing fields take defaults, unknown keys are
    /// rejected. Omit to run with the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads for episode- and batch-level parallelism
    /// (0 = rayon default). Results are identical regardless.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate demonstration and transition datasets with the scripted
    /// expert plus random-action exploration episodes.
    GenData,
    /// Train the diffusion proposal policy on the demonstration dataset.
    TrainPolicy {
        /// Demonstration dataset (defaults to <out-dir>/demos.jsonl).
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Fit the codebook and train the world model under the hybrid loss.
    TrainWorldmodel {
        /// Transition dataset (defaults to <out-dir>/transitions.jsonl).
        #[arg(long)]
        transitions: Option<PathBuf>,
        /// Reward-loss weight; overrides the config's lambda_reward.
        /// 0 trains the action-only ablation arm.
        #[arg(long)]
        reward_weight: Option<f64>,
        /// Checkpoint file name inside the output directory.
        #[arg(long, default_value = "worldmodel.json")]
        out_name: String,
    },
    /// Run the evaluation protocol: variations x repeats per task.
    Eval {
        /// Decision arm: "storm" (search) or "reactive" (single sample).
        #[arg(long)]
        mode: String,
        /// Restrict to one task (put_on_target | stack | put_in_zone);
        /// omit to evaluate all tasks.
        #[arg(long)]
        task: Option<String>,
        /// Number of initial grasp attempts that deterministically fail.
        #[arg(long, default_value_t = 0)]
        flaky: u32,
        /// Write per-episode search traces (storm mode).
        #[arg(long, default_value_t = false)]
        trace: bool,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        worldmodel: Option<PathBuf>,
    },
    /// Compare two trained world-model arms on a shared held-out set.
    Ablate {
        /// Reward-supervised arm (defaults to <out-dir>/worldmodel.json).
        #[arg(long)]
        wm_a: Option<PathBuf>,
        /// Action-only arm (defaults to <out-dir>/worldmodel-action-only.json).
        #[arg(long)]
        wm_b: Option<PathBuf>,
    },
    /// Merge evaluation reports into one methods-by-tasks summary table.
    Report {
        /// Run directories containing report.json files.
        dirs: Vec<PathBuf>,
        /// Merge even if the runs' config fingerprints conflict.
        #[arg(long, default_value_t = false)]
        force: bool,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let out_dir = &cli.out_dir;

    match &cli.command {
        Command::GenData => {
            let files = pipeline::cmd_gen_data(&cfg, out_dir)?;
            println!("wrote {}", files.demos.display());
            println!("wrote {}", files.transitions.display());
            println!("manifest {}", files.manifest.id);
        }
        Command::TrainPolicy { demos } => {
            let demos = demos.clone().unwrap_or_else(|| out_dir.join("demos.jsonl"));
            let files = pipeline::cmd_train_policy(&cfg, &demos, out_dir)?;
            println!("wrote {}", files.checkpoint.display());
            println!("manifest {}", files.manifest.id);
        }
        Command::TrainWorldmodel { transitions, reward_weight, out_name } => {
            let transitions =
                transitions.clone().unwrap_or_else(|| out_dir.join("transitions.jsonl"));
            let lambda = reward_weight.unwrap_or(cfg.lambda_reward);
            if lambda < 0.0 {
                return Err(Error::Config("reward weight must be >= 0".into()));
            }
            let files =
                pipeline::cmd_train_worldmodel(&cfg, &transitions, lambda, out_name, out_dir)?;
            println!("wrote {}", files.checkpoint.display());
            println!(
                "holdout token accuracy {:.4}, reward mse {:.6} over {} records",
                files.holdout.token_accuracy, files.holdout.reward_mse, files.holdout.records
            );
            println!("manifest {}", files.manifest.id);
        }
        Command::Eval { mode, task, flaky, trace, policy, worldmodel } => {
            let mode = DecisionMode::from_name(mode)?;
            let tasks = match task {
                Some(name) => vec![TaskKind::from_name(name)?],
                None => TaskKind::ALL.to_vec(),
            };
            let policy = policy.clone().unwrap_or_else(|| out_dir.join("policy.json"));
            let wm = worldmodel.clone().unwrap_or_else(|| out_dir.join("worldmodel.json"));
            let files =
                pipeline::cmd_eval(&cfg, &policy, &wm, mode, &tasks, *flaky, *trace, out_dir)?;
            for row in &files.report.success {
                println!(
                    "{} {}: {:.3} ({}/{})",
                    row.arm, row.task, row.rate, row.successes, row.episodes
                );
            }
            println!("wrote {}", files.dir.display());
        }
        Command::Ablate { wm_a, wm_b } => {
            let a = wm_a.clone().unwrap_or_else(|| out_dir.join("worldmodel.json"));
            let b = wm_b
                .clone()
                .unwrap_or_else(|| out_dir.join("worldmodel-action-only.json"));
            let files = pipeline::cmd_ablate(&cfg, &a, &b, out_dir)?;
            for row in &files.report.fidelity {
                println!(
                    "{}: fd_traj {:.4}, psnr {:.2}, ssim {:.4}, reward_mse {}",
                    row.arm,
                    row.fd_traj,
                    row.psnr_mean,
                    row.ssim_mean,
                    row.reward_mse.map_or("n/a".into(), |v| format!("{v:.5}")),
                );
            }
            println!("wrote {}", files.dir.display());
        }
        Command::Report { dirs, force } => {
            if dirs.is_empty() {
                return Err(Error::Usage("report needs at least one run directory".into()));
            }
            let path = pipeline::cmd_report(dirs, *force, out_dir)?;
            print!("{}", std::fs::read_to_string(&path)?);
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
