//! Command-line driver: training, verification, plotting, and evaluation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowrl_core::harness::{self, config::RunConfig, plot, verify};
use flowrl_core::models::UnifiedPolicy;
use flowrl_core::params::{load_checkpoint, restore_from_checkpoint, Optimizer, ParamSet};
use flowrl_core::rewards::FeatureMap;
use flowrl_core::scenarios::{ScenarioContext, ScenarioKind};

const EVAL_SEED_MIX: u64 = 0x45564153;

#[derive(Parser)]
#[command(name = "flowrl", about = "Joint token/denoising RL laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training loop from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics and checkpoints (default: runs/<scenario>-<seed>).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Resume from a checkpoint produced by an identical config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Verification reports; nonzero exit on failure.
    Verify {
        #[command(subcommand)]
        what: VerifyWhat,
    },
    /// Render line charts from a metrics stream.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Comma-separated metric keys.
        #[arg(long, value_delimiter = ',')]
        keys: Vec<String>,
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on its scenario (or another one).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scenario to evaluate (defaults to the checkpoint's).
        #[arg(long)]
        scenario: Option<String>,
        /// Number of evaluation rollouts.
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum VerifyWhat {
    /// Sampler equivalence grid plus the deterministic-limit check.
    Sde,
    /// Finite-difference sweep of the composite-loss gradients.
    Grad {
        /// Freeze the token policy and exclude it from the sweep.
        #[arg(long)]
        freeze_lm: bool,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            out_dir,
            resume,
        } => {
            let cfg = RunConfig::load(&config)?;
            let out = out_dir
                .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.scenario, cfg.seed)));
            let outcome = harness::train_resumable(&cfg, &out, resume.as_deref())?;
            println!(
                "trained {} steps; metrics at {}; final checkpoint at {}",
                outcome.steps_run,
                outcome.metrics_path.display(),
                outcome.final_checkpoint.display()
            );
            if let Some(last) = outcome.last_record {
                println!("final mean reward: {:.4}", last.mean_reward);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { what } => match what {
            VerifyWhat::Sde => {
                let report = verify::verify_sde(verify::SdeFault::None);
                println!("{report}");
                Ok(if report.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                })
            }
            VerifyWhat::Grad { freeze_lm } => {
                let report = verify::verify_grad(verify::GradFault::None, freeze_lm);
                println!("{report}");
                Ok(if report.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                })
            }
        },
        Command::Plot {
            metrics,
            keys,
            out_dir,
        } => {
            if keys.is_empty() {
                anyhow::bail!(
                    "no keys given; available keys: {}",
                    plot::AVAILABLE_KEYS.join(", ")
                );
            }
            let written = plot::plot_metrics(&metrics, &keys, &out_dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            scenario,
            samples,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut cfg = RunConfig::from_toml(&ckpt.config)?;
            if let Some(s) = scenario {
                ScenarioKind::parse(&s)?;
                cfg.scenario = s;
            }
            let mut params = ParamSet::new();
            let policy = UnifiedPolicy::build(&cfg.model_config(), &mut params, cfg.seed)?;
            let mut opt = Optimizer::new(cfg.grpo.optimizer, cfg.grpo.learning_rate, &params);
            restore_from_checkpoint(&ckpt, &mut params, Some(&mut opt))?;

            let kind = cfg.scenario_kind()?;
            let grid = cfg.time_grid();
            let sde = cfg.sde_config()?;
            let weights = cfg.reward_weights();
            let comp = cfg.composition_config();
            let raster = cfg.raster_spec();
            let compressor = cfg.compressor_config();
            let features = FeatureMap::new(cfg.rewards.feature_seed, cfg.state_dim(), 64);
            let scen_cfg = cfg.scenario_config();
            let ctx = ScenarioContext {
                policy: &policy,
                params: &params,
                grid: &grid,
                sde: &sde,
                weights: &weights,
                comp: &comp,
                raster: &raster,
                compressor: &compressor,
                features: &features,
                cfg: &scen_cfg,
            };
            let eval_seed = cfg.seed ^ EVAL_SEED_MIX;
            let summary = harness::eval::eval_scenario(&ctx, &cfg, samples, eval_seed)?;
            println!(
                "scenario {} over {} rollouts: mean total reward {:.4}",
                cfg.scenario, summary.count, summary.mean_total
            );
            if let Some(v) = summary.mean_compose {
                println!("  mean composition reward: {v:.4}");
            }
            if let Some(v) = summary.mean_edit {
                println!("  mean edit reward:        {v:.4}");
            }
            if let Some(v) = summary.mean_cycle {
                println!("  mean cycle reward:       {v:.4}");
            }
            if let Some(v) = summary.mean_correct {
                println!("  mean judge correctness:  {v:.4}");
            }
            if kind == ScenarioKind::S6Reflect {
                let pairs = harness::eval::held_out_pairs(&cfg, cfg.output.eval_pairs);
                let acc = harness::eval::judge_accuracy(
                    &policy,
                    &params,
                    comp.cluster_radius,
                    scen_cfg.answer_max_len,
                    &pairs,
                )?;
                println!("  judge accuracy on {} held-out pairs: {acc:.4}", pairs.len());
            }
            if kind == ScenarioKind::S4Edit {
                let sweep = harness::eval::edit_strength_sweep(
                    &policy,
                    &params,
                    &cfg,
                    &[0.5, 1.0, 2.0],
                    samples,
                    eval_seed,
                )?;
                for p in sweep {
                    println!(
                        "  cond_scale {:.1}: edit {:.4}, cycle {:.4}, total {:.4}",
                        p.cond_scale, p.mean_edit, p.mean_cycle, p.mean_total
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
