//! The training loop: snapshot, roll out a group, score, normalize,
//! update, record. Fully deterministic per (config, seed); checkpoints
//! carry parameters, optimizer moments, the frozen reference policy, and
//! the embedded config, so a resumed run reproduces the uninterrupted one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::grpo::{grpo_update, GroupBatch, UpdateReport};
use crate::harness::config::RunConfig;
use crate::harness::eval;
use crate::harness::metrics::{MetricsHeader, MetricsRecord, MetricsWriter, METRICS_SCHEMA};
use crate::models::UnifiedPolicy;
use crate::params::{
    load_checkpoint, restore_from_checkpoint, save_checkpoint, Checkpoint, OptKind, Optimizer,
    ParamSet,
};
use crate::rewards::FeatureMap;
use crate::scenarios::{
    cold_start_finetune, prompts, run_scenario, ColdStartPair, ScenarioContext, ScenarioKind,
};
use crate::{seeds, Error, Result};

/// Everything a run needs, owned.
pub struct Experiment {
    pub cfg: RunConfig,
    pub policy: UnifiedPolicy,
    pub params: ParamSet,
    pub optimizer: Optimizer,
    pub ref_params: ParamSet,
    pub start_step: usize,
}

impl Experiment {
    /// Build models, optionally run the cold start, and freeze what the
    /// config asks for. `resume_from` restores params, optimizer moments,
    /// the reference policy, and the step counter instead.
    pub fn prepare(cfg: &RunConfig, resume_from: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let policy = UnifiedPolicy::build(&cfg.model_config(), &mut params, cfg.seed)?;
        let mut optimizer = Optimizer::new(cfg.grpo.optimizer, cfg.grpo.learning_rate, &params);

        if let Some(path) = resume_from {
            let ckpt = load_checkpoint(path)?;
            let start_step = ckpt.step as usize;
            restore_from_checkpoint(&ckpt, &mut params, Some(&mut optimizer))?;
            let ref_params = restore_reference(&ckpt, &params)?;
            if cfg.models.freeze_lm {
                params.freeze_prefix("lm.");
            }
            return Ok(Experiment {
                cfg: cfg.clone(),
                policy,
                params,
                optimizer,
                ref_params,
                start_step,
            });
        }

        if cfg.cold_start.steps > 0 {
            let was_frozen = cfg.models.freeze_lm;
            params.freeze_prefix("lm.");
            let dataset = cold_start_dataset(cfg);
            let mut cs_opt = Optimizer::new(OptKind::Adam, cfg.cold_start.learning_rate, &params);
            cold_start_finetune(
                &policy,
                &mut params,
                &mut cs_opt,
                &dataset,
                &cfg.cold_start_config(),
                cfg.seed,
            )?;
            if !was_frozen {
                params.unfreeze_prefix("lm.");
            }
        } else if cfg.models.freeze_lm {
            params.freeze_prefix("lm.");
        }

        // the reference policy is fixed at the start of RL
        let ref_params = params.snapshot().as_param_set();
        Ok(Experiment {
            cfg: cfg.clone(),
            policy,
            params,
            optimizer,
            ref_params,
            start_step: 0,
        })
    }
}

/// Cold-start supervision: (prompt tokens, oracle target set) pairs, plus
/// edit-conditioned pairs when the scenario edits.
fn cold_start_dataset(cfg: &RunConfig) -> Vec<ColdStartPair> {
    let comp = cfg.composition_config();
    let family = cfg.prompt_family();
    let m = cfg.models.points_per_set;
    let mut rng = seeds::stream(cfg.seed, &[seeds::tag::DATASET]);
    let edit_fraction = matches!(cfg.scenario_kind(), Ok(ScenarioKind::S4Edit));
    (0..cfg.cold_start.dataset_size)
        .map(|i| {
            if edit_fraction {
                let q = prompts::gen_s4_query(m, &family, &comp, &mut rng);
                let reference = q.reference.unwrap();
                let target = q.instruction.unwrap().apply(&reference);
                ColdStartPair {
                    cond_tokens: q.prompt_tokens,
                    target,
                    reference: Some(reference),
                }
            } else {
                let spec = prompts::gen_prompt_spec(&family, &mut rng);
                let target = prompts::target_set_for_prompt(&spec, m, &comp, &mut rng);
                let mut tokens = spec.to_tokens();
                // S5 cold start conditions on prompt + a canned expansion,
                // mirroring the richer contexts RL will produce
                if matches!(cfg.scenario_kind(), Ok(ScenarioKind::S5CotT2i)) && i % 2 == 0 {
                    let extra = spec.to_tokens();
                    tokens.extend(extra);
                }
                ColdStartPair {
                    cond_tokens: tokens,
                    target,
                    reference: None,
                }
            }
        })
        .collect()
}

/// Outcome summary for callers and tests.
#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub first_record: Option<MetricsRecord>,
    pub last_record: Option<MetricsRecord>,
}

pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    train_resumable(cfg, out_dir, None)
}

/// Run the training loop, appending one metrics record per update step and
/// checkpointing every `output.checkpoint_interval` steps. A non-finite
/// loss saves a halt checkpoint, emits a diagnostic record, and errors.
pub fn train_resumable(
    cfg: &RunConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut exp = Experiment::prepare(cfg, resume_from)?;
    let kind = cfg.scenario_kind()?;
    let grid = cfg.time_grid();
    let sde = cfg.sde_config()?;
    let weights = cfg.reward_weights();
    let comp = cfg.composition_config();
    let raster = cfg.raster_spec();
    let compressor = cfg.compressor_config();
    let features = FeatureMap::new(cfg.rewards.feature_seed, cfg.state_dim(), 64);
    let scen_cfg = cfg.scenario_config();
    let grpo_cfg = cfg.grpo_config();
    let config_toml = cfg.to_toml()?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut writer = MetricsWriter::create(
        &metrics_path,
        &MetricsHeader {
            schema: METRICS_SCHEMA.into(),
            scenario: cfg.scenario.clone(),
            seed: cfg.seed,
        },
    )?;

    let held_out = if kind == ScenarioKind::S6Reflect {
        eval::held_out_pairs(cfg, cfg.output.eval_pairs)
    } else {
        Vec::new()
    };

    let mut first_record = None;
    let mut last_record = None;
    let mut judge_acc: Option<f64> = None;
    let mut corr_rate: Option<f64> = None;

    for step in exp.start_step..cfg.iterations {
        let wall = Instant::now();
        let ctx = ScenarioContext {
            policy: &exp.policy,
            params: &exp.params,
            grid: &grid,
            sde: &sde,
            weights: &weights,
            comp: &comp,
            raster: &raster,
            compressor: &compressor,
            features: &features,
            cfg: &scen_cfg,
        };
        let mut qrng = seeds::stream(cfg.seed, &[seeds::tag::QUERY, step as u64]);
        let query = eval::generate_query(cfg, kind, &mut qrng)?;
        let mut trajectories = Vec::with_capacity(grpo_cfg.group_size);
        for i in 0..grpo_cfg.group_size {
            let traj_seed =
                seeds::derive(cfg.seed, &[seeds::tag::TRAJECTORY, step as u64, i as u64]);
            trajectories.push(run_scenario(&ctx, &query, traj_seed)?);
        }
        let batch = GroupBatch::from_trajectories(trajectories, grpo_cfg.std_guard)?;
        let report = grpo_update(
            &batch,
            &grpo_cfg,
            &exp.policy,
            &mut exp.params,
            &exp.ref_params,
            &sde,
            &mut exp.optimizer,
        )?;

        let evaluate_now = kind == ScenarioKind::S6Reflect
            && (step % cfg.output.eval_interval == 0 || step + 1 == cfg.iterations);
        if evaluate_now {
            judge_acc = Some(eval::judge_accuracy(
                &exp.policy,
                &exp.params,
                comp.cluster_radius,
                scen_cfg.answer_max_len,
                &held_out,
            )?);
            let mut eval_ctx_cfg = scen_cfg.clone();
            eval_ctx_cfg.max_reflect_iters = 2;
            let eval_ctx = ScenarioContext {
                policy: &exp.policy,
                params: &exp.params,
                grid: &grid,
                sde: &sde,
                weights: &weights,
                comp: &comp,
                raster: &raster,
                compressor: &compressor,
                features: &features,
                cfg: &eval_ctx_cfg,
            };
            let mut erng = seeds::stream(cfg.seed, &[seeds::tag::EVAL, 0x60]);
            let queries: Vec<_> = (0..cfg.output.eval_queries)
                .map(|_| eval::generate_query(cfg, kind, &mut erng))
                .collect::<Result<_>>()?;
            corr_rate = Some(eval::correction_rate(&eval_ctx, &queries, cfg.seed)?);
        }

        let record = build_record(step, cfg, &batch, &report, judge_acc, corr_rate);
        if !report.finite {
            let halt_path = out_dir.join(format!("halt_step{step}.ckpt"));
            save_checkpoint(
                &halt_path,
                &exp.params,
                Some(&exp.optimizer),
                step as u64,
                &config_toml,
            )?;
            writer.append(&sanitize(record))?;
            return Err(Error::NonFinite(format!(
                "loss became non-finite at step {step}; halt checkpoint at {}",
                halt_path.display()
            )));
        }
        writer.append(&record)?;
        if first_record.is_none() {
            first_record = Some(record.clone());
        }
        last_record = Some(record);
        eprintln!(
            "step {step}: reward {:.4} ({} ms)",
            batch.rewards.iter().sum::<f64>() / batch.rewards.len() as f64,
            wall.elapsed().as_millis()
        );

        if (step + 1) % cfg.output.checkpoint_interval == 0 {
            let path = out_dir.join(format!("checkpoint_{:06}.ckpt", step + 1));
            save_with_reference(&path, &exp, (step + 1) as u64, &config_toml)?;
        }
    }

    let final_checkpoint = out_dir.join("final.ckpt");
    save_with_reference(&final_checkpoint, &exp, cfg.iterations as u64, &config_toml)?;
    Ok(TrainOutcome {
        steps_run: cfg.iterations.saturating_sub(exp.start_step),
        metrics_path,
        final_checkpoint,
        first_record,
        last_record,
    })
}

fn mean_component<F>(batch: &GroupBatch, f: F) -> Option<f64>
where
    F: Fn(&crate::rewards::RewardBreakdown) -> Option<f64>,
{
    let vals: Vec<f64> = batch
        .trajectories
        .iter()
        .filter_map(|t| f(&t.reward))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn build_record(
    step: usize,
    cfg: &RunConfig,
    batch: &GroupBatch,
    report: &UpdateReport,
    judge_accuracy: Option<f64>,
    correction_rate: Option<f64>,
) -> MetricsRecord {
    let mean_reasoning = batch
        .trajectories
        .iter()
        .map(|t| t.reasoning_len as f64)
        .sum::<f64>()
        / batch.trajectories.len() as f64;
    MetricsRecord {
        step,
        scenario: cfg.scenario.clone(),
        mean_reward: batch.rewards.iter().sum::<f64>() / batch.rewards.len() as f64,
        reward_compress: mean_component(batch, |r| r.compress),
        reward_compose: mean_component(batch, |r| r.compose),
        reward_edit: mean_component(batch, |r| r.edit),
        reward_cycle: mean_component(batch, |r| r.cycle),
        reward_quality: mean_component(batch, |r| r.quality),
        reward_correct: mean_component(batch, |r| r.correct),
        reward_format: mean_component(batch, |r| r.format),
        kl: report.kl_lm + report.kl_dm,
        clip_fraction_lm: report.clip_fraction_lm,
        clip_fraction_dm: report.clip_fraction_dm,
        grad_norm: report.grad_norm,
        mean_reasoning_length: mean_reasoning,
        judge_accuracy,
        correction_rate,
        wall_ms: 0.0,
    }
}

fn sanitize(mut r: MetricsRecord) -> MetricsRecord {
    let fix = |v: &mut f64| {
        if !v.is_finite() {
            *v = 0.0;
        }
    };
    fix(&mut r.mean_reward);
    fix(&mut r.kl);
    fix(&mut r.grad_norm);
    r
}

fn save_with_reference(
    path: &Path,
    exp: &Experiment,
    step: u64,
    config_toml: &str,
) -> Result<()> {
    // reference tensors ride along under the ref. prefix
    let mut combined = exp.params.clone();
    for i in 0..exp.ref_params.len() {
        let name = exp.ref_params.tensor(i).name.clone();
        let shape = exp.ref_params.tensor(i).shape.clone();
        let values = exp.ref_params.values(i).to_vec();
        combined.add(&format!("ref.{name}"), shape, values)?;
    }
    save_checkpoint(path, &combined, Some(&exp.optimizer), step, config_toml)
}

fn restore_reference(ckpt: &Checkpoint, params: &ParamSet) -> Result<ParamSet> {
    let mut ref_params = ParamSet::new();
    for i in 0..params.len() {
        let name = &params.tensor(i).name;
        let key = format!("ref.{name}");
        let (shape, values) = ckpt
            .tensors
            .get(&key)
            .ok_or_else(|| Error::Format(format!("checkpoint missing {key}")))?;
        ref_params.add(name, shape.clone(), values.clone())?;
    }
    Ok(ref_params)
}
