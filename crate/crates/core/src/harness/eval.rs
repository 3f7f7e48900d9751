//! Deterministic evaluation: judge accuracy on labeled pairs, correction
//! rate across one reflection cycle, reward means per scenario, and the
//! conditioning-strength sweep for editing.

use crate::grpo::Segment;
use crate::harness::config::RunConfig;
use crate::models::{vocab, LmInput, UnifiedPolicy};
use crate::params::ParamSet;
use crate::rewards::{satisfies_prompt, total_edit_reward, FeatureMap, PointSet};
use crate::scenarios::{
    self, prompts, run_scenario, summary_features, JudgePair, Query, ScenarioContext,
    ScenarioKind,
};
use crate::{seeds, Result};

/// Strip a trailing end marker, mirroring sampled-content semantics.
fn content(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&t) if t == vocab::EOS => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Fraction of labeled pairs where the greedy verdict matches the oracle.
/// Malformed verdicts count as wrong.
pub fn judge_accuracy(
    policy: &UnifiedPolicy,
    params: &ParamSet,
    cluster_radius: f64,
    answer_max_len: usize,
    pairs: &[JudgePair],
) -> Result<f64> {
    let mut correct = 0usize;
    for pair in pairs {
        let mut ctx: Vec<LmInput> = pair
            .spec
            .to_tokens()
            .iter()
            .map(|&t| LmInput::token(t))
            .collect();
        let feats = summary_features(&pair.sample, cluster_radius);
        ctx.push(LmInput::with_injection(
            vocab::SEP,
            policy.inject_summary(&feats)?,
        ));
        let decoded = policy.lm.greedy_tokens(params, &ctx, answer_max_len)?;
        if let Some(verdict) = crate::rewards::parse_verdict(content(&decoded)) {
            if verdict == pair.truth {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / pairs.len().max(1) as f64)
}

/// Correction rate: over eval queries whose first generation violates the
/// prompt, the fraction fixed by one reflection cycle. Runs the reflective
/// protocol with a two-iteration budget and fixed seeds.
pub fn correction_rate(ctx: &ScenarioContext, queries: &[Query], eval_seed: u64) -> Result<f64> {
    let mut wrong_first = 0usize;
    let mut corrected = 0usize;
    for (i, query) in queries.iter().enumerate() {
        let seed = seeds::derive(eval_seed, &[seeds::tag::EVAL, i as u64]);
        let traj = run_scenario(ctx, query, seed)?;
        let spec = query.prompt_spec.as_ref().expect("reflection query");
        let samples: Vec<PointSet> = traj
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Dm(d) => PointSet::from_state(d.trajectory.final_state()).ok(),
                _ => None,
            })
            .collect();
        let first_ok = satisfies_prompt(&samples[0], spec, ctx.comp);
        if first_ok {
            continue;
        }
        wrong_first += 1;
        let final_ok = satisfies_prompt(samples.last().unwrap(), spec, ctx.comp);
        if samples.len() > 1 && final_ok {
            corrected += 1;
        }
    }
    if wrong_first == 0 {
        return Ok(1.0);
    }
    Ok(corrected as f64 / wrong_first as f64)
}

/// Mean reward components over deterministic eval rollouts of the
/// configured scenario.
pub struct ScenarioEval {
    pub mean_total: f64,
    pub mean_compose: Option<f64>,
    pub mean_edit: Option<f64>,
    pub mean_cycle: Option<f64>,
    pub mean_correct: Option<f64>,
    pub count: usize,
}

pub fn eval_scenario(
    ctx: &ScenarioContext,
    cfg: &RunConfig,
    n: usize,
    eval_seed: u64,
) -> Result<ScenarioEval> {
    let kind = cfg.scenario_kind()?;
    let mut total = 0.0;
    let mut compose = Vec::new();
    let mut edit = Vec::new();
    let mut cycle = Vec::new();
    let mut correct = Vec::new();
    let mut rng = seeds::stream(eval_seed, &[seeds::tag::EVAL, 0x51]);
    for i in 0..n {
        let query = generate_query(cfg, kind, &mut rng)?;
        let seed = seeds::derive(eval_seed, &[seeds::tag::EVAL, 0x52, i as u64]);
        let traj = run_scenario(ctx, &query, seed)?;
        total += traj.reward.total;
        if let Some(v) = traj.reward.compose {
            compose.push(v);
        }
        if let Some(v) = traj.reward.edit {
            edit.push(v);
        }
        if let Some(v) = traj.reward.cycle {
            cycle.push(v);
        }
        if let Some(v) = traj.reward.correct {
            correct.push(v);
        }
    }
    let mean = |v: &Vec<f64>| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(ScenarioEval {
        mean_total: total / n.max(1) as f64,
        mean_compose: mean(&compose),
        mean_edit: mean(&edit),
        mean_cycle: mean(&cycle),
        mean_correct: mean(&correct),
        count: n,
    })
}

/// One point of the conditioning-strength sweep for the editing scenario.
#[derive(Debug, Clone, Copy)]
pub struct EditOperatingPoint {
    pub cond_scale: f64,
    pub mean_edit: f64,
    pub mean_cycle: f64,
    pub mean_total: f64,
}

/// Evaluate editing rewards at several conditioning strengths on a fixed
/// query set; used to compare trained and untrained operating points.
pub fn edit_strength_sweep(
    policy: &UnifiedPolicy,
    params: &ParamSet,
    cfg: &RunConfig,
    strengths: &[f64],
    n: usize,
    eval_seed: u64,
) -> Result<Vec<EditOperatingPoint>> {
    let grid = cfg.time_grid();
    let sde = cfg.sde_config()?;
    let weights = cfg.reward_weights();
    let comp = cfg.composition_config();
    let raster = cfg.raster_spec();
    let compressor = cfg.compressor_config();
    let features = FeatureMap::new(cfg.rewards.feature_seed, cfg.state_dim(), 64);
    let family = cfg.prompt_family();
    let mut out = Vec::new();
    for &s in strengths {
        let mut scen_cfg = cfg.scenario_config();
        scen_cfg.cond_scale = s;
        let ctx = ScenarioContext {
            policy,
            params,
            grid: &grid,
            sde: &sde,
            weights: &weights,
            comp: &comp,
            raster: &raster,
            compressor: &compressor,
            features: &features,
            cfg: &scen_cfg,
        };
        let mut rng = seeds::stream(eval_seed, &[seeds::tag::EVAL, 0x53]);
        let mut edit_sum = 0.0;
        let mut cycle_sum = 0.0;
        let mut total_sum = 0.0;
        for i in 0..n {
            let query =
                prompts::gen_s4_query(cfg.models.points_per_set, &family, &comp, &mut rng);
            let seed = seeds::derive(eval_seed, &[seeds::tag::EVAL, 0x54, i as u64]);
            let traj = run_scenario(&ctx, &query, seed)?;
            edit_sum += traj.reward.edit.unwrap_or(0.0);
            cycle_sum += traj.reward.cycle.unwrap_or(0.0);
            total_sum += total_edit_reward(
                traj.reward.edit.unwrap_or(0.0),
                traj.reward.cycle.unwrap_or(0.0),
                traj.reward.quality.unwrap_or(0.0),
                (weights.edit, weights.cycle, weights.quality),
            );
        }
        out.push(EditOperatingPoint {
            cond_scale: s,
            mean_edit: edit_sum / n as f64,
            mean_cycle: cycle_sum / n as f64,
            mean_total: total_sum / n as f64,
        });
    }
    Ok(out)
}

/// Draw one query for the configured scenario from the given stream.
pub fn generate_query(
    cfg: &RunConfig,
    kind: ScenarioKind,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Query> {
    let family = cfg.prompt_family();
    let comp = cfg.composition_config();
    Ok(match kind {
        ScenarioKind::S1Text => prompts::gen_s1_query(cfg.prompts.parity_bits, rng),
        ScenarioKind::S2Multimodal => prompts::gen_s2_query(
            cfg.prompts.parity_bits,
            cfg.models.points_per_set,
            &family,
            &comp,
            rng,
        ),
        ScenarioKind::S3TextToImage => {
            prompts::gen_spec_query(ScenarioKind::S3TextToImage, &family, rng)
        }
        ScenarioKind::S4Edit => {
            prompts::gen_s4_query(cfg.models.points_per_set, &family, &comp, rng)
        }
        ScenarioKind::S5CotT2i => prompts::gen_spec_query(ScenarioKind::S5CotT2i, &family, rng),
        ScenarioKind::S6Reflect => prompts::gen_spec_query(ScenarioKind::S6Reflect, &family, rng),
    })
}

/// Held-out labeled pairs for judge evaluation, disjoint from training
/// streams by construction (dedicated tag).
pub fn held_out_pairs(cfg: &RunConfig, n: usize) -> Vec<JudgePair> {
    let mut rng = seeds::stream(cfg.seed, &[seeds::tag::EVAL, 0x55]);
    scenarios::gen_judge_pairs(
        n,
        cfg.models.points_per_set,
        &cfg.prompt_family(),
        &cfg.composition_config(),
        &mut rng,
    )
}
