//! Group-relative policy optimization over composite trajectories.
//!
//! Rewards are normalized within a group of rollouts sharing one query;
//! every action in a trajectory (token or denoising step) carries the
//! trajectory's single normalized advantage. The token policy takes a
//! per-token clipped surrogate, the velocity policy a per-step clipped
//! surrogate over the analytic Gaussian step densities, and an exact KL
//! term against a frozen reference policy regularizes both.
//!
//! Old-policy log-probabilities are the ones stored in the trajectories at
//! rollout time; the update rebuilds the new policy's log-probabilities on
//! the tape with the same kernels, so first-epoch ratios are exactly 1.

use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::flow::{self, DenoisingTrajectory, SdeConfig};
use crate::models::{LmInput, TokenTrajectory, UnifiedPolicy};
use crate::numeric;
use crate::params::{Optimizer, ParamSet};
use crate::rewards::RewardBreakdown;
use crate::scenarios::{ReflectionState, ScenarioKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmRole {
    Answer,
    Reasoning,
    Judge,
    Reflection,
}

/// One discrete segment: the context it was sampled under and the sampled
/// actions with their old-policy log-probs.
#[derive(Debug, Clone)]
pub struct LmSegment {
    pub context: Vec<LmInput>,
    pub sampled: TokenTrajectory,
    pub temperature: f64,
    pub role: LmRole,
}

/// One continuous segment: the token sequence whose hidden states produced
/// the condition, the fixed reference conditioning, and the denoising trace.
#[derive(Debug, Clone)]
pub struct DmSegment {
    pub cond_inputs: Vec<LmInput>,
    pub cond_scale: f64,
    pub ref_condition: Vec<f64>,
    pub trajectory: DenoisingTrajectory,
}

#[derive(Debug, Clone)]
pub enum Segment {
    Lm(LmSegment),
    Dm(DmSegment),
}

/// The interleaved record one reward evaluates.
#[derive(Debug, Clone)]
pub struct CompositeTrajectory {
    pub kind: ScenarioKind,
    pub segments: Vec<Segment>,
    pub reward: RewardBreakdown,
    pub reasoning_len: usize,
    pub reflection: Option<ReflectionState>,
    pub truncated: bool,
}

impl CompositeTrajectory {
    pub fn lm_segments(&self) -> impl Iterator<Item = &LmSegment> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Lm(seg) => Some(seg),
            _ => None,
        })
    }

    pub fn dm_segments(&self) -> impl Iterator<Item = &DmSegment> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Dm(seg) => Some(seg),
            _ => None,
        })
    }

    pub fn token_count(&self) -> usize {
        self.lm_segments().map(|s| s.sampled.len()).sum()
    }

    pub fn step_count(&self) -> usize {
        self.dm_segments().map(|s| s.trajectory.steps.len()).sum()
    }
}

/// G trajectories sharing one query, with rewards and normalized advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub trajectories: Vec<CompositeTrajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn from_trajectories(
        trajectories: Vec<CompositeTrajectory>,
        std_guard: f64,
    ) -> Result<Self> {
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward.total).collect();
        let advantages = compute_advantages(&rewards, std_guard)?;
        Ok(GroupBatch {
            trajectories,
            rewards,
            advantages,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_lm: f64,
    pub clip_dm: f64,
    pub kl_coeff: f64,
    pub std_guard: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub kl_on_lm: bool,
    pub kl_on_dm: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_lm: 0.2,
            clip_dm: 0.2,
            kl_coeff: 0.01,
            std_guard: 1e-8,
            learning_rate: 1e-3,
            update_epochs: 1,
            kl_on_lm: true,
            kl_on_dm: true,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("grpo.group_size must be at least 2".into()));
        }
        for (name, v) in [("grpo.clip_lm", self.clip_lm), ("grpo.clip_dm", self.clip_dm)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.kl_coeff < 0.0 {
            return Err(Error::Config("grpo.kl_coeff must be nonnegative".into()));
        }
        if self.std_guard < 0.0 {
            return Err(Error::Config("grpo.std_guard must be nonnegative".into()));
        }
        if self.update_epochs == 0 {
            return Err(Error::Config("grpo.update_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Group-normalized advantages: (R - mean) / (population std + guard).
/// Invariant under shifting all rewards and, up to guard effects, under
/// positive rescaling. Constant rewards yield all-zero advantages.
pub fn compute_advantages(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(
            "advantage normalization needs a group of at least 2".into(),
        ));
    }
    let mean = numeric::mean(rewards);
    let std = numeric::population_std(rewards);
    let denom = std + std_guard;
    if denom == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Clipped-surrogate term over one trajectory's actions, averaged 1/n:
/// -(1/n) sum_t min(r_t A, clip(r_t, 1-eps, 1+eps) A). Returns the loss
/// node and the realized ratios (for clip-fraction diagnostics). Gradients
/// flow only through `new_logps`; the old values are constants.
fn clip_surrogate(
    tape: &mut Tape,
    new_logps: &[Var],
    old_logps: &[f64],
    advantage: f64,
    eps: f64,
) -> Result<(Var, Vec<f64>)> {
    if new_logps.len() != old_logps.len() {
        return Err(Error::InvalidInput("new/old log-prob counts differ".into()));
    }
    if new_logps.is_empty() {
        return Ok((tape.scalar(0.0), Vec::new()));
    }
    let mut terms = Vec::with_capacity(new_logps.len());
    let mut ratios = Vec::with_capacity(new_logps.len());
    for (new, old) in new_logps.iter().zip(old_logps) {
        let delta = tape.add_scalar(*new, -old);
        let ratio = tape.exp(delta);
        ratios.push(tape.scalar_value(ratio));
        let unclipped = tape.scale(ratio, advantage);
        let clipped_ratio = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
        let clipped = tape.scale(clipped_ratio, advantage);
        terms.push(tape.min(unclipped, clipped));
    }
    let total = tape.sum_list(&terms);
    let loss = tape.scale(total, -1.0 / new_logps.len() as f64);
    Ok((loss, ratios))
}

/// Per-token clipped surrogate for the token policy (zero for empty T).
pub fn lm_clip_loss(
    tape: &mut Tape,
    new_logps: &[Var],
    old_logps: &[f64],
    advantage: f64,
    eps: f64,
) -> Result<(Var, Vec<f64>)> {
    clip_surrogate(tape, new_logps, old_logps, advantage, eps)
}

/// Per-step clipped surrogate for the denoising policy.
pub fn dm_clip_loss(
    tape: &mut Tape,
    new_logps: &[Var],
    old_logps: &[f64],
    advantage: f64,
    eps: f64,
) -> Result<(Var, Vec<f64>)> {
    clip_surrogate(tape, new_logps, old_logps, advantage, eps)
}

/// Exact categorical KL(p || q) from probability vectors; 0 ln 0 = 0.
pub fn categorical_kl_probs(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            acc += pi * (pi.ln() - qi.ln());
        }
    }
    acc
}

/// Exact categorical KL from logits.
pub fn categorical_kl_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = numeric::log_softmax(p_logits);
    let lq = numeric::log_softmax(q_logits);
    let mut acc = 0.0;
    for (a, b) in lp.iter().zip(&lq) {
        acc += a.exp() * (a - b);
    }
    acc
}

/// Closed-form KL between Gaussian step distributions sharing their stds:
/// per-dimension-averaged squared mean gap over 2 std^2, summed over steps.
pub fn kl_continuous(means_new: &[Vec<f64>], means_ref: &[Vec<f64>], stds: &[f64]) -> Result<f64> {
    if means_new.len() != means_ref.len() || means_new.len() != stds.len() {
        return Err(Error::InvalidInput("step counts differ".into()));
    }
    let mut total = 0.0;
    for ((mn, mr), &std) in means_new.iter().zip(means_ref).zip(stds) {
        if std <= 0.0 {
            return Err(Error::NoDensity("zero std in continuous KL".into()));
        }
        if mn.len() != mr.len() {
            return Err(Error::InvalidInput("mean dimensions differ".into()));
        }
        let mut sq = 0.0;
        for (a, b) in mn.iter().zip(mr) {
            let d = a - b;
            sq += d * d;
        }
        total += sq / (2.0 * std * std * mn.len() as f64);
    }
    Ok(total)
}

/// Gaussian step log-density on the tape, matching
/// [`flow::step_logprob`] bit for bit for identical inputs.
pub fn gaussian_logprob_var(tape: &mut Tape, next: &[f64], mean: Var, std: f64) -> Var {
    let (inv_2var, log_norm) = flow::gaussian_logprob_parts(std);
    let next_c = tape.constant(next.to_vec());
    let diff = tape.sub(next_c, mean);
    let sq = tape.mul(diff, diff);
    let scaled = tape.scale(sq, inv_2var);
    let m = tape.mean(scaled);
    tape.add_scalar(m, log_norm)
}

/// Per-component scalars from one update step.
#[derive(Debug, Clone, Serialize)]
pub struct UpdateReport {
    pub lm_loss: f64,
    pub dm_loss: f64,
    pub kl_lm: f64,
    pub kl_dm: f64,
    pub total_loss: f64,
    pub clip_fraction_lm: f64,
    pub clip_fraction_dm: f64,
    pub grad_norm: f64,
    pub lm_tokens: usize,
    pub dm_steps: usize,
    /// False when a non-finite loss aborted the update before stepping.
    pub finite: bool,
}

impl UpdateReport {
    fn empty() -> Self {
        UpdateReport {
            lm_loss: 0.0,
            dm_loss: 0.0,
            kl_lm: 0.0,
            kl_dm: 0.0,
            total_loss: 0.0,
            clip_fraction_lm: 0.0,
            clip_fraction_dm: 0.0,
            grad_norm: 0.0,
            lm_tokens: 0,
            dm_steps: 0,
            finite: true,
        }
    }
}

/// One GRPO update on a group batch: builds the joint clipped surrogate
/// plus KL penalty on a fresh tape, backpropagates, and applies one
/// optimizer step to every unfrozen tensor. With `update_epochs > 1` the
/// graph is rebuilt against the same stored old-policy log-probs.
pub fn grpo_update(
    batch: &GroupBatch,
    cfg: &GrpoConfig,
    policy: &UnifiedPolicy,
    params: &mut ParamSet,
    ref_params: &ParamSet,
    sde: &SdeConfig,
    opt: &mut Optimizer,
) -> Result<UpdateReport> {
    cfg.validate()?;
    let group = batch.trajectories.len();
    if group < 2 || batch.advantages.len() != group {
        return Err(Error::InvalidInput("malformed group batch".into()));
    }
    let mut report = UpdateReport::empty();

    for _epoch in 0..cfg.update_epochs {
        let mut tape = Tape::new();
        let mut lm_terms = Vec::new();
        let mut dm_terms = Vec::new();
        let mut lm_ratios: Vec<f64> = Vec::new();
        let mut dm_ratios: Vec<f64> = Vec::new();
        let mut kl_lm_terms: Vec<Var> = Vec::new();
        let mut kl_lm_count = 0usize;
        let mut kl_dm_terms: Vec<Var> = Vec::new();
        let mut lm_tokens = 0usize;
        let mut dm_steps = 0usize;

        for (traj, &adv) in batch.trajectories.iter().zip(&batch.advantages) {
            // --- token segments ---
            let mut new_logps = Vec::new();
            let mut old_logps = Vec::new();
            for seg in traj.lm_segments() {
                if seg.sampled.is_empty() {
                    continue;
                }
                let (logps, lsms) = policy.lm.sampled_logprob_vars(
                    &mut tape,
                    params,
                    &seg.context,
                    &seg.sampled.tokens,
                    seg.temperature,
                )?;
                if cfg.kl_on_lm && cfg.kl_coeff > 0.0 {
                    let ref_lsms = policy.lm.sampled_log_softmax(
                        ref_params,
                        &seg.context,
                        &seg.sampled.tokens,
                        seg.temperature,
                    )?;
                    for (lsm, ref_lsm) in lsms.iter().zip(&ref_lsms) {
                        let p = tape.exp(*lsm);
                        let ref_c = tape.constant(ref_lsm.clone());
                        let diff = tape.sub(*lsm, ref_c);
                        let prod = tape.mul(p, diff);
                        kl_lm_terms.push(tape.sum(prod));
                        kl_lm_count += 1;
                    }
                }
                new_logps.extend(logps);
                old_logps.extend_from_slice(&seg.sampled.log_probs);
            }
            lm_tokens += new_logps.len();
            let (lm_term, ratios) =
                lm_clip_loss(&mut tape, &new_logps, &old_logps, adv, cfg.clip_lm)?;
            lm_ratios.extend(ratios);
            lm_terms.push(lm_term);

            // --- denoising segments ---
            let mut dm_new = Vec::new();
            let mut dm_old = Vec::new();
            let mut traj_kl_dm: Vec<Var> = Vec::new();
            for seg in traj.dm_segments() {
                let c_raw = policy.extract_context_var(&mut tape, params, &seg.cond_inputs)?;
                let c = tape.scale(c_raw, seg.cond_scale);
                let ref_cond = if cfg.kl_on_dm && cfg.kl_coeff > 0.0 {
                    let cr = policy.extract_context(ref_params, &seg.cond_inputs)?;
                    Some(cr.iter().map(|v| v * seg.cond_scale).collect::<Vec<f64>>())
                } else {
                    None
                };
                let dtraj = &seg.trajectory;
                for (k, step) in dtraj.steps.iter().enumerate() {
                    let sigma = dtraj.times[k];
                    let dt = dtraj.times[k + 1] - dtraj.times[k];
                    let (coef_x, coef_v, std) = flow::sde_coefficients(sigma, dt, sde)?;
                    let old_lp = step.log_prob.ok_or_else(|| {
                        Error::NoDensity(
                            "deterministic rollout has no step densities; use noise_scale > 0"
                                .into(),
                        )
                    })?;
                    let x_k = &dtraj.states[k];
                    let v_var = policy.dm.forward_var(
                        &mut tape,
                        params,
                        x_k,
                        sigma,
                        c,
                        &seg.ref_condition,
                    )?;
                    let xc = tape.constant(x_k.iter().map(|v| coef_x * v).collect());
                    let vv = tape.scale(v_var, coef_v);
                    let mean_var = tape.add(xc, vv);
                    let lp = gaussian_logprob_var(&mut tape, &step.next, mean_var, std);
                    dm_new.push(lp);
                    dm_old.push(old_lp);
                    if let Some(cr) = &ref_cond {
                        let v_ref =
                            policy
                                .dm
                                .forward(ref_params, x_k, sigma, cr, &seg.ref_condition)?;
                        let mean_ref: Vec<f64> = x_k
                            .iter()
                            .zip(&v_ref)
                            .map(|(xi, vi)| coef_x * xi + coef_v * vi)
                            .collect();
                        let d = x_k.len() as f64;
                        let mref = tape.constant(mean_ref);
                        let diff = tape.sub(mean_var, mref);
                        let sq = tape.mul(diff, diff);
                        let s = tape.sum(sq);
                        traj_kl_dm.push(tape.scale(s, 1.0 / (2.0 * std * std * d)));
                    }
                }
            }
            dm_steps += dm_new.len();
            let (dm_term, ratios) = dm_clip_loss(&mut tape, &dm_new, &dm_old, adv, cfg.clip_dm)?;
            dm_ratios.extend(ratios);
            dm_terms.push(dm_term);
            if !traj_kl_dm.is_empty() {
                kl_dm_terms.push(tape.sum_list(&traj_kl_dm));
            }
        }

        let lm_sum = tape.sum_list(&lm_terms);
        let lm_loss = tape.scale(lm_sum, 1.0 / group as f64);
        let dm_sum = tape.sum_list(&dm_terms);
        let dm_loss = tape.scale(dm_sum, 1.0 / group as f64);

        let kl_lm = if kl_lm_count > 0 {
            let s = tape.sum_list(&kl_lm_terms);
            tape.scale(s, 1.0 / kl_lm_count as f64)
        } else {
            tape.scalar(0.0)
        };
        let kl_dm = if !kl_dm_terms.is_empty() {
            let s = tape.sum_list(&kl_dm_terms);
            tape.scale(s, 1.0 / group as f64)
        } else {
            tape.scalar(0.0)
        };

        let policy_loss = tape.add(lm_loss, dm_loss);
        let kl_total = tape.add(kl_lm, kl_dm);
        let kl_scaled = tape.scale(kl_total, cfg.kl_coeff);
        let total = tape.add(policy_loss, kl_scaled);

        report = UpdateReport {
            lm_loss: tape.scalar_value(lm_loss),
            dm_loss: tape.scalar_value(dm_loss),
            kl_lm: tape.scalar_value(kl_lm),
            kl_dm: tape.scalar_value(kl_dm),
            total_loss: tape.scalar_value(total),
            clip_fraction_lm: clip_fraction(&lm_ratios, cfg.clip_lm),
            clip_fraction_dm: clip_fraction(&dm_ratios, cfg.clip_dm),
            grad_norm: 0.0,
            lm_tokens,
            dm_steps,
            finite: true,
        };
        if !report.total_loss.is_finite() {
            report.finite = false;
            return Ok(report);
        }
        params.zero_grads();
        tape.backward(total, params)?;
        report.grad_norm = params.grad_norm();
        if !report.grad_norm.is_finite() {
            report.finite = false;
            return Ok(report);
        }
        opt.step(params)?;
    }
    Ok(report)
}

fn clip_fraction(ratios: &[f64], eps: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|r| (*r - 1.0).abs() > eps).count() as f64 / ratios.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::OptKind;
    use crate::seeds;
    use rand::Rng;

    #[test]
    fn advantages_hand_values() {
        let a = compute_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((a[0] + expect).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12);
        assert!((a[2] - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_give_zero_advantages() {
        let a = compute_advantages(&[0.7, 0.7, 0.7, 0.7], 1e-8).unwrap();
        assert_eq!(a, vec![0.0; 4]);
    }

    #[test]
    fn advantages_shift_and_scale_invariant() {
        let base = compute_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let shifted = compute_advantages(&[11.0, 12.0, 13.0], 0.0).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-9);
        }
        let scaled = compute_advantages(&[2.5, 5.0, 7.5], 0.0).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a - b).abs() < 1e-9);
        }
        // ordering preserved
        let ranks = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            idx
        };
        assert_eq!(ranks(&base), ranks(&scaled));
    }

    #[test]
    fn advantages_require_group_of_two() {
        assert!(compute_advantages(&[1.0], 0.0).is_err());
    }

    fn loss_value_single(new_lp: f64, old_lp: f64, adv: f64, eps: f64) -> f64 {
        let mut tape = Tape::new();
        let new = tape.scalar(new_lp);
        let (loss, _) = lm_clip_loss(&mut tape, &[new], &[old_lp], adv, eps).unwrap();
        tape.scalar_value(loss)
    }

    #[test]
    fn lm_clip_identity_ratio() {
        // all ratios 1, advantage 0.5 over 3 tokens -> loss -0.5
        let mut tape = Tape::new();
        let new: Vec<Var> = (0..3).map(|_| tape.scalar(-1.3)).collect();
        let (loss, ratios) = lm_clip_loss(&mut tape, &new, &[-1.3; 3], 0.5, 0.2).unwrap();
        assert!((tape.scalar_value(loss) + 0.5).abs() < 1e-12);
        assert!(ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn lm_clip_hand_values_and_clipped_gradient() {
        // r = 1.5, eps 0.2, A = 1 -> min(1.5, 1.2) -> loss -1.2, zero grad
        let v = loss_value_single(1.5f64.ln(), 0.0, 1.0, 0.2);
        assert!((v + 1.2).abs() < 1e-12);

        let mut ps = ParamSet::new();
        let idx = ps.add("p", vec![1], vec![1.5f64.ln()]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, idx);
        let new = tape.gather(p, 0);
        let (loss, _) = lm_clip_loss(&mut tape, &[new], &[0.0], 1.0, 0.2).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grads(idx), &[0.0], "clipped adverse term must not push");
    }

    #[test]
    fn lm_clip_pessimistic_min_on_negative_advantage() {
        // r = 0.5, eps 0.2, A = -1: min(-0.5, -0.8) = -0.8 -> loss +0.8
        let v = loss_value_single(0.5f64.ln(), 0.0, -1.0, 0.2);
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn one_sided_clipping_also_covers_low_ratios() {
        // r = 0.5 < 1-eps with A = -1: clipped branch selected -> zero grad
        let mut ps = ParamSet::new();
        let idx = ps.add("p", vec![1], vec![0.5f64.ln()]).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&ps, idx);
        let new = tape.gather(p, 0);
        let (loss, _) = lm_clip_loss(&mut tape, &[new], &[0.0], -1.0, 0.2).unwrap();
        tape.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grads(idx), &[0.0]);
    }

    #[test]
    fn clip_inactive_matches_unclipped_gradient() {
        // ratio inside the window: gradient equals the unclipped surrogate's
        let new_lp = 1.1f64.ln();
        let adv = 0.7;
        let mut ps = ParamSet::new();
        let idx = ps.add("p", vec![1], vec![new_lp]).unwrap();

        let clipped_grad = {
            let mut tape = Tape::new();
            let p = tape.param(&ps, idx);
            let new = tape.gather(p, 0);
            let (loss, _) = lm_clip_loss(&mut tape, &[new], &[0.0], adv, 0.2).unwrap();
            ps.zero_grads();
            tape.backward(loss, &mut ps).unwrap();
            ps.grads(idx)[0]
        };
        let unclipped_grad = {
            let mut tape = Tape::new();
            let p = tape.param(&ps, idx);
            let new = tape.gather(p, 0);
            let r = tape.exp(new);
            let term = tape.scale(r, -adv);
            ps.zero_grads();
            tape.backward(term, &mut ps).unwrap();
            ps.grads(idx)[0]
        };
        assert!((clipped_grad - unclipped_grad).abs() < 1e-15);
        // analytic: d/dl [-e^l * A] = -r A
        assert!((clipped_grad + 1.1 * adv).abs() < 1e-12);
    }

    #[test]
    fn dm_clip_hand_values() {
        // all r = 1, A = -2 -> +2
        let mut tape = Tape::new();
        let new: Vec<Var> = (0..4).map(|_| tape.scalar(0.33)).collect();
        let (loss, _) = dm_clip_loss(&mut tape, &new, &[0.33; 4], -2.0, 0.2).unwrap();
        assert!((tape.scalar_value(loss) - 2.0).abs() < 1e-12);
        // one step, r = 1.3, eps 0.1, A = 1 -> clip at 1.1 -> -1.1
        let mut tape = Tape::new();
        let new = tape.scalar(1.3f64.ln());
        let (loss, _) = dm_clip_loss(&mut tape, &[new], &[0.0], 1.0, 0.1).unwrap();
        assert!((tape.scalar_value(loss) + 1.1).abs() < 1e-12);
    }

    #[test]
    fn dm_clip_is_order_symmetric() {
        let news = [0.31, -0.22, 0.57];
        let olds = [0.3, -0.2, 0.5];
        let forward = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = news.iter().map(|&v| tape.scalar(v)).collect();
            let (loss, _) = dm_clip_loss(&mut tape, &vars, &olds, 0.9, 0.2).unwrap();
            tape.scalar_value(loss)
        };
        let reversed = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = news.iter().rev().map(|&v| tape.scalar(v)).collect();
            let olds_rev: Vec<f64> = olds.iter().rev().cloned().collect();
            let (loss, _) = dm_clip_loss(&mut tape, &vars, &olds_rev, 0.9, 0.2).unwrap();
            tape.scalar_value(loss)
        };
        assert!((forward - reversed).abs() < 1e-12);
    }

    #[test]
    fn empty_token_list_contributes_zero() {
        let mut tape = Tape::new();
        let (loss, ratios) = lm_clip_loss(&mut tape, &[], &[], 1.0, 0.2).unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
        assert!(ratios.is_empty());
    }

    #[test]
    fn categorical_kl_hand_values_and_gibbs() {
        assert_eq!(categorical_kl_probs(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let kl = categorical_kl_probs(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((kl - 2.0f64.ln()).abs() < 1e-12);

        let mut rng = seeds::stream(1, &[1]);
        for _ in 0..10_000 {
            let n = rng.gen_range(2..6);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect::<Vec<f64>>()
            };
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            assert!(categorical_kl_probs(&p, &q) >= -1e-12);
        }
    }

    #[test]
    fn continuous_kl_hand_values() {
        assert_eq!(
            kl_continuous(&[vec![0.4, 0.4]], &[vec![0.4, 0.4]], &[0.5]).unwrap(),
            0.0
        );
        let kl = kl_continuous(&[vec![0.1]], &[vec![0.0]], &[0.5]).unwrap();
        assert!((kl - 0.02).abs() < 1e-12);
        let doubled = kl_continuous(&[vec![0.2]], &[vec![0.0]], &[0.5]).unwrap();
        assert!((doubled - 4.0 * kl).abs() < 1e-12);
        assert!(kl_continuous(&[vec![0.1]], &[vec![0.0]], &[0.0]).is_err());
    }

    #[test]
    fn gaussian_logprob_var_matches_plain() {
        use crate::flow::{step_logprob, StepDistribution};
        let mut tape = Tape::new();
        let mean = vec![0.4, -0.2, 0.9];
        let next = vec![0.5, -0.1, 0.7];
        let std = 0.37;
        let mvar = tape.constant(mean.clone());
        let lp = gaussian_logprob_var(&mut tape, &next, mvar, std);
        let plain = step_logprob(&next, &StepDistribution { mean, std }).unwrap();
        assert_eq!(tape.scalar_value(lp), plain);
    }

    /// Two-action bandit trained with the clipped surrogate: the policy is
    /// logits [theta, 0]; reward favors action 0.
    #[test]
    fn bandit_policy_improves_with_updates() {
        let mut ps = ParamSet::new();
        let theta = ps.add("theta", vec![1], vec![0.0]).unwrap();
        let mut opt = Optimizer::new(OptKind::Adam, 0.05, &ps);
        let mut rng = seeds::stream(17, &[1]);
        let group = 8;
        for _step in 0..200 {
            // roll out under the current policy
            let t = ps.values(theta)[0];
            let lsm = numeric::log_softmax(&[t, 0.0]);
            let mut actions = Vec::new();
            let mut old_lps = Vec::new();
            let mut rewards = Vec::new();
            for _ in 0..group {
                let u: f64 = rng.gen_range(0.0..1.0);
                let a = if u < lsm[0].exp() { 0 } else { 1 };
                actions.push(a);
                old_lps.push(lsm[a]);
                rewards.push(if a == 0 { 1.0 } else { 0.0 });
            }
            let advs = compute_advantages(&rewards, 1e-8).unwrap();
            let mut tape = Tape::new();
            let mut terms = Vec::new();
            for i in 0..group {
                let p = tape.param(&ps, theta);
                let th = tape.gather(p, 0);
                let zero = tape.scalar(0.0);
                let logits = tape.concat(&[th, zero]);
                let lsm_v = tape.log_softmax(logits);
                let lp = tape.gather(lsm_v, actions[i]);
                let (term, _) =
                    lm_clip_loss(&mut tape, &[lp], &[old_lps[i]], advs[i], 0.2).unwrap();
                terms.push(term);
            }
            let s = tape.sum_list(&terms);
            let loss = tape.scale(s, 1.0 / group as f64);
            ps.zero_grads();
            tape.backward(loss, &mut ps).unwrap();
            opt.step(&mut ps).unwrap();
        }
        let t = ps.values(theta)[0];
        let p0 = numeric::log_softmax(&[t, 0.0])[0].exp();
        assert!(p0 > 0.9, "P(action 0) = {p0}");
    }

    /// With larger KL coefficients the trained policy stays closer to the
    /// reference, measured by exact categorical KL on the bandit. Plain
    /// gradient descent keeps the beta scaling proportional (adaptive
    /// moments would renormalize it away on a one-parameter problem).
    #[test]
    fn kl_coefficient_monotonically_constrains_drift() {
        let run = |beta: f64| -> f64 {
            let mut ps = ParamSet::new();
            let theta = ps.add("theta", vec![1], vec![0.0]).unwrap();
            let ref_lsm = numeric::log_softmax(&[0.0, 0.0]);
            let mut opt = Optimizer::new(OptKind::Sgd, 0.3, &ps);
            // one shared stream across beta values: fixed task, fixed seed
            let mut rng = seeds::stream(23, &[1]);
            let group = 8;
            for _ in 0..600 {
                let t = ps.values(theta)[0];
                let lsm = numeric::log_softmax(&[t, 0.0]);
                let mut actions = Vec::new();
                let mut old_lps = Vec::new();
                let mut rewards = Vec::new();
                for _ in 0..group {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let a = if u < lsm[0].exp() { 0 } else { 1 };
                    actions.push(a);
                    old_lps.push(lsm[a]);
                    rewards.push(if a == 0 { 1.0 } else { 0.0 });
                }
                let advs = compute_advantages(&rewards, 1e-8).unwrap();
                let mut tape = Tape::new();
                let mut terms = Vec::new();
                for i in 0..group {
                    let p = tape.param(&ps, theta);
                    let th = tape.gather(p, 0);
                    let zero = tape.scalar(0.0);
                    let logits = tape.concat(&[th, zero]);
                    let lsm_v = tape.log_softmax(logits);
                    let lp = tape.gather(lsm_v, actions[i]);
                    let (term, _) =
                        lm_clip_loss(&mut tape, &[lp], &[old_lps[i]], advs[i], 0.2).unwrap();
                    terms.push(term);
                }
                let s = tape.sum_list(&terms);
                let policy_loss = tape.scale(s, 1.0 / group as f64);
                // exact KL(pi || ref) on the single context
                let p = tape.param(&ps, theta);
                let th = tape.gather(p, 0);
                let zero = tape.scalar(0.0);
                let logits = tape.concat(&[th, zero]);
                let lsm_v = tape.log_softmax(logits);
                let pvec = tape.exp(lsm_v);
                let refc = tape.constant(ref_lsm.to_vec());
                let diff = tape.sub(lsm_v, refc);
                let prod = tape.mul(pvec, diff);
                let kl = tape.sum(prod);
                let klb = tape.scale(kl, beta);
                let loss = tape.add(policy_loss, klb);
                ps.zero_grads();
                tape.backward(loss, &mut ps).unwrap();
                opt.step(&mut ps).unwrap();
            }
            let t = ps.values(theta)[0];
            let lsm = numeric::log_softmax(&[t, 0.0]);
            categorical_kl_probs(&[lsm[0].exp(), lsm[1].exp()], &[0.5, 0.5])
        };
        let kl_low = run(0.001);
        let kl_mid = run(0.01);
        let kl_high = run(0.1);
        assert!(
            kl_low > kl_mid && kl_mid > kl_high,
            "KL drift not monotone in beta: {kl_low} {kl_mid} {kl_high}"
        );
    }
}
