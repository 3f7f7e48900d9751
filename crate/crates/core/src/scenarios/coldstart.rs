//! Supervised cold start: flow-matching fine-tuning of the velocity
//! network and connector on targeted (context, sample set) pairs with the
//! token policy frozen. No autoregressive loss is computed for the token
//! policy at any point.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::models::{tokens_to_inputs, UnifiedPolicy};
use crate::params::{Optimizer, ParamSet};
use crate::rewards::PointSet;
use crate::scenarios::summary_features;
use crate::{flow, seeds, Error, Result};

/// One supervised pair: conditioning tokens, the target sample set, and an
/// optional editing reference.
#[derive(Debug, Clone)]
pub struct ColdStartPair {
    pub cond_tokens: Vec<usize>,
    pub target: PointSet,
    pub reference: Option<PointSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColdStartConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Text-condition dropout for plain generation pairs.
    pub text_dropout: f64,
    /// Editing pairs: drop text, drop reference, or drop both.
    pub edit_text_dropout: f64,
    pub edit_ref_dropout: f64,
    pub edit_both_dropout: f64,
    pub ref_noise_mix: f64,
    pub cluster_radius: f64,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        ColdStartConfig {
            steps: 0,
            batch_size: 8,
            learning_rate: 1e-3,
            text_dropout: 0.10,
            edit_text_dropout: 0.05,
            edit_ref_dropout: 0.05,
            edit_both_dropout: 0.05,
            ref_noise_mix: 0.8,
            cluster_radius: 0.35,
        }
    }
}

/// Run `cfg.steps` single-pair flow-matching steps. Requires every token
/// policy tensor to be frozen; returns the per-step loss curve.
pub fn cold_start_finetune(
    policy: &UnifiedPolicy,
    params: &mut ParamSet,
    opt: &mut Optimizer,
    dataset: &[ColdStartPair],
    cfg: &ColdStartConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cold start needs a dataset".into()));
    }
    for i in 0..params.len() {
        let name = params.tensor(i).name.clone();
        if name.starts_with("lm.") && !params.is_frozen(i) {
            return Err(Error::Frozen(format!(
                "cold start requires a frozen token policy, but {name} is trainable"
            )));
        }
    }
    let dim = policy.dm.cfg.state_dim;
    let batch = cfg.batch_size.max(1);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = seeds::stream(seed, &[seeds::tag::COLD_START, step as u64]);
        let mut tape = crate::autodiff::Tape::new();
        let mut terms = Vec::with_capacity(batch);
        for b in 0..batch {
            let pair = &dataset[(step * batch + b) % dataset.len()];
            let t = flow::sample_time_logit_normal(&mut rng);
            let x0 = pair.target.to_state();
            if x0.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "target set dimension {} does not match state dim {dim}",
                    x0.len()
                )));
            }
            let noise: Vec<f64> =
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let x_t: Vec<f64> = x0
                .iter()
                .zip(&noise)
                .map(|(x, e)| (1.0 - t) * x + t * e)
                .collect();
            let target_v: Vec<f64> = noise.iter().zip(&x0).map(|(e, x)| e - x).collect();

            // condition dropout draws, in a fixed order
            let u: f64 = rng.gen_range(0.0..1.0);
            let (drop_text, drop_ref) = match &pair.reference {
                None => (u < cfg.text_dropout, false),
                Some(_) => {
                    if u < cfg.edit_text_dropout {
                        (true, false)
                    } else if u < cfg.edit_text_dropout + cfg.edit_ref_dropout {
                        (false, true)
                    } else if u
                        < cfg.edit_text_dropout + cfg.edit_ref_dropout + cfg.edit_both_dropout
                    {
                        (true, true)
                    } else {
                        (false, false)
                    }
                }
            };
            let reference: Vec<f64> = match (&pair.reference, drop_ref) {
                (Some(r), false) => {
                    let feats = summary_features(r, cfg.cluster_radius);
                    feats
                        .iter()
                        .map(|&f| {
                            cfg.ref_noise_mix * f
                                + (1.0 - cfg.ref_noise_mix)
                                    * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                }
                _ => vec![0.0; policy.summary_dim()],
            };

            let cond = if drop_text || pair.cond_tokens.is_empty() {
                tape.constant(vec![0.0; policy.connector.cfg.cond_dim])
            } else {
                let inputs = tokens_to_inputs(&pair.cond_tokens);
                policy.extract_context_var(&mut tape, params, &inputs)?
            };
            let pred = policy
                .dm
                .forward_var(&mut tape, params, &x_t, t, cond, &reference)?;
            let target_c = tape.constant(target_v);
            let diff = tape.sub(pred, target_c);
            let sq = tape.mul(diff, diff);
            terms.push(tape.mean(sq));
        }
        let total = tape.sum_list(&terms);
        let loss = tape.scale(total, 1.0 / batch as f64);
        curve.push(tape.scalar_value(loss));
        params.zero_grads();
        tape.backward(loss, params)?;
        opt.step(params)?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, UnifiedPolicy};
    use crate::params::OptKind;
    use crate::rewards::CompositionConfig;
    use crate::scenarios::prompts::{gen_prompt_spec, target_set_for_prompt, PromptFamily};

    fn tiny_policy() -> (UnifiedPolicy, ParamSet) {
        let cfg = ModelConfig {
            lm: crate::models::TokenPolicyConfig {
                embed_dim: 6,
                hidden_dim: 10,
                num_layers: 1,
                context_length: 48,
                protocol_bias: 0.0,
                ..Default::default()
            },
            connector: crate::models::ConnectorConfig {
                hidden_dim: 10,
                num_queries: 2,
                value_dim: 4,
                mix_dim: 6,
                cond_dim: 5,
                use_position_encoding: true,
            },
            dm: crate::models::VelocityNetConfig {
                state_dim: 12,
                cond_dim: 5,
                ref_dim: 14,
                hidden_dim: 16,
                output_clip: 4.0,
            },
            summary_dim: 14,
        };
        let mut ps = ParamSet::new();
        let policy = UnifiedPolicy::build(&cfg, &mut ps, 11).unwrap();
        (policy, ps)
    }

    fn tiny_dataset(n: usize) -> Vec<ColdStartPair> {
        let comp = CompositionConfig::default();
        let family = PromptFamily::default();
        let mut rng = seeds::stream(5, &[seeds::tag::DATASET]);
        (0..n)
            .map(|_| {
                let spec = gen_prompt_spec(&family, &mut rng);
                let target = target_set_for_prompt(&spec, 4, &comp, &mut rng);
                ColdStartPair {
                    cond_tokens: spec.to_tokens(),
                    target,
                    reference: None,
                }
            })
            .collect()
    }

    #[test]
    fn zero_steps_change_nothing() {
        let (policy, mut ps) = tiny_policy();
        let before_all: Vec<u64> = vec![
            ps.checksum_prefix("lm."),
            ps.checksum_prefix("conn."),
            ps.checksum_prefix("dm."),
        ];
        ps.freeze_prefix("lm.");
        let mut opt = Optimizer::new(OptKind::Adam, 1e-3, &ps);
        let cfg = ColdStartConfig::default();
        let curve =
            cold_start_finetune(&policy, &mut ps, &mut opt, &tiny_dataset(4), &cfg, 1).unwrap();
        assert!(curve.is_empty());
        assert_eq!(ps.checksum_prefix("lm."), before_all[0]);
        assert_eq!(ps.checksum_prefix("conn."), before_all[1]);
        assert_eq!(ps.checksum_prefix("dm."), before_all[2]);
    }

    #[test]
    fn requires_frozen_token_policy() {
        let (policy, mut ps) = tiny_policy();
        let mut opt = Optimizer::new(OptKind::Adam, 1e-3, &ps);
        let cfg = ColdStartConfig {
            steps: 2,
            ..Default::default()
        };
        let err = cold_start_finetune(&policy, &mut ps, &mut opt, &tiny_dataset(4), &cfg, 1);
        assert!(err.is_err());
    }

    #[test]
    fn loss_decreases_and_token_policy_is_bit_identical() {
        let (policy, mut ps) = tiny_policy();
        ps.freeze_prefix("lm.");
        let lm_before = ps.checksum_prefix("lm.");
        let mut opt = Optimizer::new(OptKind::Adam, 3e-3, &ps);
        let cfg = ColdStartConfig {
            steps: 400,
            ..Default::default()
        };
        let dataset = tiny_dataset(16);
        let curve =
            cold_start_finetune(&policy, &mut ps, &mut opt, &dataset, &cfg, 9).unwrap();
        assert_eq!(curve.len(), 400);
        let head: f64 = curve[..40].iter().sum::<f64>() / 40.0;
        let tail: f64 = curve[curve.len() - 40..].iter().sum::<f64>() / 40.0;
        assert!(tail < head, "loss did not decrease: head {head} tail {tail}");
        assert_eq!(ps.checksum_prefix("lm."), lm_before);
        // connector and velocity tensors both moved
        assert!(ps.checksum_prefix("conn.") != ParamSet::new().checksum_prefix("conn."));
    }
}
