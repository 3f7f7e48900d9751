//! The tiny differentiable models standing in for the language model,
//! the diffusion expert, and their connector.

pub mod connector;
pub mod token_policy;
pub mod velocity;
pub mod vocab;

pub use connector::{ConnectorConfig, QueryConnector};
pub use token_policy::{tokens_to_inputs, LmInput, TokenPolicy, TokenPolicyConfig, TokenTrajectory};
pub use velocity::{VelocityNet, VelocityNetConfig};

use crate::autodiff::{Tape, Var};
use crate::params::ParamSet;
use crate::{seeds, Error, Result};
use rand::Rng;

/// Sizes for the whole model bundle. The connector attends over the token
/// policy's hidden states and feeds the velocity network's condition slot,
/// so the shared dimensions must line up; `build` checks them.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub lm: TokenPolicyConfig,
    pub connector: ConnectorConfig,
    pub dm: VelocityNetConfig,
    /// Dimension of the fixed sample-set summary vector injected into the
    /// token policy and used as the editing reference conditioning.
    pub summary_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lm: TokenPolicyConfig::default(),
            connector: ConnectorConfig::default(),
            dm: VelocityNetConfig::default(),
            summary_dim: 14,
        }
    }
}

/// Joint policy bundle: token policy, query connector, velocity network,
/// plus the fixed (untrained) projection that embeds sample-set summaries
/// into token-embedding space.
pub struct UnifiedPolicy {
    pub lm: TokenPolicy,
    pub connector: QueryConnector,
    pub dm: VelocityNet,
    summary_proj: Vec<f64>,
    summary_dim: usize,
}

impl UnifiedPolicy {
    /// Register all tensors into `params` and build the bundle. Draws for
    /// each tensor come from one seeded stream in a fixed order.
    pub fn build(cfg: &ModelConfig, params: &mut ParamSet, seed: u64) -> Result<Self> {
        if cfg.connector.hidden_dim != cfg.lm.hidden_dim {
            return Err(Error::Config(
                "connector.hidden_dim must equal lm.hidden_dim".into(),
            ));
        }
        if cfg.dm.cond_dim != cfg.connector.cond_dim {
            return Err(Error::Config(
                "dm.cond_dim must equal connector.cond_dim".into(),
            ));
        }
        if cfg.dm.ref_dim != cfg.summary_dim {
            return Err(Error::Config("dm.ref_dim must equal summary_dim".into()));
        }
        let mut rng = seeds::stream(seed, &[seeds::tag::INIT]);
        let lm = TokenPolicy::new(cfg.lm.clone(), params, &mut rng)?;
        let connector = QueryConnector::new(cfg.connector.clone(), params, &mut rng)?;
        let dm = VelocityNet::new(cfg.dm.clone(), params, &mut rng)?;
        let e = cfg.lm.embed_dim;
        let s = cfg.summary_dim;
        let scale = 1.0 / (s as f64).sqrt();
        let mut proj_rng = seeds::stream(seed, &[seeds::tag::INIT, 0xF1]);
        let summary_proj: Vec<f64> = (0..e * s)
            .map(|_| proj_rng.gen_range(-scale..scale))
            .collect();
        Ok(UnifiedPolicy {
            lm,
            connector,
            dm,
            summary_proj,
            summary_dim: s,
        })
    }

    pub fn summary_dim(&self) -> usize {
        self.summary_dim
    }

    /// Project a summary feature vector into token-embedding space for
    /// additive injection. A zero summary maps to a zero injection.
    pub fn inject_summary(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.summary_dim {
            return Err(Error::InvalidInput(format!(
                "summary has {} features, expected {}",
                features.len(),
                self.summary_dim
            )));
        }
        Ok(crate::numeric::matvec(
            &self.summary_proj,
            features,
            self.lm.cfg.embed_dim,
            self.summary_dim,
        ))
    }

    /// Condition vector for a token sequence: token-policy hidden states
    /// pooled through the connector.
    pub fn extract_context(&self, params: &ParamSet, inputs: &[LmInput]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput(
                "context extraction needs a nonempty sequence".into(),
            ));
        }
        let states = self.lm.hidden_states(params, inputs)?;
        self.connector.extract(params, &states)
    }

    /// Tape version; gradients flow into the connector tensors and the
    /// token policy tensors.
    pub fn extract_context_var(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        inputs: &[LmInput],
    ) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput(
                "context extraction needs a nonempty sequence".into(),
            ));
        }
        let states = self.lm.hidden_states_var(tape, params, inputs)?;
        self.connector.extract_var(tape, params, &states)
    }
}
