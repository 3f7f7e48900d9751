//! Run configuration: TOML with nested sections, strict unknown-key
//! rejection, range validation that names the offending key, and exact
//! save/load round-tripping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::{SdeConfig, TimeGrid};
use crate::grpo::GrpoConfig;
use crate::models::{
    ConnectorConfig, ModelConfig, TokenPolicyConfig, VelocityNetConfig,
};
use crate::params::OptKind;
use crate::rewards::{CompositionConfig, CompressorConfig, RasterSpec, RewardWeights};
use crate::scenarios::{
    ColdStartConfig, PromptFamily, S3RewardMode, ScenarioConfig, ScenarioKind, SUMMARY_DIM,
};
use crate::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lm_layers: usize,
    pub context_length: usize,
    pub protocol_bias: f64,
    pub num_queries: usize,
    pub value_dim: usize,
    pub mix_dim: usize,
    pub cond_dim: usize,
    pub position_encoding: bool,
    pub dm_hidden: usize,
    pub points_per_set: usize,
    pub velocity_clip: f64,
    pub freeze_lm: bool,
}

impl Default for ModelsSection {
    fn default() -> Self {
        ModelsSection {
            embed_dim: 16,
            hidden_dim: 64,
            lm_layers: 2,
            context_length: 96,
            protocol_bias: 2.0,
            num_queries: 4,
            value_dim: 32,
            mix_dim: 64,
            cond_dim: 16,
            position_encoding: true,
            dm_hidden: 128,
            points_per_set: 8,
            velocity_clip: 4.0,
            freeze_lm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeSection {
    pub noise_scale: f64,
    pub num_steps: usize,
    /// Grid exponent: t_i = 1 - (i/N)^p; 1.0 is uniform, larger keeps
    /// early steps short and per-step noise bounded.
    pub schedule_power: f64,
}

impl Default for SdeSection {
    fn default() -> Self {
        SdeSection {
            noise_scale: 0.7,
            num_steps: 10,
            schedule_power: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub group_size: usize,
    pub clip_lm: f64,
    pub clip_dm: f64,
    pub kl_coeff: f64,
    pub std_guard: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub kl_on_lm: bool,
    pub kl_on_dm: bool,
    pub optimizer: OptKind,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let g = GrpoConfig::default();
        GrpoSection {
            group_size: g.group_size,
            clip_lm: g.clip_lm,
            clip_dm: g.clip_dm,
            kl_coeff: g.kl_coeff,
            std_guard: g.std_guard,
            learning_rate: g.learning_rate,
            update_epochs: g.update_epochs,
            kl_on_lm: g.kl_on_lm,
            kl_on_dm: g.kl_on_dm,
            optimizer: OptKind::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsSection {
    pub w_compress: f64,
    pub w_compose: f64,
    pub lambda_edit: f64,
    pub lambda_cycle: f64,
    pub lambda_quality: f64,
    pub w_correct: f64,
    pub w_format: f64,
    pub compressor_level: u32,
    pub raster_height: usize,
    pub raster_width: usize,
    /// Raster canvas half-width: cells span [-h, h] on both axes.
    pub raster_half_width: f64,
    pub cluster_radius: f64,
    pub attr_tol: f64,
    pub relation_margin: f64,
    pub feature_seed: u64,
}

impl Default for RewardsSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        let c = CompositionConfig::default();
        RewardsSection {
            w_compress: w.compress,
            w_compose: w.compose,
            lambda_edit: w.edit,
            lambda_cycle: w.cycle,
            lambda_quality: w.quality,
            w_correct: w.correct,
            w_format: w.format,
            compressor_level: CompressorConfig::default().level,
            raster_height: 32,
            raster_width: 32,
            raster_half_width: 1.0,
            cluster_radius: c.cluster_radius,
            attr_tol: c.attr_tol,
            relation_margin: c.relation_margin,
            feature_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub temperature: f64,
    pub reasoning_max_len: usize,
    pub answer_max_len: usize,
    pub reflection_max_len: usize,
    pub max_reflect_iters: usize,
    pub reward_threshold: f64,
    pub s3_reward: S3RewardMode,
    pub cond_scale: f64,
    pub ref_noise_mix: f64,
    pub quality_half_width: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        RunSection {
            temperature: s.temperature,
            reasoning_max_len: s.reasoning_max_len,
            answer_max_len: s.answer_max_len,
            reflection_max_len: s.reflection_max_len,
            max_reflect_iters: s.max_reflect_iters,
            reward_threshold: s.reward_threshold,
            s3_reward: s.s3_reward,
            cond_scale: s.cond_scale,
            ref_noise_mix: s.ref_noise_mix,
            quality_half_width: s.quality_half_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsSection {
    pub max_modes: usize,
    pub use_attrs: bool,
    pub use_relations: bool,
    pub parity_bits: usize,
}

impl Default for PromptsSection {
    fn default() -> Self {
        PromptsSection {
            max_modes: 2,
            use_attrs: true,
            use_relations: true,
            parity_bits: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdStartSection {
    pub steps: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub learning_rate: f64,
}

impl Default for ColdStartSection {
    fn default() -> Self {
        ColdStartSection {
            steps: 0,
            batch_size: 8,
            dataset_size: 256,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub checkpoint_interval: usize,
    pub eval_interval: usize,
    pub eval_pairs: usize,
    pub eval_queries: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            checkpoint_interval: 100,
            eval_interval: 25,
            eval_pairs: 200,
            eval_queries: 64,
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub models: ModelsSection,
    #[serde(default)]
    pub sde: SdeSection,
    #[serde(default)]
    pub grpo: GrpoSection,
    #[serde(default)]
    pub rewards: RewardsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub prompts: PromptsSection,
    #[serde(default)]
    pub cold_start: ColdStartSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_iterations() -> usize {
    200
}

impl RunConfig {
    pub fn new(scenario: &str, seed: u64) -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            scenario: scenario.into(),
            seed,
            iterations: default_iterations(),
            models: Default::default(),
            sde: Default::default(),
            grpo: Default::default(),
            rewards: Default::default(),
            run: Default::default(),
            prompts: Default::default(),
            cold_start: Default::default(),
            output: Default::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario_kind()?;
        let in_unit = |key: &str, v: f64| -> Result<()> {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{key} must lie in (0, 1), got {v}")));
            }
            Ok(())
        };
        in_unit("grpo.clip_lm", self.grpo.clip_lm)?;
        in_unit("grpo.clip_dm", self.grpo.clip_dm)?;
        if self.grpo.group_size < 2 {
            return Err(Error::Config("grpo.group_size must be at least 2".into()));
        }
        if self.grpo.kl_coeff < 0.0 {
            return Err(Error::Config("grpo.kl_coeff must be nonnegative".into()));
        }
        if self.grpo.update_epochs == 0 {
            return Err(Error::Config("grpo.update_epochs must be at least 1".into()));
        }
        if self.sde.noise_scale < 0.0 {
            return Err(Error::Config("sde.noise_scale must be nonnegative".into()));
        }
        if self.sde.num_steps == 0 {
            return Err(Error::Config("sde.num_steps must be at least 1".into()));
        }
        if self.sde.schedule_power < 1.0 {
            return Err(Error::Config("sde.schedule_power must be at least 1".into()));
        }
        if self.run.temperature <= 0.0 {
            return Err(Error::Config("run.temperature must be positive".into()));
        }
        if self.run.max_reflect_iters == 0 {
            return Err(Error::Config("run.max_reflect_iters must be at least 1".into()));
        }
        if !(self.run.ref_noise_mix >= 0.0 && self.run.ref_noise_mix <= 1.0) {
            return Err(Error::Config("run.ref_noise_mix must lie in [0, 1]".into()));
        }
        if self.models.points_per_set == 0 || self.models.points_per_set * 3 > 64 {
            return Err(Error::Config(
                "models.points_per_set must keep the state dimension within [3, 64]".into(),
            ));
        }
        if self.prompts.max_modes == 0 || self.prompts.max_modes > 3 {
            return Err(Error::Config("prompts.max_modes must lie in 1..=3".into()));
        }
        if self.rewards.cluster_radius <= 0.0 {
            return Err(Error::Config("rewards.cluster_radius must be positive".into()));
        }
        if self.output.checkpoint_interval == 0 || self.output.eval_interval == 0 {
            return Err(Error::Config(
                "output.checkpoint_interval and output.eval_interval must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn scenario_kind(&self) -> Result<ScenarioKind> {
        ScenarioKind::parse(&self.scenario)
    }

    pub fn state_dim(&self) -> usize {
        3 * self.models.points_per_set
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            lm: TokenPolicyConfig {
                embed_dim: self.models.embed_dim,
                hidden_dim: self.models.hidden_dim,
                num_layers: self.models.lm_layers,
                context_length: self.models.context_length,
                protocol_bias: self.models.protocol_bias,
                ..Default::default()
            },
            connector: ConnectorConfig {
                hidden_dim: self.models.hidden_dim,
                num_queries: self.models.num_queries,
                value_dim: self.models.value_dim,
                mix_dim: self.models.mix_dim,
                cond_dim: self.models.cond_dim,
                use_position_encoding: self.models.position_encoding,
            },
            dm: VelocityNetConfig {
                state_dim: self.state_dim(),
                cond_dim: self.models.cond_dim,
                ref_dim: SUMMARY_DIM,
                hidden_dim: self.models.dm_hidden,
                output_clip: self.models.velocity_clip,
            },
            summary_dim: SUMMARY_DIM,
        }
    }

    pub fn sde_config(&self) -> Result<SdeConfig> {
        SdeConfig::new(self.sde.noise_scale)
    }

    pub fn time_grid(&self) -> TimeGrid {
        if self.sde.schedule_power > 1.0 {
            TimeGrid::power_schedule(self.sde.num_steps, self.sde.schedule_power)
        } else {
            TimeGrid::uniform(self.sde.num_steps)
        }
    }

    pub fn grpo_config(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.grpo.group_size,
            clip_lm: self.grpo.clip_lm,
            clip_dm: self.grpo.clip_dm,
            kl_coeff: self.grpo.kl_coeff,
            std_guard: self.grpo.std_guard,
            learning_rate: self.grpo.learning_rate,
            update_epochs: self.grpo.update_epochs,
            kl_on_lm: self.grpo.kl_on_lm,
            kl_on_dm: self.grpo.kl_on_dm,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            compress: self.rewards.w_compress,
            compose: self.rewards.w_compose,
            edit: self.rewards.lambda_edit,
            cycle: self.rewards.lambda_cycle,
            quality: self.rewards.lambda_quality,
            correct: self.rewards.w_correct,
            format: self.rewards.w_format,
        }
    }

    pub fn composition_config(&self) -> CompositionConfig {
        CompositionConfig {
            cluster_radius: self.rewards.cluster_radius,
            attr_tol: self.rewards.attr_tol,
            relation_margin: self.rewards.relation_margin,
        }
    }

    pub fn raster_spec(&self) -> RasterSpec {
        let h = self.rewards.raster_half_width;
        RasterSpec {
            height: self.rewards.raster_height,
            width: self.rewards.raster_width,
            x_range: (-h, h),
            y_range: (-h, h),
        }
    }

    pub fn compressor_config(&self) -> CompressorConfig {
        CompressorConfig {
            level: self.rewards.compressor_level,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        ScenarioConfig {
            temperature: self.run.temperature,
            reasoning_max_len: self.run.reasoning_max_len,
            answer_max_len: self.run.answer_max_len,
            reflection_max_len: self.run.reflection_max_len,
            max_reflect_iters: self.run.max_reflect_iters,
            reward_threshold: self.run.reward_threshold,
            s3_reward: self.run.s3_reward,
            cond_scale: self.run.cond_scale,
            ref_noise_mix: self.run.ref_noise_mix,
            quality_half_width: self.run.quality_half_width,
        }
    }

    pub fn prompt_family(&self) -> PromptFamily {
        PromptFamily {
            max_modes: self.prompts.max_modes,
            use_attrs: self.prompts.use_attrs,
            use_relations: self.prompts.use_relations,
        }
    }

    pub fn cold_start_config(&self) -> ColdStartConfig {
        ColdStartConfig {
            steps: self.cold_start.steps,
            batch_size: self.cold_start.batch_size,
            learning_rate: self.cold_start.learning_rate,
            cluster_radius: self.rewards.cluster_radius,
            ref_noise_mix: self.run.ref_noise_mix,
            ..Default::default()
        }
    }
}
