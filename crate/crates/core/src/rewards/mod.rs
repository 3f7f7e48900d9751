//! Reward functions: every one is a pure, deterministic function of its
//! inputs and configuration.

pub mod composition;
pub mod edit;
pub mod judge;
pub mod points;
pub mod raster;

pub use composition::{
    composition_reward, constraint_verdicts, satisfies_prompt, CompositionConfig, PromptSpec,
    Relation,
};
pub use edit::{
    cycle_reward, edit_reward, quality_reward, total_edit_reward, EditInstruction, FeatureMap,
    Transform,
};
pub use judge::{judge_reward, parse_verdict};
pub use points::{cluster_components, PointSet, Region, POINT_DIM};
pub use raster::{
    compressed_len, compressibility_reward, render_raster, CompressSign, CompressorConfig,
    RasterSpec,
};

use serde::{Deserialize, Serialize};

/// Weights combining named reward components into a trajectory scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub compress: f64,
    pub compose: f64,
    /// lambda_1 on the edit-direction term.
    pub edit: f64,
    /// lambda_2 on the cycle-consistency term.
    pub cycle: f64,
    /// lambda_3 on the quality term.
    pub quality: f64,
    pub correct: f64,
    pub format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            compress: 1.0,
            compose: 1.0,
            edit: 1.0,
            cycle: 1.0,
            quality: 0.5,
            correct: 1.0,
            format: 1.0,
        }
    }
}

/// Named scalar components plus the combined scalar. Components absent
/// from a scenario stay `None` and contribute nothing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub compress: Option<f64>,
    pub compose: Option<f64>,
    pub edit: Option<f64>,
    pub cycle: Option<f64>,
    pub quality: Option<f64>,
    pub correct: Option<f64>,
    pub format: Option<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    /// Recompute `total` as the weighted combination of present components.
    pub fn finalize(&mut self, w: &RewardWeights) {
        let mut total = 0.0;
        for (value, weight) in [
            (self.compress, w.compress),
            (self.compose, w.compose),
            (self.edit, w.edit),
            (self.cycle, w.cycle),
            (self.quality, w.quality),
            (self.correct, w.correct),
            (self.format, w.format),
        ] {
            if let Some(v) = value {
                total += weight * v;
            }
        }
        self.total = total;
    }
}
