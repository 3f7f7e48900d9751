//! The six interaction scenarios as composite-trajectory protocols.
//!
//! Each scenario fixes a segment grammar over token segments and denoising
//! segments; `validate_grammar` rejects malformed trajectories. Scenario
//! runs are pure functions of (parameters, query, seed).

pub mod coldstart;
pub mod prompts;
pub mod runners;
pub mod summary;

pub use coldstart::{cold_start_finetune, ColdStartConfig, ColdStartPair};
pub use prompts::{gen_judge_pairs, gen_prompt_spec, target_set_for_prompt, JudgePair, PromptFamily};
pub use runners::{run_scenario, ScenarioContext};
pub use summary::{summary_features, SUMMARY_DIM};

use serde::{Deserialize, Serialize};

use crate::grpo::{LmRole, Segment};
use crate::rewards::{EditInstruction, PointSet, PromptSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    S1Text,
    S2Multimodal,
    S3TextToImage,
    S4Edit,
    S5CotT2i,
    S6Reflect,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "s1_text" => ScenarioKind::S1Text,
            "s2_multimodal" => ScenarioKind::S2Multimodal,
            "s3_t2i" => ScenarioKind::S3TextToImage,
            "s4_edit" => ScenarioKind::S4Edit,
            "s5_cot_t2i" => ScenarioKind::S5CotT2i,
            "s6_reflect" => ScenarioKind::S6Reflect,
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario {other:?}; expected one of s1_text, s2_multimodal, \
                     s3_t2i, s4_edit, s5_cot_t2i, s6_reflect"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::S1Text => "s1_text",
            ScenarioKind::S2Multimodal => "s2_multimodal",
            ScenarioKind::S3TextToImage => "s3_t2i",
            ScenarioKind::S4Edit => "s4_edit",
            ScenarioKind::S5CotT2i => "s5_cot_t2i",
            ScenarioKind::S6Reflect => "s6_reflect",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One task instance: prompt tokens plus the scenario's optional payloads.
#[derive(Debug, Clone)]
pub struct Query {
    pub kind: ScenarioKind,
    pub prompt_tokens: Vec<usize>,
    pub prompt_spec: Option<PromptSpec>,
    pub reference: Option<PointSet>,
    pub instruction: Option<EditInstruction>,
    pub truth_parity: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    JudgedCorrect,
    RewardThreshold,
    MaxIterations,
}

/// Bookkeeping for the reflective generation loop.
#[derive(Debug, Clone, Serialize)]
pub struct ReflectionState {
    pub iterations: usize,
    pub termination: TerminationCause,
    /// (correct, format) per emitted verdict.
    pub verdicts: Vec<(u8, u8)>,
}

/// Per-run scenario knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub temperature: f64,
    pub reasoning_max_len: usize,
    pub answer_max_len: usize,
    pub reflection_max_len: usize,
    pub max_reflect_iters: usize,
    pub reward_threshold: f64,
    pub s3_reward: S3RewardMode,
    /// Conditioning-strength multiplier on the extracted context.
    pub cond_scale: f64,
    /// Mix weight on the reference summary; the remainder is fresh noise.
    pub ref_noise_mix: f64,
    pub quality_half_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            temperature: 1.0,
            reasoning_max_len: 16,
            answer_max_len: 3,
            reflection_max_len: 6,
            max_reflect_iters: 3,
            reward_threshold: 1.0,
            s3_reward: S3RewardMode::Compose,
            cond_scale: 1.0,
            ref_noise_mix: 0.8,
            quality_half_width: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S3RewardMode {
    Compose,
    Compressible,
    Incompressible,
}

/// Segment-grammar check per scenario.
pub fn validate_grammar(kind: ScenarioKind, segments: &[Segment]) -> Result<()> {
    let fail = |msg: &str| -> Result<()> {
        Err(Error::InvalidInput(format!(
            "malformed {kind} trajectory: {msg}"
        )))
    };
    let role = |seg: &Segment| match seg {
        Segment::Lm(s) => Some(s.role),
        Segment::Dm(_) => None,
    };
    match kind {
        ScenarioKind::S1Text | ScenarioKind::S2Multimodal => {
            if segments.len() != 1 || role(&segments[0]) != Some(LmRole::Answer) {
                return fail("expected exactly one answer segment");
            }
        }
        ScenarioKind::S3TextToImage => {
            if segments.len() != 1 || !matches!(segments[0], Segment::Dm(_)) {
                return fail("expected exactly one denoising segment and no token segments");
            }
        }
        ScenarioKind::S4Edit => {
            if segments.len() != 2
                || !matches!(segments[0], Segment::Dm(_))
                || !matches!(segments[1], Segment::Dm(_))
            {
                return fail("expected forward and reverse denoising segments");
            }
        }
        ScenarioKind::S5CotT2i => {
            if segments.len() != 2
                || role(&segments[0]) != Some(LmRole::Reasoning)
                || !matches!(segments[1], Segment::Dm(_))
            {
                return fail("expected a reasoning segment then a denoising segment");
            }
        }
        ScenarioKind::S6Reflect => {
            // (Dm, Judge, Reflection)* Dm Judge
            let mut i = 0;
            loop {
                if i + 2 > segments.len() {
                    return fail("truncated generate/judge block");
                }
                if !matches!(segments[i], Segment::Dm(_)) {
                    return fail("expected a denoising segment");
                }
                if role(&segments[i + 1]) != Some(LmRole::Judge) {
                    return fail("expected a judge segment");
                }
                i += 2;
                if i == segments.len() {
                    break;
                }
                if role(&segments[i]) != Some(LmRole::Reflection) {
                    return fail("expected a reflection segment between iterations");
                }
                i += 1;
            }
        }
    }
    Ok(())
}
