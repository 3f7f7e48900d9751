//! Machine-checkable compositional prompts and their satisfaction score.
//!
//! A prompt constrains the clustered structure of a point set: how many
//! modes, which regions they sit in, what attribute value they carry, and
//! an optional pairwise relation. Each present constraint contributes
//! equally to the score, so partially-correct outputs still earn signal.

use serde::{Deserialize, Serialize};

use super::points::{
    cluster_centroid, cluster_components, cluster_mean_attr, PointSet, Region,
};
use crate::models::vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    Above,
}

/// Structured toy prompt; every constraint has an oracle verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode_count: usize,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub attrs: Vec<f64>,
    #[serde(default)]
    pub relation: Option<Relation>,
}

impl PromptSpec {
    pub fn single_anywhere() -> Self {
        PromptSpec {
            mode_count: 1,
            regions: vec![Region::Any],
            attrs: vec![],
            relation: None,
        }
    }

    /// Token encoding consumed by the token policy.
    pub fn to_tokens(&self) -> Vec<usize> {
        let mut toks = Vec::new();
        toks.push(match self.mode_count {
            1 => vocab::COUNT_1,
            2 => vocab::COUNT_2,
            _ => vocab::COUNT_3,
        });
        for r in &self.regions {
            toks.push(match r {
                Region::Left => vocab::REGION_LEFT,
                Region::Right => vocab::REGION_RIGHT,
                Region::Top => vocab::REGION_TOP,
                Region::Bottom => vocab::REGION_BOTTOM,
                Region::Any => vocab::REGION_ANY,
            });
        }
        for &a in &self.attrs {
            toks.push(if a < 0.0 { vocab::ATTR_NEG } else { vocab::ATTR_POS });
        }
        if let Some(rel) = self.relation {
            toks.push(match rel {
                Relation::LeftOf => vocab::REL_LEFT_OF,
                Relation::Above => vocab::REL_ABOVE,
            });
        }
        toks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionConfig {
    pub cluster_radius: f64,
    pub attr_tol: f64,
    pub relation_margin: f64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            cluster_radius: 0.35,
            attr_tol: 0.35,
            relation_margin: 0.2,
        }
    }
}

/// Per-constraint verdicts, in a fixed order: count, regions, attributes,
/// relation. Absent constraints are omitted.
pub fn constraint_verdicts(
    samples: &PointSet,
    prompt: &PromptSpec,
    cfg: &CompositionConfig,
) -> Vec<(&'static str, bool)> {
    let clusters = cluster_components(samples, cfg.cluster_radius);
    let mut verdicts = Vec::new();

    verdicts.push(("count", clusters.len() == prompt.mode_count));

    if !prompt.regions.is_empty() {
        // every cluster's strict majority must sit in one of the allowed regions
        let ok = clusters.iter().all(|members| {
            prompt.regions.iter().any(|region| {
                let inside = members
                    .iter()
                    .filter(|&&i| region.contains(samples.points[i][0], samples.points[i][1]))
                    .count();
                2 * inside > members.len()
            })
        });
        verdicts.push(("regions", ok));
    }

    if !prompt.attrs.is_empty() {
        let ok = clusters.iter().all(|members| {
            let mean = cluster_mean_attr(samples, members);
            prompt.attrs.iter().any(|a| (mean - a).abs() <= cfg.attr_tol)
        });
        verdicts.push(("attrs", ok));
    }

    if let Some(rel) = prompt.relation {
        let centroids: Vec<(f64, f64)> = clusters
            .iter()
            .map(|m| cluster_centroid(samples, m))
            .collect();
        let mut ok = false;
        for i in 0..centroids.len() {
            for j in 0..centroids.len() {
                if i == j {
                    continue;
                }
                let sat = match rel {
                    Relation::LeftOf => centroids[i].0 + cfg.relation_margin < centroids[j].0,
                    Relation::Above => centroids[i].1 > centroids[j].1 + cfg.relation_margin,
                };
                if sat {
                    ok = true;
                }
            }
        }
        verdicts.push(("relation", ok));
    }

    verdicts
}

/// Fraction of prompt constraints satisfied, in [0, 1]. An empty sample
/// set scores 0.
pub fn composition_reward(samples: &PointSet, prompt: &PromptSpec, cfg: &CompositionConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let verdicts = constraint_verdicts(samples, prompt, cfg);
    let satisfied = verdicts.iter().filter(|(_, ok)| *ok).count();
    satisfied as f64 / verdicts.len() as f64
}

/// Oracle verdict used as judge ground truth: all constraints satisfied.
pub fn satisfies_prompt(samples: &PointSet, prompt: &PromptSpec, cfg: &CompositionConfig) -> bool {
    !samples.is_empty()
        && constraint_verdicts(samples, prompt, cfg)
            .iter()
            .all(|(_, ok)| *ok)
}
