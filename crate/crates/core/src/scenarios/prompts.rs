//! Seeded generators for queries, target sample sets, and labeled judge
//! pairs. Every generated prompt is satisfiable and every target set is
//! verified against the composition oracle at construction time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::models::vocab;
use crate::rewards::{
    satisfies_prompt, CompositionConfig, EditInstruction, PointSet, PromptSpec, Region, Relation,
};
use crate::scenarios::{Query, ScenarioKind};

/// Knobs for the prompt-spec distribution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PromptFamily {
    pub max_modes: usize,
    pub use_attrs: bool,
    pub use_relations: bool,
}

impl Default for PromptFamily {
    fn default() -> Self {
        PromptFamily {
            max_modes: 2,
            use_attrs: true,
            use_relations: true,
        }
    }
}

const SINGLE_REGIONS: [Region; 4] = [Region::Left, Region::Right, Region::Top, Region::Bottom];

/// A region pair with disjoint half-planes plus its natural relation.
const PAIRS: [(Region, Region, Option<Relation>); 3] = [
    (Region::Left, Region::Right, Some(Relation::LeftOf)),
    (Region::Bottom, Region::Top, Some(Relation::Above)),
    (Region::Left, Region::Top, None),
];

pub fn gen_prompt_spec(family: &PromptFamily, rng: &mut ChaCha8Rng) -> PromptSpec {
    let mode_count = rng.gen_range(1..=family.max_modes.clamp(1, 3));
    let (regions, relation) = match mode_count {
        1 => {
            let r = SINGLE_REGIONS[rng.gen_range(0..SINGLE_REGIONS.len())];
            (vec![r], None)
        }
        2 => {
            let (a, b, rel) = PAIRS[rng.gen_range(0..PAIRS.len())];
            let rel = if family.use_relations && rng.gen_bool(0.5) {
                rel
            } else {
                None
            };
            (vec![a, b], rel)
        }
        _ => (vec![Region::Left, Region::Right, Region::Top], None),
    };
    let attrs = if family.use_attrs && rng.gen_bool(0.5) {
        vec![if rng.gen_bool(0.5) { 0.6 } else { -0.6 }]
    } else {
        vec![]
    };
    PromptSpec {
        mode_count,
        regions,
        attrs,
        relation,
    }
}

fn center_in_region(region: Region, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let lo = 0.35;
    let hi = 0.75;
    let major = rng.gen_range(lo..hi);
    let minor = rng.gen_range(-0.3..0.3);
    match region {
        Region::Left => (-major, minor),
        Region::Right => (major, minor),
        Region::Top => (minor, major),
        Region::Bottom => (minor, -major),
        Region::Any => (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
    }
}

/// A point set that satisfies every constraint of `spec`, verified against
/// the oracle (resampled on the rare failure).
pub fn target_set_for_prompt(
    spec: &PromptSpec,
    num_points: usize,
    comp: &CompositionConfig,
    rng: &mut ChaCha8Rng,
) -> PointSet {
    for _attempt in 0..64 {
        let mut regions = spec.regions.clone();
        while regions.len() < spec.mode_count {
            regions.push(Region::Any);
        }
        let attr = spec.attrs.first().copied().unwrap_or(0.0);
        let mut points = Vec::with_capacity(num_points);
        let per_mode = num_points / spec.mode_count;
        for (m, region) in regions.iter().take(spec.mode_count).enumerate() {
            let (cx, cy) = center_in_region(*region, rng);
            let count = if m == spec.mode_count - 1 {
                num_points - points.len()
            } else {
                per_mode
            };
            for _ in 0..count {
                let dx: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
                let dy: f64 = rng.sample::<f64, _>(StandardNormal) * 0.05;
                points.push([cx + dx, cy + dy, attr]);
            }
        }
        let set = PointSet { points };
        if satisfies_prompt(&set, spec, comp) {
            return set;
        }
    }
    unreachable!("satisfiable prompt family exhausted 64 construction attempts");
}

pub fn gen_s1_query(bits: usize, rng: &mut ChaCha8Rng) -> Query {
    let tokens: Vec<usize> = (0..bits)
        .map(|_| if rng.gen_bool(0.5) { vocab::BIT_1 } else { vocab::BIT_0 })
        .collect();
    let ones = tokens.iter().filter(|&&t| t == vocab::BIT_1).count();
    Query {
        kind: ScenarioKind::S1Text,
        prompt_tokens: tokens,
        prompt_spec: None,
        reference: None,
        instruction: None,
        truth_parity: Some(ones % 2 == 1),
    }
}

pub fn gen_s2_query(
    bits: usize,
    num_points: usize,
    family: &PromptFamily,
    comp: &CompositionConfig,
    rng: &mut ChaCha8Rng,
) -> Query {
    let mut q = gen_s1_query(bits, rng);
    q.kind = ScenarioKind::S2Multimodal;
    let spec = gen_prompt_spec(family, rng);
    q.reference = Some(target_set_for_prompt(&spec, num_points, comp, rng));
    q
}

pub fn gen_spec_query(
    kind: ScenarioKind,
    family: &PromptFamily,
    rng: &mut ChaCha8Rng,
) -> Query {
    let spec = gen_prompt_spec(family, rng);
    Query {
        kind,
        prompt_tokens: spec.to_tokens(),
        prompt_spec: Some(spec),
        reference: None,
        instruction: None,
        truth_parity: None,
    }
}

pub fn gen_s4_query(
    num_points: usize,
    family: &PromptFamily,
    comp: &CompositionConfig,
    rng: &mut ChaCha8Rng,
) -> Query {
    let catalog = EditInstruction::catalog();
    let instr = catalog[rng.gen_range(0..catalog.len())];
    let spec = gen_prompt_spec(
        &PromptFamily {
            max_modes: family.max_modes.min(2),
            ..*family
        },
        rng,
    );
    let reference = target_set_for_prompt(&spec, num_points, comp, rng);
    Query {
        kind: ScenarioKind::S4Edit,
        prompt_tokens: instr.to_tokens(),
        prompt_spec: None,
        reference: Some(reference),
        instruction: Some(instr),
        truth_parity: None,
    }
}

/// A labeled (prompt, sample) pair for judge evaluation.
#[derive(Debug, Clone)]
pub struct JudgePair {
    pub spec: PromptSpec,
    pub sample: PointSet,
    pub truth: bool,
}

/// Balanced labeled pairs: positives are oracle-verified target sets,
/// negatives are target sets for a different prompt (re-verified to
/// actually violate).
pub fn gen_judge_pairs(
    n: usize,
    num_points: usize,
    family: &PromptFamily,
    comp: &CompositionConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<JudgePair> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let spec = gen_prompt_spec(family, rng);
        if out.len() % 2 == 0 {
            let sample = target_set_for_prompt(&spec, num_points, comp, rng);
            out.push(JudgePair {
                spec,
                sample,
                truth: true,
            });
        } else {
            let mut found = false;
            for _ in 0..32 {
                let other = gen_prompt_spec(family, rng);
                let sample = target_set_for_prompt(&other, num_points, comp, rng);
                if !satisfies_prompt(&sample, &spec, comp) {
                    out.push(JudgePair {
                        spec: spec.clone(),
                        sample,
                        truth: false,
                    });
                    found = true;
                    break;
                }
            }
            if !found {
                // prompt too permissive to violate with this family; skip it
                continue;
            }
        }
    }
    out
}
