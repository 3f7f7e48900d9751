//! Edit instructions with exact inverses, the fixed feature map standing in
//! for a learned image encoder, and the cycle-consistency reward family.

use serde::{Deserialize, Serialize};

use super::points::PointSet;
use crate::models::vocab;
use crate::numeric;
use crate::{seeds, Error, Result};

/// Quantized instruction argument tables. Entries pair up so every
/// instruction's inverse is another table entry, exactly.
pub const TRANSLATE_STEPS: [f64; 4] = [-0.8, -0.4, 0.4, 0.8];
pub const ROTATE_ANGLES: [f64; 4] = [
    -std::f64::consts::FRAC_PI_3,
    -std::f64::consts::FRAC_PI_6,
    std::f64::consts::FRAC_PI_6,
    std::f64::consts::FRAC_PI_3,
];
pub const SCALE_FACTORS: [f64; 4] = [0.5, 0.8, 1.25, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Translate { dx_idx: usize, dy_idx: usize },
    Rotate { angle_idx: usize },
    Scale { factor_idx: usize },
}

/// A registered edit with a registered exact inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub transform: Transform,
}

fn flip(idx: usize) -> usize {
    3 - idx
}

impl EditInstruction {
    pub fn translate(dx_idx: usize, dy_idx: usize) -> Result<Self> {
        if dx_idx >= 4 || dy_idx >= 4 {
            return Err(Error::InvalidInput("translate argument index".into()));
        }
        Ok(EditInstruction {
            transform: Transform::Translate { dx_idx, dy_idx },
        })
    }

    pub fn rotate(angle_idx: usize) -> Result<Self> {
        if angle_idx >= 4 {
            return Err(Error::InvalidInput("rotate argument index".into()));
        }
        Ok(EditInstruction {
            transform: Transform::Rotate { angle_idx },
        })
    }

    pub fn scale(factor_idx: usize) -> Result<Self> {
        if factor_idx >= 4 {
            return Err(Error::InvalidInput("scale argument index".into()));
        }
        Ok(EditInstruction {
            transform: Transform::Scale { factor_idx },
        })
    }

    /// The registered inverse instruction (indices flip within the table).
    pub fn inverse(&self) -> EditInstruction {
        let transform = match self.transform {
            Transform::Translate { dx_idx, dy_idx } => Transform::Translate {
                dx_idx: flip(dx_idx),
                dy_idx: flip(dy_idx),
            },
            Transform::Rotate { angle_idx } => Transform::Rotate {
                angle_idx: flip(angle_idx),
            },
            Transform::Scale { factor_idx } => Transform::Scale {
                factor_idx: flip(factor_idx),
            },
        };
        EditInstruction { transform }
    }

    /// Apply the transform to point positions; attributes are untouched.
    pub fn apply(&self, samples: &PointSet) -> PointSet {
        let points = samples
            .points
            .iter()
            .map(|p| {
                let (x, y) = match self.transform {
                    Transform::Translate { dx_idx, dy_idx } => {
                        (p[0] + TRANSLATE_STEPS[dx_idx], p[1] + TRANSLATE_STEPS[dy_idx])
                    }
                    Transform::Rotate { angle_idx } => {
                        let a = ROTATE_ANGLES[angle_idx];
                        let (s, c) = a.sin_cos();
                        (c * p[0] - s * p[1], s * p[0] + c * p[1])
                    }
                    Transform::Scale { factor_idx } => {
                        let f = SCALE_FACTORS[factor_idx];
                        (p[0] * f, p[1] * f)
                    }
                };
                [x, y, p[2]]
            })
            .collect();
        PointSet { points }
    }

    /// Token encoding: kind marker followed by quantized argument tokens.
    pub fn to_tokens(&self) -> Vec<usize> {
        match self.transform {
            Transform::Translate { dx_idx, dy_idx } => vec![
                vocab::EDIT_TRANSLATE,
                vocab::arg_token(dx_idx),
                vocab::arg_token(dy_idx),
            ],
            Transform::Rotate { angle_idx } => {
                vec![vocab::EDIT_ROTATE, vocab::arg_token(angle_idx)]
            }
            Transform::Scale { factor_idx } => {
                vec![vocab::EDIT_SCALE, vocab::arg_token(factor_idx)]
            }
        }
    }

    /// Every registered instruction.
    pub fn catalog() -> Vec<EditInstruction> {
        let mut out = Vec::new();
        for dx in 0..4 {
            for dy in 0..4 {
                out.push(EditInstruction::translate(dx, dy).unwrap());
            }
        }
        for a in 0..4 {
            out.push(EditInstruction::rotate(a).unwrap());
        }
        for f in 0..4 {
            out.push(EditInstruction::scale(f).unwrap());
        }
        out
    }
}

/// Fixed seeded random linear projection to a feature vector; the
/// deterministic stand-in for a learned image embedding. Linear and
/// bias-free, so sign flips of the input flip the features.
pub struct FeatureMap {
    proj: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl FeatureMap {
    pub fn new(seed: u64, in_dim: usize, out_dim: usize) -> Self {
        use rand::Rng;
        let mut rng = seeds::stream(seed, &[0xFE]);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let proj = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        FeatureMap {
            proj,
            in_dim,
            out_dim,
        }
    }

    pub fn features(&self, samples: &PointSet) -> Result<Vec<f64>> {
        let state = samples.to_state();
        if state.len() != self.in_dim {
            return Err(Error::InvalidInput(format!(
                "feature map expects state dim {}, got {}",
                self.in_dim,
                state.len()
            )));
        }
        Ok(numeric::matvec(&self.proj, &state, self.out_dim, self.in_dim))
    }
}

/// Cosine similarity between the achieved feature displacement and the
/// instructed one. The `degenerate` flag marks a zero-norm displacement.
pub fn edit_reward(
    fm: &FeatureMap,
    x_ref: &PointSet,
    x_edit: &PointSet,
    instr: &EditInstruction,
) -> Result<(f64, bool)> {
    if x_ref.len() != x_edit.len() {
        return Err(Error::InvalidInput("sample set sizes differ".into()));
    }
    let f_ref = fm.features(x_ref)?;
    let f_edit = fm.features(x_edit)?;
    let f_target = fm.features(&instr.apply(x_ref))?;
    let achieved: Vec<f64> = f_edit.iter().zip(&f_ref).map(|(a, b)| a - b).collect();
    let instructed: Vec<f64> = f_target.iter().zip(&f_ref).map(|(a, b)| a - b).collect();
    if numeric::l2_norm(&achieved) == 0.0 || numeric::l2_norm(&instructed) == 0.0 {
        return Ok((0.0, true));
    }
    Ok((numeric::cosine(&achieved, &instructed), false))
}

/// Cosine similarity between reference and cycled feature vectors.
pub fn cycle_reward(fm: &FeatureMap, x_ref: &PointSet, x_cycle: &PointSet) -> Result<f64> {
    if x_ref.len() != x_cycle.len() {
        return Err(Error::InvalidInput("sample set sizes differ".into()));
    }
    Ok(numeric::cosine(
        &fm.features(x_ref)?,
        &fm.features(x_cycle)?,
    ))
}

/// Negative fraction of points outside the valid coordinate box, in [-1, 0].
pub fn quality_reward(samples: &PointSet, valid_half_width: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let outside = samples
        .points
        .iter()
        .filter(|p| p[0].abs() > valid_half_width || p[1].abs() > valid_half_width)
        .count();
    -(outside as f64) / samples.len() as f64
}

/// Weighted combination of the edit-family components.
pub fn total_edit_reward(edit: f64, cycle: f64, quality: f64, weights: (f64, f64, f64)) -> f64 {
    weights.0 * edit + weights.1 * cycle + weights.2 * quality
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn demo_set(seed: u64, n: usize) -> PointSet {
        let mut rng = seeds::stream(seed, &[7]);
        PointSet {
            points: (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-0.8..0.8),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
        }
    }

    #[test]
    fn every_catalog_instruction_round_trips() {
        let set = demo_set(1, 8);
        for instr in EditInstruction::catalog() {
            let back = instr.inverse().apply(&instr.apply(&set));
            for (a, b) in back.points.iter().zip(&set.points) {
                for k in 0..3 {
                    assert!(
                        (a[k] - b[k]).abs() < 1e-9,
                        "{:?} component {k}: {} vs {}",
                        instr,
                        a[k],
                        b[k]
                    );
                }
            }
        }
    }

    #[test]
    fn instruction_tokens_are_well_formed() {
        for instr in EditInstruction::catalog() {
            let toks = instr.to_tokens();
            assert!(toks.len() == 2 || toks.len() == 3);
            assert!(toks.iter().all(|&t| t < vocab::VOCAB_SIZE));
        }
        assert!(EditInstruction::scale(9).is_err());
    }

    #[test]
    fn perfect_edit_scores_one() {
        let fm = FeatureMap::new(11, 24, 64);
        let x_ref = demo_set(2, 8);
        let instr = EditInstruction::translate(3, 1).unwrap();
        let x_edit = instr.apply(&x_ref);
        let (r, degenerate) = edit_reward(&fm, &x_ref, &x_edit, &instr).unwrap();
        assert!(!degenerate);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_edit_scores_minus_one() {
        let fm = FeatureMap::new(11, 24, 64);
        let x_ref = demo_set(3, 8);
        let instr = EditInstruction::translate(0, 0).unwrap();
        let x_edit = instr.inverse().apply(&x_ref);
        let (r, _) = edit_reward(&fm, &x_ref, &x_edit, &instr).unwrap();
        // inverse translation displaces exactly opposite in feature space
        assert!((r + 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_like_edit_flags_degenerate() {
        let fm = FeatureMap::new(11, 24, 64);
        let x_ref = demo_set(4, 8);
        let instr = EditInstruction::translate(3, 1).unwrap();
        // x_edit equals x_ref: achieved displacement has zero norm
        let (r, degenerate) = edit_reward(&fm, &x_ref, &x_ref, &instr).unwrap();
        assert_eq!(r, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn edit_reward_is_stable_across_feature_seeds() {
        let x_ref = demo_set(5, 8);
        let instr = EditInstruction::rotate(2).unwrap();
        // an imperfect edit: apply the rotation then shrink slightly
        let x_edit = EditInstruction::scale(1).unwrap().apply(&instr.apply(&x_ref));
        let canonical = edit_reward(&FeatureMap::new(0, 24, 64), &x_ref, &x_edit, &instr)
            .unwrap()
            .0;
        let mut acc = 0.0;
        let n = 100;
        for s in 0..n {
            acc += edit_reward(&FeatureMap::new(1000 + s, 24, 64), &x_ref, &x_edit, &instr)
                .unwrap()
                .0;
        }
        let mean = acc / n as f64;
        assert!(
            (mean - canonical).abs() < 0.05,
            "mean {mean} vs canonical {canonical}"
        );
    }

    #[test]
    fn cycle_identity_and_sign_flip() {
        let fm = FeatureMap::new(11, 24, 64);
        let x_ref = demo_set(6, 8);
        assert!((cycle_reward(&fm, &x_ref, &x_ref).unwrap() - 1.0).abs() < 1e-12);
        let negated = PointSet {
            points: x_ref.points.iter().map(|p| [-p[0], -p[1], -p[2]]).collect(),
        };
        assert!((cycle_reward(&fm, &x_ref, &negated).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycle_reward_decreases_with_noise_scale() {
        let fm = FeatureMap::new(11, 24, 64);
        let mut means = Vec::new();
        for &scale in &[0.1f64, 0.3, 1.0] {
            let mut acc = 0.0;
            for trial in 0..100 {
                let x_ref = demo_set(100 + trial, 8);
                let mut rng = seeds::stream(500 + trial, &[scale.to_bits()]);
                let noisy = PointSet {
                    points: x_ref
                        .points
                        .iter()
                        .map(|p| {
                            [
                                p[0] + scale * rng.gen_range(-1.0..1.0),
                                p[1] + scale * rng.gen_range(-1.0..1.0),
                                p[2] + scale * rng.gen_range(-1.0..1.0),
                            ]
                        })
                        .collect(),
                };
                acc += cycle_reward(&fm, &x_ref, &noisy).unwrap();
            }
            means.push(acc / 100.0);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn quality_reward_counts_out_of_range_points() {
        let inside = demo_set(7, 8);
        assert_eq!(quality_reward(&inside, 1.2), 0.0);
        let mut points = inside.points.clone();
        for p in points.iter_mut().take(4) {
            p[0] = 5.0;
        }
        let half_out = PointSet { points };
        assert_eq!(quality_reward(&half_out, 1.2), -0.5);
        // permutation invariant
        let mut rev = half_out.points.clone();
        rev.reverse();
        assert_eq!(quality_reward(&PointSet { points: rev }, 1.2), -0.5);
    }

    #[test]
    fn total_reward_is_the_weighted_sum() {
        assert_eq!(total_edit_reward(0.7, 0.9, -0.2, (1.0, 0.0, 0.0)), 0.7);
        let t = total_edit_reward(0.5, 0.8, -0.1, (1.0, 1.0, 1.0));
        assert!((t - 1.2).abs() < 1e-12);
        // linear in each component
        let base = total_edit_reward(0.1, 0.2, -0.3, (2.0, 3.0, 0.5));
        let bumped = total_edit_reward(0.1 + 1.0, 0.2, -0.3, (2.0, 3.0, 0.5));
        assert!((bumped - base - 2.0).abs() < 1e-12);
    }
}
