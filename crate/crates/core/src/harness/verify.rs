//! Verification subcommands: the sampler-equivalence grid and the
//! finite-difference gradient gate, each with an injectable negative
//! control.

use rand::Rng;

use crate::autodiff::Tape;
use crate::flow::{self, SdeConfig};
use crate::grpo::{dm_clip_loss, gaussian_logprob_var, lm_clip_loss};
use crate::models::{vocab, LmInput, ModelConfig, UnifiedPolicy};
use crate::params::ParamSet;
use crate::{seeds, Result};

// ---------------------------------------------------------------- SDE ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeFault {
    None,
    /// Use the linear-in-eta noise window on one side, which breaks the
    /// equivalence and must be caught.
    WrongWindowConvention,
}

#[derive(Debug, Clone)]
pub struct SdeReport {
    pub cases: usize,
    pub max_next_dev: f64,
    pub max_mean_dev: f64,
    pub max_std_dev: f64,
    pub max_logprob_dev: f64,
    /// (sigma, dt, eta) of the worst next-state deviation.
    pub worst_case: (f64, f64, f64),
    pub ode_limit_ok: bool,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for SdeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sampler equivalence over {} cases:", self.cases)?;
        writeln!(f, "  max |d next|     = {:.3e}", self.max_next_dev)?;
        writeln!(f, "  max |d mean|     = {:.3e}", self.max_mean_dev)?;
        writeln!(f, "  max |d std|      = {:.3e}", self.max_std_dev)?;
        writeln!(f, "  max |d log_prob| = {:.3e}", self.max_logprob_dev)?;
        writeln!(
            f,
            "  worst case at sigma={:.4}, dt={:.4}, eta={:.2}",
            self.worst_case.0, self.worst_case.1, self.worst_case.2
        )?;
        writeln!(f, "  deterministic-limit check: {}", ok(self.ode_limit_ok))?;
        write!(
            f,
            "  verdict: {} (tolerance {:.1e})",
            ok(self.pass),
            self.tolerance
        )
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

/// Run the equivalence grid: sigma down to the guard value 1.0 inclusive,
/// dt down to 1e-3 in magnitude, eta including 0, randomized states. At
/// least 10^4 cases.
pub fn verify_sde(fault: SdeFault) -> SdeReport {
    let tolerance = 1e-6;
    let sigmas = [1.0, 0.9931, 0.99, 0.9, 0.75, 0.5, 0.25, 0.1, 0.05, 0.01];
    let dts = [-0.2, -0.1, -0.05, -0.02, -0.01, -0.005, -0.001];
    let etas = [0.0, 0.3, 0.7, 1.0];
    let reps = 36; // 10 * 7 * 4 * 36 > 10^4 cases
    let dim = 8;
    let mut rng = seeds::stream(0x5DE, &[1]);
    let mut report = SdeReport {
        cases: 0,
        max_next_dev: 0.0,
        max_mean_dev: 0.0,
        max_std_dev: 0.0,
        max_logprob_dev: 0.0,
        worst_case: (0.0, 0.0, 0.0),
        ode_limit_ok: true,
        tolerance,
        pass: true,
    };
    for &sigma in &sigmas {
        for &dt in &dts {
            for &eta in &etas {
                let cfg = SdeConfig::new(eta).unwrap();
                for _ in 0..reps {
                    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let n: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                    let a = match fault {
                        SdeFault::None => flow::sde_step(&v, sigma, dt, &x, &cfg, &n),
                        SdeFault::WrongWindowConvention => {
                            faulty_sde_step(&v, sigma, dt, &x, &cfg, &n)
                        }
                    }
                    .unwrap();
                    let b = flow::sde_step_reference(&v, sigma, dt, &x, &cfg, &n).unwrap();
                    report.cases += 1;
                    let mut next_dev = 0.0f64;
                    let mut mean_dev = 0.0f64;
                    for i in 0..dim {
                        next_dev = next_dev.max((a.0[i] - b.0[i]).abs());
                        mean_dev = mean_dev.max((a.2.mean[i] - b.2.mean[i]).abs());
                    }
                    let std_dev = (a.2.std - b.2.std).abs();
                    let lp_dev = match (a.1, b.1) {
                        (Some(la), Some(lb)) => (la - lb).abs(),
                        (None, None) => 0.0,
                        _ => f64::INFINITY,
                    };
                    if next_dev > report.max_next_dev {
                        report.max_next_dev = next_dev;
                        report.worst_case = (sigma, dt, eta);
                    }
                    report.max_mean_dev = report.max_mean_dev.max(mean_dev);
                    report.max_std_dev = report.max_std_dev.max(std_dev);
                    report.max_logprob_dev = report.max_logprob_dev.max(lp_dev);
                }
            }
        }
    }
    // deterministic limit: mean approaches the Euler step monotonically
    for &sigma in &[0.9, 0.5, 0.2] {
        let x = [0.7, -0.4];
        let v = [1.1, 0.3];
        let dt = -0.05;
        let euler: Vec<f64> = x.iter().zip(&v).map(|(xi, vi)| xi + vi * dt).collect();
        let mut last = f64::INFINITY;
        for &eta in &[1.0, 0.5, 0.25, 0.1, 0.0] {
            let cfg = SdeConfig::new(eta).unwrap();
            let (_, _, dist) = flow::sde_step(&v, sigma, dt, &x, &cfg, &[0.0, 0.0]).unwrap();
            let dev = dist
                .mean
                .iter()
                .zip(&euler)
                .map(|(m, e)| (m - e).abs())
                .fold(0.0f64, f64::max);
            if dev > last + 1e-15 {
                report.ode_limit_ok = false;
            }
            last = dev;
        }
        if last != 0.0 {
            report.ode_limit_ok = false;
        }
    }
    report.pass = report.ode_limit_ok
        && report.max_next_dev <= tolerance
        && report.max_mean_dev <= tolerance
        && report.max_std_dev <= tolerance
        && report.max_logprob_dev <= tolerance;
    report
}

/// Negative control: the noise window computed as eta*|dt| instead of
/// |dt|*eta^2/2.
fn faulty_sde_step(
    v: &[f64],
    sigma: f64,
    dt: f64,
    x: &[f64],
    cfg: &SdeConfig,
    noise: &[f64],
) -> Result<(Vec<f64>, Option<f64>, flow::StepDistribution)> {
    let window = -dt * cfg.noise_scale;
    let guarded = if sigma == 1.0 {
        cfg.sigma_one_guard
    } else {
        sigma
    };
    let coef_x = 1.0 - window / (1.0 - guarded);
    let coef_v = dt - window;
    let std = (2.0 * window * (sigma / (1.0 - guarded))).sqrt();
    let mean: Vec<f64> = x
        .iter()
        .zip(v)
        .map(|(xi, vi)| coef_x * xi + coef_v * vi)
        .collect();
    let next: Vec<f64> = mean.iter().zip(noise).map(|(m, n)| m + std * n).collect();
    let dist = flow::StepDistribution { mean, std };
    let lp = if std > 0.0 {
        Some(flow::step_logprob(&next, &dist)?)
    } else {
        None
    };
    Ok((next, lp, dist))
}

// --------------------------------------------------------------- grad ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradFault {
    None,
    /// Replace the connector output by a constant in the loss graph; the
    /// sweep must then localize the failure to the connector tensors.
    DetachConnector,
}

#[derive(Debug, Clone)]
pub struct GradGroupReport {
    pub prefix: String,
    pub worst_rel: f64,
    pub components: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub groups: Vec<GradGroupReport>,
    pub skipped: Vec<String>,
    pub worst_rel: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "finite-difference gradient sweep:")?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<6} worst rel err = {:.3e} over {} components",
                g.prefix, g.worst_rel, g.components
            )?;
        }
        for s in &self.skipped {
            writeln!(f, "  {s} excluded (frozen)")?;
        }
        write!(
            f,
            "  verdict: {} (worst {:.3e}, tolerance {:.1e})",
            ok(self.pass),
            self.worst_rel,
            self.tolerance
        )
    }
}

fn verify_models() -> ModelConfig {
    ModelConfig {
        lm: crate::models::TokenPolicyConfig {
            embed_dim: 6,
            hidden_dim: 12,
            num_layers: 2,
            context_length: 48,
            protocol_bias: 0.5,
            ..Default::default()
        },
        connector: crate::models::ConnectorConfig {
            hidden_dim: 12,
            num_queries: 2,
            value_dim: 5,
            mix_dim: 8,
            cond_dim: 6,
            use_position_encoding: true,
        },
        dm: crate::models::VelocityNetConfig {
            state_dim: 6,
            cond_dim: 6,
            ref_dim: 4,
            hidden_dim: 10,
            output_clip: 4.0,
        },
        summary_dim: 4,
    }
}

struct GradCase {
    context: Vec<LmInput>,
    sampled: Vec<usize>,
    old_lm_logps: Vec<f64>,
    dm_states: Vec<Vec<f64>>,
    dm_next: Vec<Vec<f64>>,
    dm_old_logps: Vec<f64>,
    times: Vec<f64>,
    ref_condition: Vec<f64>,
    advantage: f64,
}

/// The full composite loss (both clipped surrogates plus both KL terms)
/// on a synthetic two-trajectory batch, rebuilt from scratch per call so
/// finite differences see the whole graph.
fn composite_loss(
    policy: &UnifiedPolicy,
    params: &ParamSet,
    ref_params: &ParamSet,
    cases: &[GradCase],
    sde: &SdeConfig,
    fault: GradFault,
) -> f64 {
    let mut tape = Tape::new();
    let beta = 0.05;
    let mut terms = Vec::new();
    let mut kl_terms = Vec::new();
    for case in cases {
        let (logps, lsms) = policy
            .lm
            .sampled_logprob_vars(&mut tape, params, &case.context, &case.sampled, 1.0)
            .unwrap();
        let (lm_term, _) = lm_clip_loss(
            &mut tape,
            &logps,
            &case.old_lm_logps,
            case.advantage,
            0.2,
        )
        .unwrap();
        terms.push(lm_term);
        let ref_lsms = policy
            .lm
            .sampled_log_softmax(ref_params, &case.context, &case.sampled, 1.0)
            .unwrap();
        for (lsm, ref_lsm) in lsms.iter().zip(&ref_lsms) {
            let p = tape.exp(*lsm);
            let rc = tape.constant(ref_lsm.clone());
            let diff = tape.sub(*lsm, rc);
            let prod = tape.mul(p, diff);
            let kl = tape.sum(prod);
            kl_terms.push(tape.scale(kl, beta));
        }

        let c_graph = policy
            .extract_context_var(&mut tape, params, &case.context)
            .unwrap();
        let c = match fault {
            GradFault::None => c_graph,
            GradFault::DetachConnector => {
                let plain = policy.extract_context(params, &case.context).unwrap();
                tape.constant(plain)
            }
        };
        let cr = policy.extract_context(ref_params, &case.context).unwrap();
        let mut dm_logps = Vec::new();
        for (k, x_k) in case.dm_states.iter().enumerate() {
            let sigma = case.times[k];
            let dt = case.times[k + 1] - case.times[k];
            let (coef_x, coef_v, std) = flow::sde_coefficients(sigma, dt, sde).unwrap();
            let v_var = policy
                .dm
                .forward_var(&mut tape, params, x_k, sigma, c, &case.ref_condition)
                .unwrap();
            let xc = tape.constant(x_k.iter().map(|v| coef_x * v).collect());
            let vv = tape.scale(v_var, coef_v);
            let mean_var = tape.add(xc, vv);
            dm_logps.push(gaussian_logprob_var(
                &mut tape,
                &case.dm_next[k],
                mean_var,
                std,
            ));
            let v_ref = policy
                .dm
                .forward(ref_params, x_k, sigma, &cr, &case.ref_condition)
                .unwrap();
            let mean_ref: Vec<f64> = x_k
                .iter()
                .zip(&v_ref)
                .map(|(xi, vi)| coef_x * xi + coef_v * vi)
                .collect();
            let mr = tape.constant(mean_ref);
            let diff = tape.sub(mean_var, mr);
            let sq = tape.mul(diff, diff);
            let ssum = tape.sum(sq);
            let kl = tape.scale(ssum, 1.0 / (2.0 * std * std * x_k.len() as f64));
            kl_terms.push(tape.scale(kl, beta));
        }
        let (dm_term, _) = dm_clip_loss(
            &mut tape,
            &dm_logps,
            &case.dm_old_logps,
            case.advantage,
            0.2,
        )
        .unwrap();
        terms.push(dm_term);
    }
    terms.extend(kl_terms);
    let loss = tape.sum_list(&terms);
    tape.scalar_value(loss)
}

fn backward_composite(
    policy: &UnifiedPolicy,
    params: &mut ParamSet,
    ref_params: &ParamSet,
    cases: &[GradCase],
    sde: &SdeConfig,
    fault: GradFault,
) {
    let mut tape = Tape::new();
    let beta = 0.05;
    let mut terms = Vec::new();
    for case in cases {
        let (logps, lsms) = policy
            .lm
            .sampled_logprob_vars(&mut tape, params, &case.context, &case.sampled, 1.0)
            .unwrap();
        let (lm_term, _) = lm_clip_loss(
            &mut tape,
            &logps,
            &case.old_lm_logps,
            case.advantage,
            0.2,
        )
        .unwrap();
        terms.push(lm_term);
        let ref_lsms = policy
            .lm
            .sampled_log_softmax(ref_params, &case.context, &case.sampled, 1.0)
            .unwrap();
        for (lsm, ref_lsm) in lsms.iter().zip(&ref_lsms) {
            let p = tape.exp(*lsm);
            let rc = tape.constant(ref_lsm.clone());
            let diff = tape.sub(*lsm, rc);
            let prod = tape.mul(p, diff);
            let kl = tape.sum(prod);
            terms.push(tape.scale(kl, beta));
        }
        let c_graph = policy
            .extract_context_var(&mut tape, params, &case.context)
            .unwrap();
        let c = match fault {
            GradFault::None => c_graph,
            GradFault::DetachConnector => {
                let plain = policy.extract_context(params, &case.context).unwrap();
                tape.constant(plain)
            }
        };
        let cr = policy.extract_context(ref_params, &case.context).unwrap();
        let mut dm_logps = Vec::new();
        for (k, x_k) in case.dm_states.iter().enumerate() {
            let sigma = case.times[k];
            let dt = case.times[k + 1] - case.times[k];
            let (coef_x, coef_v, std) = flow::sde_coefficients(sigma, dt, sde).unwrap();
            let v_var = policy
                .dm
                .forward_var(&mut tape, params, x_k, sigma, c, &case.ref_condition)
                .unwrap();
            let xc = tape.constant(x_k.iter().map(|v| coef_x * v).collect());
            let vv = tape.scale(v_var, coef_v);
            let mean_var = tape.add(xc, vv);
            dm_logps.push(gaussian_logprob_var(
                &mut tape,
                &case.dm_next[k],
                mean_var,
                std,
            ));
            let v_ref = policy
                .dm
                .forward(ref_params, x_k, sigma, &cr, &case.ref_condition)
                .unwrap();
            let mean_ref: Vec<f64> = x_k
                .iter()
                .zip(&v_ref)
                .map(|(xi, vi)| coef_x * xi + coef_v * vi)
                .collect();
            let mr = tape.constant(mean_ref);
            let diff = tape.sub(mean_var, mr);
            let sq = tape.mul(diff, diff);
            let ssum = tape.sum(sq);
            let kl = tape.scale(ssum, 1.0 / (2.0 * std * std * x_k.len() as f64));
            terms.push(tape.scale(kl, beta));
        }
        let (dm_term, _) = dm_clip_loss(
            &mut tape,
            &dm_logps,
            &case.dm_old_logps,
            case.advantage,
            0.2,
        )
        .unwrap();
        terms.push(dm_term);
    }
    let loss = tape.sum_list(&terms);
    params.zero_grads();
    tape.backward(loss, params).unwrap();
}

/// Sweep every component of every parameter tensor with central
/// differences (h = 1e-3) against the analytic gradients of the composite
/// loss on a two-trajectory batch. Frozen groups are excluded and noted.
pub fn verify_grad(fault: GradFault, freeze_lm: bool) -> GradReport {
    let tolerance = 1e-4;
    let h = 1e-3;
    let mut params = ParamSet::new();
    let policy = UnifiedPolicy::build(&verify_models(), &mut params, 0xBEEF).unwrap();
    // jitter every tensor (including the zero-initialized velocity head) so
    // all gradient paths are generically active
    {
        let mut rng = seeds::stream(0xBEEE, &[1]);
        for i in 0..params.len() {
            for v in params.values_mut(i).unwrap() {
                *v += rng.gen_range(-0.15..0.15);
            }
        }
    }
    // a slightly-moved reference policy so KL terms have nonzero gradients
    let ref_params = {
        let mut p = params.snapshot().as_param_set();
        let mut rng = seeds::stream(0xBEF0, &[1]);
        for i in 0..p.len() {
            for v in p.values_mut(i).unwrap() {
                *v += rng.gen_range(-0.01..0.01);
            }
        }
        p
    };
    if freeze_lm {
        params.freeze_prefix("lm.");
    }
    let sde = SdeConfig::new(0.7).unwrap();

    // two synthetic trajectories with pinned actions and stored old values
    let mut rng = seeds::stream(0xBEF1, &[2]);
    let times = vec![1.0, 0.75, 0.5, 0.25, 0.0];
    let mut cases = Vec::new();
    for adv in [1.0, -1.0] {
        let context = vec![
            LmInput::token(vocab::COUNT_2),
            LmInput::token(vocab::REGION_LEFT),
            LmInput::token(vocab::REGION_RIGHT),
        ];
        let sampled = vec![vocab::THINK_OPEN, vocab::REGION_LEFT, vocab::EOS];
        let old_lm_logps: Vec<f64> = (0..sampled.len())
            .map(|_| rng.gen_range(-3.5..-2.5))
            .collect();
        let dm_states: Vec<Vec<f64>> = (0..times.len() - 1)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let dm_next: Vec<Vec<f64>> = dm_states
            .iter()
            .map(|s| s.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect())
            .collect();
        let dm_old_logps: Vec<f64> = (0..dm_states.len())
            .map(|_| rng.gen_range(-1.0..0.5))
            .collect();
        let ref_condition: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        cases.push(GradCase {
            context,
            sampled,
            old_lm_logps,
            dm_states,
            dm_next,
            dm_old_logps,
            times: times.clone(),
            ref_condition,
            advantage: adv,
        });
    }

    backward_composite(&policy, &mut params, &ref_params, &cases, &sde, fault);
    let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| params.grads(i).to_vec()).collect();

    let mut groups: std::collections::BTreeMap<String, GradGroupReport> = Default::default();
    let mut skipped = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let name = params.tensor(i).name.clone();
        let prefix = name.split('.').next().unwrap_or("?").to_string();
        if params.is_frozen(i) {
            if !skipped.contains(&prefix) {
                skipped.push(prefix);
            }
            continue;
        }
        let n = params.tensor(i).numel();
        let entry = groups.entry(prefix.clone()).or_insert(GradGroupReport {
            prefix,
            worst_rel: 0.0,
            components: 0,
        });
        for j in 0..n {
            let mut plus = params.clone();
            plus.values_mut(i).unwrap()[j] += h;
            let mut minus = params.clone();
            minus.values_mut(i).unwrap()[j] -= h;
            let lp = composite_loss(&policy, &plus, &ref_params, &cases, &sde, fault);
            let lm = composite_loss(&policy, &minus, &ref_params, &cases, &sde, fault);
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            entry.components += 1;
            if rel > entry.worst_rel {
                entry.worst_rel = rel;
            }
            if rel > worst {
                worst = rel;
            }
        }
    }
    GradReport {
        groups: groups.into_values().collect(),
        skipped,
        worst_rel: worst,
        tolerance,
        pass: worst <= tolerance,
    }
}
