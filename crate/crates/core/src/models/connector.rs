//! Trainable query connector.
//!
//! K learned query vectors attend over the token policy's per-position
//! hidden states (optionally position-encoded); the pooled values pass
//! through a fully-connected mixing layer that lets every query output see
//! every other, then project to the condition vector consumed by the
//! velocity network.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::numeric;
use crate::params::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConnectorConfig {
    /// Dimension of the LM hidden states attended over.
    pub hidden_dim: usize,
    pub num_queries: usize,
    pub value_dim: usize,
    pub mix_dim: usize,
    pub cond_dim: usize,
    /// With position encoding disabled the output is invariant to
    /// permuting the input hidden states.
    pub use_position_encoding: bool,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        ConnectorConfig {
            hidden_dim: 64,
            num_queries: 4,
            value_dim: 32,
            mix_dim: 64,
            cond_dim: 16,
            use_position_encoding: true,
        }
    }
}

pub struct QueryConnector {
    pub cfg: ConnectorConfig,
    queries: usize,
    value_w: usize,
    mix_w: usize,
    mix_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Sinusoidal position encoding, fixed (not trained).
fn position_encoding(pos: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; dim];
    for k in 0..dim / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64);
        pe[2 * k] = (pos as f64 * freq).sin();
        pe[2 * k + 1] = (pos as f64 * freq).cos();
    }
    pe
}

impl QueryConnector {
    pub fn new<R: Rng>(cfg: ConnectorConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        let h = cfg.hidden_dim;
        let k = cfg.num_queries;
        let vd = cfg.value_dim;
        let md = cfg.mix_dim;
        let cd = cfg.cond_dim;
        let scale_h = 1.0 / (h as f64).sqrt();
        let queries = params.add(
            "conn.queries",
            vec![k, h],
            (0..k * h).map(|_| rng.gen_range(-scale_h..scale_h)).collect(),
        )?;
        let value_w = params.add(
            "conn.value.w",
            vec![vd, h],
            (0..vd * h).map(|_| rng.gen_range(-scale_h..scale_h)).collect(),
        )?;
        let scale_kv = 1.0 / ((k * vd) as f64).sqrt();
        let mix_w = params.add(
            "conn.mix.w",
            vec![md, k * vd],
            (0..md * k * vd)
                .map(|_| rng.gen_range(-scale_kv..scale_kv))
                .collect(),
        )?;
        let mix_b = params.add("conn.mix.b", vec![md], vec![0.0; md])?;
        let scale_m = 1.0 / (md as f64).sqrt();
        let out_w = params.add(
            "conn.out.w",
            vec![cd, md],
            (0..cd * md).map(|_| rng.gen_range(-scale_m..scale_m)).collect(),
        )?;
        let out_b = params.add("conn.out.b", vec![cd], vec![0.0; cd])?;
        Ok(QueryConnector {
            cfg,
            queries,
            value_w,
            mix_w,
            mix_b,
            out_w,
            out_b,
        })
    }

    fn encoded(&self, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if !self.cfg.use_position_encoding {
            return states.to_vec();
        }
        states
            .iter()
            .enumerate()
            .map(|(p, s)| numeric::add_vec(s, &position_encoding(p, self.cfg.hidden_dim)))
            .collect()
    }

    /// Condition vector from per-position hidden summaries.
    pub fn extract(&self, params: &ParamSet, lm_states: &[Vec<f64>]) -> Result<Vec<f64>> {
        if lm_states.is_empty() {
            return Err(Error::InvalidInput(
                "connector requires a nonempty state sequence".into(),
            ));
        }
        let h = self.cfg.hidden_dim;
        let vd = self.cfg.value_dim;
        let k = self.cfg.num_queries;
        let states = self.encoded(lm_states);
        let scale = 1.0 / (h as f64).sqrt();
        let qs = params.values(self.queries);
        let mut pooled = Vec::with_capacity(k * vd);
        for qi in 0..k {
            let q = &qs[qi * h..(qi + 1) * h];
            let scores: Vec<f64> = states
                .iter()
                .map(|s| numeric::dot(q, s) * scale)
                .collect();
            let weights = numeric::softmax(&scores);
            let mut z = vec![0.0; vd];
            for (w, s) in weights.iter().zip(&states) {
                let v = numeric::matvec(params.values(self.value_w), s, vd, h);
                for (zi, vi) in z.iter_mut().zip(&v) {
                    *zi += w * vi;
                }
            }
            pooled.extend_from_slice(&z);
        }
        let mixed = numeric::tanh_vec(&numeric::add_vec(
            &numeric::matvec(params.values(self.mix_w), &pooled, self.cfg.mix_dim, k * vd),
            params.values(self.mix_b),
        ));
        Ok(numeric::add_vec(
            &numeric::matvec(params.values(self.out_w), &mixed, self.cfg.cond_dim, self.cfg.mix_dim),
            params.values(self.out_b),
        ))
    }

    /// Tape version of [`extract`]; gradients flow into the connector
    /// tensors and, through `lm_states`, into the token policy.
    pub fn extract_var(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        lm_states: &[Var],
    ) -> Result<Var> {
        if lm_states.is_empty() {
            return Err(Error::InvalidInput(
                "connector requires a nonempty state sequence".into(),
            ));
        }
        let h = self.cfg.hidden_dim;
        let vd = self.cfg.value_dim;
        let k = self.cfg.num_queries;
        let scale = 1.0 / (h as f64).sqrt();
        let states: Vec<Var> = if self.cfg.use_position_encoding {
            lm_states
                .iter()
                .enumerate()
                .map(|(p, s)| {
                    let pe = tape.constant(position_encoding(p, h));
                    tape.add(*s, pe)
                })
                .collect()
        } else {
            lm_states.to_vec()
        };
        let queries = tape.param(params, self.queries);
        let value_w = tape.param(params, self.value_w);
        let mut pooled_parts = Vec::with_capacity(k);
        for qi in 0..k {
            let q = tape.row(queries, qi, h);
            let score_vars: Vec<Var> = states
                .iter()
                .map(|s| {
                    let d = tape.dot(q, *s);
                    tape.scale(d, scale)
                })
                .collect();
            let scores = tape.concat(&score_vars);
            let lsm = tape.log_softmax(scores);
            let weights = tape.exp(lsm);
            let mut z: Option<Var> = None;
            for (t, s) in states.iter().enumerate() {
                let v = tape.matvec(value_w, *s, vd, h);
                let w = tape.gather(weights, t);
                let wv = tape.scale_by_var(w, v);
                z = Some(match z {
                    Some(acc) => tape.add(acc, wv),
                    None => wv,
                });
            }
            pooled_parts.push(z.expect("nonempty states"));
        }
        let pooled = tape.concat(&pooled_parts);
        let mix_w = tape.param(params, self.mix_w);
        let mix_b = tape.param(params, self.mix_b);
        let pre = tape.matvec(mix_w, pooled, self.cfg.mix_dim, k * vd);
        let pre = tape.add(pre, mix_b);
        let mixed = tape.tanh(pre);
        let out_w = tape.param(params, self.out_w);
        let out_b = tape.param(params, self.out_b);
        let proj = tape.matvec(out_w, mixed, self.cfg.cond_dim, self.cfg.mix_dim);
        Ok(tape.add(proj, out_b))
    }
}
