//! Velocity network: a tanh MLP over [state, time, condition, reference].
//!
//! The final layer is zero-initialized so an untrained sampler is
//! noise-preserving. The reference slot carries the noised reference
//! conditioning for editing tasks and stays zero elsewhere.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::numeric;
use crate::params::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct VelocityNetConfig {
    pub state_dim: usize,
    pub cond_dim: usize,
    pub ref_dim: usize,
    pub hidden_dim: usize,
    /// Soft cap on output magnitude: v = cap * tanh(raw / cap). Keeps the
    /// reachable state set bounded, the way pixel space bounds an image.
    pub output_clip: f64,
}

impl Default for VelocityNetConfig {
    fn default() -> Self {
        VelocityNetConfig {
            state_dim: 24,
            cond_dim: 16,
            ref_dim: 14,
            hidden_dim: 128,
            output_clip: 4.0,
        }
    }
}

impl VelocityNetConfig {
    pub fn input_dim(&self) -> usize {
        self.state_dim + 1 + self.cond_dim + self.ref_dim
    }
}

pub struct VelocityNet {
    pub cfg: VelocityNetConfig,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl VelocityNet {
    pub fn new<R: Rng>(cfg: VelocityNetConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        let din = cfg.input_dim();
        let h = cfg.hidden_dim;
        let d = cfg.state_dim;
        let s1 = 1.0 / (din as f64).sqrt();
        let s2 = 1.0 / (h as f64).sqrt();
        let w1 = params.add(
            "dm.l1.w",
            vec![h, din],
            (0..h * din).map(|_| rng.gen_range(-s1..s1)).collect(),
        )?;
        let b1 = params.add("dm.l1.b", vec![h], vec![0.0; h])?;
        let w2 = params.add(
            "dm.l2.w",
            vec![h, h],
            (0..h * h).map(|_| rng.gen_range(-s2..s2)).collect(),
        )?;
        let b2 = params.add("dm.l2.b", vec![h], vec![0.0; h])?;
        let w3 = params.add("dm.out.w", vec![d, h], vec![0.0; d * h])?;
        let b3 = params.add("dm.out.b", vec![d], vec![0.0; d])?;
        Ok(VelocityNet {
            cfg,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }

    fn check(&self, x: &[f64], cond: &[f64], reference: &[f64]) -> Result<()> {
        if x.len() != self.cfg.state_dim {
            return Err(Error::InvalidInput("state dimension mismatch".into()));
        }
        if cond.len() != self.cfg.cond_dim {
            return Err(Error::InvalidInput("condition dimension mismatch".into()));
        }
        if reference.len() != self.cfg.ref_dim {
            return Err(Error::InvalidInput("reference dimension mismatch".into()));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        x: &[f64],
        t: f64,
        cond: &[f64],
        reference: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(x, cond, reference)?;
        let mut input = Vec::with_capacity(self.cfg.input_dim());
        input.extend_from_slice(x);
        input.push(t);
        input.extend_from_slice(cond);
        input.extend_from_slice(reference);
        let h = self.cfg.hidden_dim;
        let h1 = numeric::tanh_vec(&numeric::add_vec(
            &numeric::matvec(params.values(self.w1), &input, h, self.cfg.input_dim()),
            params.values(self.b1),
        ));
        let h2 = numeric::tanh_vec(&numeric::add_vec(
            &numeric::matvec(params.values(self.w2), &h1, h, h),
            params.values(self.b2),
        ));
        let raw = numeric::add_vec(
            &numeric::matvec(params.values(self.w3), &h2, self.cfg.state_dim, h),
            params.values(self.b3),
        );
        let cap = self.cfg.output_clip;
        let inv = 1.0 / cap;
        Ok(raw
            .iter()
            .map(|v| (v * inv).tanh() * cap)
            .collect())
    }

    /// Tape forward. `cond` is a graph variable (gradients flow through the
    /// connector); state, time, and reference enter as constants.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: &[f64],
        t: f64,
        cond: Var,
        reference: &[f64],
    ) -> Result<Var> {
        if x.len() != self.cfg.state_dim
            || cond.len() != self.cfg.cond_dim
            || reference.len() != self.cfg.ref_dim
        {
            return Err(Error::InvalidInput("velocity input dimension mismatch".into()));
        }
        let xc = tape.constant(x.to_vec());
        let tc = tape.constant(vec![t]);
        let rc = tape.constant(reference.to_vec());
        let input = tape.concat(&[xc, tc, cond, rc]);
        let h = self.cfg.hidden_dim;
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let a1 = tape.matvec(w1, input, h, self.cfg.input_dim());
        let a1 = tape.add(a1, b1);
        let h1 = tape.tanh(a1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        let a2 = tape.matvec(w2, h1, h, h);
        let a2 = tape.add(a2, b2);
        let h2 = tape.tanh(a2);
        let w3 = tape.param(params, self.w3);
        let b3 = tape.param(params, self.b3);
        let out = tape.matvec(w3, h2, self.cfg.state_dim, h);
        let raw = tape.add(out, b3);
        let cap = self.cfg.output_clip;
        let scaled = tape.scale(raw, 1.0 / cap);
        let squashed = tape.tanh(scaled);
        Ok(tape.scale(squashed, cap))
    }
}
