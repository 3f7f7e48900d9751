//! Categorical autoregressive token policy.
//!
//! A stacked Elman recurrence over token embeddings: causal by
//! construction, cheap enough for finite-difference gradient sweeps, and
//! its per-position final-layer activations double as the hidden-state
//! summaries the connector attends over.
//!
//! Non-token inputs (sample-set summaries) enter additively in embedding
//! space, so a zero summary vector is exactly a no-op on the forward pass.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::models::vocab;
use crate::numeric;
use crate::params::ParamSet;
use crate::{Error, Result};

/// One position of LM input: a token id plus an optional additive
/// embedding-space injection.
#[derive(Debug, Clone, PartialEq)]
pub struct LmInput {
    pub token: usize,
    pub inject: Option<Vec<f64>>,
}

impl LmInput {
    pub fn token(token: usize) -> Self {
        LmInput {
            token,
            inject: None,
        }
    }

    pub fn with_injection(token: usize, inject: Vec<f64>) -> Self {
        LmInput {
            token,
            inject: Some(inject),
        }
    }
}

pub fn tokens_to_inputs(tokens: &[usize]) -> Vec<LmInput> {
    tokens.iter().map(|&t| LmInput::token(t)).collect()
}

/// The discrete policy trace: sampled token actions with their log-probs
/// under the sampling policy.
#[derive(Debug, Clone, Default)]
pub struct TokenTrajectory {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f64>,
}

impl TokenTrajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sampled tokens with a trailing end marker stripped.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&t) if t == vocab::EOS => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenPolicyConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub context_length: usize,
    /// Added to the output bias of the answer-protocol tokens at init.
    pub protocol_bias: f64,
}

impl Default for TokenPolicyConfig {
    fn default() -> Self {
        TokenPolicyConfig {
            vocab_size: vocab::VOCAB_SIZE,
            embed_dim: 16,
            hidden_dim: 64,
            num_layers: 2,
            context_length: 96,
            protocol_bias: 2.0,
        }
    }
}

struct LayerIdx {
    wx: usize,
    wh: usize,
    b: usize,
}

/// Token policy with parameters registered in a shared `ParamSet` under the
/// `lm.` prefix.
pub struct TokenPolicy {
    pub cfg: TokenPolicyConfig,
    embed: usize,
    layers: Vec<LayerIdx>,
    out_w: usize,
    out_b: usize,
}

fn uniform_init<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl TokenPolicy {
    pub fn new<R: Rng>(cfg: TokenPolicyConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self> {
        let v = cfg.vocab_size;
        let e = cfg.embed_dim;
        let h = cfg.hidden_dim;
        let embed = params.add("lm.embed", vec![v, e], uniform_init(rng, v * e, 1.0 / (e as f64).sqrt()))?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let in_dim = if l == 0 { e } else { h };
            let wx = params.add(
                &format!("lm.l{l}.wx"),
                vec![h, in_dim],
                uniform_init(rng, h * in_dim, 1.0 / (in_dim as f64).sqrt()),
            )?;
            let wh = params.add(
                &format!("lm.l{l}.wh"),
                vec![h, h],
                uniform_init(rng, h * h, 1.0 / (h as f64).sqrt()),
            )?;
            let b = params.add(&format!("lm.l{l}.b"), vec![h], vec![0.0; h])?;
            layers.push(LayerIdx { wx, wh, b });
        }
        let out_w = params.add(
            "lm.out.w",
            vec![v, h],
            uniform_init(rng, v * h, 1.0 / (h as f64).sqrt()),
        )?;
        let mut ob = vec![0.0; v];
        for &t in &vocab::PROTOCOL_TOKENS {
            ob[t] += cfg.protocol_bias;
        }
        let out_b = params.add("lm.out.b", vec![v], ob)?;
        Ok(TokenPolicy {
            cfg,
            embed,
            layers,
            out_w,
            out_b,
        })
    }

    fn check_inputs(&self, inputs: &[LmInput]) -> Result<()> {
        if inputs.len() > self.cfg.context_length {
            return Err(Error::InvalidInput(format!(
                "context length {} exceeds maximum {}",
                inputs.len(),
                self.cfg.context_length
            )));
        }
        for inp in inputs {
            if inp.token >= self.cfg.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token {} out of vocabulary",
                    inp.token
                )));
            }
            if let Some(inj) = &inp.inject {
                if inj.len() != self.cfg.embed_dim {
                    return Err(Error::InvalidInput("injection dimension mismatch".into()));
                }
            }
        }
        Ok(())
    }

    fn embed_input(&self, params: &ParamSet, inp: &LmInput) -> Vec<f64> {
        let e = self.cfg.embed_dim;
        let table = params.values(self.embed);
        let mut x = table[inp.token * e..(inp.token + 1) * e].to_vec();
        if let Some(inj) = &inp.inject {
            for (xi, ii) in x.iter_mut().zip(inj) {
                *xi += ii;
            }
        }
        x
    }

    fn step_hidden(&self, params: &ParamSet, hs: &mut [Vec<f64>], x: Vec<f64>) {
        let h = self.cfg.hidden_dim;
        let mut layer_in = x;
        for (l, idx) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.cfg.embed_dim } else { h };
            let a = numeric::matvec(params.values(idx.wx), &layer_in, h, in_dim);
            let r = numeric::matvec(params.values(idx.wh), &hs[l], h, h);
            let pre = numeric::add_vec(&numeric::add_vec(&a, &r), params.values(idx.b));
            hs[l] = numeric::tanh_vec(&pre);
            layer_in = hs[l].clone();
        }
    }

    fn logits_from_hidden(&self, params: &ParamSet, h: &[f64]) -> Vec<f64> {
        let v = self.cfg.vocab_size;
        let hd = self.cfg.hidden_dim;
        numeric::add_vec(
            &numeric::matvec(params.values(self.out_w), h, v, hd),
            params.values(self.out_b),
        )
    }

    /// Final-layer hidden state per position.
    pub fn hidden_states(&self, params: &ParamSet, inputs: &[LmInput]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let h = self.cfg.hidden_dim;
        let mut hs = vec![vec![0.0; h]; self.cfg.num_layers];
        let mut out = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let x = self.embed_input(params, inp);
            self.step_hidden(params, &mut hs, x);
            out.push(hs[self.cfg.num_layers - 1].clone());
        }
        Ok(out)
    }

    /// Next-token logits after consuming `context`.
    pub fn token_logits(&self, params: &ParamSet, context: &[LmInput]) -> Result<Vec<f64>> {
        self.check_inputs(context)?;
        let h = self.cfg.hidden_dim;
        let mut hs = vec![vec![0.0; h]; self.cfg.num_layers];
        for inp in context {
            let x = self.embed_input(params, inp);
            self.step_hidden(params, &mut hs, x);
        }
        Ok(self.logits_from_hidden(params, &hs[self.cfg.num_layers - 1]))
    }

    /// Autoregressive sampling: stops at the end marker or `max_len`.
    /// Stored log-probs are the log-softmax of the (temperature-scaled)
    /// logits at the sampled token. Deterministic under a fixed rng stream.
    pub fn sample_tokens<R: Rng>(
        &self,
        params: &ParamSet,
        prompt: &[LmInput],
        max_len: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<TokenTrajectory> {
        if temperature <= 0.0 {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        self.check_inputs(prompt)?;
        if prompt.len() + max_len > self.cfg.context_length {
            return Err(Error::InvalidInput(format!(
                "prompt + max_len {} exceeds context length {}",
                prompt.len() + max_len,
                self.cfg.context_length
            )));
        }
        let hdim = self.cfg.hidden_dim;
        let mut hs = vec![vec![0.0; hdim]; self.cfg.num_layers];
        for inp in prompt {
            let x = self.embed_input(params, inp);
            self.step_hidden(params, &mut hs, x);
        }
        let mut traj = TokenTrajectory::default();
        // multiply by the reciprocal: the tape recompute scales the same way,
        // so stored log-probs reproduce bit for bit
        let inv_temp = 1.0 / temperature;
        for _ in 0..max_len {
            let logits = self.logits_from_hidden(params, &hs[self.cfg.num_layers - 1]);
            let scaled: Vec<f64> = logits.iter().map(|l| l * inv_temp).collect();
            let lsm = numeric::log_softmax(&scaled);
            let u: f64 = rng.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut tok = self.cfg.vocab_size - 1;
            for (i, lp) in lsm.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    tok = i;
                    break;
                }
            }
            traj.tokens.push(tok);
            traj.log_probs.push(lsm[tok]);
            if tok == vocab::EOS {
                break;
            }
            let x = self.embed_input(params, &LmInput::token(tok));
            self.step_hidden(params, &mut hs, x);
        }
        Ok(traj)
    }

    /// Greedy (argmax) decoding for deterministic evaluation; ties resolve
    /// to the lowest token id.
    pub fn greedy_tokens(
        &self,
        params: &ParamSet,
        prompt: &[LmInput],
        max_len: usize,
    ) -> Result<Vec<usize>> {
        self.check_inputs(prompt)?;
        let hdim = self.cfg.hidden_dim;
        let mut hs = vec![vec![0.0; hdim]; self.cfg.num_layers];
        for inp in prompt {
            let x = self.embed_input(params, inp);
            self.step_hidden(params, &mut hs, x);
        }
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logits = self.logits_from_hidden(params, &hs[self.cfg.num_layers - 1]);
            let mut best = 0;
            for (i, l) in logits.iter().enumerate() {
                if *l > logits[best] {
                    best = i;
                }
            }
            out.push(best);
            if best == vocab::EOS {
                break;
            }
            let x = self.embed_input(params, &LmInput::token(best));
            self.step_hidden(params, &mut hs, x);
        }
        Ok(out)
    }

    /// Tempered log-softmax vectors at each sampled position, computed
    /// without a tape (used for the frozen reference policy in the KL term).
    pub fn sampled_log_softmax(
        &self,
        params: &ParamSet,
        context: &[LmInput],
        sampled: &[usize],
        temperature: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if temperature <= 0.0 {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        self.check_inputs(context)?;
        let hdim = self.cfg.hidden_dim;
        let mut hs = vec![vec![0.0; hdim]; self.cfg.num_layers];
        for inp in context {
            let x = self.embed_input(params, inp);
            self.step_hidden(params, &mut hs, x);
        }
        let inv_temp = 1.0 / temperature;
        let mut out = Vec::with_capacity(sampled.len());
        for (i, &tok) in sampled.iter().enumerate() {
            if tok >= self.cfg.vocab_size {
                return Err(Error::InvalidInput(format!("token {tok} out of vocabulary")));
            }
            let logits = self.logits_from_hidden(params, &hs[self.cfg.num_layers - 1]);
            let scaled: Vec<f64> = logits.iter().map(|l| l * inv_temp).collect();
            out.push(numeric::log_softmax(&scaled));
            if i + 1 < sampled.len() {
                let x = self.embed_input(params, &LmInput::token(tok));
                self.step_hidden(params, &mut hs, x);
            }
        }
        Ok(out)
    }

    // ---- tape-side forwards ----

    fn embed_input_var(&self, tape: &mut Tape, params: &ParamSet, inp: &LmInput) -> Var {
        let e = self.cfg.embed_dim;
        let table = tape.param(params, self.embed);
        let mut x = tape.row(table, inp.token, e);
        if let Some(inj) = &inp.inject {
            let c = tape.constant(inj.clone());
            x = tape.add(x, c);
        }
        x
    }

    fn step_hidden_var(&self, tape: &mut Tape, params: &ParamSet, hs: &mut [Var], x: Var) {
        let h = self.cfg.hidden_dim;
        let mut layer_in = x;
        for (l, idx) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.cfg.embed_dim } else { h };
            let wx = tape.param(params, idx.wx);
            let wh = tape.param(params, idx.wh);
            let b = tape.param(params, idx.b);
            let a = tape.matvec(wx, layer_in, h, in_dim);
            let r = tape.matvec(wh, hs[l], h, h);
            let ar = tape.add(a, r);
            let pre = tape.add(ar, b);
            hs[l] = tape.tanh(pre);
            layer_in = hs[l];
        }
    }

    /// Final-layer hidden states per position, on the tape.
    pub fn hidden_states_var(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        inputs: &[LmInput],
    ) -> Result<Vec<Var>> {
        self.check_inputs(inputs)?;
        let h = self.cfg.hidden_dim;
        let zero = tape.constant(vec![0.0; h]);
        let mut hs = vec![zero; self.cfg.num_layers];
        let mut out = Vec::with_capacity(inputs.len());
        for inp in inputs {
            let x = self.embed_input_var(tape, params, inp);
            self.step_hidden_var(tape, params, &mut hs, x);
            out.push(hs[self.cfg.num_layers - 1]);
        }
        Ok(out)
    }

    /// Log-probs (and the tempered log-softmax vectors) of already-sampled
    /// tokens, rebuilt on the tape for the surrogate losses. Matches the
    /// sampling computation bit for bit for identical parameters.
    pub fn sampled_logprob_vars(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        context: &[LmInput],
        sampled: &[usize],
        temperature: f64,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if temperature <= 0.0 {
            return Err(Error::InvalidInput("temperature must be positive".into()));
        }
        self.check_inputs(context)?;
        let h = self.cfg.hidden_dim;
        let v = self.cfg.vocab_size;
        let zero = tape.constant(vec![0.0; h]);
        let mut hs = vec![zero; self.cfg.num_layers];
        for inp in context {
            let x = self.embed_input_var(tape, params, inp);
            self.step_hidden_var(tape, params, &mut hs, x);
        }
        let out_w = tape.param(params, self.out_w);
        let out_b = tape.param(params, self.out_b);
        let mut logps = Vec::with_capacity(sampled.len());
        let mut lsms = Vec::with_capacity(sampled.len());
        for (i, &tok) in sampled.iter().enumerate() {
            if tok >= v {
                return Err(Error::InvalidInput(format!("token {tok} out of vocabulary")));
            }
            let raw = tape.matvec(out_w, hs[self.cfg.num_layers - 1], v, self.cfg.hidden_dim);
            let logits = tape.add(raw, out_b);
            let scaled = tape.scale(logits, 1.0 / temperature);
            let lsm = tape.log_softmax(scaled);
            logps.push(tape.gather(lsm, tok));
            lsms.push(lsm);
            if i + 1 < sampled.len() {
                let x = self.embed_input_var(tape, params, &LmInput::token(tok));
                self.step_hidden_var(tape, params, &mut hs, x);
            }
        }
        Ok((logps, lsms))
    }
}
