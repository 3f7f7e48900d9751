//! Named parameter tensors, gradient accumulators, freezing, snapshots,
//! optimizers, and the checkpoint file format.
//!
//! Checkpoint layout: magic `FRLCKPT1`, a little-endian u64 manifest length,
//! a JSON manifest (schema, step, embedded config, tensor names and shapes),
//! then the raw tensor payloads as 64-bit little-endian floats in manifest
//! order. Loading validates shapes against the manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const CKPT_MAGIC: &[u8; 8] = b"FRLCKPT1";
const CKPT_SCHEMA: u32 = 1;

/// One named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    value: Vec<f64>,
    grad: Vec<f64>,
    frozen: bool,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// The full trainable state of a model bundle.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate tensor name {name}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidInput(format!(
                "tensor {name}: shape {:?} does not match {} values",
                shape,
                values.len()
            )));
        }
        let idx = self.tensors.len();
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape,
            grad: vec![0.0; values.len()],
            value: values,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn values(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].value
    }

    /// Mutable access for initialization and loading; rejected when frozen.
    pub fn values_mut(&mut self, idx: usize) -> Result<&mut [f64]> {
        let t = &mut self.tensors[idx];
        if t.frozen {
            return Err(Error::Frozen(t.name.clone()));
        }
        Ok(&mut t.value)
    }

    pub fn grads(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].grad
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, g: &[f64]) -> Result<()> {
        let t = &mut self.tensors[idx];
        if g.len() != t.grad.len() {
            return Err(Error::InvalidInput(format!(
                "gradient length {} does not match tensor {} ({})",
                g.len(),
                t.name,
                t.grad.len()
            )));
        }
        for (dst, src) in t.grad.iter_mut().zip(g) {
            *dst += src;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Global L2 norm over every gradient accumulator (frozen included).
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in &self.tensors {
            for g in &t.grad {
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    pub fn is_frozen(&self, idx: usize) -> bool {
        self.tensors[idx].frozen
    }

    /// Freeze every tensor whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for t in &mut self.tensors {
            if t.name.starts_with(prefix) {
                t.frozen = true;
                n += 1;
            }
        }
        n
    }

    pub fn unfreeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for t in &mut self.tensors {
            if t.name.starts_with(prefix) {
                t.frozen = false;
                n += 1;
            }
        }
        n
    }

    /// Apply an in-place update `value += delta`; rejected for frozen tensors.
    pub fn apply_delta(&mut self, idx: usize, delta: &[f64]) -> Result<()> {
        let t = &mut self.tensors[idx];
        if t.frozen {
            return Err(Error::Frozen(t.name.clone()));
        }
        if delta.len() != t.value.len() {
            return Err(Error::InvalidInput(format!(
                "delta length {} does not match tensor {} ({})",
                delta.len(),
                t.name,
                t.value.len()
            )));
        }
        for (v, d) in t.value.iter_mut().zip(delta) {
            *v += d;
        }
        Ok(())
    }

    /// Immutable copy of all tensor values at this instant.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            values: self.tensors.iter().map(|t| t.value.clone()).collect(),
            names: self.tensors.iter().map(|t| t.name.clone()).collect(),
        }
    }

    /// Restore values from a snapshot taken on an identically-shaped set.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if snap.values.len() != self.tensors.len() {
            return Err(Error::InvalidInput("snapshot layout mismatch".into()));
        }
        for (t, v) in self.tensors.iter_mut().zip(&snap.values) {
            if v.len() != t.value.len() {
                return Err(Error::InvalidInput(format!(
                    "snapshot tensor {} length mismatch",
                    t.name
                )));
            }
            t.value.copy_from_slice(v);
        }
        Ok(())
    }

    /// FNV-1a hash over the exact bit pattern of tensors matching `prefix`.
    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tensors {
            if !t.name.starts_with(prefix) {
                continue;
            }
            for b in t.name.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            for v in &t.value {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }
}

/// Frozen-in-time copy of parameter values (old/reference policies).
#[derive(Debug, Clone)]
pub struct Snapshot {
    values: Vec<Vec<f64>>,
    names: Vec<String>,
}

impl Snapshot {
    pub fn values(&self, idx: usize) -> &[f64] {
        &self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    /// A read-only ParamSet view (same layout) for running model forwards.
    pub fn as_param_set(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            ps.add(name, vec![v.len()], v.clone()).expect("snapshot layout");
        }
        ps
    }
}

/// Optimizer choice; plain gradient descent keeps gradient checks simple,
/// adaptive moments is the training default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    Sgd,
    Adam,
}

/// First/second-moment state for Adam; empty for SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptKind,
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptKind, learning_rate: f64, params: &ParamSet) -> Self {
        let (m, v) = match kind {
            OptKind::Adam => (
                (0..params.len()).map(|i| vec![0.0; params.tensor(i).numel()]).collect(),
                (0..params.len()).map(|i| vec![0.0; params.tensor(i).numel()]).collect(),
            ),
            OptKind::Sgd => (Vec::new(), Vec::new()),
        };
        Optimizer {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m,
            v,
        }
    }

    /// One descent step on the accumulated gradients. Frozen tensors are
    /// skipped; their moment state also stays untouched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        self.step_count += 1;
        for i in 0..params.len() {
            if params.is_frozen(i) {
                continue;
            }
            let delta: Vec<f64> = match self.kind {
                OptKind::Sgd => {
                    let lr = self.learning_rate;
                    params.grads(i).iter().map(|g| -lr * g).collect()
                }
                OptKind::Adam => {
                    let lr = self.learning_rate;
                    let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                    let t = self.step_count as i32;
                    let bc1 = 1.0 - b1.powi(t);
                    let bc2 = 1.0 - b2.powi(t);
                    let g = params.grads(i).to_vec();
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    let mut delta = vec![0.0; g.len()];
                    for j in 0..g.len() {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        delta[j] = -lr * mhat / (vhat.sqrt() + eps);
                    }
                    delta
                }
            };
            params.apply_delta(i, &delta)?;
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    fn extra_tensors(&self, params: &ParamSet) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        if self.kind == OptKind::Adam {
            // params may carry extra trailing tensors (e.g. a bundled
            // reference policy); moments exist only for the leading ones
            for i in 0..self.m.len() {
                let name = params.tensor(i).name.clone();
                out.push((format!("opt.m.{name}"), vec![self.m[i].len()], self.m[i].clone()));
                out.push((format!("opt.v.{name}"), vec![self.v[i].len()], self.v[i].clone()));
            }
        }
        out.push(("opt.step".into(), vec![1], vec![self.step_count as f64]));
        out
    }

    fn load_extras(&mut self, params: &ParamSet, extras: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        if let Some(s) = extras.get("opt.step") {
            self.step_count = s[0] as u64;
        }
        if self.kind == OptKind::Adam {
            for i in 0..params.len() {
                let name = &params.tensor(i).name;
                if let Some(m) = extras.get(&format!("opt.m.{name}")) {
                    if m.len() != self.m[i].len() {
                        return Err(Error::Format(format!("optimizer moment shape for {name}")));
                    }
                    self.m[i].copy_from_slice(m);
                }
                if let Some(v) = extras.get(&format!("opt.v.{name}")) {
                    if v.len() != self.v[i].len() {
                        return Err(Error::Format(format!("optimizer moment shape for {name}")));
                    }
                    self.v[i].copy_from_slice(v);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema: u32,
    step: u64,
    #[serde(default)]
    config: String,
    tensors: Vec<ManifestTensor>,
}

/// Serialized checkpoint contents after loading.
pub struct Checkpoint {
    pub step: u64,
    pub config: String,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

/// Write parameters (and optional optimizer state) with an embedded config.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamSet,
    optimizer: Option<&Optimizer>,
    step: u64,
    config: &str,
) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = (0..params.len())
        .map(|i| {
            let t = params.tensor(i);
            (t.name.clone(), t.shape.clone(), t.value.clone())
        })
        .collect();
    if let Some(opt) = optimizer {
        tensors.extend(opt.extra_tensors(params));
    }
    let manifest = Manifest {
        schema: CKPT_SCHEMA,
        step,
        config: config.to_string(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| ManifestTensor {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&manifest_bytes)?;
    for (_, _, values) in &tensors {
        for v in values {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a checkpoint file, validating magic, schema, and payload sizes.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let mlen = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; mlen];
    f.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    if manifest.schema != CKPT_SCHEMA {
        return Err(Error::Format(format!(
            "unsupported checkpoint schema {}",
            manifest.schema
        )));
    }
    let mut tensors = BTreeMap::new();
    for mt in &manifest.tensors {
        let numel: usize = mt.shape.iter().product();
        let mut buf = vec![0u8; numel * 8];
        f.read_exact(&mut buf).map_err(|_| {
            Error::Format(format!("checkpoint payload truncated at tensor {}", mt.name))
        })?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(mt.name.clone(), (mt.shape.clone(), values));
    }
    Ok(Checkpoint {
        step: manifest.step,
        config: manifest.config,
        tensors,
    })
}

/// Load checkpoint values into an existing, identically-shaped ParamSet and
/// optimizer. Shape mismatches are rejected.
pub fn restore_from_checkpoint(
    ckpt: &Checkpoint,
    params: &mut ParamSet,
    optimizer: Option<&mut Optimizer>,
) -> Result<()> {
    for i in 0..params.len() {
        let (name, expected_shape, expected_len) = {
            let t = params.tensor(i);
            (t.name.clone(), t.shape.clone(), t.numel())
        };
        let (shape, values) = ckpt
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))?;
        let numel: usize = shape.iter().product();
        if numel != expected_len {
            return Err(Error::Format(format!(
                "tensor {name}: checkpoint shape {:?} vs expected {:?}",
                shape, expected_shape
            )));
        }
        let was_frozen = params.is_frozen(i);
        if was_frozen {
            params.unfreeze_prefix(&name);
        }
        params.values_mut(i)?.copy_from_slice(values);
        if was_frozen {
            params.freeze_prefix(&name);
        }
    }
    if let Some(opt) = optimizer {
        let extras: BTreeMap<String, Vec<f64>> = ckpt
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with("opt."))
            .map(|(k, (_, v))| (k.clone(), v.clone()))
            .collect();
        opt.load_extras(params, &extras)?;
    }
    Ok(())
}
