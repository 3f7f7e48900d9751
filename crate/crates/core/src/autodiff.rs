//! Minimal reverse-mode automatic differentiation.
//!
//! A `Tape` records a directed acyclic graph of vector-valued operations in
//! 64-bit floats. Leaves are constants or views of named parameter tensors;
//! `backward` on a scalar loss accumulates gradients into the owning
//! `ParamSet`. The op vocabulary is exactly what the policy losses need:
//! affine maps, tanh, exp, log-softmax, gathers, clipping, and reductions.
//!
//! Forward values are produced by the kernels in [`crate::numeric`], which
//! the plain (tape-free) model forwards also use, so recomputing a rollout
//! quantity on the tape reproduces it bit for bit.

use crate::numeric;
use crate::params::ParamSet;
use crate::{Error, Result};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    idx: usize,
    len: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

enum Op {
    Const,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddScalar(usize),
    Scale(usize, f64),
    /// scalar var * vector var
    ScaleByVar(usize, usize),
    Exp(usize),
    Tanh(usize),
    Sum(usize),
    Mean(usize),
    Dot(usize, usize),
    MatVec {
        w: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    /// Row slice of a matrix-shaped node.
    Row {
        w: usize,
        row: usize,
        cols: usize,
    },
    /// Single element of a vector node.
    Gather(usize, usize),
    Concat(Vec<usize>),
    LogSoftmax(usize),
    /// Elementwise min of two scalars; ties route the gradient to the first.
    Min(usize, usize),
    /// Scalar clamp; zero gradient outside [lo, hi].
    Clamp(usize, f64, f64),
    /// Sum of a list of scalar nodes.
    SumList(Vec<usize>),
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

static TAPE_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

/// Records operations for one backward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        let id = TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Tape {
            id,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        let idx = self.nodes.len();
        let len = value.len();
        self.nodes.push(Node { op, value });
        Var {
            tape_id: self.id,
            idx,
            len,
        }
    }

    fn own(&self, v: Var) -> usize {
        assert_eq!(
            v.tape_id, self.id,
            "var belongs to another tape (detached value)"
        );
        v.idx
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let idx = self.own(v);
        &self.nodes[idx].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(v.len, 1, "expected scalar node");
        self.value(v)[0]
    }

    // ---- leaves ----

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Const, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Op::Const, vec![value])
    }

    /// Leaf bound to a parameter tensor; gradients accumulate there.
    pub fn param(&mut self, params: &ParamSet, index: usize) -> Var {
        let value = params.values(index).to_vec();
        self.push(Op::Param(index), value)
    }

    // ---- elementwise / affine ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        assert_eq!(a.len, b.len, "add length mismatch");
        let v = numeric::add_vec(&self.nodes[ia].value, &self.nodes[ib].value);
        self.push(Op::Add(ia, ib), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        assert_eq!(a.len, b.len, "sub length mismatch");
        let v: Vec<f64> = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(ia, ib), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        assert_eq!(a.len, b.len, "mul length mismatch");
        let v: Vec<f64> = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(ia, ib), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let v: Vec<f64> = self.nodes[ia].value.iter().map(|x| -x).collect();
        self.push(Op::Neg(ia), v)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let ia = self.own(a);
        let v: Vec<f64> = self.nodes[ia].value.iter().map(|x| x + c).collect();
        self.push(Op::AddScalar(ia), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ia = self.own(a);
        let v: Vec<f64> = self.nodes[ia].value.iter().map(|x| x * c).collect();
        self.push(Op::Scale(ia, c), v)
    }

    pub fn scale_by_var(&mut self, s: Var, a: Var) -> Var {
        let (is, ia) = (self.own(s), self.own(a));
        assert_eq!(s.len, 1, "scale_by_var expects scalar first arg");
        let sv = self.nodes[is].value[0];
        let v: Vec<f64> = self.nodes[ia].value.iter().map(|x| sv * x).collect();
        self.push(Op::ScaleByVar(is, ia), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let v: Vec<f64> = self.nodes[ia].value.iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(ia), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let v = numeric::tanh_vec(&self.nodes[ia].value);
        self.push(Op::Tanh(ia), v)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let v = self.nodes[ia].value.iter().sum();
        self.push(Op::Sum(ia), vec![v])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        assert!(a.len > 0, "mean of empty vector");
        let v = self.nodes[ia].value.iter().sum::<f64>() / a.len as f64;
        self.push(Op::Mean(ia), vec![v])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        assert_eq!(a.len, b.len, "dot length mismatch");
        let v = numeric::dot(&self.nodes[ia].value, &self.nodes[ib].value);
        self.push(Op::Dot(ia, ib), vec![v])
    }

    pub fn sum_list(&mut self, vars: &[Var]) -> Var {
        let idxs: Vec<usize> = vars
            .iter()
            .map(|v| {
                assert_eq!(v.len, 1, "sum_list expects scalar nodes");
                self.own(*v)
            })
            .collect();
        let total: f64 = idxs.iter().map(|&i| self.nodes[i].value[0]).sum();
        self.push(Op::SumList(idxs), vec![total])
    }

    // ---- structured ----

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let (iw, ix) = (self.own(w), self.own(x));
        assert_eq!(w.len, rows * cols, "matvec weight shape mismatch");
        assert_eq!(x.len, cols, "matvec input length mismatch");
        let v = numeric::matvec(&self.nodes[iw].value, &self.nodes[ix].value, rows, cols);
        self.push(Op::MatVec { w: iw, x: ix, rows, cols }, v)
    }

    pub fn row(&mut self, w: Var, row: usize, cols: usize) -> Var {
        let iw = self.own(w);
        assert!(w.len % cols == 0 && (row + 1) * cols <= w.len, "row out of range");
        let v = self.nodes[iw].value[row * cols..(row + 1) * cols].to_vec();
        self.push(Op::Row { w: iw, row, cols }, v)
    }

    pub fn gather(&mut self, a: Var, i: usize) -> Var {
        let ia = self.own(a);
        assert!(i < a.len, "gather index out of range");
        let v = self.nodes[ia].value[i];
        self.push(Op::Gather(ia, i), vec![v])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let idxs: Vec<usize> = parts.iter().map(|v| self.own(*v)).collect();
        let mut v = Vec::with_capacity(parts.iter().map(|p| p.len).sum());
        for &i in &idxs {
            v.extend_from_slice(&self.nodes[i].value);
        }
        self.push(Op::Concat(idxs), v)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ia = self.own(a);
        let v = numeric::log_softmax(&self.nodes[ia].value);
        self.push(Op::LogSoftmax(ia), v)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.own(a), self.own(b));
        assert_eq!(a.len, 1, "min expects scalars");
        assert_eq!(b.len, 1, "min expects scalars");
        let va = self.nodes[ia].value[0];
        let vb = self.nodes[ib].value[0];
        self.push(Op::Min(ia, ib), vec![va.min(vb)])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let ia = self.own(a);
        assert_eq!(a.len, 1, "clamp expects scalar");
        let v = self.nodes[ia].value[0].clamp(lo, hi);
        self.push(Op::Clamp(ia, lo, hi), vec![v])
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated
    /// (`+=`) into `params`; calling twice without a reset doubles them.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if loss.tape_id != self.id {
            return Err(Error::InvalidInput(
                "loss var was recorded on another tape".into(),
            ));
        }
        if loss.len != 1 {
            return Err(Error::InvalidInput(format!(
                "backward requires a scalar loss, got length {}",
                loss.len
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.idx] = Some(vec![1.0]);

        for i in (0..=loss.idx).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(pidx) => params.accumulate_grad(*pidx, &g)?,
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, &g);
                    add_grad(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_grad(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    add_grad(&mut grads, *a, &ga);
                    add_grad(&mut grads, *b, &gb);
                }
                Op::Neg(a) => {
                    let ga: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_grad(&mut grads, *a, &ga);
                }
                Op::AddScalar(a) => add_grad(&mut grads, *a, &g),
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    add_grad(&mut grads, *a, &ga);
                }
                Op::ScaleByVar(s, a) => {
                    let sv = self.nodes[*s].value[0];
                    let gs = numeric::dot(&g, &self.nodes[*a].value);
                    let ga: Vec<f64> = g.iter().map(|x| x * sv).collect();
                    add_grad(&mut grads, *s, &[gs]);
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Exp(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[i].value)
                        .map(|(x, y)| x * y)
                        .collect();
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[i].value)
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.nodes[*a].value.len()];
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len();
                    let ga = vec![g[0] / n as f64; n];
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> =
                        self.nodes[*b].value.iter().map(|x| x * g[0]).collect();
                    let gb: Vec<f64> =
                        self.nodes[*a].value.iter().map(|x| x * g[0]).collect();
                    add_grad(&mut grads, *a, &ga);
                    add_grad(&mut grads, *b, &gb);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let mut gw = vec![0.0; rows * cols];
                    let mut gx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let gr = g[r];
                        for c in 0..*cols {
                            gw[r * cols + c] = gr * xv[c];
                            gx[c] += wv[r * cols + c] * gr;
                        }
                    }
                    add_grad(&mut grads, *w, &gw);
                    add_grad(&mut grads, *x, &gx);
                }
                Op::Row { w, row, cols } => {
                    let mut gw = vec![0.0; self.nodes[*w].value.len()];
                    gw[row * cols..(row + 1) * cols].copy_from_slice(&g);
                    add_grad(&mut grads, *w, &gw);
                }
                Op::Gather(a, j) => {
                    let mut ga = vec![0.0; self.nodes[*a].value.len()];
                    ga[*j] = g[0];
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        add_grad(&mut grads, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::LogSoftmax(a) => {
                    let out = &self.nodes[i].value;
                    let gsum: f64 = g.iter().sum();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(out)
                        .map(|(gi, oi)| gi - oi.exp() * gsum)
                        .collect();
                    add_grad(&mut grads, *a, &ga);
                }
                Op::Min(a, b) => {
                    let va = self.nodes[*a].value[0];
                    let vb = self.nodes[*b].value[0];
                    if va <= vb {
                        add_grad(&mut grads, *a, &g);
                    } else {
                        add_grad(&mut grads, *b, &g);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let va = self.nodes[*a].value[0];
                    if va >= *lo && va <= *hi {
                        add_grad(&mut grads, *a, &g);
                    }
                }
                Op::SumList(parts) => {
                    for &p in parts {
                        add_grad(&mut grads, p, &g);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
    match &mut grads[idx] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
