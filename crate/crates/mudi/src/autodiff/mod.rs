//! Reverse-mode automatic differentiation over batched arrays.
//!
//! A [`Tape`] records a computation graph eagerly: every operation appends a node,
//! computes its value immediately, and returns a lightweight [`Var`] handle.
//! Values are shaped `(batch, width)`; a plain scalar is `(1, 1)`, a batched
//! scalar is `(B, 1)`, a weight matrix is flattened into a single row. Batched
//! execution shares one computation graph across all lanes, which is what makes
//! history-dependent gradients affordable: one node per operation regardless of
//! how many strain paths or integration points flow through it.
//!
//! The primitive set is closed: add, sub, mul, div, pow, exp, log, sqrt, tanh,
//! sigmoid, sin, cos, min, max, abs, dot, matvec, sum, select — plus the linear helpers
//! `lincomb_lanes` (per-lane constant coefficients) and `assemble` (sparse
//! scatter-add used for internal-force assembly), which are constant linear maps
//! and therefore carry exact gradients by construction. Everything else composes
//! from these.
//!
//! Control flow is resolved at recording time from concrete values; per-lane
//! branching goes through [`Tape::select`] with a constant 0/1 mask so the graph
//! stays shared. The backward pass visits nodes exactly once in reverse order and
//! skips zero adjoints entry-wise, so values of masked-out branches (which may be
//! NaN, e.g. √ of a clamped negative) never contaminate gradients.
//!
//! A tape is single-writer; independent tapes may live on independent threads.

pub mod kernel;
pub mod newton;
#[cfg(test)]
mod tests;

pub use kernel::{F64Kernel, Kernel, TapeKernel};
pub use newton::{newton_solve_differentiable, DiffMode, NewtonCfg};

use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var {
    id: u32,
    tape: u64,
    pub batch: u32,
    pub width: u32,
}

impl Var {
    pub fn len(&self) -> usize {
        self.batch as usize * self.width as usize
    }

    pub fn is_scalar(&self) -> bool {
        self.batch == 1 && self.width == 1
    }
}

/// Per-lane 0/1 mask used by [`Tape::select`]; constant, not differentiated.
#[derive(Clone, Debug)]
pub struct Mask {
    pub lanes: Arc<Vec<f64>>,
}

impl Mask {
    pub fn from_bools(b: &[bool]) -> Self {
        Mask {
            lanes: Arc::new(b.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect()),
        }
    }

    pub fn all(&self) -> bool {
        self.lanes.iter().all(|&x| x != 0.0)
    }

    pub fn none(&self) -> bool {
        self.lanes.iter().all(|&x| x == 0.0)
    }

    pub fn not(&self) -> Mask {
        Mask {
            lanes: Arc::new(
                self.lanes
                    .iter()
                    .map(|&x| if x != 0.0 { 0.0 } else { 1.0 })
                    .collect(),
            ),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.lanes.len(), other.lanes.len(), "mask length mismatch");
        Mask {
            lanes: Arc::new(
                self.lanes
                    .iter()
                    .zip(other.lanes.iter())
                    .map(|(&a, &b)| if a != 0.0 && b != 0.0 { 1.0 } else { 0.0 })
                    .collect(),
            ),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.lanes.len(), other.lanes.len(), "mask length mismatch");
        Mask {
            lanes: Arc::new(
                self.lanes
                    .iter()
                    .zip(other.lanes.iter())
                    .map(|(&a, &b)| if a != 0.0 || b != 0.0 { 1.0 } else { 0.0 })
                    .collect(),
            ),
        }
    }
}

/// Sparse scatter-add map for the `assemble` primitive: `out[term.out] += w · input[sel][lane]`.
#[derive(Debug)]
pub struct AssemblyMap {
    pub n_out: usize,
    /// (output slot, input selector, lane, weight)
    pub terms: Vec<(u32, u8, u32, f64)>,
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u32),
    Powf(u32, f64),
    Min(u32, u32),
    Max(u32, u32),
    Neg(u32),
    Exp(u32),
    Ln(u32),
    Sqrt(u32),
    Tanh(u32),
    Sigmoid(u32),
    Sin(u32),
    Cos(u32),
    Abs(u32),
    Scale(u32, f64),
    AddConst(u32, f64),
    Select {
        mask: Arc<Vec<f64>>,
        a: u32,
        b: u32,
    },
    Sum(u32),
    SumWidth(u32),
    Dot(u32, u32),
    MatVec {
        w: u32,
        x: u32,
        m: u32,
        n: u32,
    },
    LincombLanes {
        inputs: Box<[u32]>,
        coeffs: Arc<Vec<f64>>,
    },
    Assemble {
        inputs: Box<[u32]>,
        map: Arc<AssemblyMap>,
    },
}

struct Node {
    op: Op,
    batch: u32,
    width: u32,
    off: usize,
}

/// Saved tape position; see [`Tape::rewind`].
#[derive(Clone, Copy, Debug)]
pub struct TapeMark {
    nodes: usize,
    vals: usize,
}

/// Eager recording tape; see the module docs.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    adj: Vec<f64>,
    adj_valid: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            adj_valid: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes and values, keeping allocated capacity.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.adj.clear();
        self.adj_valid = false;
    }

    pub fn mark(&self) -> TapeMark {
        TapeMark {
            nodes: self.nodes.len(),
            vals: self.vals.len(),
        }
    }

    /// Discards every node recorded after `mark`. Vars created after the mark
    /// become invalid and must not be used again.
    pub fn rewind(&mut self, mark: TapeMark) {
        self.nodes.truncate(mark.nodes);
        self.vals.truncate(mark.vals);
        self.adj_valid = false;
    }

    fn push(&mut self, op: Op, batch: u32, width: u32, data_len: usize) -> Var {
        let off = self.vals.len();
        self.vals.resize(off + data_len, 0.0);
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            op,
            batch,
            width,
            off,
        });
        self.adj_valid = false;
        Var {
            id,
            tape: self.id,
            batch,
            width,
        }
    }

    fn check(&self, v: Var) {
        assert_eq!(
            v.tape, self.id,
            "cross-tape mixing: Var belongs to a different tape"
        );
        assert!((v.id as usize) < self.nodes.len(), "Var from a rewound tape");
    }

    /// Differentiable leaf with explicit data and shape.
    pub fn leaf(&mut self, data: &[f64], batch: usize, width: usize) -> Var {
        assert_eq!(data.len(), batch * width, "leaf data length mismatch");
        let v = self.push(Op::Leaf, batch as u32, width as u32, data.len());
        let off = self.nodes[v.id as usize].off;
        self.vals[off..off + data.len()].copy_from_slice(data);
        v
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(&[value], 1, 1)
    }

    /// Non-differentiable constant.
    pub fn constant(&mut self, data: &[f64], batch: usize, width: usize) -> Var {
        assert_eq!(data.len(), batch * width, "constant data length mismatch");
        let v = self.push(Op::Const, batch as u32, width as u32, data.len());
        let off = self.nodes[v.id as usize].off;
        self.vals[off..off + data.len()].copy_from_slice(data);
        v
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(&[value], 1, 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.check(v);
        let n = &self.nodes[v.id as usize];
        &self.vals[n.off..n.off + v.len()]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert!(v.is_scalar(), "scalar_value on non-scalar Var");
        self.value(v)[0]
    }

    /// Overwrites the data of a leaf or constant (for [`Tape::replay`]).
    pub fn set_value(&mut self, v: Var, data: &[f64]) {
        self.check(v);
        assert!(
            matches!(self.nodes[v.id as usize].op, Op::Leaf | Op::Const),
            "set_value is only valid on leaves and constants"
        );
        assert_eq!(data.len(), v.len(), "set_value length mismatch");
        let off = self.nodes[v.id as usize].off;
        self.vals[off..off + data.len()].copy_from_slice(data);
        self.adj_valid = false;
    }

    /// Re-executes every recorded node from current leaf/constant values.
    ///
    /// Only valid when the graph contains no value-dependent control flow
    /// (masks and iteration counts are frozen as recorded).
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            self.exec(i);
        }
        self.adj_valid = false;
    }

    // ---- primitives ------------------------------------------------------

    fn binary(&mut self, op: fn(u32, u32) -> Op, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let (batch, width) = broadcast_shape(a, b);
        let v = self.push(op(a.id, b.id), batch, width, (batch * width) as usize);
        self.exec(v.id as usize);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Div, a, b)
    }

    /// Element-wise a^b with variable exponent.
    pub fn pow(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Pow, a, b)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Min, a, b)
    }

    pub fn max2(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Max, a, b)
    }

    fn unary(&mut self, op: Op, a: Var) -> Var {
        self.check(a);
        let v = self.push(op, a.batch, a.width, a.len());
        self.exec(v.id as usize);
        v
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Op::Neg(a.id), a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a.id), a)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Op::Ln(a.id), a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Op::Sqrt(a.id), a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a.id), a)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(Op::Sin(a.id), a)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(Op::Cos(a.id), a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a.id), a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Op::Abs(a.id), a)
    }

    /// a^p with a constant exponent.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(Op::Powf(a.id, p), a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(Op::Scale(a.id, s), a)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::AddConst(a.id, c), a)
    }

    /// c − a as a two-node composition.
    pub fn sub_from_c(&mut self, c: f64, a: Var) -> Var {
        let n = self.neg(a);
        self.add_const(n, c)
    }

    /// Per-entry choice `mask ? a : b`; the mask has one entry per output lane
    /// (or a single entry broadcast to all lanes) and is constant.
    pub fn select(&mut self, mask: &Mask, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let (batch, width) = broadcast_shape(a, b);
        assert!(
            mask.lanes.len() == 1 || mask.lanes.len() == batch as usize,
            "mask lanes {} incompatible with batch {}",
            mask.lanes.len(),
            batch
        );
        let v = self.push(
            Op::Select {
                mask: mask.lanes.clone(),
                a: a.id,
                b: b.id,
            },
            batch,
            width,
            (batch * width) as usize,
        );
        self.exec(v.id as usize);
        v
    }

    /// Sum of all entries, producing a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        self.check(a);
        let v = self.push(Op::Sum(a.id), 1, 1, 1);
        self.exec(v.id as usize);
        v
    }

    /// Sum over the width axis: `(B, w) → (B, 1)`.
    pub fn sum_width(&mut self, a: Var) -> Var {
        self.check(a);
        let v = self.push(Op::SumWidth(a.id), a.batch, 1, a.batch as usize);
        self.exec(v.id as usize);
        v
    }

    /// Per-lane dot product over the width axis: `(B, w)·(B, w) → (B, 1)`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        assert_eq!(a.width, b.width, "dot width mismatch");
        assert_eq!(a.batch, b.batch, "dot batch mismatch");
        let v = self.push(Op::Dot(a.id, b.id), a.batch, 1, a.batch as usize);
        self.exec(v.id as usize);
        v
    }

    /// Matrix-vector product per lane: `w` is an (m×n) matrix flattened row-major
    /// into shape (1, m·n); `x` has shape (B, n); the result has shape (B, m).
    pub fn matvec(&mut self, w: Var, x: Var, m: usize, n: usize) -> Var {
        self.check(w);
        self.check(x);
        assert_eq!(w.len(), m * n, "matvec: weight length != m*n");
        assert_eq!(x.width as usize, n, "matvec: x width != n");
        let v = self.push(
            Op::MatVec {
                w: w.id,
                x: x.id,
                m: m as u32,
                n: n as u32,
            },
            x.batch,
            m as u32,
            x.batch as usize * m,
        );
        self.exec(v.id as usize);
        v
    }

    /// Per-lane linear combination with constant coefficients:
    /// `out[b] = Σ_j coeffs[j·B + b] · inputs[j][b]`; all inputs are (B, 1).
    pub fn lincomb_lanes(&mut self, inputs: &[Var], coeffs: Arc<Vec<f64>>) -> Var {
        assert!(!inputs.is_empty());
        let batch = inputs[0].batch;
        for v in inputs {
            self.check(*v);
            assert_eq!(v.width, 1, "lincomb_lanes inputs must be (B,1)");
            assert_eq!(v.batch, batch, "lincomb_lanes batch mismatch");
        }
        assert_eq!(coeffs.len(), inputs.len() * batch as usize);
        let ids: Box<[u32]> = inputs.iter().map(|v| v.id).collect();
        let v = self.push(
            Op::LincombLanes {
                inputs: ids,
                coeffs,
            },
            batch,
            1,
            batch as usize,
        );
        self.exec(v.id as usize);
        v
    }

    /// Sparse scatter-add of weighted input lanes into an output vector (1, n_out).
    pub fn assemble(&mut self, inputs: &[Var], map: Arc<AssemblyMap>) -> Var {
        assert!(!inputs.is_empty());
        let batch = inputs[0].batch;
        for v in inputs {
            self.check(*v);
            assert_eq!(v.width, 1, "assemble inputs must be (B,1)");
            assert_eq!(v.batch, batch, "assemble batch mismatch");
        }
        let ids: Box<[u32]> = inputs.iter().map(|v| v.id).collect();
        let n_out = map.n_out;
        let v = self.push(Op::Assemble { inputs: ids, map }, 1, n_out as u32, n_out);
        self.exec(v.id as usize);
        v
    }

    // ---- execution -------------------------------------------------------

    fn node_slice(&self, id: u32) -> (usize, u32, u32) {
        let n = &self.nodes[id as usize];
        (n.off, n.batch, n.width)
    }

    fn exec(&mut self, i: usize) {
        let (off, batch, width) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize, n.width as usize)
        };
        let total = batch * width;
        let op = self.nodes[i].op.clone();
        match op {
            Op::Const | Op::Leaf => {}
            Op::Add(a, b) => self.exec_binary(i, a, b, |x, y| x + y),
            Op::Sub(a, b) => self.exec_binary(i, a, b, |x, y| x - y),
            Op::Mul(a, b) => self.exec_binary(i, a, b, |x, y| x * y),
            Op::Div(a, b) => self.exec_binary(i, a, b, |x, y| x / y),
            Op::Pow(a, b) => self.exec_binary(i, a, b, |x, y| x.powf(y)),
            Op::Min(a, b) => self.exec_binary(i, a, b, |x, y| if x <= y { x } else { y }),
            Op::Max(a, b) => self.exec_binary(i, a, b, |x, y| if x >= y { x } else { y }),
            Op::Neg(a) => self.exec_unary(i, a, |x| -x),
            Op::Exp(a) => self.exec_unary(i, a, |x| x.exp()),
            Op::Ln(a) => self.exec_unary(i, a, |x| x.ln()),
            Op::Sqrt(a) => self.exec_unary(i, a, |x| x.sqrt()),
            Op::Tanh(a) => self.exec_unary(i, a, |x| x.tanh()),
            Op::Sigmoid(a) => self.exec_unary(i, a, |x| 1.0 / (1.0 + (-x).exp())),
            Op::Sin(a) => self.exec_unary(i, a, |x| x.sin()),
            Op::Cos(a) => self.exec_unary(i, a, |x| x.cos()),
            Op::Abs(a) => self.exec_unary(i, a, |x| x.abs()),
            Op::Powf(a, p) => self.exec_unary(i, a, |x| x.powf(p)),
            Op::Scale(a, s) => self.exec_unary(i, a, |x| x * s),
            Op::AddConst(a, c) => self.exec_unary(i, a, |x| x + c),
            Op::Select { mask, a, b } => {
                let (ao, ab, aw) = self.node_slice(a);
                let (bo, bb, bw) = self.node_slice(b);
                for lane in 0..batch {
                    let m = if mask.len() == 1 { mask[0] } else { mask[lane] };
                    for c in 0..width {
                        let av = self.vals[ao + ewi(lane, c, ab, aw, width)];
                        let bv = self.vals[bo + ewi(lane, c, bb, bw, width)];
                        self.vals[off + lane * width + c] = if m != 0.0 { av } else { bv };
                    }
                }
            }
            Op::Sum(a) => {
                let (ao, ab, aw) = self.node_slice(a);
                let n = (ab * aw) as usize;
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.vals[ao + k];
                }
                self.vals[off] = acc;
            }
            Op::SumWidth(a) => {
                let (ao, _, aw) = self.node_slice(a);
                let aw = aw as usize;
                for lane in 0..batch {
                    let mut acc = 0.0;
                    for c in 0..aw {
                        acc += self.vals[ao + lane * aw + c];
                    }
                    self.vals[off + lane] = acc;
                }
            }
            Op::Dot(a, b) => {
                let (ao, _, aw) = self.node_slice(a);
                let (bo, _, _) = self.node_slice(b);
                let aw = aw as usize;
                for lane in 0..batch {
                    let mut acc = 0.0;
                    for c in 0..aw {
                        acc += self.vals[ao + lane * aw + c] * self.vals[bo + lane * aw + c];
                    }
                    self.vals[off + lane] = acc;
                }
            }
            Op::MatVec { w, x, m, n } => {
                let (wo, _, _) = self.node_slice(w);
                let (xo, _, _) = self.node_slice(x);
                let (m, n) = (m as usize, n as usize);
                for lane in 0..batch {
                    for row in 0..m {
                        let mut acc = 0.0;
                        for col in 0..n {
                            acc += self.vals[wo + row * n + col] * self.vals[xo + lane * n + col];
                        }
                        self.vals[off + lane * m + row] = acc;
                    }
                }
            }
            Op::LincombLanes { inputs, coeffs } => {
                for lane in 0..batch {
                    let mut acc = 0.0;
                    for (j, inp) in inputs.iter().enumerate() {
                        let (io, _, _) = self.node_slice(*inp);
                        acc += coeffs[j * batch + lane] * self.vals[io + lane];
                    }
                    self.vals[off + lane] = acc;
                }
            }
            Op::Assemble { inputs, map } => {
                for k in 0..total {
                    self.vals[off + k] = 0.0;
                }
                let offsets: Vec<usize> =
                    inputs.iter().map(|id| self.node_slice(*id).0).collect();
                for &(out, sel, lane, wgt) in &map.terms {
                    self.vals[off + out as usize] +=
                        wgt * self.vals[offsets[sel as usize] + lane as usize];
                }
            }
        }
    }

    fn exec_binary(&mut self, i: usize, a: u32, b: u32, f: fn(f64, f64) -> f64) {
        let (off, batch, width) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize, n.width as usize)
        };
        let (ao, ab, aw) = self.node_slice(a);
        let (bo, bb, bw) = self.node_slice(b);
        for lane in 0..batch {
            for c in 0..width {
                let av = self.vals[ao + ewi(lane, c, ab, aw, width)];
                let bv = self.vals[bo + ewi(lane, c, bb, bw, width)];
                self.vals[off + lane * width + c] = f(av, bv);
            }
        }
    }

    fn exec_unary(&mut self, i: usize, a: u32, f: impl Fn(f64) -> f64) {
        let (off, total) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize * n.width as usize)
        };
        let ao = self.nodes[a as usize].off;
        for k in 0..total {
            self.vals[off + k] = f(self.vals[ao + k]);
        }
    }

    // ---- backward --------------------------------------------------------

    /// Reverse-mode sweep from a scalar root. Gradients are read afterwards with
    /// [`Tape::grad`]; they accumulate additively across fan-out.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss);
        if !loss.is_scalar() {
            return Err(Error::Autodiff(format!(
                "backward root must be scalar, got shape ({}, {})",
                loss.batch, loss.width
            )));
        }
        self.adj.clear();
        self.adj.resize(self.vals.len(), 0.0);
        self.adj[self.nodes[loss.id as usize].off] = 1.0;

        for i in (0..=loss.id as usize).rev() {
            self.backward_node(i);
        }
        self.adj_valid = true;
        Ok(())
    }

    /// Gradient buffer of `v` after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> &[f64] {
        self.check(v);
        assert!(self.adj_valid, "call backward() before grad()");
        let n = &self.nodes[v.id as usize];
        &self.adj[n.off..n.off + v.len()]
    }

    pub fn grad_scalar(&self, v: Var) -> f64 {
        assert!(v.is_scalar(), "grad_scalar on non-scalar Var");
        self.grad(v)[0]
    }

    fn backward_node(&mut self, i: usize) {
        let (off, batch, width) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize, n.width as usize)
        };
        let op = self.nodes[i].op.clone();
        match op {
            Op::Const | Op::Leaf => {}
            Op::Add(a, b) => self.back_binary(i, a, b, |_, _, _| (1.0, 1.0)),
            Op::Sub(a, b) => self.back_binary(i, a, b, |_, _, _| (1.0, -1.0)),
            Op::Mul(a, b) => self.back_binary(i, a, b, |x, y, _| (y, x)),
            Op::Div(a, b) => self.back_binary(i, a, b, |_, y, o| (1.0 / y, -o / y)),
            Op::Pow(a, b) => self.back_binary(i, a, b, |x, y, o| {
                let da = if x == 0.0 && y > 1.0 {
                    0.0
                } else {
                    y * x.powf(y - 1.0)
                };
                let db = if o == 0.0 { 0.0 } else { o * x.ln() };
                (da, db)
            }),
            Op::Min(a, b) => self.back_binary(i, a, b, |x, y, _| {
                if x <= y {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }),
            Op::Max(a, b) => self.back_binary(i, a, b, |x, y, _| {
                if x >= y {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }),
            Op::Neg(a) => self.back_unary(i, a, |_, _| -1.0),
            Op::Exp(a) => self.back_unary(i, a, |_, o| o),
            Op::Ln(a) => self.back_unary(i, a, |x, _| 1.0 / x),
            Op::Sqrt(a) => self.back_unary(i, a, |_, o| 0.5 / o),
            Op::Tanh(a) => self.back_unary(i, a, |_, o| 1.0 - o * o),
            Op::Sigmoid(a) => self.back_unary(i, a, |_, o| o * (1.0 - o)),
            Op::Sin(a) => self.back_unary(i, a, |x, _| x.cos()),
            Op::Cos(a) => self.back_unary(i, a, |x, _| -x.sin()),
            Op::Abs(a) => self.back_unary(i, a, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Powf(a, p) => self.back_unary(i, a, |x, _| {
                if x == 0.0 && p > 1.0 {
                    0.0
                } else {
                    p * x.powf(p - 1.0)
                }
            }),
            Op::Scale(a, s) => self.back_unary(i, a, |_, _| s),
            Op::AddConst(a, _) => self.back_unary(i, a, |_, _| 1.0),
            Op::Select { mask, a, b } => {
                let (ao, ab, aw) = self.node_slice(a);
                let (bo, bb, bw) = self.node_slice(b);
                for lane in 0..batch {
                    let m = if mask.len() == 1 { mask[0] } else { mask[lane] };
                    for c in 0..width {
                        let g = self.adj[off + lane * width + c];
                        if g == 0.0 {
                            continue;
                        }
                        if m != 0.0 {
                            self.adj[ao + ewi(lane, c, ab, aw, width)] += g;
                        } else {
                            self.adj[bo + ewi(lane, c, bb, bw, width)] += g;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let g = self.adj[off];
                if g != 0.0 {
                    let (ao, ab, aw) = self.node_slice(a);
                    let n = (ab * aw) as usize;
                    for k in 0..n {
                        self.adj[ao + k] += g;
                    }
                }
            }
            Op::SumWidth(a) => {
                let (ao, _, aw) = self.node_slice(a);
                let aw = aw as usize;
                for lane in 0..batch {
                    let g = self.adj[off + lane];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..aw {
                        self.adj[ao + lane * aw + c] += g;
                    }
                }
            }
            Op::Dot(a, b) => {
                let (ao, _, aw) = self.node_slice(a);
                let (bo, _, _) = self.node_slice(b);
                let aw = aw as usize;
                for lane in 0..batch {
                    let g = self.adj[off + lane];
                    if g == 0.0 {
                        continue;
                    }
                    for c in 0..aw {
                        let av = self.vals[ao + lane * aw + c];
                        let bv = self.vals[bo + lane * aw + c];
                        self.adj[ao + lane * aw + c] += g * bv;
                        self.adj[bo + lane * aw + c] += g * av;
                    }
                }
            }
            Op::MatVec { w, x, m, n } => {
                let (wo, _, _) = self.node_slice(w);
                let (xo, _, _) = self.node_slice(x);
                let (m, n) = (m as usize, n as usize);
                for lane in 0..batch {
                    for row in 0..m {
                        let g = self.adj[off + lane * m + row];
                        if g == 0.0 {
                            continue;
                        }
                        for col in 0..n {
                            self.adj[wo + row * n + col] += g * self.vals[xo + lane * n + col];
                            self.adj[xo + lane * n + col] += g * self.vals[wo + row * n + col];
                        }
                    }
                }
            }
            Op::LincombLanes { inputs, coeffs } => {
                for lane in 0..batch {
                    let g = self.adj[off + lane];
                    if g == 0.0 {
                        continue;
                    }
                    for (j, inp) in inputs.iter().enumerate() {
                        let io = self.nodes[*inp as usize].off;
                        self.adj[io + lane] += g * coeffs[j * batch + lane];
                    }
                }
            }
            Op::Assemble { inputs, map } => {
                let offsets: Vec<usize> =
                    inputs.iter().map(|id| self.node_slice(*id).0).collect();
                for &(out, sel, lane, wgt) in &map.terms {
                    let g = self.adj[off + out as usize];
                    if g != 0.0 {
                        self.adj[offsets[sel as usize] + lane as usize] += g * wgt;
                    }
                }
            }
        }
    }

    fn back_binary(&mut self, i: usize, a: u32, b: u32, partials: impl Fn(f64, f64, f64) -> (f64, f64)) {
        let (off, batch, width) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize, n.width as usize)
        };
        let (ao, ab, aw) = self.node_slice(a);
        let (bo, bb, bw) = self.node_slice(b);
        for lane in 0..batch {
            for c in 0..width {
                let g = self.adj[off + lane * width + c];
                if g == 0.0 {
                    continue;
                }
                let ia = ao + ewi(lane, c, ab, aw, width);
                let ib = bo + ewi(lane, c, bb, bw, width);
                let o = self.vals[off + lane * width + c];
                let (da, db) = partials(self.vals[ia], self.vals[ib], o);
                self.adj[ia] += g * da;
                self.adj[ib] += g * db;
            }
        }
    }

    fn back_unary(&mut self, i: usize, a: u32, partial: impl Fn(f64, f64) -> f64) {
        let (off, total) = {
            let n = &self.nodes[i];
            (n.off, n.batch as usize * n.width as usize)
        };
        let ao = self.nodes[a as usize].off;
        for k in 0..total {
            let g = self.adj[off + k];
            if g != 0.0 {
                self.adj[ao + k] += g * partial(self.vals[ao + k], self.vals[off + k]);
            }
        }
    }

    // ---- record-time inspection helpers -----------------------------------

    /// Per-lane comparison of concrete values; used to build [`Mask`]s.
    pub fn compare(&self, a: Var, b: Var, pred: impl Fn(f64, f64) -> bool) -> Mask {
        self.check(a);
        self.check(b);
        assert_eq!(a.width, 1, "compare expects (B,1) values");
        assert_eq!(b.width, 1, "compare expects (B,1) values");
        let batch = a.batch.max(b.batch) as usize;
        let av = self.value(a);
        let bv = self.value(b);
        let lanes: Vec<f64> = (0..batch)
            .map(|lane| {
                let x = if av.len() == 1 { av[0] } else { av[lane] };
                let y = if bv.len() == 1 { bv[0] } else { bv[lane] };
                if pred(x, y) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Mask {
            lanes: Arc::new(lanes),
        }
    }
}

/// Flat index of a broadcast operand entry.
#[inline]
fn ewi(lane: usize, c: usize, b: u32, w: u32, _out_width: usize) -> usize {
    let lb = if b == 1 { 0 } else { lane };
    let cc = if w == 1 { 0 } else { c };
    lb * w as usize + cc
}

fn broadcast_shape(a: Var, b: Var) -> (u32, u32) {
    let batch = match (a.batch, b.batch) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        (x, y) => panic!("incompatible batch sizes {x} and {y}"),
    };
    let width = match (a.width, b.width) {
        (x, y) if x == y => x,
        (1, y) => y,
        (x, 1) => x,
        (x, y) => panic!("incompatible widths {x} and {y}"),
    };
    (batch, width)
}

/// Runs a pure per-item kernel once over a stacked batch, sharing one graph.
///
/// `features[f]` holds feature `f` of every item (`batch` entries). The kernel
/// receives one `(batch, 1)` constant per feature and must be pure: the result
/// is element-wise identical to calling it per item in a loop.
pub fn vmap<F>(tape: &mut Tape, features: &[&[f64]], batch: usize, kernel: F) -> Vec<Var>
where
    F: FnOnce(&mut Tape, &[Var]) -> Vec<Var>,
{
    for (f, col) in features.iter().enumerate() {
        assert_eq!(
            col.len(),
            batch,
            "ragged batch: feature {f} has {} entries, expected {batch}",
            col.len()
        );
    }
    let vars: Vec<Var> = features
        .iter()
        .map(|col| tape.constant(col, batch, 1))
        .collect();
    kernel(tape, &vars)
}
