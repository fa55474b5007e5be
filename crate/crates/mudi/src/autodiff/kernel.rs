//! Numeric kernel abstraction: one algorithm source, two execution backends.
//!
//! Constitutive updates, losses and other numeric kernels are written once
//! against [`Kernel`] and instantiated either with [`F64Kernel`] (plain floats,
//! used by data generation and the forward solver) or with [`TapeKernel`]
//! (recording on a [`Tape`], batched over lanes, used by discovery). Both
//! backends execute the identical operation sequence, so f64 and taped values
//! agree bit-for-bit; per-lane branching uses `select` with masks built from
//! concrete values at recording time.

use super::{Mask, Tape, Var};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Scalar algebra with per-lane masking and a differentiable Newton solve.
pub trait Kernel {
    type S: Copy + std::fmt::Debug;
    type M: Clone;

    fn constant(&mut self, v: f64) -> Self::S;
    fn add(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn sub(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn mul(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn div(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn neg(&mut self, a: Self::S) -> Self::S;
    fn powf(&mut self, a: Self::S, p: f64) -> Self::S;
    fn pow(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn sqrt(&mut self, a: Self::S) -> Self::S;
    fn exp(&mut self, a: Self::S) -> Self::S;
    fn ln(&mut self, a: Self::S) -> Self::S;
    fn abs(&mut self, a: Self::S) -> Self::S;
    fn tanh(&mut self, a: Self::S) -> Self::S;
    fn sigmoid(&mut self, a: Self::S) -> Self::S;
    fn sin(&mut self, a: Self::S) -> Self::S;
    fn cos(&mut self, a: Self::S) -> Self::S;
    fn min2(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn max2(&mut self, a: Self::S, b: Self::S) -> Self::S;
    fn select(&mut self, m: &Self::M, a: Self::S, b: Self::S) -> Self::S;

    /// Per-lane comparison of concrete (recording-time) values.
    fn cmp(&self, a: Self::S, b: Self::S, pred: fn(f64, f64) -> bool) -> Self::M;
    fn mask_from_bools(&self, b: &[bool]) -> Self::M;
    fn mask_not(&self, m: &Self::M) -> Self::M;
    fn mask_and(&self, a: &Self::M, b: &Self::M) -> Self::M;
    fn mask_or(&self, a: &Self::M, b: &Self::M) -> Self::M;
    fn mask_all(&self, m: &Self::M) -> bool;
    fn mask_none(&self, m: &Self::M) -> bool;
    fn mask_bools(&self, m: &Self::M) -> Vec<bool>;

    /// Concrete per-lane values (recording-time inspection).
    fn lane_values(&self, s: Self::S) -> Vec<f64>;

    /// Per-lane max of |vᵢ| over a set of values; defines the Newton residual norm.
    fn lane_abs_max(&self, vals: &[Self::S]) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for v in vals {
            let lanes = self.lane_values(*v);
            if out.is_empty() {
                out = vec![0.0; lanes.len()];
            }
            if lanes.len() == 1 {
                for o in &mut out {
                    *o = o.max(lanes[0].abs());
                }
            } else {
                if out.len() == 1 && lanes.len() > 1 {
                    out = vec![out[0]; lanes.len()];
                }
                for (o, l) in out.iter_mut().zip(lanes.iter()) {
                    *o = o.max(l.abs());
                }
            }
        }
        out
    }

    /// Solves R(α) = 0 by damped-free Newton-Raphson with per-lane freezing.
    ///
    /// `f` returns the residual vector and the row-major n×n Jacobian. Lanes
    /// marked inactive converge trivially and keep α₀. The tape backend may
    /// differentiate through the unrolled iterations or via the implicit
    /// function theorem, depending on its configured mode.
    fn newton<F>(
        &mut self,
        alpha0: &[Self::S],
        active: Option<&[bool]>,
        cfg: &NewtonCfg,
        f: F,
    ) -> Result<NewtonOutcome<Self::S>>
    where
        F: FnMut(&mut Self, &[Self::S]) -> (Vec<Self::S>, Vec<Self::S>),
        Self: Sized,
    {
        newton_unrolled(self, alpha0, active, cfg, f)
    }

    // Convenience sugar over the primitive set.
    fn addf(&mut self, a: Self::S, c: f64) -> Self::S {
        let c = self.constant(c);
        self.add(a, c)
    }
    fn subf(&mut self, a: Self::S, c: f64) -> Self::S {
        let c = self.constant(c);
        self.sub(a, c)
    }
    fn sub_from(&mut self, c: f64, a: Self::S) -> Self::S {
        let c = self.constant(c);
        self.sub(c, a)
    }
    fn mulf(&mut self, a: Self::S, c: f64) -> Self::S {
        let c = self.constant(c);
        self.mul(a, c)
    }
    fn divf(&mut self, a: Self::S, c: f64) -> Self::S {
        let c = self.constant(c);
        self.div(a, c)
    }
    fn recip(&mut self, a: Self::S) -> Self::S {
        let one = self.constant(1.0);
        self.div(one, a)
    }
    fn maxf(&mut self, a: Self::S, c: f64) -> Self::S {
        let c = self.constant(c);
        self.max2(a, c)
    }
    fn square(&mut self, a: Self::S) -> Self::S {
        self.mul(a, a)
    }
}

/// Newton-Raphson settings: full steps, per-lane relative/absolute residual test.
#[derive(Clone, Copy, Debug)]
pub struct NewtonCfg {
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
}

impl Default for NewtonCfg {
    fn default() -> Self {
        NewtonCfg {
            tol_rel: 1e-10,
            tol_abs: 1e-14,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome<S> {
    pub solution: Vec<S>,
    /// Final Jacobian entries (row-major, at the converged state).
    pub jacobian: Vec<S>,
    pub iterations: usize,
    pub residual: f64,
}

/// Canonical unrolled Newton driver shared by both backends.
pub(crate) fn newton_unrolled<K: Kernel, F>(
    k: &mut K,
    alpha0: &[K::S],
    active: Option<&[bool]>,
    cfg: &NewtonCfg,
    mut f: F,
) -> Result<NewtonOutcome<K::S>>
where
    F: FnMut(&mut K, &[K::S]) -> (Vec<K::S>, Vec<K::S>),
{
    let n = alpha0.len();
    let mut alpha = alpha0.to_vec();
    let (mut r, mut jac) = f(k, &alpha);
    assert_eq!(r.len(), n, "residual dimension mismatch");
    assert_eq!(jac.len(), n * n, "jacobian dimension mismatch");

    let r0 = k.lane_abs_max(&r);
    let lanes = r0.len();
    let is_active: Vec<bool> = match active {
        Some(a) => {
            assert!(a.len() == lanes || lanes == 1, "active mask length mismatch");
            a.to_vec()
        }
        None => vec![true; lanes],
    };
    let thresh: Vec<f64> = r0
        .iter()
        .map(|x| cfg.tol_abs + cfg.tol_rel * x)
        .collect();
    let mut conv: Vec<bool> = (0..lanes)
        .map(|b| !is_active[b.min(is_active.len() - 1)] || r0[b] <= thresh[b])
        .collect();
    let mut lane_r = r0;
    let mut iterations = 0;

    while conv.iter().any(|c| !c) {
        if iterations >= cfg.max_iter {
            let worst = lane_r
                .iter()
                .zip(conv.iter())
                .filter(|(_, c)| !**c)
                .map(|(r, _)| *r)
                .fold(0.0f64, f64::max);
            return Err(Error::Convergence {
                context: "newton solve".into(),
                iterations,
                residual: worst,
            });
        }
        let frozen = k.mask_from_bools(&conv);
        let delta = gauss_solve(k, &jac, &r, n);
        for i in 0..n {
            let stepped = k.sub(alpha[i], delta[i]);
            alpha[i] = k.select(&frozen, alpha[i], stepped);
        }
        let (rn, jn) = f(k, &alpha);
        r = rn;
        jac = jn;
        lane_r = k.lane_abs_max(&r);
        if lane_r.len() > conv.len() {
            // residual gained lanes (a (1,1) seed broadened); widen bookkeeping
            conv = vec![conv[0]; lane_r.len()];
        }
        for b in 0..conv.len() {
            let t = thresh[b.min(thresh.len() - 1)];
            if !conv[b] && lane_r[b.min(lane_r.len() - 1)] <= t {
                conv[b] = true;
            }
        }
        iterations += 1;
    }

    let residual = lane_r.iter().copied().fold(0.0f64, f64::max);
    Ok(NewtonOutcome {
        solution: alpha,
        jacobian: jac,
        iterations,
        residual,
    })
}

/// Gaussian elimination without pivoting, recorded through the kernel.
///
/// The systems solved here (return-mapping Jacobians) are identity-dominated,
/// so a fixed elimination order keeps the graph shared across lanes. Pivots
/// smaller than 1e-200 in magnitude are replaced by 1 — such lanes are always
/// frozen or inactive, and the guard only keeps their values finite.
pub(crate) fn gauss_solve<K: Kernel>(k: &mut K, a: &[K::S], rhs: &[K::S], n: usize) -> Vec<K::S> {
    let mut a = a.to_vec();
    let mut b = rhs.to_vec();
    let mut inv_piv = Vec::with_capacity(n);
    for col in 0..n {
        let piv = a[col * n + col];
        let piv_abs = k.abs(piv);
        let tiny = k.constant(1e-200);
        let degenerate = k.cmp(piv_abs, tiny, |x, y| x < y);
        let one = k.constant(1.0);
        let piv = if k.mask_none(&degenerate) {
            piv
        } else {
            k.select(&degenerate, one, piv)
        };
        let ip = k.recip(piv);
        inv_piv.push(ip);
        for row in (col + 1)..n {
            let factor = k.mul(a[row * n + col], ip);
            for c2 in (col + 1)..n {
                let t = k.mul(factor, a[col * n + c2]);
                a[row * n + c2] = k.sub(a[row * n + c2], t);
            }
            let t = k.mul(factor, b[col]);
            b[row] = k.sub(b[row], t);
        }
    }
    let mut x = vec![b[0]; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c2 in (col + 1)..n {
            let t = k.mul(a[col * n + c2], x[c2]);
            acc = k.sub(acc, t);
        }
        x[col] = k.mul(acc, inv_piv[col]);
    }
    x
}

// ---------------------------------------------------------------------------

/// Plain-float backend: zero-overhead single-lane evaluation.
#[derive(Default)]
pub struct F64Kernel;

impl Kernel for F64Kernel {
    type S = f64;
    type M = bool;

    fn constant(&mut self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn div(&mut self, a: f64, b: f64) -> f64 {
        a / b
    }
    fn neg(&mut self, a: f64) -> f64 {
        -a
    }
    fn powf(&mut self, a: f64, p: f64) -> f64 {
        a.powf(p)
    }
    fn pow(&mut self, a: f64, b: f64) -> f64 {
        a.powf(b)
    }
    fn sqrt(&mut self, a: f64) -> f64 {
        a.sqrt()
    }
    fn exp(&mut self, a: f64) -> f64 {
        a.exp()
    }
    fn ln(&mut self, a: f64) -> f64 {
        a.ln()
    }
    fn abs(&mut self, a: f64) -> f64 {
        a.abs()
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn sigmoid(&mut self, a: f64) -> f64 {
        1.0 / (1.0 + (-a).exp())
    }
    fn sin(&mut self, a: f64) -> f64 {
        a.sin()
    }
    fn cos(&mut self, a: f64) -> f64 {
        a.cos()
    }
    fn min2(&mut self, a: f64, b: f64) -> f64 {
        if a <= b {
            a
        } else {
            b
        }
    }
    fn max2(&mut self, a: f64, b: f64) -> f64 {
        if a >= b {
            a
        } else {
            b
        }
    }
    fn select(&mut self, m: &bool, a: f64, b: f64) -> f64 {
        if *m {
            a
        } else {
            b
        }
    }
    fn cmp(&self, a: f64, b: f64, pred: fn(f64, f64) -> bool) -> bool {
        pred(a, b)
    }
    fn mask_from_bools(&self, b: &[bool]) -> bool {
        assert_eq!(b.len(), 1);
        b[0]
    }
    fn mask_not(&self, m: &bool) -> bool {
        !*m
    }
    fn mask_and(&self, a: &bool, b: &bool) -> bool {
        *a && *b
    }
    fn mask_or(&self, a: &bool, b: &bool) -> bool {
        *a || *b
    }
    fn mask_all(&self, m: &bool) -> bool {
        *m
    }
    fn mask_none(&self, m: &bool) -> bool {
        !*m
    }
    fn mask_bools(&self, m: &bool) -> Vec<bool> {
        vec![*m]
    }
    fn lane_values(&self, s: f64) -> Vec<f64> {
        vec![s]
    }
}

// ---------------------------------------------------------------------------

/// How gradients flow through an embedded Newton solve on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// The tape records every iteration (default: simplest-correct).
    Unroll,
    /// Iterations are discarded; gradients come from the implicit function
    /// theorem at the converged point, using the converged Jacobian.
    Implicit,
}

/// Tape-recording backend; values are batched `(B, 1)` Vars.
pub struct TapeKernel<'a> {
    pub tape: &'a mut Tape,
    pub mode: DiffMode,
}

impl<'a> TapeKernel<'a> {
    pub fn new(tape: &'a mut Tape) -> Self {
        TapeKernel {
            tape,
            mode: DiffMode::Unroll,
        }
    }

    pub fn with_mode(tape: &'a mut Tape, mode: DiffMode) -> Self {
        TapeKernel { tape, mode }
    }

    fn newton_implicit<F>(
        &mut self,
        alpha0: &[Var],
        active: Option<&[bool]>,
        cfg: &NewtonCfg,
        mut f: F,
    ) -> Result<NewtonOutcome<Var>>
    where
        F: FnMut(&mut Self, &[Var]) -> (Vec<Var>, Vec<Var>),
    {
        let n = alpha0.len();
        let mark = self.tape.mark();
        let inner = newton_unrolled(self, alpha0, active, cfg, &mut f)?;

        // Harvest the converged state and Jacobian, then drop the iterations.
        let alpha_vals: Vec<Vec<f64>> = inner
            .solution
            .iter()
            .map(|v| self.tape.value(*v).to_vec())
            .collect();
        let jac_vals: Vec<Vec<f64>> = inner
            .jacobian
            .iter()
            .map(|v| self.tape.value(*v).to_vec())
            .collect();
        let lanes = alpha_vals.iter().map(|v| v.len()).max().unwrap_or(1);
        self.tape.rewind(mark);

        let alpha_hat: Vec<Var> = alpha_vals
            .iter()
            .map(|vals| {
                if vals.len() == lanes {
                    self.tape.constant(vals, lanes, 1)
                } else {
                    let expanded = vec![vals[0]; lanes];
                    self.tape.constant(&expanded, lanes, 1)
                }
            })
            .collect();
        let (r, _) = f(self, &alpha_hat);

        // Per-lane J⁻¹ with partial pivoting; inactive lanes get a zero map so
        // their correction vanishes and α̂ (= α₀) passes through unchanged.
        let mut inv = vec![0.0; lanes * n * n];
        for b in 0..lanes {
            let skip = active.map(|a| !a[b.min(a.len() - 1)]).unwrap_or(false);
            if skip {
                continue;
            }
            let mut jb = vec![0.0; n * n];
            for (e, col) in jac_vals.iter().enumerate() {
                jb[e] = if col.len() == lanes { col[b] } else { col[0] };
            }
            let jinv = invert_dense(&jb, n).ok_or_else(|| Error::Convergence {
                context: "implicit Newton: converged Jacobian is singular".into(),
                iterations: inner.iterations,
                residual: inner.residual,
            })?;
            inv[b * n * n..(b + 1) * n * n].copy_from_slice(&jinv);
        }

        let mut solution = Vec::with_capacity(n);
        for i in 0..n {
            let mut coeffs = vec![0.0; n * lanes];
            for j in 0..n {
                for b in 0..lanes {
                    coeffs[j * lanes + b] = inv[b * n * n + i * n + j];
                }
            }
            let delta = self.tape.lincomb_lanes(&r, Arc::new(coeffs));
            solution.push(self.tape.sub(alpha_hat[i], delta));
        }

        // The extra correction step can only tighten the residual.
        Ok(NewtonOutcome {
            solution,
            jacobian: inner
                .jacobian
                .iter()
                .zip(jac_vals.iter())
                .map(|(v, vals)| self.tape.constant(vals, v.batch as usize, 1))
                .collect(),
            iterations: inner.iterations,
            residual: inner.residual,
        })
    }
}

impl<'a> Kernel for TapeKernel<'a> {
    type S = Var;
    type M = Mask;

    fn constant(&mut self, v: f64) -> Var {
        self.tape.constant_scalar(v)
    }
    fn add(&mut self, a: Var, b: Var) -> Var {
        self.tape.add(a, b)
    }
    fn sub(&mut self, a: Var, b: Var) -> Var {
        self.tape.sub(a, b)
    }
    fn mul(&mut self, a: Var, b: Var) -> Var {
        self.tape.mul(a, b)
    }
    fn div(&mut self, a: Var, b: Var) -> Var {
        self.tape.div(a, b)
    }
    fn neg(&mut self, a: Var) -> Var {
        self.tape.neg(a)
    }
    fn powf(&mut self, a: Var, p: f64) -> Var {
        self.tape.powf(a, p)
    }
    fn pow(&mut self, a: Var, b: Var) -> Var {
        self.tape.pow(a, b)
    }
    fn sqrt(&mut self, a: Var) -> Var {
        self.tape.sqrt(a)
    }
    fn exp(&mut self, a: Var) -> Var {
        self.tape.exp(a)
    }
    fn ln(&mut self, a: Var) -> Var {
        self.tape.ln(a)
    }
    fn abs(&mut self, a: Var) -> Var {
        self.tape.abs(a)
    }
    fn tanh(&mut self, a: Var) -> Var {
        self.tape.tanh(a)
    }
    fn sigmoid(&mut self, a: Var) -> Var {
        self.tape.sigmoid(a)
    }
    fn sin(&mut self, a: Var) -> Var {
        self.tape.sin(a)
    }
    fn cos(&mut self, a: Var) -> Var {
        self.tape.cos(a)
    }
    fn min2(&mut self, a: Var, b: Var) -> Var {
        self.tape.min2(a, b)
    }
    fn max2(&mut self, a: Var, b: Var) -> Var {
        self.tape.max2(a, b)
    }
    fn select(&mut self, m: &Mask, a: Var, b: Var) -> Var {
        self.tape.select(m, a, b)
    }
    fn cmp(&self, a: Var, b: Var, pred: fn(f64, f64) -> bool) -> Mask {
        self.tape.compare(a, b, pred)
    }
    fn mask_from_bools(&self, b: &[bool]) -> Mask {
        Mask::from_bools(b)
    }
    fn mask_not(&self, m: &Mask) -> Mask {
        m.not()
    }
    fn mask_and(&self, a: &Mask, b: &Mask) -> Mask {
        a.and(b)
    }
    fn mask_or(&self, a: &Mask, b: &Mask) -> Mask {
        a.or(b)
    }
    fn mask_all(&self, m: &Mask) -> bool {
        m.all()
    }
    fn mask_none(&self, m: &Mask) -> bool {
        m.none()
    }
    fn mask_bools(&self, m: &Mask) -> Vec<bool> {
        m.lanes.iter().map(|&x| x != 0.0).collect()
    }
    fn lane_values(&self, s: Var) -> Vec<f64> {
        self.tape.value(s).to_vec()
    }

    fn newton<F>(
        &mut self,
        alpha0: &[Var],
        active: Option<&[bool]>,
        cfg: &NewtonCfg,
        f: F,
    ) -> Result<NewtonOutcome<Var>>
    where
        F: FnMut(&mut Self, &[Var]) -> (Vec<Var>, Vec<Var>),
    {
        match self.mode {
            DiffMode::Unroll => newton_unrolled(self, alpha0, active, cfg, f),
            DiffMode::Implicit => self.newton_implicit(alpha0, active, cfg, f),
        }
    }
}

/// Dense inverse with partial pivoting; `None` when singular.
pub(crate) fn invert_dense(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut aug = vec![0.0; n * 2 * n];
    for i in 0..n {
        for j in 0..n {
            aug[i * 2 * n + j] = a[i * n + j];
        }
        aug[i * 2 * n + n + i] = 1.0;
    }
    for col in 0..n {
        let mut best = col;
        for row in (col + 1)..n {
            if aug[row * 2 * n + col].abs() > aug[best * 2 * n + col].abs() {
                best = row;
            }
        }
        if aug[best * 2 * n + col].abs() < 1e-300 {
            return None;
        }
        if best != col {
            for j in 0..2 * n {
                aug.swap(col * 2 * n + j, best * 2 * n + j);
            }
        }
        let piv = aug[col * 2 * n + col];
        for j in 0..2 * n {
            aug[col * 2 * n + j] /= piv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = aug[row * 2 * n + col];
            if f != 0.0 {
                for j in 0..2 * n {
                    aug[row * 2 * n + j] -= f * aug[col * 2 * n + j];
                }
            }
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = aug[i * 2 * n + n + j];
        }
    }
    Some(out)
}
