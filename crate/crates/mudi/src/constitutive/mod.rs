//! Conventional elasto-plastic material models with fully implicit state updates.
//!
//! Three models share the elastic-predictor / return-mapping structure:
//!
//! - von Mises (radial return, scalar Newton on Δγ);
//! - Drucker-Prager (smooth cone return first, apex return when inadmissible);
//! - Lou-Zhang-Yoon (8-unknown smooth return mapping with analytic Jacobian,
//!   apex return selected by the trial-pressure criterion, and yield-surface
//!   convexity enforcement on the (c, d) parameters).
//!
//! State updates are written once against [`Kernel`](crate::autodiff::Kernel) and
//! run either on plain floats (data generation, forward solver) or batched on the
//! autodiff tape (parameter discovery), with identical operation sequences.

pub mod algebra;
pub mod convexity;
mod dp;
mod lzy;
mod vm;

pub use convexity::{convexity_check, convexity_return_map, Convexity};
pub use lzy::{apex_pressure, yield_lzy, YieldValue};

use crate::autodiff::{F64Kernel, Kernel, NewtonCfg};
use crate::error::{Error, Result};
use crate::tensor::{SymTensor3, Tensor4Sym, TensorKind};
use algebra::V6;
use serde::{Deserialize, Serialize};

/// Isotropic strain hardening σ_y(ε̄ᵖ), generic over the scalar type.
#[derive(Clone, Copy, Debug)]
pub enum Hardening<S> {
    /// σ_y = s₀ + s₁ (ε̄ᵖ)^s₂
    NadaiLudwik { s0: S, s1: S, s2: S },
    /// σ_y = σ_y0 + H ε̄ᵖ
    Linear { sy0: S, h: S },
}

impl<S: Copy + std::fmt::Debug> Hardening<S> {
    pub fn value<K: Kernel<S = S>>(&self, k: &mut K, eps_p_bar: S) -> S {
        match *self {
            Hardening::NadaiLudwik { s0, s1, s2 } => {
                // exact s₀ at ε̄ᵖ = 0: the power term is gated per lane so that
                // the (ε̄ᵖ)^(s₂−1) singularity never reaches values or gradients
                let zero = k.constant(0.0);
                let clamped = k.maxf(eps_p_bar, 1e-300);
                let powed = k.pow(clamped, s2);
                let positive = k.cmp(eps_p_bar, zero, |a, b| a > b);
                let term = k.select(&positive, powed, zero);
                let h = k.mul(s1, term);
                k.add(s0, h)
            }
            Hardening::Linear { sy0, h } => {
                let t = k.mul(h, eps_p_bar);
                k.add(sy0, t)
            }
        }
    }

    /// dσ_y/dε̄ᵖ, evaluated at max(ε̄ᵖ, 1e-12) to keep the Nadai-Ludwik slope
    /// finite at the onset of plastic flow.
    pub fn slope<K: Kernel<S = S>>(&self, k: &mut K, eps_p_bar: S) -> S {
        match *self {
            Hardening::NadaiLudwik { s0: _, s1, s2 } => {
                let pe = k.maxf(eps_p_bar, 1e-12);
                let expo = k.subf(s2, 1.0);
                let powed = k.pow(pe, expo);
                let t = k.mul(s1, s2);
                k.mul(t, powed)
            }
            Hardening::Linear { sy0: _, h } => h,
        }
    }

    /// σ_y at ε̄ᵖ = 0 (normalizer of the consistency residual).
    pub fn initial(&self) -> S {
        match *self {
            Hardening::NadaiLudwik { s0, .. } => s0,
            Hardening::Linear { sy0, .. } => sy0,
        }
    }
}

/// Elastic constants as kernel scalars; moduli derived once per update call.
#[derive(Clone, Copy, Debug)]
pub struct ElasticConstants<S> {
    pub e: S,
    pub nu: S,
}

impl<S: Copy + std::fmt::Debug> ElasticConstants<S> {
    /// Returns (2G, K, G).
    pub fn moduli<K: Kernel<S = S>>(&self, k: &mut K) -> (S, S, S) {
        let one_plus = k.addf(self.nu, 1.0);
        let two_one_plus = k.mulf(one_plus, 2.0);
        let shear = k.div(self.e, two_one_plus);
        let two_nu = k.mulf(self.nu, 2.0);
        let one_m = k.sub_from(1.0, two_nu);
        let denom = k.mulf(one_m, 3.0);
        let bulk = k.div(self.e, denom);
        let two_shear = k.mulf(shear, 2.0);
        (two_shear, bulk, shear)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VmModel<S> {
    pub elastic: ElasticConstants<S>,
    pub hardening: Hardening<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct DpModel<S> {
    pub elastic: ElasticConstants<S>,
    /// Friction angle (rad); ξ = (2/√3)cos φ, η = √3 sin φ, ψ = φ (associative).
    pub phi: S,
    /// Cohesion hardening law c(ε̄ᵖ).
    pub hardening: Hardening<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct LzyModel<S> {
    pub elastic: ElasticConstants<S>,
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
    /// Hardening-rule factor ε̄̇ᵖ = ω γ̇ (1.0 by default; ξ recovers Drucker-Prager).
    pub omega: S,
    /// Apex switching tolerance ε_apex in p_trial > (1 − ε_apex)·p_apex.
    pub eps_apex: f64,
    pub hardening: Hardening<S>,
    /// Optional linear hardening slopes (∂a/∂ε̄ᵖ, ∂b/∂ε̄ᵖ, ∂c/∂ε̄ᵖ, ∂d/∂ε̄ᵖ) for
    /// yield-parameter evolution; the general linearization terms activate only
    /// when any slope is nonzero. No shipped configuration uses them.
    pub yield_slopes: Option<[f64; 4]>,
}

/// Parameterized conventional model over any scalar backend.
#[derive(Clone, Copy, Debug)]
pub enum GenericModel<S> {
    Vm(VmModel<S>),
    Dp(DpModel<S>),
    Lzy(LzyModel<S>),
}

/// Per-integration-point history carried between increments.
#[derive(Clone, Copy, Debug)]
pub struct KernelState<S> {
    pub eps_e: V6<S>,
    pub eps_p_bar: S,
}

/// Per-lane branch bookkeeping of one increment.
#[derive(Clone, Debug, Default)]
pub struct BranchMasks {
    pub elastic: Vec<bool>,
    pub apex: Vec<bool>,
}

/// Outcome of a generic state update.
#[derive(Clone, Debug)]
pub struct KernelUpdate<S> {
    pub stress: V6<S>,
    pub state: KernelState<S>,
    pub dgamma: S,
    pub branches: BranchMasks,
    pub iterations: usize,
    pub residual: f64,
    /// Final return-mapping Jacobians at convergence (row-major), when a branch ran.
    pub smooth_jacobian: Option<Vec<S>>,
    pub apex_jacobian: Option<S>,
    /// True when any yield evaluation clamped J₂³ − cJ₃² at zero.
    pub domain_clamped: bool,
}

impl<S: Copy + std::fmt::Debug> GenericModel<S> {
    pub fn update<K: Kernel<S = S>>(
        &self,
        k: &mut K,
        state: &KernelState<S>,
        deps: &V6<S>,
        cfg: &NewtonCfg,
    ) -> Result<KernelUpdate<S>> {
        match self {
            GenericModel::Vm(m) => vm::update(k, m, state, deps, cfg),
            GenericModel::Dp(m) => dp::update(k, m, state, deps, cfg),
            GenericModel::Lzy(m) => lzy::update(k, m, state, deps, cfg),
        }
    }
}

// ---------------------------------------------------------------------------
// f64 front-end
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlasticMode {
    Elastic,
    Smooth,
    Apex,
}

/// Integration-point state: elastic/plastic strains, accumulated plastic strain,
/// last plastic multiplier increment and the branch taken.
#[derive(Clone, Copy, Debug)]
pub struct MaterialState {
    pub eps_e: SymTensor3,
    pub eps_p: SymTensor3,
    pub eps_p_bar: f64,
    pub dgamma: f64,
    pub mode: PlasticMode,
}

impl MaterialState {
    pub fn initial() -> Self {
        MaterialState {
            eps_e: SymTensor3::zero(TensorKind::Strain),
            eps_p: SymTensor3::zero(TensorKind::Strain),
            eps_p_bar: 0.0,
            dgamma: 0.0,
            mode: PlasticMode::Elastic,
        }
    }

    pub fn total_strain(&self) -> SymTensor3 {
        self.eps_e.add(&self.eps_p)
    }
}

#[derive(Clone, Debug)]
pub struct StateUpdateResult {
    pub stress: SymTensor3,
    pub state: MaterialState,
    pub tangent: Option<Tensor4Sym>,
    pub iterations: usize,
    pub residual: f64,
    /// Diagnostic: the LZY radicand J₂³ − cJ₃² was clamped at zero at least once.
    pub domain_clamped: bool,
}

impl GenericModel<f64> {
    /// Full f64 state update from the total strain at t_{n+1}.
    pub fn state_update(
        &self,
        strain_new: &SymTensor3,
        state_n: &MaterialState,
        want_tangent: bool,
        cfg: &NewtonCfg,
    ) -> Result<StateUpdateResult> {
        let total_n = state_n.total_strain();
        let deps: V6<f64> = std::array::from_fn(|i| strain_new.m[i] - total_n.m[i]);
        let mut k = F64Kernel;
        let kstate = KernelState {
            eps_e: state_n.eps_e.m,
            eps_p_bar: state_n.eps_p_bar,
        };
        let out = self.update(&mut k, &kstate, &deps, cfg)?;

        let mode = if out.branches.elastic[0] {
            PlasticMode::Elastic
        } else if out.branches.apex[0] {
            PlasticMode::Apex
        } else {
            PlasticMode::Smooth
        };
        let eps_e = SymTensor3::from_mandel(out.state.eps_e, TensorKind::Strain);
        let eps_p: [f64; 6] = std::array::from_fn(|i| strain_new.m[i] - out.state.eps_e[i]);
        let state = MaterialState {
            eps_e,
            eps_p: SymTensor3::from_mandel(eps_p, TensorKind::Strain),
            eps_p_bar: out.state.eps_p_bar,
            dgamma: out.dgamma,
            mode,
        };
        let tangent = if want_tangent {
            Some(self.tangent_from(&out, &kstate, &deps)?)
        } else {
            None
        };
        Ok(StateUpdateResult {
            stress: SymTensor3::from_mandel(out.stress, TensorKind::Stress),
            state,
            tangent,
            iterations: out.iterations,
            residual: out.residual,
            domain_clamped: out.domain_clamped,
        })
    }

    /// Consistent tangent dσ_{n+1}/dε_{n+1} of the converged update.
    pub fn consistent_tangent(
        &self,
        strain_new: &SymTensor3,
        state_n: &MaterialState,
        cfg: &NewtonCfg,
    ) -> Result<Tensor4Sym> {
        let res = self.state_update(strain_new, state_n, true, cfg)?;
        Ok(res.tangent.expect("tangent requested"))
    }

    fn tangent_from(
        &self,
        out: &KernelUpdate<f64>,
        state_n: &KernelState<f64>,
        deps: &V6<f64>,
    ) -> Result<Tensor4Sym> {
        let mut k = F64Kernel;
        if out.branches.elastic[0] {
            let (e, nu) = match self {
                GenericModel::Vm(m) => (m.elastic.e, m.elastic.nu),
                GenericModel::Dp(m) => (m.elastic.e, m.elastic.nu),
                GenericModel::Lzy(m) => (m.elastic.e, m.elastic.nu),
            };
            return Ok(crate::tensor::elasticity_tensor(e, nu)?.d);
        }
        match self {
            GenericModel::Vm(m) => vm::tangent(&mut k, m, out, state_n, deps),
            GenericModel::Dp(m) => dp::tangent(&mut k, m, out, state_n, deps),
            GenericModel::Lzy(m) => lzy::tangent(&mut k, m, out, state_n, deps),
        }
    }

    /// Runs a whole strain path from the virgin state, returning the stress path.
    pub fn run_path(&self, strains: &[SymTensor3], cfg: &NewtonCfg) -> Result<Vec<SymTensor3>> {
        let mut state = MaterialState::initial();
        let mut out = Vec::with_capacity(strains.len());
        for (step, eps) in strains.iter().enumerate() {
            let res = self
                .state_update(eps, &state, false, cfg)
                .map_err(|e| Error::StateUpdate {
                    sample: 0,
                    step,
                    source: Box::new(e),
                })?;
            state = res.state;
            out.push(res.stress);
        }
        Ok(out)
    }
}

/// Shared guard: √(max(x, floor)) with a relative floor, keeping masked lanes finite.
pub(crate) fn guarded_sqrt<K: Kernel>(k: &mut K, x: K::S, floor: f64) -> K::S {
    let clamped = k.maxf(x, floor);
    k.sqrt(clamped)
}

#[cfg(test)]
mod tests;
