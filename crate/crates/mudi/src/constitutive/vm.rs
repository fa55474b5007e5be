//! Von Mises model with isotropic hardening: radial return mapping.
//!
//! Yield function Φ = q − σ_y(ε̄ᵖ) with q = √(3 J₂); associative flow gives the
//! classical scalar consistency equation q_trial − 3GΔγ − σ_y(ε̄ᵖₙ + Δγ) = 0.

use super::algebra::*;
use super::{BranchMasks, KernelState, KernelUpdate, VmModel};
use crate::autodiff::{Kernel, NewtonCfg};
use crate::error::Result;
use crate::tensor::Tensor4Sym;

pub(super) fn update<K: Kernel>(
    k: &mut K,
    m: &VmModel<K::S>,
    state: &KernelState<K::S>,
    deps: &V6<K::S>,
    cfg: &NewtonCfg,
) -> Result<KernelUpdate<K::S>> {
    let (two_shear, bulk, shear) = m.elastic.moduli(k);
    let eps_e_tr = v6_add(k, &state.eps_e, deps);
    let (dev_tr, mean_tr) = v6_dev(k, &eps_e_tr);
    let s_tr = v6_scale(k, &dev_tr, two_shear);
    let tr_eps = k.mulf(mean_tr, 3.0);
    let p_tr = k.mul(bulk, tr_eps);
    let sigma_tr = v6_add_iso(k, &s_tr, p_tr);

    let j2_tr = {
        let dd = v6_ddot(k, &s_tr, &s_tr);
        k.mulf(dd, 0.5)
    };
    let three_j2 = k.mulf(j2_tr, 3.0);
    let q_tr = super::guarded_sqrt(k, three_j2, 1e-300);
    let sy_n = m.hardening.value(k, state.eps_p_bar);
    let phi_tr = k.sub(q_tr, sy_n);

    let zero = k.constant(0.0);
    let elastic = k.cmp(phi_tr, zero, |a, b| a <= b);
    let elastic_lanes = k.mask_bools(&elastic);
    if k.mask_all(&elastic) {
        return Ok(KernelUpdate {
            stress: sigma_tr,
            state: KernelState {
                eps_e: eps_e_tr,
                eps_p_bar: state.eps_p_bar,
            },
            dgamma: zero,
            branches: BranchMasks {
                apex: vec![false; elastic_lanes.len()],
                elastic: elastic_lanes,
            },
            iterations: 0,
            residual: 0.0,
            smooth_jacobian: None,
            apex_jacobian: None,
            domain_clamped: false,
        });
    }

    // radial return: scalar Newton on Δγ
    let active: Vec<bool> = elastic_lanes.iter().map(|e| !e).collect();
    let three_shear = k.mulf(shear, 3.0);
    let hardening = m.hardening;
    let eps_p_bar_n = state.eps_p_bar;
    // consistency residual normalized by σ_y(0) so tolerances are dimensionless
    let inv_sy0 = {
        let sy0 = hardening.initial();
        k.recip(sy0)
    };
    let outcome = k.newton(&[zero], Some(&active), cfg, |k, alpha| {
        let dg = alpha[0];
        let epb = k.add(eps_p_bar_n, dg);
        let sy = hardening.value(k, epb);
        let hp = hardening.slope(k, epb);
        let ret = k.mul(three_shear, dg);
        let r0 = k.sub(q_tr, ret);
        let r1 = k.sub(r0, sy);
        let r = k.mul(r1, inv_sy0);
        let j0 = k.add(three_shear, hp);
        let j1 = k.neg(j0);
        let j = k.mul(j1, inv_sy0);
        (vec![r], vec![j])
    })?;
    let dgamma = outcome.solution[0];

    // σ = p_tr I + (1 − 3GΔγ/q_tr) s_tr ; εᵉ = s/(2G) + (tr εᵉ_tr/3) I
    let ret = k.mul(three_shear, dgamma);
    let ratio = k.div(ret, q_tr);
    let factor = k.sub_from(1.0, ratio);
    let s_new = v6_scale(k, &s_tr, factor);
    let sigma_pl = v6_add_iso(k, &s_new, p_tr);
    let dev_e = {
        let inv2g = k.recip(two_shear);
        v6_scale(k, &s_new, inv2g)
    };
    let eps_e_pl = v6_add_iso(k, &dev_e, mean_tr);
    let epb_pl = k.add(eps_p_bar_n, dgamma);

    let stress = std::array::from_fn(|i| k.select(&elastic, sigma_tr[i], sigma_pl[i]));
    let eps_e = std::array::from_fn(|i| k.select(&elastic, eps_e_tr[i], eps_e_pl[i]));
    let eps_p_bar = k.select(&elastic, eps_p_bar_n, epb_pl);
    let dgamma = k.select(&elastic, zero, dgamma);

    Ok(KernelUpdate {
        stress,
        state: KernelState { eps_e, eps_p_bar },
        dgamma,
        branches: BranchMasks {
            apex: vec![false; elastic_lanes.len()],
            elastic: elastic_lanes,
        },
        iterations: outcome.iterations,
        residual: outcome.residual,
        smooth_jacobian: None,
        apex_jacobian: None,
        domain_clamped: false,
    })
}

/// Consistent elastoplastic tangent of the radial return (f64):
/// D = K I⊗I + 2G(1 − 3GΔγ/q_tr) 𝕀_d − 6G² [1/(3G+H′) − Δγ/q_tr] N̂⊗N̂
/// with N̂ the unit trial deviator direction.
pub(super) fn tangent(
    k: &mut crate::autodiff::F64Kernel,
    m: &VmModel<f64>,
    out: &KernelUpdate<f64>,
    state_n: &KernelState<f64>,
    deps: &V6<f64>,
) -> Result<Tensor4Sym> {
    let (two_shear, bulk, shear) = m.elastic.moduli(k);
    let eps_e_tr = v6_add(k, &state_n.eps_e, deps);
    let (dev_tr, _) = v6_dev(k, &eps_e_tr);
    let s_tr = v6_scale(k, &dev_tr, two_shear);
    let norm = v6_ddot(k, &s_tr, &s_tr).sqrt();
    let q_tr = (1.5f64).sqrt() * norm;
    let n_hat: V6<f64> = std::array::from_fn(|i| s_tr[i] / norm);
    let dgamma = out.dgamma;
    let hp = m.hardening.slope(k, out.state.eps_p_bar);

    let eye = crate::tensor::SymTensor3::identity(crate::tensor::TensorKind::Stress);
    let nh = crate::tensor::SymTensor3::from_mandel(n_hat, crate::tensor::TensorKind::Stress);
    let factor = 1.0 - 3.0 * shear * dgamma / q_tr;
    let coeff = 6.0 * shear * shear * (1.0 / (3.0 * shear + hp) - dgamma / q_tr);
    let d = Tensor4Sym::dyad(&eye, &eye)
        .scale(bulk)
        .add(&Tensor4Sym::deviatoric_projector().scale(two_shear * factor))
        .add(&Tensor4Sym::dyad(&nh, &nh).scale(-coeff));
    Ok(d)
}
