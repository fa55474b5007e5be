//! Drucker-Prager model with isotropic cohesion hardening.
//!
//! Yield function Φ = √J₂ + η p − ξ c(ε̄ᵖ) with ξ = (2/√3)cos φ, η = √3 sin φ and
//! associative flow (ψ = φ). The return mapping solves the smooth cone first and
//! falls back to the apex when the cone solution is inadmissible
//! (√J₂_trial − GΔγ < 0). Cone hardening ε̄̇ᵖ = ξ γ̇; apex ε̄̇ᵖ = (ξ/η) ε̇ᵖ_vol.

use super::algebra::*;
use super::{BranchMasks, DpModel, KernelState, KernelUpdate};
use crate::autodiff::{Kernel, NewtonCfg};
use crate::error::Result;
use crate::tensor::Tensor4Sym;

pub(super) fn update<K: Kernel>(
    k: &mut K,
    m: &DpModel<K::S>,
    state: &KernelState<K::S>,
    deps: &V6<K::S>,
    cfg: &NewtonCfg,
) -> Result<KernelUpdate<K::S>> {
    let (two_shear, bulk, shear) = m.elastic.moduli(k);
    let cphi = k.cos(m.phi);
    let sphi = k.sin(m.phi);
    let xi = k.mulf(cphi, 2.0 / 3.0_f64.sqrt());
    let eta = k.mulf(sphi, 3.0_f64.sqrt());

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
    let sqj2_tr = super::guarded_sqrt(k, j2_tr, 1e-300);
    let c_n = m.hardening.value(k, state.eps_p_bar);
    let phi_tr = {
        let t1 = k.mul(eta, p_tr);
        let t2 = k.mul(xi, c_n);
        let s = k.add(sqj2_tr, t1);
        k.sub(s, t2)
    };

    let zero = k.constant(0.0);
    let elastic = k.cmp(phi_tr, zero, |a, b| a <= b);
    let elastic_lanes = k.mask_bools(&elastic);
    let lanes = elastic_lanes.len();
    if k.mask_all(&elastic) {
        return Ok(KernelUpdate {
            stress: sigma_tr,
            state: KernelState {
                eps_e: eps_e_tr,
                eps_p_bar: state.eps_p_bar,
            },
            dgamma: zero,
            branches: BranchMasks {
                apex: vec![false; lanes],
                elastic: elastic_lanes,
            },
            iterations: 0,
            residual: 0.0,
            smooth_jacobian: None,
            apex_jacobian: None,
            domain_clamped: false,
        });
    }

    // smooth cone return
    let plastic: Vec<bool> = elastic_lanes.iter().map(|e| !e).collect();
    let hardening = m.hardening;
    let epb_n = state.eps_p_bar;
    // residuals normalized by the initial cohesion so tolerances are dimensionless
    let inv_c0 = {
        let c0 = hardening.initial();
        k.recip(c0)
    };
    let cone = k.newton(&[zero], Some(&plastic), cfg, |k, alpha| {
        let dg = alpha[0];
        let xdg = k.mul(xi, dg);
        let epb = k.add(epb_n, xdg);
        let c = hardening.value(k, epb);
        let hp = hardening.slope(k, epb);
        // R = √J2_tr − GΔγ + η(p_tr − KηΔγ) − ξ c
        let gdg = k.mul(shear, dg);
        let keta = k.mul(bulk, eta);
        let ketadg = k.mul(keta, dg);
        let p_new = k.sub(p_tr, ketadg);
        let etap = k.mul(eta, p_new);
        let xic = k.mul(xi, c);
        let r0 = k.sub(sqj2_tr, gdg);
        let r1 = k.add(r0, etap);
        let r2 = k.sub(r1, xic);
        let r = k.mul(r2, inv_c0);
        // J = −(G + Kη² + ξ² H')
        let keta2 = k.mul(keta, eta);
        let xi2 = k.mul(xi, xi);
        let xih = k.mul(xi2, hp);
        let j0 = k.add(shear, keta2);
        let j1 = k.add(j0, xih);
        let j2n = k.neg(j1);
        let j = k.mul(j2n, inv_c0);
        (vec![r], vec![j])
    })?;
    let dg_cone = cone.solution[0];

    let gdg = k.mul(shear, dg_cone);
    let rem = k.sub(sqj2_tr, gdg);
    let cone_valid = k.cmp(rem, zero, |a, b| a >= b);
    let cone_valid_lanes = k.mask_bools(&cone_valid);
    let apex_lanes: Vec<bool> = plastic
        .iter()
        .zip(cone_valid_lanes.iter())
        .map(|(p, v)| *p && !v)
        .collect();
    let any_apex = apex_lanes.iter().any(|a| *a);

    // cone state
    let ratio = k.div(gdg, sqj2_tr);
    let fact = k.sub_from(1.0, ratio);
    let s_cone = v6_scale(k, &s_tr, fact);
    let keta = k.mul(bulk, eta);
    let ketadg = k.mul(keta, dg_cone);
    let p_cone = k.sub(p_tr, ketadg);
    let sigma_cone = v6_add_iso(k, &s_cone, p_cone);
    let epb_cone = {
        let t = k.mul(xi, dg_cone);
        k.add(epb_n, t)
    };
    let eps_e_cone = {
        let inv2g = k.recip(two_shear);
        let dev_e = v6_scale(k, &s_cone, inv2g);
        let three_k = k.mulf(bulk, 3.0);
        let mean_e = k.div(p_cone, three_k);
        v6_add_iso(k, &dev_e, mean_e)
    };

    // apex return (only recorded when some lane needs it)
    let (sigma_out, eps_e_out, epb_out, dg_out, apex_iters, apex_res, apex_jac) = if any_apex {
        let eta_safe = k.maxf(eta, 1e-12);
        let alpha_h = k.div(xi, eta_safe);
        let apex = k.newton(&[zero], Some(&apex_lanes), cfg, |k, a| {
            let depv = a[0];
            let adepv = k.mul(alpha_h, depv);
            let epb = k.add(epb_n, adepv);
            let c = hardening.value(k, epb);
            let hp = hardening.slope(k, epb);
            // R = (ξ/η) c − p_tr + K Δεᵖ_vol
            let ac = k.mul(alpha_h, c);
            let kd = k.mul(bulk, depv);
            let r0 = k.sub(ac, p_tr);
            let r1 = k.add(r0, kd);
            let r = k.mul(r1, inv_c0);
            let a2 = k.mul(alpha_h, alpha_h);
            let ah = k.mul(a2, hp);
            let j0 = k.add(ah, bulk);
            let j = k.mul(j0, inv_c0);
            (vec![r], vec![j])
        })?;
        let depv = apex.solution[0];
        let kd = k.mul(bulk, depv);
        let p_apex = k.sub(p_tr, kd);
        let zero6 = v6_zero(k);
        let sigma_apex = v6_add_iso(k, &zero6, p_apex);
        let eps_e_apex = {
            let three_k = k.mulf(bulk, 3.0);
            let mean_e = k.div(p_apex, three_k);
            v6_add_iso(k, &zero6, mean_e)
        };
        let epb_apex = {
            let t = k.mul(alpha_h, depv);
            k.add(epb_n, t)
        };
        let apex_mask = k.mask_from_bools(&apex_lanes);
        let sigma: V6<K::S> =
            std::array::from_fn(|i| k.select(&apex_mask, sigma_apex[i], sigma_cone[i]));
        let eps_e: V6<K::S> =
            std::array::from_fn(|i| k.select(&apex_mask, eps_e_apex[i], eps_e_cone[i]));
        let epb = k.select(&apex_mask, epb_apex, epb_cone);
        // Δγ is not defined at the apex; report the volumetric increment there
        let dg = k.select(&apex_mask, depv, dg_cone);
        (
            sigma,
            eps_e,
            epb,
            dg,
            apex.iterations,
            apex.residual,
            Some(apex.jacobian[0]),
        )
    } else {
        (
            sigma_cone,
            eps_e_cone,
            epb_cone,
            dg_cone,
            0,
            0.0,
            None,
        )
    };

    let stress = std::array::from_fn(|i| k.select(&elastic, sigma_tr[i], sigma_out[i]));
    let eps_e = std::array::from_fn(|i| k.select(&elastic, eps_e_tr[i], eps_e_out[i]));
    let eps_p_bar = k.select(&elastic, epb_n, epb_out);
    let dgamma = k.select(&elastic, zero, dg_out);

    Ok(KernelUpdate {
        stress,
        state: KernelState { eps_e, eps_p_bar },
        dgamma,
        branches: BranchMasks {
            elastic: elastic_lanes,
            apex: apex_lanes,
        },
        iterations: cone.iterations + apex_iters,
        residual: cone.residual.max(apex_res),
        smooth_jacobian: Some(vec![cone.jacobian[0]]),
        apex_jacobian: apex_jac,
        domain_clamped: false,
    })
}

pub(super) fn tangent(
    k: &mut crate::autodiff::F64Kernel,
    m: &DpModel<f64>,
    out: &KernelUpdate<f64>,
    state_n: &KernelState<f64>,
    deps: &V6<f64>,
) -> Result<Tensor4Sym> {
    let (two_shear, bulk, shear) = m.elastic.moduli(k);
    let xi = 2.0 / 3.0_f64.sqrt() * m.phi.cos();
    let eta = 3.0_f64.sqrt() * m.phi.sin();
    let hp = m.hardening.slope(k, out.state.eps_p_bar);
    let eye = crate::tensor::SymTensor3::identity(crate::tensor::TensorKind::Stress);

    if out.branches.apex[0] {
        // D = K (1 − K/(K + α² H′)) I⊗I with α = ξ/η
        let alpha = xi / eta.max(1e-12);
        let scal = bulk * (1.0 - bulk / (bulk + alpha * alpha * hp));
        return Ok(Tensor4Sym::dyad(&eye, &eye).scale(scal));
    }

    let eps_e_tr = v6_add(k, &state_n.eps_e, deps);
    let (dev_tr, _) = v6_dev(k, &eps_e_tr);
    let s_tr = v6_scale(k, &dev_tr, two_shear);
    let norm = v6_ddot(k, &s_tr, &s_tr).sqrt();
    let sqj2_tr = norm / 2.0_f64.sqrt();
    let n_hat = crate::tensor::SymTensor3::from_mandel(
        std::array::from_fn(|i| s_tr[i] / norm),
        crate::tensor::TensorKind::Stress,
    );
    let dgamma = out.dgamma;
    let denom = shear + bulk * eta * eta + xi * xi * hp;
    let fact = 1.0 - shear * dgamma / sqj2_tr;

    // v = √2 G N̂ + Kη I ; D = K I⊗I + 2G f 𝕀_d + (2G²Δγ/√J2_tr) N̂⊗N̂ − v⊗v/denom
    let v = n_hat
        .scale(2.0_f64.sqrt() * shear)
        .add(&eye.scale(bulk * eta));
    let d = Tensor4Sym::dyad(&eye, &eye)
        .scale(bulk)
        .add(&Tensor4Sym::deviatoric_projector().scale(two_shear * fact))
        .add(&Tensor4Sym::dyad(&n_hat, &n_hat).scale(2.0 * shear * shear * dgamma / sqj2_tr))
        .add(&Tensor4Sym::dyad(&v, &v).scale(-1.0 / denom));
    Ok(d)
}
