//! Lou-Zhang-Yoon (LZY) model: fully implicit state update and linearization.
//!
//! Yield function
//!
//! ```text
//! Φ = a { b I₁ + [ (J₂³ − c J₃²)^(1/2) − d J₃ ]^(1/3) } − σ_y(ε̄ᵖ)
//! ```
//!
//! with effective stress q̄ = a{…} and apex pressure p_apex = σ_y/(3ab). The
//! smooth return mapping solves the 8-unknown system (εᵉ, ε̄ᵖ, Δγ)
//!
//! ```text
//! R₁ = εᵉ − εᵉ_trial + Δγ N = 0,  R₂ = ε̄ᵖ − ε̄ᵖₙ − ωΔγ = 0,
//! R₃ = (q̄ − σ_y(ε̄ᵖ)) / σ_y(ε̄ᵖ₀) = 0
//! ```
//!
//! with the analytic Jacobian assembled from the w₁…w₅ auxiliary chain. The apex
//! return solves R₄ = σ_y(ε̄ᵖ)β − p_trial + KΔεᵖ_vol = 0 with
//! ε̄ᵖ = ε̄ᵖₙ + (ξ/η)Δεᵖ_vol, β = (3ab)⁻¹, η = 3ab, ξ = (2√3/3)√(1 − η²/3).
//! Branch selection: apex when p_trial > (1 − ε_apex)·p_apex.
//!
//! The radicand J₂³ − cJ₃² is clamped at zero (transient Newton iterates can
//! step outside the real domain); clamping is reported in the f64 results.

use super::algebra::*;
use super::{BranchMasks, KernelState, KernelUpdate, LzyModel};
use crate::autodiff::{Kernel, NewtonCfg};
use crate::error::Result;
use crate::tensor::{invariants, SymTensor3, Tensor4Sym, TensorKind};

/// Yield function value and effective stress at a fixed stress state.
#[derive(Clone, Copy, Debug)]
pub struct YieldValue {
    pub phi: f64,
    /// q̄ (MPa); Φ = q̄ − σ_y.
    pub effective_stress: f64,
    /// True when J₂³ − cJ₃² < 0 had to be clamped.
    pub domain_clamped: bool,
}

/// Evaluates the LZY yield function (f64).
pub fn yield_lzy(sigma: &SymTensor3, a: f64, b: f64, c: f64, d: f64, sigma_y: f64) -> YieldValue {
    let inv = invariants(sigma);
    let w2 = c * inv.j3 * inv.j3;
    let w4 = inv.j2.powi(3) - w2;
    let clamped = w4 < 0.0;
    let w4 = w4.max(0.0);
    let w5 = w4.sqrt() - d * inv.j3;
    // w5 < 0 can only happen outside the convexity domain; cbrt handles the sign
    let q_bar = a * (b * inv.i1 + w5.cbrt());
    YieldValue {
        phi: q_bar - sigma_y,
        effective_stress: q_bar,
        domain_clamped: clamped,
    }
}

/// Apex pressure p_apex = σ_y/(3ab); +∞ sentinel when ab ≤ 0 (no apex, the
/// smooth branch is always taken).
pub fn apex_pressure(a: f64, b: f64, sigma_y: f64) -> f64 {
    let ab = a * b;
    if ab <= 0.0 {
        f64::INFINITY
    } else {
        sigma_y / (3.0 * ab)
    }
}

/// q̄, flow vector and (optionally) its derivatives at a stress state.
struct YieldEval<S> {
    q_bar: S,
    flow: V6<S>,
    /// ∂N/∂σ when requested.
    dn_dsigma: Option<M66<S>>,
    /// ∂q̄/∂ε̄ᵖ and ∂N/∂ε̄ᵖ (only with yield-parameter hardening).
    dq_depsp: Option<S>,
    dn_depsp: Option<V6<S>>,
    clamped: bool,
}

struct YieldParams<S> {
    a: S,
    b: S,
    c: S,
    d: S,
    slopes: Option<[f64; 4]>,
}

/// Evaluates q̄, N = ∂q̄/∂σ and second derivatives via the auxiliary chain
/// w₁ = bI₁, w₂ = cJ₃², w₃ = dJ₃, w₄ = J₂³ − w₂, w₅ = √w₄ − w₃.
fn eval_yield<K: Kernel>(
    k: &mut K,
    sigma: &V6<K::S>,
    p: &YieldParams<K::S>,
    stress_scale: f64,
    want_second: bool,
) -> YieldEval<K::S> {
    let w4_floor = (1e-6 * stress_scale).powi(6);
    let w5_floor = (1e-6 * stress_scale).powi(3);

    let (dev, mean) = v6_dev(k, sigma);
    let i1 = k.mulf(mean, 3.0);
    let j2 = {
        let dd = v6_ddot(k, &dev, &dev);
        k.mulf(dd, 0.5)
    };
    let j3 = v6_det(k, &dev);

    let w1 = k.mul(p.b, i1);
    let j3sq = k.mul(j3, j3);
    let w2 = k.mul(p.c, j3sq);
    let w3 = k.mul(p.d, j3);
    let j2cub = {
        let j2sq = k.mul(j2, j2);
        k.mul(j2sq, j2)
    };
    let w4_raw = k.sub(j2cub, w2);
    let clamp_floor = k.constant(w4_floor);
    let clamped_mask = k.cmp(w4_raw, clamp_floor, |x, y| x < y);
    let clamped = !k.mask_none(&clamped_mask);
    let w4 = k.max2(w4_raw, clamp_floor);
    let sq_w4 = k.sqrt(w4);
    let w5_raw = k.sub(sq_w4, w3);
    let w5 = k.maxf(w5_raw, w5_floor);
    let w5_cbrt = k.powf(w5, 1.0 / 3.0);
    let sum = k.add(w1, w5_cbrt);
    let q_bar = k.mul(p.a, sum);

    // first derivatives
    let d_j2 = dev;
    let d_j3 = v6_dev_square(k, &dev);
    // dw2 = 2c J₃ dJ₃ ; dw3 = d dJ₃ ; dw4 = 3J₂² dJ₂ − dw2 ; dw5 = ½w₄^{−½}dw4 − dw3
    let two_cj3 = {
        let t = k.mul(p.c, j3);
        k.mulf(t, 2.0)
    };
    let d_w2 = v6_scale(k, &d_j3, two_cj3);
    let d_w3 = v6_scale(k, &d_j3, p.d);
    let three_j2sq = {
        let t = k.mul(j2, j2);
        k.mulf(t, 3.0)
    };
    let d_w4 = {
        let t = v6_scale(k, &d_j2, three_j2sq);
        v6_sub(k, &t, &d_w2)
    };
    let inv_sq_w4 = k.recip(sq_w4);
    let half_inv_sq = k.mulf(inv_sq_w4, 0.5);
    let d_w5 = {
        let t = v6_scale(k, &d_w4, half_inv_sq);
        v6_sub(k, &t, &d_w3)
    };
    // N = a (b I + ⅓ w₅^{−⅔} dw5)
    let w5_m23 = k.powf(w5, -2.0 / 3.0);
    let third_w5 = k.mulf(w5_m23, 1.0 / 3.0);
    let ab = k.mul(p.a, p.b);
    let flow = {
        let t = v6_scale(k, &d_w5, third_w5);
        let scaled = v6_scale(k, &t, p.a);
        v6_add_iso(k, &scaled, ab)
    };

    let mut out = YieldEval {
        q_bar,
        flow,
        dn_dsigma: None,
        dq_depsp: None,
        dn_depsp: None,
        clamped,
    };
    if !want_second {
        return out;
    }

    // second derivatives
    // d²J₃ = 𝕀_d (X ↦ σ_d X + X σ_d) 𝕀_d ; d²J₂ = 𝕀_d
    let anti = m66_anticommutator(k, &dev);
    let d2_j3 = m66_project_dev(k, &anti);
    // d²w₂ = 2c(dJ₃⊗dJ₃ + J₃ d²J₃)
    let d2_w2 = {
        let dy = m66_dyad(k, &d_j3, &d_j3);
        let two_c = k.mulf(p.c, 2.0);
        let dy2 = m66_scale(k, &dy, two_c);
        let j3term = m66_scale(k, &d2_j3, two_cj3);
        m66_add(k, &dy2, &j3term)
    };
    let d2_w3 = m66_scale(k, &d2_j3, p.d);
    let d2_w4 = {
        let six_j2 = k.mulf(j2, 6.0);
        let dy = m66_dyad(k, &d_j2, &d_j2);
        let t1 = m66_scale(k, &dy, six_j2);
        let mut id_dev = m66_identity(k);
        id_dev = {
            // 𝕀_d explicit: subtract ⅓ on the normal block
            let third = k.constant(1.0 / 3.0);
            for i in 0..3 {
                for j in 0..3 {
                    id_dev[i * 6 + j] = k.sub(id_dev[i * 6 + j], third);
                }
            }
            id_dev
        };
        let t2 = m66_scale(k, &id_dev, three_j2sq);
        let s = m66_add(k, &t1, &t2);
        let neg = {
            let m1 = k.constant(-1.0);
            m66_scale(k, &d2_w2, m1)
        };
        m66_add(k, &s, &neg)
    };
    let d2_w5 = {
        // −¼w₄^{−3/2} dw4⊗dw4 + ½w₄^{−½} d²w4 − d²w3
        let w4_m32 = {
            let t = k.mul(inv_sq_w4, inv_sq_w4);
            k.mul(t, inv_sq_w4)
        };
        let quarter = k.mulf(w4_m32, -0.25);
        let dy = m66_dyad(k, &d_w4, &d_w4);
        let t1 = m66_scale(k, &dy, quarter);
        let t2 = m66_scale(k, &d2_w4, half_inv_sq);
        let s = m66_add(k, &t1, &t2);
        let neg = {
            let m1 = k.constant(-1.0);
            m66_scale(k, &d2_w3, m1)
        };
        m66_add(k, &s, &neg)
    };
    // ∂N/∂σ = a(−(2/9)w₅^{−5/3} dw5⊗dw5 + ⅓w₅^{−⅔} d²w5)
    let dn_dsigma = {
        let w5_m53 = k.powf(w5, -5.0 / 3.0);
        let c1 = k.mulf(w5_m53, -2.0 / 9.0);
        let dy = m66_dyad(k, &d_w5, &d_w5);
        let t1 = m66_scale(k, &dy, c1);
        let t2 = m66_scale(k, &d2_w5, third_w5);
        let s = m66_add(k, &t1, &t2);
        m66_scale(k, &s, p.a)
    };
    out.dn_dsigma = Some(dn_dsigma);

    if let Some(slopes) = p.slopes {
        let [ka, kb, kc, kd] = slopes;
        // ∂w/∂ε̄ᵖ chain with linear parameter hardening
        let dw1 = k.mulf(i1, kb);
        let dw2 = k.mulf(j3sq, kc);
        let dw3 = k.mulf(j3, kd);
        let dw4 = k.mulf(dw2, -1.0);
        let dw5 = {
            let t = k.mul(half_inv_sq, dw4);
            k.sub(t, dw3)
        };
        // ∂q̄/∂ε̄ᵖ = ka(w₁ + w₅^{1/3}) + a(∂w₁ + ⅓w₅^{−⅔}∂w₅)
        let dq = {
            let t0 = k.mulf(sum, ka);
            let t1 = k.mul(third_w5, dw5);
            let t2 = k.add(dw1, t1);
            let t3 = k.mul(p.a, t2);
            k.add(t0, t3)
        };
        out.dq_depsp = Some(dq);
        // ∂N/∂ε̄ᵖ = ka(bI + ⅓w₅^{−⅔}dw5) + a(kb I − (2/9)w₅^{−5/3}∂w₅ dw5
        //           + ⅓w₅^{−⅔} ∂²w₅/∂σ∂ε̄ᵖ)
        let d2w2_m = {
            let t = k.mulf(j3, 2.0 * kc);
            v6_scale(k, &d_j3, t)
        };
        let d2w3_m = {
            let t = k.constant(kd);
            v6_scale(k, &d_j3, t)
        };
        let d2w4_m = {
            let m1 = k.constant(-1.0);
            v6_scale(k, &d2w2_m, m1)
        };
        // ∂²w₅/∂σ∂ε̄ᵖ = −¼w₄^{−3/2}(∂w₄/∂ε̄ᵖ)dw4 + ½w₄^{−½}∂²w₄/∂σ∂ε̄ᵖ − ∂²w₃/∂σ∂ε̄ᵖ
        let d2w5_m = {
            let w4_m32 = {
                let t = k.mul(inv_sq_w4, inv_sq_w4);
                k.mul(t, inv_sq_w4)
            };
            let c0 = k.mulf(w4_m32, -0.25);
            let c1 = k.mul(c0, dw4);
            let t1 = v6_scale(k, &d_w4, c1);
            let t2 = v6_scale(k, &d2w4_m, half_inv_sq);
            let s = v6_add(k, &t1, &t2);
            v6_sub(k, &s, &d2w3_m)
        };
        // ∂N/∂ε̄ᵖ = ka(bI + ⅓w₅^{−⅔}dw5)
        //         + a(kb I − (2/9)w₅^{−5/3}(∂w₅/∂ε̄ᵖ)dw5 + ⅓w₅^{−⅔}∂²w₅/∂σ∂ε̄ᵖ)
        let dn = {
            let base = {
                let t = v6_scale(k, &d_w5, third_w5);
                let inner: V6<K::S> = v6_add_iso(k, &t, p.b);
                let ka_s = k.constant(ka);
                v6_scale(k, &inner, ka_s)
            };
            let t0 = {
                let z = v6_zero(k);
                let kb_s = k.constant(kb);
                v6_add_iso(k, &z, kb_s)
            };
            let c1 = {
                let w5_m53 = k.powf(w5, -5.0 / 3.0);
                let t = k.mulf(w5_m53, -2.0 / 9.0);
                k.mul(t, dw5)
            };
            let t1 = v6_scale(k, &d_w5, c1);
            let t2 = v6_scale(k, &d2w5_m, third_w5);
            let s0 = v6_add(k, &t0, &t1);
            let s1 = v6_add(k, &s0, &t2);
            let s2 = v6_scale(k, &s1, p.a);
            v6_add(k, &base, &s2)
        };
        out.dn_depsp = Some(dn);
    }
    out
}

pub(super) fn update<K: Kernel>(
    k: &mut K,
    m: &LzyModel<K::S>,
    state: &KernelState<K::S>,
    deps: &V6<K::S>,
    cfg: &NewtonCfg,
) -> Result<KernelUpdate<K::S>> {
    let (two_shear, bulk, _) = m.elastic.moduli(k);
    let sigma_y0 = m.hardening.initial();
    let sy0_vals = k.lane_values(sigma_y0);
    let stress_scale = sy0_vals.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1.0);
    let params = YieldParams {
        a: m.a,
        b: m.b,
        c: m.c,
        d: m.d,
        slopes: m.yield_slopes,
    };

    let eps_e_tr = v6_add(k, &state.eps_e, deps);
    let sigma_tr = iso_stress(k, &eps_e_tr, two_shear, bulk);
    let (_, p_tr) = v6_dev(k, &sigma_tr);
    let sy_n = m.hardening.value(k, state.eps_p_bar);
    let trial = eval_yield(k, &sigma_tr, &params, stress_scale, false);
    let phi_tr = k.sub(trial.q_bar, sy_n);

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
            domain_clamped: trial.clamped,
        });
    }

    // branch criterion: apex when p_trial > (1 − ε_apex) p_apex, p_apex = σ_y β
    let ab = k.mul(m.a, m.b);
    let tiny_ab = k.constant(1e-12);
    let has_apex = k.cmp(ab, tiny_ab, |x, y| x > y);
    let ab_safe = k.maxf(ab, 1e-12);
    let three_ab = k.mulf(ab_safe, 3.0);
    let beta = k.recip(three_ab);
    let p_apex = k.mul(sy_n, beta);
    let p_apex_tol = k.mulf(p_apex, 1.0 - m.eps_apex);
    let beyond = k.cmp(p_tr, p_apex_tol, |x, y| x > y);
    let plastic: Vec<bool> = elastic_lanes.iter().map(|e| !e).collect();
    let apex_lanes: Vec<bool> = plastic
        .iter()
        .zip(k.mask_bools(&has_apex).iter().cycle())
        .zip(k.mask_bools(&beyond).iter().cycle())
        .map(|((p, h), b)| *p && *h && *b)
        .collect();
    let smooth_lanes: Vec<bool> = plastic
        .iter()
        .zip(apex_lanes.iter())
        .map(|(p, a)| *p && !a)
        .collect();
    let any_smooth = smooth_lanes.iter().any(|s| *s);
    let any_apex = apex_lanes.iter().any(|a| *a);

    let epb_n = state.eps_p_bar;
    let hardening = m.hardening;
    let omega = m.omega;

    // smooth return mapping: α = (εᵉ[6], ε̄ᵖ, Δγ)
    let mut smooth_sol: Option<(V6<K::S>, K::S, K::S, V6<K::S>)> = None;
    let mut smooth_jac: Option<Vec<K::S>> = None;
    let mut iters = 0;
    let mut resid = 0.0f64;
    let mut clamped_any = trial.clamped;
    let clamp_flag = std::cell::Cell::new(false);
    if any_smooth {
        let mut alpha0: Vec<K::S> = eps_e_tr.to_vec();
        alpha0.push(epb_n);
        alpha0.push(zero);
        let inv_sy0 = k.recip(sigma_y0);
        let outcome = k.newton(&alpha0, Some(&smooth_lanes), cfg, |k, al| {
            let eps_e: V6<K::S> = std::array::from_fn(|i| al[i]);
            let epb = al[6];
            let dg = al[7];
            let sigma = iso_stress(k, &eps_e, two_shear, bulk);
            let ev = eval_yield(k, &sigma, &params, stress_scale, true);
            if ev.clamped {
                clamp_flag.set(true);
            }
            let sy = hardening.value(k, epb);
            let hp = hardening.slope(k, epb);

            // residuals
            let r1 = {
                let t = v6_scale(k, &ev.flow, dg);
                let d = v6_sub(k, &eps_e, &eps_e_tr);
                v6_add(k, &d, &t)
            };
            let r2 = {
                let t = k.mul(omega, dg);
                let d = k.sub(epb, epb_n);
                k.sub(d, t)
            };
            let r3 = {
                let d = k.sub(ev.q_bar, sy);
                k.mul(d, inv_sy0)
            };
            let mut r: Vec<K::S> = r1.to_vec();
            r.push(r2);
            r.push(r3);

            // Jacobian 8×8, rows (R₁[6], R₂, R₃), cols (εᵉ[6], ε̄ᵖ, Δγ)
            let dn_ds = ev.dn_dsigma.as_ref().expect("second derivatives requested");
            let dn_de = m66_compose_iso(k, dn_ds, two_shear, bulk);
            let mut jac = vec![zero; 64];
            for i in 0..6 {
                for j in 0..6 {
                    let t = k.mul(dg, dn_de[i * 6 + j]);
                    jac[i * 8 + j] = if i == j { k.addf(t, 1.0) } else { t };
                }
                // ∂R₁/∂ε̄ᵖ
                jac[i * 8 + 6] = match &ev.dn_depsp {
                    Some(dn) => k.mul(dg, dn[i]),
                    None => zero,
                };
                // ∂R₁/∂Δγ = N
                jac[i * 8 + 7] = ev.flow[i];
            }
            // R₂ row
            jac[6 * 8 + 6] = k.constant(1.0);
            jac[6 * 8 + 7] = k.neg(omega);
            // R₃ row: (N : Dᵉ)/σ_y0 | (∂q̄/∂ε̄ᵖ − H′)/σ_y0 | 0
            let n_de = iso_stress(k, &ev.flow, two_shear, bulk);
            for j in 0..6 {
                jac[7 * 8 + j] = k.mul(n_de[j], inv_sy0);
            }
            let dq = match ev.dq_depsp {
                Some(d) => k.sub(d, hp),
                None => k.neg(hp),
            };
            jac[7 * 8 + 6] = k.mul(dq, inv_sy0);
            (r, jac)
        })?;
        let eps_e_s: V6<K::S> = std::array::from_fn(|i| outcome.solution[i]);
        let sigma_s = iso_stress(k, &eps_e_s, two_shear, bulk);
        smooth_sol = Some((eps_e_s, outcome.solution[6], outcome.solution[7], sigma_s));
        smooth_jac = Some(outcome.jacobian);
        iters += outcome.iterations;
        resid = resid.max(outcome.residual);
        clamped_any = clamped_any || clamp_flag.get();
    }

    // apex return mapping: α = Δεᵖ_vol
    let mut apex_sol: Option<(V6<K::S>, K::S, K::S, V6<K::S>)> = None;
    let mut apex_jac: Option<K::S> = None;
    if any_apex {
        let eta = k.mulf(ab_safe, 3.0);
        let eta_sq = k.mul(eta, eta);
        let one_m = {
            let t = k.divf(eta_sq, 3.0);
            k.sub_from(1.0, t)
        };
        let xi = {
            let s = super::guarded_sqrt(k, one_m, 1e-12);
            k.mulf(s, 2.0 * 3.0_f64.sqrt() / 3.0)
        };
        let alpha_h = k.div(xi, eta);
        let inv_sy0 = k.recip(sigma_y0);
        let outcome = k.newton(&[zero], Some(&apex_lanes), cfg, |k, a| {
            let depv = a[0];
            let adepv = k.mul(alpha_h, depv);
            let epb = k.add(epb_n, adepv);
            let sy = hardening.value(k, epb);
            let hp = hardening.slope(k, epb);
            let r = {
                let t0 = k.mul(sy, beta);
                let t1 = k.sub(t0, p_tr);
                let kd = k.mul(bulk, depv);
                let raw = k.add(t1, kd);
                k.mul(raw, inv_sy0)
            };
            let j = {
                let t = k.mul(alpha_h, beta);
                let th = k.mul(t, hp);
                let raw = k.add(th, bulk);
                k.mul(raw, inv_sy0)
            };
            (vec![r], vec![j])
        })?;
        let depv = outcome.solution[0];
        let kd = k.mul(bulk, depv);
        let p_new = k.sub(p_tr, kd);
        let zero6 = v6_zero(k);
        let sigma_a = v6_add_iso(k, &zero6, p_new);
        let eps_e_a = {
            let three_k = k.mulf(bulk, 3.0);
            let mean_e = k.div(p_new, three_k);
            v6_add_iso(k, &zero6, mean_e)
        };
        let epb_a = {
            let t = k.mul(alpha_h, depv);
            k.add(epb_n, t)
        };
        apex_sol = Some((eps_e_a, epb_a, depv, sigma_a));
        apex_jac = Some(outcome.jacobian[0]);
        iters += outcome.iterations;
        resid = resid.max(outcome.residual);
    }

    // combine: elastic → trial; apex → apex; else smooth
    let (eps_e_p, epb_p, dg_p, sigma_p) = match (smooth_sol, apex_sol) {
        (Some(s), Some(a)) => {
            let am = k.mask_from_bools(&apex_lanes);
            let eps_e = std::array::from_fn(|i| k.select(&am, a.0[i], s.0[i]));
            let epb = k.select(&am, a.1, s.1);
            let dg = k.select(&am, a.2, s.2);
            let sigma = std::array::from_fn(|i| k.select(&am, a.3[i], s.3[i]));
            (eps_e, epb, dg, sigma)
        }
        (Some(s), None) => s,
        (None, Some(a)) => a,
        (None, None) => unreachable!("plastic step with no branch"),
    };

    let stress = std::array::from_fn(|i| k.select(&elastic, sigma_tr[i], sigma_p[i]));
    let eps_e = std::array::from_fn(|i| k.select(&elastic, eps_e_tr[i], eps_e_p[i]));
    let eps_p_bar = k.select(&elastic, epb_n, epb_p);
    let dgamma = k.select(&elastic, zero, dg_p);

    Ok(KernelUpdate {
        stress,
        state: KernelState { eps_e, eps_p_bar },
        dgamma,
        branches: BranchMasks {
            elastic: elastic_lanes,
            apex: apex_lanes,
        },
        iterations: iters,
        residual: resid,
        smooth_jacobian: smooth_jac,
        apex_jacobian: apex_jac,
        domain_clamped: clamped_any,
    })
}

/// Consistent tangent (f64): Dᵉ (J⁻¹)₁₁ for the smooth branch, K(1 − K J⁻¹) I⊗I
/// at the apex.
pub(super) fn tangent(
    _k: &mut crate::autodiff::F64Kernel,
    m: &LzyModel<f64>,
    out: &KernelUpdate<f64>,
    _state_n: &KernelState<f64>,
    _deps: &V6<f64>,
) -> Result<Tensor4Sym> {
    let el = crate::tensor::elasticity_tensor(m.elastic.e, m.elastic.nu)?;
    if out.branches.apex[0] {
        // stored Jacobian is normalized by σ_y0; undo for the tangent formula
        let sy0 = m.hardening.initial();
        let j = out.apex_jacobian.expect("apex jacobian recorded") * sy0;
        let eye = SymTensor3::identity(TensorKind::Stress);
        let scal = el.bulk * (1.0 - el.bulk / j);
        return Ok(Tensor4Sym::dyad(&eye, &eye).scale(scal));
    }
    let jac = out
        .smooth_jacobian
        .as_ref()
        .expect("smooth jacobian recorded");
    let inv = crate::autodiff::kernel::invert_dense(jac, 8).ok_or_else(|| {
        crate::error::Error::Convergence {
            context: "LZY consistent tangent: singular return-mapping Jacobian".into(),
            iterations: out.iterations,
            residual: out.residual,
        }
    })?;
    let mut block = Tensor4Sym::zero();
    for i in 0..6 {
        for j in 0..6 {
            block.m[i][j] = inv[i * 8 + j];
        }
    }
    Ok(el.d.compose(&block))
}
