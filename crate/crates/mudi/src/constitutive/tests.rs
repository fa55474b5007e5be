use super::*;
use crate::autodiff::{Tape, TapeKernel};
use crate::tensor::elasticity_tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SQ3: f64 = 1.732_050_807_568_877_2;

fn vm_table() -> GenericModel<f64> {
    GenericModel::Vm(VmModel {
        elastic: ElasticConstants {
            e: 110_000.0,
            nu: 0.33,
        },
        hardening: Hardening::NadaiLudwik {
            s0: 900.0 * SQ3,
            s1: 700.0 * SQ3,
            s2: 0.5,
        },
    })
}

fn lzy_table() -> GenericModel<f64> {
    GenericModel::Lzy(LzyModel {
        elastic: ElasticConstants {
            e: 110_000.0,
            nu: 0.33,
        },
        a: 1.0,
        b: 0.05,
        c: 1.0,
        d: 0.5,
        omega: 1.0,
        eps_apex: 1e-8,
        hardening: Hardening::NadaiLudwik {
            s0: 900.0,
            s1: 700.0,
            s2: 0.5,
        },
        yield_slopes: None,
    })
}

fn dp_table(phi: f64) -> GenericModel<f64> {
    let xi = 2.0 / SQ3 * phi.cos();
    GenericModel::Dp(DpModel {
        elastic: ElasticConstants {
            e: 110_000.0,
            nu: 0.33,
        },
        phi,
        hardening: Hardening::NadaiLudwik {
            s0: 900.0 / xi,
            s1: 700.0 / xi,
            s2: 0.5,
        },
    })
}

fn strain(c: [f64; 6]) -> SymTensor3 {
    SymTensor3::from_tensor_components(c, TensorKind::Strain)
}

fn random_path(rng: &mut StdRng, n: usize, amp: f64) -> Vec<SymTensor3> {
    // piecewise-linear wander through strain space, starting at zero
    let mut target = [0.0; 6];
    let mut path = Vec::with_capacity(n);
    let mut cur = [0.0; 6];
    for step in 0..n {
        if step % 10 == 0 {
            for t in &mut target {
                *t = rng.gen_range(-amp..amp);
            }
        }
        for i in 0..6 {
            cur[i] += (target[i] - cur[i]) * 0.25;
        }
        path.push(strain(cur));
    }
    path
}

// ---- yield function and apex pressure --------------------------------------

#[test]
fn yield_lzy_reduces_to_j2_form() {
    // a=1, b=c=d=0 → Φ = √J2 − σ_y
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..50 {
        let mut c = [0.0; 6];
        for v in &mut c {
            *v = rng.gen_range(-500.0..500.0);
        }
        let s = SymTensor3::from_tensor_components(c, TensorKind::Stress);
        let j2 = crate::tensor::invariants(&s).j2;
        let y = yield_lzy(&s, 1.0, 0.0, 0.0, 0.0, 300.0);
        assert!((y.phi - (j2.sqrt() - 300.0)).abs() < 1e-8 * j2.sqrt().max(1.0));
    }
}

#[test]
fn yield_lzy_uniaxial_cases() {
    // a = √3, b=c=d=0, uniaxial: Φ = σ11 − σ_y
    let s11 = 1234.5;
    let s = SymTensor3::from_tensor_components([s11, 0.0, 0.0, 0.0, 0.0, 0.0], TensorKind::Stress);
    let y = yield_lzy(&s, SQ3, 0.0, 0.0, 0.0, 900.0);
    assert!((y.phi - (s11 - 900.0)).abs() < 1e-9 * s11);

    // Table ground truth (a=1, b=0.05, c=1, d=0.5): q̄ ≈ 0.56994·σ11, onset ≈ 1579.2 MPa
    let y = yield_lzy(&s, 1.0, 0.05, 1.0, 0.5, 900.0);
    let factor = y.effective_stress / s11;
    assert!(
        (factor - 0.56994).abs() < 1e-4,
        "effective stress factor {factor}"
    );
    let onset = 900.0 / factor;
    assert!((onset - 1579.2).abs() < 0.5, "uniaxial onset {onset}");
}

#[test]
fn apex_pressure_examples() {
    assert!((apex_pressure(1.0, 0.05, 900.0) - 6000.0).abs() < 1e-9);
    assert!((apex_pressure(1.0, 0.05, 1800.0) - 12_000.0).abs() < 1e-9);
    assert!(apex_pressure(1.0, 0.0, 900.0).is_infinite());
}

// ---- hardening --------------------------------------------------------------

#[test]
fn hardening_value_and_slope() {
    let mut k = crate::autodiff::F64Kernel;
    let h = Hardening::NadaiLudwik {
        s0: 900.0,
        s1: 700.0,
        s2: 0.5,
    };
    assert_eq!(h.value(&mut k, 0.0), 900.0); // exact s0 at zero
    assert!((h.value(&mut k, 0.04) - (900.0 + 700.0 * 0.2)).abs() < 1e-9);
    assert!(h.slope(&mut k, 0.0).is_finite());
    let lin = Hardening::Linear { sy0: 1200.0, h: 600.0 };
    assert_eq!(lin.value(&mut k, 0.01), 1206.0);
    assert_eq!(lin.slope(&mut k, 0.3), 600.0);
}

// ---- von Mises --------------------------------------------------------------

#[test]
fn vm_zero_strain_gives_zero_stress() {
    let m = vm_table();
    let res = m
        .state_update(
            &SymTensor3::zero(TensorKind::Strain),
            &MaterialState::initial(),
            false,
            &NewtonCfg::default(),
        )
        .unwrap();
    assert_eq!(res.stress.norm(), 0.0);
    assert_eq!(res.state.mode, PlasticMode::Elastic);
}

#[test]
fn vm_elastic_step_is_exact() {
    let m = vm_table();
    let el = elasticity_tensor(110_000.0, 0.33).unwrap();
    let eps = strain([1e-3, -2e-4, 3e-4, 2e-4, -1e-4, 5e-5]);
    let res = m
        .state_update(&eps, &MaterialState::initial(), true, &NewtonCfg::default())
        .unwrap();
    let expect = el.d.apply(&eps);
    for i in 0..6 {
        assert!((res.stress.m[i] - expect.m[i]).abs() < 1e-9 * expect.norm());
    }
    // elastic tangent is Dᵉ exactly
    let tg = res.tangent.unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(tg.m[i][j], el.d.m[i][j]);
        }
    }
}

/// Closed-form 1D elastoplastic response under uniaxial stress:
/// σ = E ε_a while elastic; beyond yield solve E(ε_a − ε̄ᵖ) = s0 + s1 (ε̄ᵖ)^s2.
fn uniaxial_oracle(e: f64, s0: f64, s1: f64, s2: f64, eps_a: f64) -> f64 {
    let elastic = e * eps_a;
    if elastic <= s0 {
        return elastic;
    }
    let mut lo = 0.0;
    let mut hi = eps_a;
    for _ in 0..200 {
        let p = 0.5 * (lo + hi);
        let f = e * (eps_a - p) - (s0 + s1 * p.powf(s2));
        if f > 0.0 {
            lo = p;
        } else {
            hi = p;
        }
    }
    let p = 0.5 * (lo + hi);
    e * (eps_a - p)
}

/// Drives a model under uniaxial stress (σ22 = σ33 = 0, shears zero) by
/// adjusting the lateral strain at every axial level; independent of the
/// closed-form route it is compared against.
fn drive_uniaxial(model: &GenericModel<f64>, eps_axial: &[f64]) -> Vec<f64> {
    let cfg = NewtonCfg::default();
    let mut state = MaterialState::initial();
    let mut lat = 0.0f64;
    let mut out = Vec::new();
    for &ea in eps_axial {
        // secant iteration on the lateral strain for zero lateral stress
        let eval = |l: f64, st: &MaterialState| {
            let eps = strain([ea, l, l, 0.0, 0.0, 0.0]);
            model.state_update(&eps, st, false, &cfg).unwrap()
        };
        let mut l0 = lat;
        let mut r0 = eval(l0, &state).stress.m[1];
        let mut l1 = l0 - 1e-5;
        for _ in 0..60 {
            let r1 = eval(l1, &state).stress.m[1];
            if (r1 - r0).abs() < 1e-20 {
                break;
            }
            let l2 = l1 - r1 * (l1 - l0) / (r1 - r0);
            l0 = l1;
            r0 = r1;
            l1 = l2;
            if (l1 - l0).abs() < 1e-14 {
                break;
            }
        }
        let res = eval(l1, &state);
        assert!(res.stress.m[1].abs() < 1e-6 * res.stress.m[0].abs().max(1.0));
        state = res.state;
        lat = l1;
        out.push(res.stress.m[0]);
    }
    out
}

#[test]
fn vm_uniaxial_matches_closed_form() {
    let m = vm_table();
    let (s0, s1, s2) = (900.0 * SQ3, 700.0 * SQ3, 0.5);
    let levels: Vec<f64> = (1..=30).map(|i| 8e-4 * i as f64).collect();
    let got = drive_uniaxial(&m, &levels);
    let mut yielded = false;
    for (i, (&ea, &sig)) in levels.iter().zip(got.iter()).enumerate() {
        let expect = uniaxial_oracle(110_000.0, s0, s1, s2, ea);
        assert!(
            (sig - expect).abs() < 2e-3 * expect.abs().max(1.0),
            "step {i}: {sig} vs oracle {expect}"
        );
        if expect < 110_000.0 * ea - 1.0 {
            yielded = true;
        }
    }
    assert!(yielded, "path never went plastic");
    // first yield at 900√3 ≈ 1558.8 MPa
    let onset = 900.0 * SQ3;
    assert!((onset - 1558.845).abs() < 1e-2);
}

#[test]
fn lzy_uniaxial_onset() {
    let m = lzy_table();
    let levels: Vec<f64> = (1..=40).map(|i| 5e-4 * i as f64).collect();
    let stresses = drive_uniaxial(&m, &levels);
    // detect departure from linear elasticity
    let mut onset = None;
    for (i, &s) in stresses.iter().enumerate() {
        let elastic = 110_000.0 * levels[i];
        if (s - elastic).abs() > 1e-3 * elastic {
            onset = Some((levels[i], s));
            break;
        }
    }
    let (_, s_onset) = onset.expect("no plastic onset found");
    // plastic onset at σ11 ≈ 1579.2 MPa with one-step resolution (Δσ ≈ 55 MPa)
    assert!(
        (s_onset - 1579.2).abs() < 60.0,
        "onset stress {s_onset} too far from 1579.2"
    );
}

// ---- Drucker-Prager ---------------------------------------------------------

#[test]
fn dp_pure_shear_below_yield_is_elastic() {
    let m = dp_table(5.0_f64.to_radians());
    let res = m
        .state_update(
            &strain([0.0, 0.0, 0.0, 1e-3, 0.0, 0.0]),
            &MaterialState::initial(),
            false,
            &NewtonCfg::default(),
        )
        .unwrap();
    assert_eq!(res.state.mode, PlasticMode::Elastic);
}

#[test]
fn dp_eta_relation() {
    let eta = SQ3 * 5.0_f64.to_radians().sin();
    assert!((eta - 0.15096).abs() < 1e-5);
    // the φ that gives η = 0.15 (the LZY b = 0.05 equivalent)
    let phi = (0.15 / SQ3).asin();
    assert!((phi.to_degrees() - 4.97).abs() < 0.01);
}

#[test]
fn dp_hydrostatic_tension_returns_to_apex() {
    let phi = 10.0_f64.to_radians();
    let m = dp_table(phi);
    let xi = 2.0 / SQ3 * phi.cos();
    let eta = SQ3 * phi.sin();
    // large hydrostatic strain: trial pressure far beyond the apex
    let res = m
        .state_update(
            &strain([0.05, 0.05, 0.05, 0.0, 0.0, 0.0]),
            &MaterialState::initial(),
            true,
            &NewtonCfg::default(),
        )
        .unwrap();
    assert_eq!(res.state.mode, PlasticMode::Apex);
    // stress is purely volumetric
    let dev = res.stress.deviator();
    assert!(dev.norm() < 1e-9 * res.stress.norm());
    // closed form: p = ξ c(ε̄ᵖ)/η
    let mut k = crate::autodiff::F64Kernel;
    let c = match &m {
        GenericModel::Dp(d) => d.hardening.value(&mut k, res.state.eps_p_bar),
        _ => unreachable!(),
    };
    let p = res.stress.trace() / 3.0;
    assert!(
        (p - xi * c / eta).abs() < 1e-6 * p.abs(),
        "apex pressure {p} vs {}",
        xi * c / eta
    );
    // apex tangent: deviatoric perturbations give zero stress change
    let tg = res.tangent.unwrap();
    for i in 3..6 {
        for j in 0..6 {
            assert!(tg.m[i][j].abs() < 1e-9 * tg.m[0][0].abs());
        }
    }
}

// ---- reduction equivalences --------------------------------------------------

#[test]
fn lzy_reduces_to_vm() {
    // LZY(a=√3, b=c=d=0) with √3-scaled hardening ≡ VM with Table hardening
    let lzy = GenericModel::Lzy(LzyModel {
        elastic: ElasticConstants {
            e: 110_000.0,
            nu: 0.33,
        },
        a: SQ3,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        omega: 1.0,
        eps_apex: 1e-8,
        hardening: Hardening::NadaiLudwik {
            s0: 900.0 * SQ3,
            s1: 700.0 * SQ3,
            s2: 0.5,
        },
        yield_slopes: None,
    });
    let vm = vm_table();
    let cfg = NewtonCfg::default();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..20 {
        let path = random_path(&mut rng, 40, 0.02);
        let sl = lzy.run_path(&path, &cfg).unwrap();
        let sv = vm.run_path(&path, &cfg).unwrap();
        for (a, b) in sl.iter().zip(sv.iter()) {
            let scale = b.norm().max(1.0);
            for i in 0..6 {
                assert!(
                    (a.m[i] - b.m[i]).abs() <= 1e-8 * scale,
                    "VM reduction mismatch: {} vs {}",
                    a.m[i],
                    b.m[i]
                );
            }
        }
    }
}

#[test]
fn lzy_reduces_to_dp() {
    // LZY(c=d=0, a=1, b=0.05, ω=ξ) ≡ D-P with η = 3ab = 0.15, cohesion σ_y/ξ
    let eta = 0.15;
    let phi = (eta / SQ3).asin();
    let xi = 2.0 / SQ3 * phi.cos();
    let lzy = GenericModel::Lzy(LzyModel {
        elastic: ElasticConstants {
            e: 110_000.0,
            nu: 0.33,
        },
        a: 1.0,
        b: 0.05,
        c: 0.0,
        d: 0.0,
        omega: xi,
        eps_apex: 1e-8,
        hardening: Hardening::NadaiLudwik {
            s0: 900.0,
            s1: 700.0,
            s2: 0.5,
        },
        yield_slopes: None,
    });
    let dp = dp_table(phi);
    let cfg = NewtonCfg::default();
    let mut rng = StdRng::seed_from_u64(8);
    for _ in 0..20 {
        let path = random_path(&mut rng, 40, 0.02);
        let sl = lzy.run_path(&path, &cfg).unwrap();
        let sd = dp.run_path(&path, &cfg).unwrap();
        for (a, b) in sl.iter().zip(sd.iter()) {
            let scale = b.norm().max(1.0);
            for i in 0..6 {
                assert!(
                    (a.m[i] - b.m[i]).abs() <= 1e-8 * scale,
                    "D-P reduction mismatch: {} vs {}",
                    a.m[i],
                    b.m[i]
                );
            }
        }
    }
}

// ---- consistency, monotonicity, elastic round trip ---------------------------

#[test]
fn smooth_updates_satisfy_consistency() {
    let m = lzy_table();
    let cfg = NewtonCfg::default();
    let mut rng = StdRng::seed_from_u64(11);
    let mut plastic_steps = 0;
    for _ in 0..10 {
        let path = random_path(&mut rng, 50, 0.02);
        let mut state = MaterialState::initial();
        for eps in &path {
            let res = m.state_update(eps, &state, false, &cfg).unwrap();
            if res.state.mode == PlasticMode::Smooth {
                plastic_steps += 1;
                let y = yield_lzy(&res.stress, 1.0, 0.05, 1.0, 0.5, {
                    let mut k = crate::autodiff::F64Kernel;
                    match &m {
                        GenericModel::Lzy(l) => l.hardening.value(&mut k, res.state.eps_p_bar),
                        _ => unreachable!(),
                    }
                });
                assert!(
                    y.phi.abs() <= 1e-8 * 900.0,
                    "consistency violated: Φ = {}",
                    y.phi
                );
            }
            assert!(res.state.eps_p_bar >= state.eps_p_bar, "ε̄ᵖ decreased");
            state = res.state;
        }
    }
    assert!(plastic_steps > 100, "too few plastic steps exercised");
}

#[test]
fn elastic_round_trip_returns_to_zero() {
    let m = lzy_table();
    let cfg = NewtonCfg::default();
    let eps = strain([5e-3, -2e-3, 1e-3, 2e-3, 0.0, -1e-3]);
    let mut state = MaterialState::initial();
    let r1 = m.state_update(&eps, &state, false, &cfg).unwrap();
    assert_eq!(r1.state.mode, PlasticMode::Elastic);
    state = r1.state;
    let r2 = m
        .state_update(&SymTensor3::zero(TensorKind::Strain), &state, false, &cfg)
        .unwrap();
    assert!(r2.stress.norm() <= 1e-10 * r1.stress.norm().max(1.0));
}

// ---- consistent tangents vs finite differences -------------------------------

fn fd_tangent(
    m: &GenericModel<f64>,
    eps: &SymTensor3,
    state: &MaterialState,
    step: f64,
) -> Tensor4Sym {
    let cfg = NewtonCfg::default();
    let mut out = Tensor4Sym::zero();
    for k in 0..6 {
        let mut up = *eps;
        let mut dn = *eps;
        up.m[k] += step;
        dn.m[k] -= step;
        let su = m.state_update(&up, state, false, &cfg).unwrap().stress;
        let sd = m.state_update(&dn, state, false, &cfg).unwrap().stress;
        for i in 0..6 {
            out.m[i][k] = (su.m[i] - sd.m[i]) / (2.0 * step);
        }
    }
    out
}

fn check_tangent(m: &GenericModel<f64>, eps: &SymTensor3, state: &MaterialState, tol: f64) {
    let cfg = NewtonCfg::default();
    let res = m.state_update(eps, state, true, &cfg).unwrap();
    let analytic = res.tangent.unwrap();
    let fd = fd_tangent(m, eps, state, 1e-7 * eps.norm().max(1e-3));
    let mut scale = 0.0f64;
    for i in 0..6 {
        for j in 0..6 {
            scale = scale.max(fd.m[i][j].abs());
        }
    }
    for i in 0..6 {
        for j in 0..6 {
            assert!(
                (analytic.m[i][j] - fd.m[i][j]).abs() <= tol * scale,
                "tangent ({i},{j}): {} vs FD {} [mode {:?}]",
                analytic.m[i][j],
                fd.m[i][j],
                res.state.mode
            );
        }
    }
}

#[test]
fn consistent_tangents_match_fd() {
    let mut rng = StdRng::seed_from_u64(23);
    let models = [vm_table(), dp_table(5.0_f64.to_radians()), lzy_table()];
    for m in &models {
        let cfg = NewtonCfg::default();
        let mut smooth = 0;
        for _ in 0..40 {
            // walk into the plastic regime, then test at the current state
            let path = random_path(&mut rng, 12, 0.025);
            let mut state = MaterialState::initial();
            for eps in &path[..11] {
                state = m.state_update(eps, &state, false, &cfg).unwrap().state;
            }
            let probe = path[11];
            let res = m.state_update(&probe, &state, false, &cfg).unwrap();
            if res.state.mode == PlasticMode::Smooth {
                smooth += 1;
                check_tangent(m, &probe, &state, 1e-5);
            }
        }
        assert!(smooth >= 10, "too few smooth plastic probes");
    }
    // apex branches
    let m = lzy_table();
    let state = MaterialState::initial();
    let eps = strain([0.04, 0.04, 0.04, 1e-4, 0.0, 0.0]);
    let cfg = NewtonCfg::default();
    let res = m.state_update(&eps, &state, true, &cfg).unwrap();
    assert_eq!(res.state.mode, PlasticMode::Apex);
    check_tangent(&m, &eps, &state, 1e-5);
}

// ---- batched tape execution --------------------------------------------------

/// Batched state updates on the tape equal the per-lane loop bit-for-bit in
/// values and within 1e-12 in gradients.
#[test]
fn batched_lzy_equals_sequential_loop() {
    let mut rng = StdRng::seed_from_u64(31);
    let lanes = 8;
    let steps = 6;
    let mut paths: Vec<Vec<[f64; 6]>> = Vec::new();
    for _ in 0..lanes {
        let p = random_path(&mut rng, steps, 0.02);
        paths.push(p.iter().map(|t| t.m).collect());
    }

    let run = |lane_subset: &[usize]| -> (Vec<f64>, f64) {
        let b = lane_subset.len();
        let mut tape = Tape::new();
        let b_leaf = tape.leaf_scalar(0.05);
        let mut k = TapeKernel::new(&mut tape);
        let model = GenericModel::Lzy(LzyModel {
            elastic: ElasticConstants {
                e: k.constant(110_000.0),
                nu: k.constant(0.33),
            },
            a: k.constant(1.0),
            b: b_leaf,
            c: k.constant(1.0),
            d: k.constant(0.5),
            omega: k.constant(1.0),
            eps_apex: 1e-8,
            hardening: Hardening::NadaiLudwik {
                s0: k.constant(900.0),
                s1: k.constant(700.0),
                s2: k.constant(0.5),
            },
            yield_slopes: None,
        });
        let zero = k.constant(0.0);
        let mut state = KernelState {
            eps_e: [zero; 6],
            eps_p_bar: zero,
        };
        let mut prev = vec![[0.0; 6]; b];
        let mut all_stress = Vec::new();
        for step in 0..steps {
            let mut deps_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(b); 6];
            for (j, &lane) in lane_subset.iter().enumerate() {
                for i in 0..6 {
                    deps_cols[i].push(paths[lane][step][i] - prev[j][i]);
                }
                prev[j] = paths[lane][step];
            }
            let deps: V6<crate::autodiff::Var> =
                std::array::from_fn(|i| k.tape.constant(&deps_cols[i], b, 1));
            let out = model
                .update(&mut k, &state, &deps, &NewtonCfg::default())
                .unwrap();
            state = out.state;
            all_stress.push(out.stress);
        }
        // loss: sum of squared stresses over everything
        let mut loss = None;
        for s in &all_stress {
            for c in s.iter() {
                let sq = k.mul(*c, *c);
                let summed = k.tape.sum(sq);
                loss = Some(match loss {
                    None => summed,
                    Some(l) => k.tape.add(l, summed),
                });
            }
        }
        let loss = loss.unwrap();
        let values: Vec<f64> = all_stress
            .iter()
            .flat_map(|s| s.iter().flat_map(|c| k.tape.value(*c).to_vec()))
            .collect();
        tape.backward(loss).unwrap();
        let g = tape.grad_scalar(b_leaf);
        (values, g)
    };

    let (batched_vals, batched_grad) = run(&(0..lanes).collect::<Vec<_>>());
    let mut loop_vals_per_lane: Vec<Vec<f64>> = Vec::new();
    let mut loop_grad = 0.0;
    for lane in 0..lanes {
        let (v, g) = run(&[lane]);
        loop_vals_per_lane.push(v);
        loop_grad += g;
    }
    // reshuffle batched values (step-major, component-major, lane-minor)
    let mut idx = 0;
    for _step in 0..steps {
        for _comp in 0..6 {
            for (lane, lv) in loop_vals_per_lane.iter().enumerate() {
                let loop_idx = idx / lanes; // position within a single-lane run
                assert_eq!(
                    batched_vals[idx], lv[loop_idx],
                    "lane {lane} value differs from sequential loop"
                );
                idx += 1;
            }
        }
    }
    assert!(
        (batched_grad - loop_grad).abs() <= 1e-12 * loop_grad.abs().max(1.0),
        "batched grad {batched_grad} vs loop {loop_grad}"
    );
}
