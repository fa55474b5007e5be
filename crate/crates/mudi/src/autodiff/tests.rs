use super::kernel::{invert_dense, F64Kernel, Kernel, NewtonCfg};
use super::newton::{newton_solve_differentiable, DiffMode};
use super::{vmap, AssemblyMap, Mask, Tape, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn record_examples() {
    let mut t = Tape::new();
    let x = t.leaf_scalar(2.0);
    let y = t.leaf_scalar(3.0);
    let z = t.add(x, y);
    assert_eq!(t.scalar_value(z), 5.0);
    t.backward(z).unwrap();
    assert_eq!(t.grad_scalar(x), 1.0);
    assert_eq!(t.grad_scalar(y), 1.0);

    let mut t = Tape::new();
    let x = t.leaf_scalar(4.0);
    let p = t.powf(x, 0.5);
    assert_eq!(t.scalar_value(p), 2.0);
    t.backward(p).unwrap();
    assert_eq!(t.grad_scalar(x), 0.25);

    // composite f(x) = x·sin(x) at x = 1 vs central finite differences
    let mut t = Tape::new();
    let x = t.leaf_scalar(1.0);
    let s = t.sin(x);
    let f = t.mul(x, s);
    t.backward(f).unwrap();
    let h = 1e-6;
    let fd = ((1.0 + h) * (1.0f64 + h).sin() - (1.0 - h) * (1.0f64 - h).sin()) / (2.0 * h);
    assert!((t.grad_scalar(x) - fd).abs() < 1e-8);
}

#[test]
fn backward_examples() {
    // Σ xᵢ² at (1, 2) → (2, 4)
    let mut t = Tape::new();
    let x = t.leaf(&[1.0, 2.0], 1, 2);
    let sq = t.mul(x, x);
    let loss = t.sum(sq);
    t.backward(loss).unwrap();
    assert_eq!(t.grad(x), &[2.0, 4.0]);

    // loss independent of a leaf → zero gradient
    let mut t = Tape::new();
    let x = t.leaf_scalar(1.0);
    let unused = t.leaf_scalar(7.0);
    let loss = t.mul(x, x);
    t.backward(loss).unwrap();
    assert_eq!(t.grad_scalar(unused), 0.0);
    let _ = unused;
}

#[test]
fn non_scalar_root_is_an_error() {
    let mut t = Tape::new();
    let x = t.leaf(&[1.0, 2.0], 2, 1);
    assert!(t.backward(x).is_err());
}

#[test]
#[should_panic(expected = "cross-tape")]
fn cross_tape_mixing_panics() {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = t1.leaf_scalar(1.0);
    let b = t2.leaf_scalar(2.0);
    let _ = t1.add(a, b);
}

/// Central finite differences vs reverse-mode for every primitive, on 100
/// random inputs each (step 1e-6, relative tolerance 1e-6).
#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(42);
    type Build = fn(&mut Tape, Var, Var) -> Var;
    let cases: Vec<(&str, Build, fn(&mut StdRng) -> (f64, f64))> = vec![
        ("add", |t, a, b| t.add(a, b), |r| (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))),
        ("sub", |t, a, b| t.sub(a, b), |r| (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))),
        ("mul", |t, a, b| t.mul(a, b), |r| (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))),
        ("div", |t, a, b| t.div(a, b), |r| {
            (r.gen_range(-2.0..2.0), r.gen_range(0.5..2.0))
        }),
        ("pow", |t, a, b| t.pow(a, b), |r| {
            (r.gen_range(0.5..2.0), r.gen_range(-1.5..1.5))
        }),
        ("min", |t, a, b| t.min2(a, b), |r| (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))),
        ("max", |t, a, b| t.max2(a, b), |r| (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0))),
        ("neg", |t, a, _| t.neg(a), |r| (r.gen_range(-2.0..2.0), 0.0)),
        ("exp", |t, a, _| t.exp(a), |r| (r.gen_range(-2.0..2.0), 0.0)),
        ("ln", |t, a, _| t.ln(a), |r| (r.gen_range(0.2..3.0), 0.0)),
        ("sqrt", |t, a, _| t.sqrt(a), |r| (r.gen_range(0.2..3.0), 0.0)),
        ("tanh", |t, a, _| t.tanh(a), |r| (r.gen_range(-2.0..2.0), 0.0)),
        ("sigmoid", |t, a, _| t.sigmoid(a), |r| (r.gen_range(-2.0..2.0), 0.0)),
        ("sin", |t, a, _| t.sin(a), |r| (r.gen_range(-3.0..3.0), 0.0)),
        ("cos", |t, a, _| t.cos(a), |r| (r.gen_range(-3.0..3.0), 0.0)),
        ("abs", |t, a, _| t.abs(a), |r| (r.gen_range(0.2..2.0), 0.0)),
        ("powf_const", |t, a, _| t.powf(a, 1.7), |r| (r.gen_range(0.2..2.0), 0.0)),
        ("scale", |t, a, _| t.scale(a, -2.5), |r| (r.gen_range(-2.0..2.0), 0.0)),
        ("add_const", |t, a, _| t.add_const(a, 0.7), |r| (r.gen_range(-2.0..2.0), 0.0)),
    ];

    for (name, build, sample) in &cases {
        for _ in 0..100 {
            let (av, bv) = sample(&mut rng);
            let f = |x: f64, y: f64| {
                let mut t = Tape::new();
                let a = t.leaf_scalar(x);
                let b = t.leaf_scalar(y);
                let out = build(&mut t, a, b);
                t.scalar_value(out)
            };
            // skip kink neighborhoods of min/max/abs where FD is one-sided
            if matches!(*name, "min" | "max") && (av - bv).abs() < 1e-4 {
                continue;
            }
            let mut t = Tape::new();
            let a = t.leaf_scalar(av);
            let b = t.leaf_scalar(bv);
            let out = build(&mut t, a, b);
            t.backward(out).unwrap();
            let h = 1e-6;
            let fd_a = (f(av + h, bv) - f(av - h, bv)) / (2.0 * h);
            let fd_b = (f(av, bv + h) - f(av, bv - h)) / (2.0 * h);
            assert!(
                rel_close(t.grad_scalar(a), fd_a, 1e-6),
                "{name}: d/da {} vs FD {} at ({av}, {bv})",
                t.grad_scalar(a),
                fd_a
            );
            assert!(
                rel_close(t.grad_scalar(b), fd_b, 1e-6),
                "{name}: d/db {} vs FD {} at ({av}, {bv})",
                t.grad_scalar(b),
                fd_b
            );
        }
    }
}

#[test]
fn reduction_and_linear_ops_match_fd() {
    let mut rng = StdRng::seed_from_u64(9);
    // dot, sum_width, matvec, lincomb_lanes, assemble, select
    for _ in 0..20 {
        let b = 3;
        let w = 4;
        let xa: Vec<f64> = (0..b * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xb: Vec<f64> = (0..b * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wm: Vec<f64> = (0..2 * w).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |xa: &[f64], xb: &[f64], wm: &[f64]| -> f64 {
            let mut t = Tape::new();
            let a = t.leaf(xa, b, w);
            let bb = t.leaf(xb, b, w);
            let wv = t.leaf(wm, 1, 2 * w);
            let d = t.dot(a, bb);
            let sw = t.sum_width(a);
            let mv = t.matvec(wv, bb, 2, w);
            let mask = Mask::from_bools(&[true, false, true]);
            let sel = t.select(&mask, d, sw);
            let coeffs = Arc::new(vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
            let lc = t.lincomb_lanes(&[sel, sw], coeffs);
            let map = Arc::new(AssemblyMap {
                n_out: 2,
                terms: vec![(0, 0, 0, 1.5), (0, 1, 2, -0.5), (1, 0, 1, 2.0)],
            });
            let asm = t.assemble(&[lc, d], map);
            let s1 = t.sum(asm);
            let s2 = t.sum(mv);
            let tot = t.add(s1, s2);
            t.scalar_value(tot)
        };

        let mut t = Tape::new();
        let a = t.leaf(&xa, b, w);
        let bb = t.leaf(&xb, b, w);
        let wv = t.leaf(&wm, 1, 2 * w);
        let d = t.dot(a, bb);
        let sw = t.sum_width(a);
        let mv = t.matvec(wv, bb, 2, w);
        let mask = Mask::from_bools(&[true, false, true]);
        let sel = t.select(&mask, d, sw);
        let coeffs = Arc::new(vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
        let lc = t.lincomb_lanes(&[sel, sw], coeffs);
        let map = Arc::new(AssemblyMap {
            n_out: 2,
            terms: vec![(0, 0, 0, 1.5), (0, 1, 2, -0.5), (1, 0, 1, 2.0)],
        });
        let asm = t.assemble(&[lc, d], map);
        let s1 = t.sum(asm);
        let s2 = t.sum(mv);
        let tot = t.add(s1, s2);
        t.backward(tot).unwrap();

        let h = 1e-6;
        for (buf, var, label) in [(&xa, a, "a"), (&xb, bb, "b"), (&wm, wv, "w")] {
            let g = t.grad(var).to_vec();
            for k in 0..buf.len() {
                let mut up = buf.clone();
                let mut dn = buf.clone();
                up[k] += h;
                dn[k] -= h;
                let (fa, fb) = match label {
                    "a" => (eval(&up, &xb, &wm), eval(&dn, &xb, &wm)),
                    "b" => (eval(&xa, &up, &wm), eval(&xa, &dn, &wm)),
                    _ => (eval(&xa, &xb, &up), eval(&xa, &xb, &dn)),
                };
                let fd = (fa - fb) / (2.0 * h);
                assert!(
                    rel_close(g[k], fd, 1e-6),
                    "{label}[{k}]: {} vs FD {}",
                    g[k],
                    fd
                );
            }
        }
    }
}

#[test]
fn gradient_accumulation_is_exact() {
    let f = |x: f64, double: bool| -> f64 {
        let mut t = Tape::new();
        let xv = t.leaf_scalar(x);
        let s = t.sin(xv);
        let e = t.mul(xv, s);
        let loss = if double { t.add(e, e) } else { e };
        t.backward(loss).unwrap();
        t.grad_scalar(xv)
    };
    let g1 = f(0.8, false);
    let g2 = f(0.8, true);
    assert_eq!(g2, 2.0 * g1);
}

#[test]
fn select_isolates_nan_branches() {
    // the masked-out branch computes √(-1) = NaN; values and gradients of the
    // selected branch must stay clean
    let mut t = Tape::new();
    let x = t.leaf_scalar(-1.0);
    let bad = t.sqrt(x); // NaN
    let good = t.mul(x, x);
    let mask = Mask::from_bools(&[false]);
    let out = t.select(&mask, bad, good);
    assert_eq!(t.scalar_value(out), 1.0);
    t.backward(out).unwrap();
    assert_eq!(t.grad_scalar(x), -2.0);
    assert!(t.grad_scalar(x).is_finite());
}

#[test]
fn vmap_examples_and_loop_equivalence() {
    // x ↦ x² over (1, 2, 3)
    let mut t = Tape::new();
    let out = vmap(&mut t, &[&[1.0, 2.0, 3.0]], 3, |t, xs| {
        vec![t.mul(xs[0], xs[0])]
    });
    assert_eq!(t.value(out[0]), &[1.0, 4.0, 9.0]);

    // batch of one behaves exactly like a direct call
    let mut t1 = Tape::new();
    let direct = {
        let x = t1.constant_scalar(1.7);
        let y = t1.tanh(x);
        t1.scalar_value(y)
    };
    let mut t2 = Tape::new();
    let batched = vmap(&mut t2, &[&[1.7]], 1, |t, xs| vec![t.tanh(xs[0])]);
    assert_eq!(t2.value(batched[0])[0], direct);

    // richer kernel: values identical to the sequential loop, gradients of the
    // shared parameter within 1e-12 (here: exactly equal in both orders)
    let xs: Vec<f64> = (0..16).map(|i| 0.1 * i as f64 - 0.7).collect();
    let run_batched = |theta: f64| -> (Vec<f64>, f64) {
        let mut t = Tape::new();
        let th = t.leaf_scalar(theta);
        let outs = vmap(&mut t, &[&xs], xs.len(), |t, v| {
            let p = t.mul(v[0], th);
            let s = t.sigmoid(p);
            vec![t.mul(s, v[0])]
        });
        let loss = t.sum(outs[0]);
        let vals = t.value(outs[0]).to_vec();
        t.backward(loss).unwrap();
        (vals, t.grad_scalar(th))
    };
    let run_loop = |theta: f64| -> (Vec<f64>, f64) {
        let mut vals = Vec::new();
        let mut grad = 0.0;
        for &x in &xs {
            let mut t = Tape::new();
            let th = t.leaf_scalar(theta);
            let xv = t.constant_scalar(x);
            let p = t.mul(xv, th);
            let s = t.sigmoid(p);
            let o = t.mul(s, xv);
            vals.push(t.scalar_value(o));
            t.backward(o).unwrap();
            grad += t.grad_scalar(th);
        }
        (vals, grad)
    };
    let (bv, bg) = run_batched(0.37);
    let (lv, lg) = run_loop(0.37);
    assert_eq!(bv, lv, "batched values must equal the sequential loop exactly");
    assert!((bg - lg).abs() <= 1e-12 * lg.abs().max(1.0));
}

#[test]
#[should_panic(expected = "ragged")]
fn vmap_rejects_ragged_batches() {
    let mut t = Tape::new();
    let _ = vmap(&mut t, &[&[1.0, 2.0], &[1.0]], 2, |t, v| vec![t.add(v[0], v[1])]);
}

#[test]
fn newton_linear_solves_in_one_iteration_both_modes() {
    for mode in [DiffMode::Unroll, DiffMode::Implicit] {
        let mut t = Tape::new();
        let c = t.leaf_scalar(3.5);
        let a0 = t.constant_scalar(0.0);
        let out = newton_solve_differentiable(
            &mut t,
            &[a0],
            &NewtonCfg::default(),
            mode,
            |t, alpha| {
                let r = t.sub(alpha[0], c);
                let one = t.constant_scalar(1.0);
                (vec![r], vec![one])
            },
        )
        .unwrap();
        assert_eq!(out.iterations, 1, "{mode:?}");
        assert!((t.scalar_value(out.solution[0]) - 3.5).abs() < 1e-12);
        t.backward(out.solution[0]).unwrap();
        assert!((t.grad_scalar(c) - 1.0).abs() < 1e-10, "{mode:?}");
    }
}

#[test]
fn newton_sqrt_gradient_both_modes() {
    // R(α) = α² − θ at θ = 4 → α* = 2, dα*/dθ = 1/(2α) = 0.25
    let mut grads = Vec::new();
    for mode in [DiffMode::Unroll, DiffMode::Implicit] {
        let mut t = Tape::new();
        let theta = t.leaf_scalar(4.0);
        let a0 = t.constant_scalar(3.0);
        let out = newton_solve_differentiable(
            &mut t,
            &[a0],
            &NewtonCfg::default(),
            mode,
            |t, alpha| {
                let sq = t.mul(alpha[0], alpha[0]);
                let r = t.sub(sq, theta);
                let j = t.scale(alpha[0], 2.0);
                (vec![r], vec![j])
            },
        )
        .unwrap();
        assert!((t.scalar_value(out.solution[0]) - 2.0).abs() < 1e-10);
        t.backward(out.solution[0]).unwrap();
        grads.push(t.grad_scalar(theta));
    }
    assert!((grads[0] - 0.25).abs() < 1e-8, "unroll: {}", grads[0]);
    assert!((grads[1] - 0.25).abs() < 1e-8, "implicit: {}", grads[1]);
    assert!((grads[0] - grads[1]).abs() < 1e-8);
}

#[test]
fn newton_modes_agree_on_coupled_batched_system() {
    // 2-dimensional contractive residual, 4 lanes, nontrivial θ coupling:
    //   R₁ = α₁ + 0.3·tanh(α₂) − θ·x,  R₂ = α₂ + 0.3·tanh(α₁·θ) − θ
    let xs = [1.0, 1.5, 2.0, 3.0];
    let theta0 = 1.3;
    let mut grads = Vec::new();
    for mode in [DiffMode::Unroll, DiffMode::Implicit] {
        let mut t = Tape::new();
        let theta = t.leaf_scalar(theta0);
        let x = t.constant(&xs, 4, 1);
        let a1 = t.constant(&[1.0; 4], 4, 1);
        let a2 = t.constant(&[1.0; 4], 4, 1);
        let cfg = NewtonCfg {
            tol_rel: 1e-12,
            tol_abs: 1e-13,
            max_iter: 50,
        };
        let out = newton_solve_differentiable(&mut t, &[a1, a2], &cfg, mode, |t, al| {
            let th2 = t.tanh(al[1]);
            let t1 = t.scale(th2, 0.3);
            let t2 = t.add(al[0], t1);
            let tx = t.mul(theta, x);
            let r1 = t.sub(t2, tx);
            let a1th = t.mul(al[0], theta);
            let th1 = t.tanh(a1th);
            let t3 = t.scale(th1, 0.3);
            let t4 = t.add(al[1], t3);
            let r2 = t.sub(t4, theta);
            let j11 = t.constant_scalar(1.0);
            let sq2 = t.mul(th2, th2);
            let d2 = t.sub_from_c(1.0, sq2);
            let j12 = t.scale(d2, 0.3);
            let sq1 = t.mul(th1, th1);
            let d1 = t.sub_from_c(1.0, sq1);
            let d1t = t.mul(d1, theta);
            let j21 = t.scale(d1t, 0.3);
            let j22 = t.constant_scalar(1.0);
            (vec![r1, r2], vec![j11, j12, j21, j22])
        })
        .unwrap();
        let s = t.add(out.solution[0], out.solution[1]);
        let loss = t.sum(s);
        t.backward(loss).unwrap();
        grads.push((
            t.value(out.solution[0]).to_vec(),
            t.grad_scalar(theta),
            out.residual,
        ));
    }
    let (v0, g0, r0) = &grads[0];
    let (v1, g1, _) = &grads[1];
    for (a, b) in v0.iter().zip(v1.iter()) {
        assert!((a - b).abs() < 1e-9);
    }
    // spec invariant: modes agree within 10·tol in gradient norm
    assert!(
        (g0 - g1).abs() <= 10.0 * (1e-12 + r0),
        "unroll {g0} vs implicit {g1}"
    );
    // cross-check against finite differences of a scalar re-solve
    let solve = |theta: f64| -> f64 {
        let mut k = F64Kernel;
        let mut total = 0.0;
        for &x in &xs {
            let out = k
                .newton(&[1.0, 1.0], None, &NewtonCfg::default(), |_, al| {
                    let th2 = al[1].tanh();
                    let th1 = (al[0] * theta).tanh();
                    (
                        vec![al[0] + 0.3 * th2 - theta * x, al[1] + 0.3 * th1 - theta],
                        vec![
                            1.0,
                            0.3 * (1.0 - th2 * th2),
                            0.3 * (1.0 - th1 * th1) * theta,
                            1.0,
                        ],
                    )
                })
                .unwrap();
            total += out.solution[0] + out.solution[1];
        }
        total
    };
    let h = 1e-6;
    let fd = (solve(theta0 + h) - solve(theta0 - h)) / (2.0 * h);
    assert!(rel_close(*g0, fd, 1e-6), "unroll {g0} vs FD {fd}");
}

#[test]
fn newton_reports_convergence_failure() {
    let mut k = F64Kernel;
    let res = k.newton(
        &[1.0],
        None,
        &NewtonCfg {
            tol_rel: 1e-10,
            tol_abs: 1e-14,
            max_iter: 3,
        },
        // R = exp(α) has no root; Newton walks forever
        |_, al| (vec![al[0].exp()], vec![al[0].exp()]),
    );
    match res {
        Err(crate::error::Error::Convergence {
            iterations,
            residual,
            ..
        }) => {
            assert_eq!(iterations, 3);
            assert!(residual > 0.0);
        }
        other => panic!("expected convergence error, got {other:?}"),
    }
}

#[test]
fn replay_reproduces_fresh_recording() {
    let build = |theta: f64| -> (f64, f64) {
        let mut t = Tape::new();
        let th = t.leaf_scalar(theta);
        let x = t.constant(&[0.3, -0.4, 0.9], 3, 1);
        let p = t.mul(x, th);
        let s = t.tanh(p);
        let sq = t.mul(s, s);
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        (t.scalar_value(loss), t.grad_scalar(th))
    };
    let mut t = Tape::new();
    let th = t.leaf_scalar(0.5);
    let x = t.constant(&[0.3, -0.4, 0.9], 3, 1);
    let p = t.mul(x, th);
    let s = t.tanh(p);
    let sq = t.mul(s, s);
    let loss = t.sum(sq);
    t.set_value(th, &[1.25]);
    t.replay();
    t.backward(loss).unwrap();
    let (l2, g2) = build(1.25);
    assert_eq!(t.scalar_value(loss), l2);
    assert_eq!(t.grad_scalar(th), g2);
}

#[test]
fn invert_dense_round_trip() {
    let mut rng = StdRng::seed_from_u64(123);
    for n in [1usize, 2, 4, 8] {
        let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // diagonally boost to avoid random singularity
        let mut m = a.clone();
        for i in 0..n {
            m[i * n + i] += 3.0;
        }
        let inv = invert_dense(&m, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += m[i * n + k] * inv[k * n + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-10);
            }
        }
    }
}
