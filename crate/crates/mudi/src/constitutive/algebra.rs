//! Generic Mandel-vector algebra over a numeric [`Kernel`].
//!
//! Six-component encodings follow [`crate::tensor`]: order (11, 22, 33, 12, 23, 13)
//! with √2-scaled off-diagonal entries, so `ddot` is a plain dot product. These
//! helpers are written once and execute on plain floats or on the autodiff tape.

use crate::autodiff::Kernel;

pub type V6<S> = [S; 6];
/// Row-major 6×6 operator entries.
pub type M66<S> = [S; 36];

pub const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn v6_from_f64<K: Kernel>(k: &mut K, v: &[f64; 6]) -> V6<K::S> {
    [
        k.constant(v[0]),
        k.constant(v[1]),
        k.constant(v[2]),
        k.constant(v[3]),
        k.constant(v[4]),
        k.constant(v[5]),
    ]
}

pub fn v6_zero<K: Kernel>(k: &mut K) -> V6<K::S> {
    let z = k.constant(0.0);
    [z; 6]
}

pub fn v6_add<K: Kernel>(k: &mut K, a: &V6<K::S>, b: &V6<K::S>) -> V6<K::S> {
    std::array::from_fn(|i| k.add(a[i], b[i]))
}

pub fn v6_sub<K: Kernel>(k: &mut K, a: &V6<K::S>, b: &V6<K::S>) -> V6<K::S> {
    std::array::from_fn(|i| k.sub(a[i], b[i]))
}

pub fn v6_scale<K: Kernel>(k: &mut K, a: &V6<K::S>, s: K::S) -> V6<K::S> {
    std::array::from_fn(|i| k.mul(a[i], s))
}

/// a + s·b
pub fn v6_axpy<K: Kernel>(k: &mut K, a: &V6<K::S>, s: K::S, b: &V6<K::S>) -> V6<K::S> {
    std::array::from_fn(|i| {
        let t = k.mul(s, b[i]);
        k.add(a[i], t)
    })
}

pub fn v6_trace<K: Kernel>(k: &mut K, a: &V6<K::S>) -> K::S {
    let t = k.add(a[0], a[1]);
    k.add(t, a[2])
}

pub fn v6_ddot<K: Kernel>(k: &mut K, a: &V6<K::S>, b: &V6<K::S>) -> K::S {
    let mut acc = k.mul(a[0], b[0]);
    for i in 1..6 {
        let t = k.mul(a[i], b[i]);
        acc = k.add(acc, t);
    }
    acc
}

/// Deviator and mean: returns (dev(a), tr(a)/3).
pub fn v6_dev<K: Kernel>(k: &mut K, a: &V6<K::S>) -> (V6<K::S>, K::S) {
    let tr = v6_trace(k, a);
    let p = k.divf(tr, 3.0);
    let d = [
        k.sub(a[0], p),
        k.sub(a[1], p),
        k.sub(a[2], p),
        a[3],
        a[4],
        a[5],
    ];
    (d, p)
}

/// Adds `s` to the three normal slots: a + s·I.
pub fn v6_add_iso<K: Kernel>(k: &mut K, a: &V6<K::S>, s: K::S) -> V6<K::S> {
    [
        k.add(a[0], s),
        k.add(a[1], s),
        k.add(a[2], s),
        a[3],
        a[4],
        a[5],
    ]
}

/// det of the symmetric tensor encoded in `a` (typically a deviator).
pub fn v6_det<K: Kernel>(k: &mut K, a: &V6<K::S>) -> K::S {
    let a12 = k.mulf(a[3], INV_SQRT_2);
    let a23 = k.mulf(a[4], INV_SQRT_2);
    let a13 = k.mulf(a[5], INV_SQRT_2);
    // a11(a22a33 − a23²) − a12(a12a33 − a23a13) + a13(a12a23 − a22a13)
    let m1 = {
        let t1 = k.mul(a[1], a[2]);
        let t2 = k.mul(a23, a23);
        let d = k.sub(t1, t2);
        k.mul(a[0], d)
    };
    let m2 = {
        let t1 = k.mul(a12, a[2]);
        let t2 = k.mul(a23, a13);
        let d = k.sub(t1, t2);
        k.mul(a12, d)
    };
    let m3 = {
        let t1 = k.mul(a12, a23);
        let t2 = k.mul(a[1], a13);
        let d = k.sub(t1, t2);
        k.mul(a13, d)
    };
    let s = k.sub(m1, m2);
    k.add(s, m3)
}

/// dev(a·a) for a symmetric `a`; with `a` a deviator this is ∂J₃/∂σ.
pub fn v6_dev_square<K: Kernel>(k: &mut K, a: &V6<K::S>) -> V6<K::S> {
    let a12 = k.mulf(a[3], INV_SQRT_2);
    let a23 = k.mulf(a[4], INV_SQRT_2);
    let a13 = k.mulf(a[5], INV_SQRT_2);
    // full 3×3 square of the symmetric matrix
    let sq = |k: &mut K, x: K::S, y: K::S, z: K::S| {
        let t1 = k.mul(x, x);
        let t2 = k.mul(y, y);
        let t3 = k.mul(z, z);
        let s = k.add(t1, t2);
        k.add(s, t3)
    };
    let b11 = sq(k, a[0], a12, a13);
    let b22 = sq(k, a12, a[1], a23);
    let b33 = sq(k, a13, a23, a[2]);
    let b12 = {
        let t1 = k.mul(a[0], a12);
        let t2 = k.mul(a12, a[1]);
        let t3 = k.mul(a13, a23);
        let s = k.add(t1, t2);
        k.add(s, t3)
    };
    let b23 = {
        let t1 = k.mul(a12, a13);
        let t2 = k.mul(a[1], a23);
        let t3 = k.mul(a23, a[2]);
        let s = k.add(t1, t2);
        k.add(s, t3)
    };
    let b13 = {
        let t1 = k.mul(a[0], a13);
        let t2 = k.mul(a12, a23);
        let t3 = k.mul(a13, a[2]);
        let s = k.add(t1, t2);
        k.add(s, t3)
    };
    let full = [
        b11,
        b22,
        b33,
        k.mulf(b12, std::f64::consts::SQRT_2),
        k.mulf(b23, std::f64::consts::SQRT_2),
        k.mulf(b13, std::f64::consts::SQRT_2),
    ];
    let (dev, _) = v6_dev(k, &full);
    dev
}

// ---- 6×6 operators ---------------------------------------------------------

pub fn m66_zero<K: Kernel>(k: &mut K) -> M66<K::S> {
    let z = k.constant(0.0);
    [z; 36]
}

pub fn m66_identity<K: Kernel>(k: &mut K) -> M66<K::S> {
    let z = k.constant(0.0);
    let one = k.constant(1.0);
    let mut m = [z; 36];
    for i in 0..6 {
        m[i * 6 + i] = one;
    }
    m
}

pub fn m66_add<K: Kernel>(k: &mut K, a: &M66<K::S>, b: &M66<K::S>) -> M66<K::S> {
    std::array::from_fn(|i| k.add(a[i], b[i]))
}

pub fn m66_scale<K: Kernel>(k: &mut K, a: &M66<K::S>, s: K::S) -> M66<K::S> {
    std::array::from_fn(|i| k.mul(a[i], s))
}

pub fn m66_dyad<K: Kernel>(k: &mut K, a: &V6<K::S>, b: &V6<K::S>) -> M66<K::S> {
    std::array::from_fn(|e| k.mul(a[e / 6], b[e % 6]))
}

pub fn m66_matvec<K: Kernel>(k: &mut K, m: &M66<K::S>, v: &V6<K::S>) -> V6<K::S> {
    std::array::from_fn(|i| {
        let mut acc = k.mul(m[i * 6], v[0]);
        for j in 1..6 {
            let t = k.mul(m[i * 6 + j], v[j]);
            acc = k.add(acc, t);
        }
        acc
    })
}

/// M : Dᵉ for isotropic Dᵉ = 2G 𝕀_d + K I⊗I (right composition).
pub fn m66_compose_iso<K: Kernel>(
    k: &mut K,
    m: &M66<K::S>,
    two_shear: K::S,
    bulk: K::S,
) -> M66<K::S> {
    // (M·Dᵉ)_ij = 2G·(M·𝕀_d)_ij + K·(Σ_{c<3} M_ic)·[j<3]
    //           = 2G·(M_ij − ⅓ rowsum_i·[j<3]) + K·rowsum_i·[j<3]
    let mut out = m66_zero(k);
    for i in 0..6 {
        let rs0 = k.add(m[i * 6], m[i * 6 + 1]);
        let rowsum = k.add(rs0, m[i * 6 + 2]);
        for j in 0..6 {
            let base = if j < 3 {
                let third = k.divf(rowsum, 3.0);
                k.sub(m[i * 6 + j], third)
            } else {
                m[i * 6 + j]
            };
            let dev_part = k.mul(base, two_shear);
            out[i * 6 + j] = if j < 3 {
                let vol = k.mul(rowsum, bulk);
                k.add(dev_part, vol)
            } else {
                dev_part
            };
        }
    }
    out
}

/// Deviatoric projector congruence 𝕀_d · M · 𝕀_d.
pub fn m66_project_dev<K: Kernel>(k: &mut K, m: &M66<K::S>) -> M66<K::S> {
    // P = I − ⅓ i iᵀ with i = (1,1,1,0,0,0): PMP = M − ⅓ u iᵀ − ⅓ i vᵀ + (s/9) i iᵀ
    // where u = M·i (col sums over first three columns per row),
    //       v = iᵀ·M (row sums over first three rows per column), s = iᵀMi.
    let mut u = Vec::with_capacity(6);
    for i in 0..6 {
        let t = k.add(m[i * 6], m[i * 6 + 1]);
        u.push(k.add(t, m[i * 6 + 2]));
    }
    let mut v = Vec::with_capacity(6);
    for j in 0..6 {
        let t = k.add(m[j], m[6 + j]);
        v.push(k.add(t, m[12 + j]));
    }
    let s0 = k.add(u[0], u[1]);
    let s = k.add(s0, u[2]);
    let mut out = *m;
    for i in 0..6 {
        for j in 0..6 {
            let mut val = out[i * 6 + j];
            if j < 3 {
                let t = k.divf(u[i], 3.0);
                val = k.sub(val, t);
            }
            if i < 3 {
                let t = k.divf(v[j], 3.0);
                val = k.sub(val, t);
            }
            if i < 3 && j < 3 {
                let t = k.divf(s, 9.0);
                val = k.add(val, t);
            }
            out[i * 6 + j] = val;
        }
    }
    out
}

/// Mandel matrix of X ↦ A·X + X·A for the symmetric tensor encoded in `a`.
pub fn m66_anticommutator<K: Kernel>(k: &mut K, a: &V6<K::S>) -> M66<K::S> {
    let a12 = k.mulf(a[3], INV_SQRT_2);
    let a23 = k.mulf(a[4], INV_SQRT_2);
    let a13 = k.mulf(a[5], INV_SQRT_2);
    let full = [[a[0], a12, a13], [a12, a[1], a23], [a13, a23, a[2]]];
    let zero = k.constant(0.0);
    let mut out = [zero; 36];
    // basis tensors: (slot, i, j, entry); off-diagonal slots carry 1/√2 on both (i,j) and (j,i)
    let basis: [(usize, usize, f64); 6] = [
        (0, 0, 1.0),
        (1, 1, 1.0),
        (2, 2, 1.0),
        (0, 1, INV_SQRT_2),
        (1, 2, INV_SQRT_2),
        (0, 2, INV_SQRT_2),
    ];
    for (beta, &(bi, bj, bv)) in basis.iter().enumerate() {
        // C = A·Eβ + Eβ·A with Eβ = bv·(e_bi⊗e_bj + e_bj⊗e_bi) (single term when bi==bj)
        // (A·Eβ)_(r,c) = bv·(A_(r,bi)·[c==bj] + A_(r,bj)·[c==bi]·[bi≠bj])
        let mut c = [[zero; 3]; 3];
        for r in 0..3 {
            for cc in 0..3 {
                let mut acc: Option<K::S> = None;
                let addt = |k: &mut K, acc: &mut Option<K::S>, t: K::S| {
                    *acc = Some(match acc.take() {
                        Some(prev) => k.add(prev, t),
                        None => t,
                    });
                };
                if cc == bj {
                    let t = k.mulf(full[r][bi], bv);
                    addt(k, &mut acc, t);
                }
                if bi != bj && cc == bi {
                    let t = k.mulf(full[r][bj], bv);
                    addt(k, &mut acc, t);
                }
                if r == bi {
                    let t = k.mulf(full[bj][cc], bv);
                    addt(k, &mut acc, t);
                }
                if bi != bj && r == bj {
                    let t = k.mulf(full[bi][cc], bv);
                    addt(k, &mut acc, t);
                }
                c[r][cc] = acc.unwrap_or(zero);
            }
        }
        // encode column β
        let sq2 = std::f64::consts::SQRT_2;
        let col = [
            c[0][0],
            c[1][1],
            c[2][2],
            k.mulf(c[0][1], sq2),
            k.mulf(c[1][2], sq2),
            k.mulf(c[0][2], sq2),
        ];
        for (alpha, entry) in col.iter().enumerate() {
            out[alpha * 6 + beta] = *entry;
        }
    }
    out
}

/// Isotropic stress from elastic strain: σ = 2G·dev(εᵉ) + K·tr(εᵉ)·I.
pub fn iso_stress<K: Kernel>(
    k: &mut K,
    eps_e: &V6<K::S>,
    two_shear: K::S,
    bulk: K::S,
) -> V6<K::S> {
    let (dev, mean) = v6_dev(k, eps_e);
    let s = v6_scale(k, &dev, two_shear);
    let tr = k.mulf(mean, 3.0);
    let p = k.mul(bulk, tr);
    v6_add_iso(k, &s, p)
}
