//! Yield-surface convexity check and convexity return-mapping for (c, d).
//!
//! Pressure enters the LZY yield function linearly, so convexity is decided by
//! the shape of the deviatoric section. The section radius in the π-plane,
//! r(θ_L) = 1/g(û(θ_L)) with g the degree-one homogeneous deviatoric part of the
//! effective stress, is scanned on a dense Lode-angle grid; the polar convexity
//! condition r² + 2r′² − r r″ ≥ 0 (with finite-difference derivatives and a
//! small negative slack) must hold everywhere. Sections with an undefined
//! radius (negative radicand or non-positive g) count as nonconvex.
//!
//! The return-mapping projects an inadmissible (c*, d*) back to the convexity
//! domain boundary by bisection along the ray from the origin through (c*, d*),
//! after limiting the search radius to the rectangular bounds
//! c ∈ [−3.5, 2.5], d ∈ [−1.5, 1.5] and the upper search radius R_u = 5.

use serde::{Deserialize, Serialize};

/// Number of Lode-angle samples in the curvature scan.
const SCAN_POINTS: usize = 2048;
/// Relative slack of the curvature condition.
const CURVATURE_SLACK: f64 = 1e-9;
/// Rectangular bounds containing the whole convexity domain.
pub const C_BOUNDS: (f64, f64) = (-3.5, 2.5);
pub const D_BOUNDS: (f64, f64) = (-1.5, 1.5);
/// Upper search radius of the return-mapping.
pub const SEARCH_RADIUS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convexity {
    Convex,
    Nonconvex,
}

/// Section radius 1/g at Lode angle θ, or `None` where the surface is undefined.
fn section_radius(c: f64, d: f64, theta: f64) -> Option<f64> {
    // orthonormal π-plane basis in principal deviator space
    const E1: [f64; 3] = [
        0.816_496_580_927_726,   //  2/√6
        -0.408_248_290_463_863,  // −1/√6
        -0.408_248_290_463_863,
    ];
    const E2: [f64; 3] = [0.0, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
    let (sin_t, cos_t) = theta.sin_cos();
    let s = [
        cos_t * E1[0] + sin_t * E2[0],
        cos_t * E1[1] + sin_t * E2[1],
        cos_t * E1[2] + sin_t * E2[2],
    ];
    // unit deviator: J₂ = ½, J₃ = s₁s₂s₃
    let j2: f64 = 0.5;
    let j3 = s[0] * s[1] * s[2];
    let radicand = j2.powi(3) - c * j3 * j3;
    if radicand < 0.0 {
        return None;
    }
    let w5 = radicand.sqrt() - d * j3;
    if w5 <= 0.0 {
        return None;
    }
    let g = w5.cbrt();
    Some(1.0 / g)
}

/// Dense polar-curvature scan of the deviatoric yield section.
pub fn convexity_check(c: f64, d: f64) -> Convexity {
    let n = SCAN_POINTS;
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        match section_radius(c, d, i as f64 * h) {
            Some(v) if v.is_finite() => r.push(v),
            _ => return Convexity::Nonconvex,
        }
    }
    for i in 0..n {
        let rm = r[(i + n - 1) % n];
        let r0 = r[i];
        let rp = r[(i + 1) % n];
        let r1 = (rp - rm) / (2.0 * h);
        let r2 = (rp - 2.0 * r0 + rm) / (h * h);
        let kappa = r0 * r0 + 2.0 * r1 * r1 - r0 * r2;
        if kappa < -CURVATURE_SLACK * r0 * r0 {
            return Convexity::Nonconvex;
        }
    }
    Convexity::Convex
}

/// Projects (c*, d*) onto the convexity domain along the ray tan(θ) = d*/c*.
///
/// Convex inputs pass through unchanged; the returned point always classifies
/// as convex, so the map is idempotent.
pub fn convexity_return_map(c_star: f64, d_star: f64) -> (f64, f64) {
    if convexity_check(c_star, d_star) == Convexity::Convex {
        return (c_star, d_star);
    }
    let norm = (c_star * c_star + d_star * d_star).sqrt();
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let dir = (c_star / norm, d_star / norm);
    // radius where the ray exits the rectangular bounds
    let mut r_rect = f64::INFINITY;
    if dir.0 > 0.0 {
        r_rect = r_rect.min(C_BOUNDS.1 / dir.0);
    } else if dir.0 < 0.0 {
        r_rect = r_rect.min(C_BOUNDS.0 / dir.0);
    }
    if dir.1 > 0.0 {
        r_rect = r_rect.min(D_BOUNDS.1 / dir.1);
    } else if dir.1 < 0.0 {
        r_rect = r_rect.min(D_BOUNDS.0 / dir.1);
    }
    let mut hi = norm.min(SEARCH_RADIUS).min(r_rect);
    if convexity_check(hi * dir.0, hi * dir.1) == Convexity::Convex {
        return (hi * dir.0, hi * dir.1);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if convexity_check(mid * dir.0, mid * dir.1) == Convexity::Convex {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * dir.0, lo * dir.1)
}
