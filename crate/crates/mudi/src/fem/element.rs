//! 8-node hexahedral element: shape functions, strain-displacement operator and
//! element integrals under 2×2×2 Gauss quadrature.
//!
//! The B operator is assembled in the Mandel convention (shear rows scaled by
//! 1/√2 so that ε_mandel = B·u), matching the tensor encoding used everywhere
//! else; internal forces are then f = Σ_gp w·detJ·Bᵀσ_mandel.

use crate::error::{Error, Result};

/// Natural coordinates of the 8 corner nodes.
pub const XI: [f64; 8] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
pub const ETA: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
pub const ZETA: [f64; 8] = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];

const INV_SQRT_3: f64 = 0.577_350_269_189_625_7;
const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gauss point g (0..8) in natural coordinates: the corner-sign pattern scaled
/// to ±1/√3, all weights 1.
pub fn gauss_point(g: usize) -> [f64; 3] {
    [XI[g] * INV_SQRT_3, ETA[g] * INV_SQRT_3, ZETA[g] * INV_SQRT_3]
}

/// Shape function values at a natural point.
pub fn shape(natural: [f64; 3]) -> [f64; 8] {
    std::array::from_fn(|i| {
        0.125
            * (1.0 + XI[i] * natural[0])
            * (1.0 + ETA[i] * natural[1])
            * (1.0 + ZETA[i] * natural[2])
    })
}

/// Shape function gradients w.r.t. natural coordinates, 8×3.
pub fn shape_gradients(natural: [f64; 3]) -> [[f64; 3]; 8] {
    std::array::from_fn(|i| {
        [
            0.125 * XI[i] * (1.0 + ETA[i] * natural[1]) * (1.0 + ZETA[i] * natural[2]),
            0.125 * ETA[i] * (1.0 + XI[i] * natural[0]) * (1.0 + ZETA[i] * natural[2]),
            0.125 * ZETA[i] * (1.0 + XI[i] * natural[0]) * (1.0 + ETA[i] * natural[1]),
        ]
    })
}

/// Strain-displacement operator (Mandel rows, 6×24) and Jacobian determinant at
/// one Gauss point of an element with the given node coordinates.
pub fn b_matrix(coords: &[[f64; 3]; 8], natural: [f64; 3]) -> Result<([[f64; 24]; 6], f64)> {
    let dn = shape_gradients(natural);
    let mut jac = [[0.0f64; 3]; 3];
    for i in 0..8 {
        for r in 0..3 {
            for c in 0..3 {
                jac[r][c] += dn[i][r] * coords[i][c];
            }
        }
    }
    let det = crate::tensor::det3(&jac);
    if det <= 0.0 {
        return Err(Error::Mesh(format!(
            "non-positive Jacobian determinant {det:.3e} at a Gauss point"
        )));
    }
    // jac[r][c] = ∂x_c/∂ξ_r, hence ∂ξ_r/∂x_j = (jac⁻¹)[j][r] and
    // ∂N_i/∂x_j = Σ_r (jac⁻¹)[j][r] ∂N_i/∂ξ_r.
    let inv = inv3(&jac, det);
    let mut grad = [[0.0f64; 3]; 8]; // ∂N_i/∂x_j
    for i in 0..8 {
        for j in 0..3 {
            let mut acc = 0.0;
            for r in 0..3 {
                acc += inv[j][r] * dn[i][r];
            }
            grad[i][j] = acc;
        }
    }
    let mut b = [[0.0f64; 24]; 6];
    for i in 0..8 {
        let (gx, gy, gz) = (grad[i][0], grad[i][1], grad[i][2]);
        b[0][3 * i] = gx;
        b[1][3 * i + 1] = gy;
        b[2][3 * i + 2] = gz;
        // Mandel shear rows: √2·ε_ij = (1/√2)(∂u_i/∂x_j + ∂u_j/∂x_i)
        b[3][3 * i] = INV_SQRT_2 * gy;
        b[3][3 * i + 1] = INV_SQRT_2 * gx;
        b[4][3 * i + 1] = INV_SQRT_2 * gz;
        b[4][3 * i + 2] = INV_SQRT_2 * gy;
        b[5][3 * i] = INV_SQRT_2 * gz;
        b[5][3 * i + 2] = INV_SQRT_2 * gx;
    }
    Ok((b, det))
}

fn inv3(a: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let c = |i1: usize, i2: usize, j1: usize, j2: usize| {
        a[i1][j1] * a[i2][j2] - a[i1][j2] * a[i2][j1]
    };
    [
        [c(1, 2, 1, 2) / det, c(0, 2, 2, 1) / det, c(0, 1, 1, 2) / det],
        [c(1, 2, 2, 0) / det, c(0, 2, 0, 2) / det, c(0, 1, 2, 0) / det],
        [c(1, 2, 0, 1) / det, c(0, 2, 1, 0) / det, c(0, 1, 0, 1) / det],
    ]
}

/// Per-Gauss-point B operators and Jacobian determinants of one element.
#[derive(Clone, Debug)]
pub struct ElementQuadrature {
    pub b: Vec<[[f64; 24]; 6]>,
    pub detj: Vec<f64>,
}

pub fn element_quadrature(coords: &[[f64; 3]; 8]) -> Result<ElementQuadrature> {
    let mut b = Vec::with_capacity(8);
    let mut detj = Vec::with_capacity(8);
    for g in 0..8 {
        let (bg, dg) = b_matrix(coords, gauss_point(g))?;
        b.push(bg);
        detj.push(dg);
    }
    Ok(ElementQuadrature { b, detj })
}
