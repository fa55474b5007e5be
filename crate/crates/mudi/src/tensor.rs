//! Symmetric second-order tensor algebra in an orthonormal (Mandel) 6-component basis.
//!
//! Component order is `(11, 22, 33, 12, 23, 13)`. Off-diagonal components carry a
//! factor √2 internally so that the double contraction of two tensors is the plain
//! dot product of their encodings:
//!
//! ```text
//! a = (A₁₁, A₂₂, A₃₃, √2·A₁₂, √2·A₂₃, √2·A₁₃)   ⟹   A : B = a · b
//! ```
//!
//! Fourth-order symmetric operators are 6×6 matrices acting on this encoding; the
//! symmetric identity 𝕀ₛ is the unit matrix and operator composition is matrix
//! multiplication. Conversion to conventional component lists (engineering shear
//! γ = 2ε for strains, plain τ for stresses) happens only at I/O boundaries.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Distinguishes strain-like from stress-like tensors at I/O conversions.
///
/// Strain shear components are exchanged in engineering form (γ₁₂ = 2ε₁₂),
/// stress shears as plain tensor components (τ₁₂ = σ₁₂).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Strain,
    Stress,
}

/// Symmetric 3×3 tensor in the orthonormal 6-component encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor3 {
    /// Mandel components (11, 22, 33, √2·12, √2·23, √2·13).
    pub m: [f64; 6],
    pub kind: TensorKind,
}

impl SymTensor3 {
    pub fn zero(kind: TensorKind) -> Self {
        SymTensor3 { m: [0.0; 6], kind }
    }

    /// Second-order identity tensor.
    pub fn identity(kind: TensorKind) -> Self {
        SymTensor3 {
            m: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            kind,
        }
    }

    pub fn from_mandel(m: [f64; 6], kind: TensorKind) -> Self {
        SymTensor3 { m, kind }
    }

    /// Builds the tensor from plain tensor components (11, 22, 33, 12, 23, 13).
    pub fn from_tensor_components(c: [f64; 6], kind: TensorKind) -> Self {
        SymTensor3 {
            m: [c[0], c[1], c[2], SQRT_2 * c[3], SQRT_2 * c[4], SQRT_2 * c[5]],
            kind,
        }
    }

    /// Builds the tensor from I/O components: engineering shear for strains
    /// (γ = 2ε on slots 12, 23, 13), plain shear for stresses.
    pub fn from_io_components(c: [f64; 6], kind: TensorKind) -> Self {
        let s = match kind {
            TensorKind::Strain => 0.5,
            TensorKind::Stress => 1.0,
        };
        SymTensor3::from_tensor_components([c[0], c[1], c[2], s * c[3], s * c[4], s * c[5]], kind)
    }

    /// Plain tensor components (11, 22, 33, 12, 23, 13) without shear scaling.
    pub fn to_tensor_components(&self) -> [f64; 6] {
        [
            self.m[0],
            self.m[1],
            self.m[2],
            self.m[3] / SQRT_2,
            self.m[4] / SQRT_2,
            self.m[5] / SQRT_2,
        ]
    }

    /// I/O components, inverse of [`SymTensor3::from_io_components`].
    pub fn to_io_components(&self) -> [f64; 6] {
        let s = match self.kind {
            TensorKind::Strain => 2.0,
            TensorKind::Stress => 1.0,
        };
        [
            self.m[0],
            self.m[1],
            self.m[2],
            s * self.m[3] / SQRT_2,
            s * self.m[4] / SQRT_2,
            s * self.m[5] / SQRT_2,
        ]
    }

    pub fn from_matrix(a: &[[f64; 3]; 3], kind: TensorKind) -> Result<Self> {
        let tol = 1e-12
            * a.iter()
                .flatten()
                .fold(0.0f64, |acc, x| acc.max(x.abs()))
                .max(1.0);
        for i in 0..3 {
            for j in (i + 1)..3 {
                if (a[i][j] - a[j][i]).abs() > tol {
                    return Err(Error::Shape(format!(
                        "matrix is not symmetric: a[{i}][{j}]={} vs a[{j}][{i}]={}",
                        a[i][j], a[j][i]
                    )));
                }
            }
        }
        Ok(SymTensor3::from_tensor_components(
            [a[0][0], a[1][1], a[2][2], a[0][1], a[1][2], a[0][2]],
            kind,
        ))
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let t12 = self.m[3] / SQRT_2;
        let t23 = self.m[4] / SQRT_2;
        let t13 = self.m[5] / SQRT_2;
        [
            [self.m[0], t12, t13],
            [t12, self.m[1], t23],
            [t13, t23, self.m[2]],
        ]
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[1] + self.m[2]
    }

    /// Double contraction A : B (plain dot product of the encodings).
    pub fn ddot(&self, other: &SymTensor3) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Frobenius norm √(A : A).
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    /// Deviatoric part, dev(A) = A − tr(A)/3 · I.
    pub fn deviator(&self) -> SymTensor3 {
        let p = self.trace() / 3.0;
        let mut m = self.m;
        m[0] -= p;
        m[1] -= p;
        m[2] -= p;
        SymTensor3 { m, kind: self.kind }
    }

    pub fn scale(&self, s: f64) -> SymTensor3 {
        let mut m = self.m;
        for v in &mut m {
            *v *= s;
        }
        SymTensor3 { m, kind: self.kind }
    }

    pub fn add(&self, other: &SymTensor3) -> SymTensor3 {
        let mut m = self.m;
        for (v, o) in m.iter_mut().zip(other.m.iter()) {
            *v += o;
        }
        SymTensor3 { m, kind: self.kind }
    }

    pub fn sub(&self, other: &SymTensor3) -> SymTensor3 {
        let mut m = self.m;
        for (v, o) in m.iter_mut().zip(other.m.iter()) {
            *v -= o;
        }
        SymTensor3 { m, kind: self.kind }
    }
}

/// Fourth-order symmetric operator as a 6×6 matrix on the Mandel encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor4Sym {
    pub m: [[f64; 6]; 6],
}

impl Tensor4Sym {
    pub fn zero() -> Self {
        Tensor4Sym { m: [[0.0; 6]; 6] }
    }

    /// Symmetric identity 𝕀ₛ.
    pub fn identity() -> Self {
        let mut m = [[0.0; 6]; 6];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Tensor4Sym { m }
    }

    /// Deviatoric projector 𝕀_d = 𝕀ₛ − ⅓ I ⊗ I.
    pub fn deviatoric_projector() -> Self {
        let mut t = Tensor4Sym::identity();
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] -= 1.0 / 3.0;
            }
        }
        t
    }

    /// Dyadic product a ⊗ b of two encoded tensors.
    pub fn dyad(a: &SymTensor3, b: &SymTensor3) -> Self {
        let mut m = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = a.m[i] * b.m[j];
            }
        }
        Tensor4Sym { m }
    }

    /// Builds the operator X ↦ f(X) by applying `f` to the 6 Mandel basis tensors.
    ///
    /// `f` receives and returns full 3×3 matrices; the result must be symmetric.
    pub fn from_matrix_action(f: impl Fn(&[[f64; 3]; 3]) -> [[f64; 3]; 3]) -> Self {
        let mut m = [[0.0; 6]; 6];
        for k in 0..6 {
            let mut e = [0.0; 6];
            e[k] = 1.0;
            let basis = SymTensor3::from_mandel(e, TensorKind::Stress).to_matrix();
            let img = f(&basis);
            let enc = SymTensor3::from_tensor_components(
                [
                    img[0][0], img[1][1], img[2][2], img[0][1], img[1][2], img[0][2],
                ],
                TensorKind::Stress,
            );
            for i in 0..6 {
                m[i][k] = enc.m[i];
            }
        }
        Tensor4Sym { m }
    }

    /// Applies the operator: returns the encoding of 𝔸 : X.
    pub fn apply(&self, x: &SymTensor3) -> SymTensor3 {
        let mut out = [0.0; 6];
        for i in 0..6 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += self.m[i][j] * x.m[j];
            }
            out[i] = acc;
        }
        SymTensor3 {
            m: out,
            kind: x.kind,
        }
    }

    /// Operator composition 𝔸 : 𝔹 (matrix product).
    pub fn compose(&self, other: &Tensor4Sym) -> Tensor4Sym {
        let mut m = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += self.m[i][k] * other.m[k][j];
                }
                m[i][j] = acc;
            }
        }
        Tensor4Sym { m }
    }

    pub fn add(&self, other: &Tensor4Sym) -> Tensor4Sym {
        let mut m = self.m;
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] += other.m[i][j];
            }
        }
        Tensor4Sym { m }
    }

    pub fn scale(&self, s: f64) -> Tensor4Sym {
        let mut m = self.m;
        for row in &mut m {
            for v in row {
                *v *= s;
            }
        }
        Tensor4Sym { m }
    }

    pub fn inverse(&self) -> Result<Tensor4Sym> {
        let a = nalgebra::Matrix6::from_fn(|i, j| self.m[i][j]);
        let inv = a.try_inverse().ok_or_else(|| {
            Error::Shape("fourth-order operator is singular, cannot invert".into())
        })?;
        let mut m = [[0.0; 6]; 6];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] = inv[(i, j)];
            }
        }
        Ok(Tensor4Sym { m })
    }
}

/// First invariant of the stress tensor and invariants of its deviator.
#[derive(Clone, Copy, Debug)]
pub struct StressInvariants {
    /// tr(σ) (MPa).
    pub i1: f64,
    /// ½ σ_d : σ_d (MPa²).
    pub j2: f64,
    /// det(σ_d) (MPa³).
    pub j3: f64,
    /// Hydrostatic pressure p = I₁/3 (MPa).
    pub pressure: f64,
}

/// Computes I₁, J₂, J₃ and p of a stress tensor.
pub fn invariants(sigma: &SymTensor3) -> StressInvariants {
    let i1 = sigma.trace();
    let d = sigma.deviator();
    let j2 = 0.5 * d.ddot(&d);
    let j3 = det3(&d.to_matrix());
    StressInvariants {
        i1,
        j2,
        j3,
        pressure: i1 / 3.0,
    }
}

/// First and second derivatives of the stress invariants w.r.t. stress.
#[derive(Clone, Debug)]
pub struct InvariantDerivatives {
    /// ∂I₁/∂σ = I.
    pub d_i1: SymTensor3,
    /// ∂J₂/∂σ = σ_d.
    pub d_j2: SymTensor3,
    /// ∂J₃/∂σ = det(σ_d) σ_d⁻¹ : 𝕀_d, or dev(σ_d·σ_d) at near-singular deviators.
    pub d_j3: SymTensor3,
    /// ∂²J₂/∂σ² = 𝕀_d.
    pub d2_j2: Tensor4Sym,
    pub d2_j3: Tensor4Sym,
    /// True when the inverse-free cofactor route replaced the σ_d⁻¹ formulas.
    pub used_fallback: bool,
}

/// Analytic first/second derivatives of (I₁, J₂, J₃) w.r.t. the stress tensor.
///
/// The J₃ derivatives use the deviator inverse; when |det(σ_d)| < 1e-20·‖σ_d‖³
/// the equivalent cofactor expressions ∂J₃/∂σ = dev(σ_d·σ_d) and its derivative
/// are used instead, which need no inverse.
pub fn invariant_derivatives(sigma: &SymTensor3) -> InvariantDerivatives {
    let d = sigma.deviator();
    let dm = d.to_matrix();
    let det = det3(&dm);
    let norm = d.norm();
    let id = Tensor4Sym::deviatoric_projector();

    let singular = det.abs() <= 1e-20 * norm.powi(3);

    let (d_j3, d2_j3) = if singular {
        // dJ₃/dσ = dev(σ_d²); d²J₃/dσ² = 𝕀_d : (X ↦ σ_d X + X σ_d) : 𝕀_d
        let dd = mat_mul(&dm, &dm);
        let d_j3 = SymTensor3::from_tensor_components(
            [dd[0][0], dd[1][1], dd[2][2], dd[0][1], dd[1][2], dd[0][2]],
            TensorKind::Stress,
        )
        .deviator();
        let anticomm = Tensor4Sym::from_matrix_action(|x| {
            let a = mat_mul(&dm, x);
            let b = mat_mul(x, &dm);
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = a[i][j] + b[i][j];
                }
            }
            out
        });
        (d_j3, id.compose(&anticomm).compose(&id))
    } else {
        let inv = inv3(&dm, det);
        let inv_t = SymTensor3::from_tensor_components(
            [
                inv[0][0], inv[1][1], inv[2][2], inv[0][1], inv[1][2], inv[0][2],
            ],
            TensorKind::Stress,
        );
        let dev_inv = inv_t.deviator();
        let d_j3 = dev_inv.scale(det);
        // d²J₃/dσ² = (σ_d⁻¹ : 𝕀_d) ⊗ dJ₃/dσ + det(σ_d)·𝕀_d : ∂σ_d⁻¹/∂σ_d : 𝕀_d
        let dinv = Tensor4Sym::from_matrix_action(|x| {
            let a = mat_mul(&mat_mul(&inv, x), &inv);
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = -a[i][j];
                }
            }
            out
        });
        let second = id.compose(&dinv).compose(&id).scale(det);
        (d_j3, Tensor4Sym::dyad(&dev_inv, &d_j3).add(&second))
    };

    InvariantDerivatives {
        d_i1: SymTensor3::identity(TensorKind::Stress),
        d_j2: d,
        d_j3,
        d2_j2: id,
        d2_j3,
        used_fallback: singular,
    }
}

/// Isotropic linear elasticity: the 6×6 operator plus bulk and shear moduli.
#[derive(Clone, Copy, Debug)]
pub struct IsotropicElasticity {
    pub e: f64,
    pub nu: f64,
    /// Bulk modulus K = E / (3(1−2ν)).
    pub bulk: f64,
    /// Shear modulus G = E / (2(1+ν)).
    pub shear: f64,
    pub d: Tensor4Sym,
}

/// Builds the isotropic elasticity tensor Dᵉ = 2G 𝕀_d + K I ⊗ I.
pub fn elasticity_tensor(e: f64, nu: f64) -> Result<IsotropicElasticity> {
    if !(e > 0.0) {
        return Err(Error::invalid("E", format!("must be positive, got {e}")));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::invalid(
            "nu",
            format!("must lie in (-1, 0.5), got {nu}"),
        ));
    }
    let bulk = e / (3.0 * (1.0 - 2.0 * nu));
    let shear = e / (2.0 * (1.0 + nu));
    let eye = SymTensor3::identity(TensorKind::Stress);
    let d = Tensor4Sym::deviatoric_projector()
        .scale(2.0 * shear)
        .add(&Tensor4Sym::dyad(&eye, &eye).scale(bulk));
    Ok(IsotropicElasticity {
        e,
        nu,
        bulk,
        shear,
        d,
    })
}

pub(crate) fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
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

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}
