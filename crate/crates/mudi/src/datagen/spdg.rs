//! Stochastic Patch Deformation Generator (SPDG).
//!
//! Generates randomly deformed quadrilateral (2D, extruded one element thick)
//! or hexahedral (3D) material patches in three steps:
//!
//! 1. corner displacements u_i = ±0.5 ε̄_i l_i with ε̄_i sampled per corner and
//!    dimension inside the average-deformation bounds;
//! 2. polynomial edge deformation: per edge a random order p; the p−1 internal
//!    control points sit at even fractions of the chord with orthogonal offsets
//!    sampled in (0.5 ε̄_min l_orth, 0.5 ε̄_max l_orth); edge nodes are placed on
//!    the polynomial with uniform arc-length spacing. p = 0 keeps the edge
//!    parallel to its reference orientation by averaging the corner offsets
//!    (2D only); p = 1 is the straight chord. In 3D every face is processed
//!    like a 2D patch and shared edges average their two face-wise solutions;
//! 3. optional rigid translation and rotation (Bunge z-x-z Euler angles) about
//!    the deformed centroid.
//!
//! Every draw is checked for admissibility (positive Jacobians on a solid check
//! mesh plus no boundary self-intersection); non-admissible draws are rejected
//! and resampled up to a retry cap.

use super::super::fem::{box_mesh, Mesh, MeshQuadrature};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpdgSpec {
    /// Patch dimensions l_i (mm). 2D patches use dims[2] as the extrusion
    /// thickness (one element).
    pub dims: [f64; 3],
    /// Elements per dimension; 2D forces resolution[2] = 1.
    pub resolution: [usize; 3],
    pub two_d: bool,
    /// Per-dimension average-deformation bounds for the corner sampling.
    pub corner_strain_bounds: [[f64; 2]; 3],
    /// Edge polynomial order bounds (p_min, p_max ≤ 8).
    pub edge_order_bounds: [usize; 2],
    /// Edge deformation bounds (ε̄_min, ε̄_max) w.r.t. the orthogonal patch size.
    pub edge_strain_bounds: [f64; 2],
    pub translation_bounds: [[f64; 2]; 3],
    /// Euler angle bounds (rad), Bunge z-x-z; 2D uses only the first angle.
    pub rotation_bounds: [[f64; 2]; 3],
    pub enable_corners: bool,
    pub enable_edges: bool,
    pub enable_rigid: bool,
    /// 3D only: interpolate face-interior node displacements from the face
    /// edges (2D: fills the patch interior).
    pub face_interpolation: bool,
    pub retry_cap: usize,
}

impl SpdgSpec {
    /// Conservative 2D default used by the shipped configs.
    pub fn default_2d() -> SpdgSpec {
        SpdgSpec {
            dims: [1.0, 1.0, 0.125],
            resolution: [8, 8, 1],
            two_d: true,
            corner_strain_bounds: [[-0.02, 0.02], [-0.02, 0.02], [0.0, 0.0]],
            edge_order_bounds: [0, 3],
            edge_strain_bounds: [-0.02, 0.02],
            translation_bounds: [[0.0, 0.0]; 3],
            rotation_bounds: [[0.0, 0.0]; 3],
            enable_corners: true,
            enable_edges: true,
            enable_rigid: false,
            face_interpolation: false,
            retry_cap: 50,
        }
    }

    pub fn default_3d() -> SpdgSpec {
        SpdgSpec {
            dims: [1.0, 1.0, 1.0],
            resolution: [6, 6, 6],
            two_d: false,
            corner_strain_bounds: [[-0.02, 0.02]; 3],
            edge_order_bounds: [1, 3],
            edge_strain_bounds: [-0.015, 0.015],
            translation_bounds: [[0.0, 0.0]; 3],
            rotation_bounds: [[0.0, 0.0]; 3],
            enable_corners: true,
            enable_edges: true,
            enable_rigid: false,
            face_interpolation: true,
            retry_cap: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.edge_order_bounds[0] > self.edge_order_bounds[1] || self.edge_order_bounds[1] > 8 {
            return Err(Error::invalid(
                "edge_order_bounds",
                "need p_min ≤ p_max ≤ 8",
            ));
        }
        if !self.two_d && self.edge_order_bounds[0] == 0 {
            return Err(Error::invalid(
                "edge_order_bounds",
                "p = 0 edges are only supported on 2D patches",
            ));
        }
        for b in self
            .corner_strain_bounds
            .iter()
            .chain(self.translation_bounds.iter())
            .chain(self.rotation_bounds.iter())
        {
            if b[0] > b[1] || !b[0].is_finite() || !b[1].is_finite() {
                return Err(Error::invalid("bounds", "need finite min ≤ max"));
            }
        }
        if self.edge_strain_bounds[0] > self.edge_strain_bounds[1] {
            return Err(Error::invalid("edge_strain_bounds", "min > max"));
        }
        Ok(())
    }
}

/// Sampled polynomial and node placement of one deformed edge, in the
/// pre-rigid-motion frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeReport {
    /// Deformed positions of the two limiting corners.
    pub corner_a: [f64; 3],
    pub corner_b: [f64; 3],
    /// Chord unit vector and length.
    pub m1: [f64; 3],
    pub chord_len: f64,
    /// Orthogonal (offset) unit vector; positive = tensile.
    pub m2: [f64; 3],
    pub order: usize,
    /// Monomial coefficients of the offset polynomial w(ξ), ξ ∈ [0, 1].
    pub poly: Vec<f64>,
    /// Chord parameters of the placed nodes (uniform arc-length spacing).
    pub xi: Vec<f64>,
    /// Mesh node ids carrying this edge (first grid layer in 2D).
    pub node_ids: Vec<usize>,
    pub arc_length: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidMotion {
    pub translation: [f64; 3],
    /// Row-major rotation matrix.
    pub rotation: [[f64; 3]; 3],
    /// Center of rotation (deformed centroid).
    pub center: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpdgReport {
    pub attempts: usize,
    /// Sampled per-corner average deformations ε̄_i.
    pub corner_strains: Vec<[f64; 3]>,
    /// Step-1 corner displacements ±0.5 ε̄_i l_i (before p = 0 averaging).
    pub corner_disp_step1: Vec<[f64; 3]>,
    pub edges: Vec<EdgeReport>,
    pub rigid: Option<RigidMotion>,
}

/// A generated patch: mesh, prescribed boundary displacements and report.
#[derive(Clone, Debug)]
pub struct SpdgPatch {
    pub mesh: Mesh,
    /// Per-node prescribed displacement (None on unset interior nodes).
    pub displacement: Vec<Option<[f64; 3]>>,
    pub report: SpdgReport,
}

// ---- polynomial helpers -----------------------------------------------------

/// Monomial coefficients of the degree-p polynomial through (k/p, w_k); the
/// equispaced Vandermonde stays well conditioned for p ≤ 8.
fn fit_poly(offsets: &[f64]) -> Vec<f64> {
    let n = offsets.len();
    let vand = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        (i as f64 / (n - 1).max(1) as f64).powi(j as i32)
    });
    let rhs = nalgebra::DVector::from_vec(offsets.to_vec());
    vand.lu().solve(&rhs).expect("Vandermonde is regular").data.into()
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &ci in c.iter().rev() {
        acc = acc * x + ci;
    }
    acc
}

fn poly_deriv(c: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (j, &ci) in c.iter().enumerate().skip(1).rev() {
        acc = acc * x + j as f64 * ci;
    }
    acc
}

/// Arc length of C(ξ) = A + ξ·L·m̂1 + w(ξ)·m̂2 over [0, x]: composite Simpson
/// on ‖C′‖ = √(L² + w′²).
fn arc_length(coefs: &[f64], chord: f64, x: f64, panels: usize) -> f64 {
    let speed = |t: f64| (chord * chord + poly_deriv(coefs, t).powi(2)).sqrt();
    let h = x / panels as f64;
    let mut s = speed(0.0) + speed(x);
    for i in 1..panels {
        let t = i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * speed(t);
    }
    s * h / 3.0
}

/// ξ with arc length s(ξ) = target, via safeguarded Newton.
fn invert_arc_length(coefs: &[f64], chord: f64, target: f64, total: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut x = target / total;
    for _ in 0..60 {
        let s = arc_length(coefs, chord, x, 512);
        let err = s - target;
        if err.abs() < 1e-13 * total {
            break;
        }
        if err > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let speed = (chord * chord + poly_deriv(coefs, x).powi(2)).sqrt();
        let mut next = x - err / speed;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        x = next;
    }
    x
}

// ---- 2D core -----------------------------------------------------------------

struct Lattice {
    nn: [usize; 3],
}

impl Lattice {
    fn id(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.nn[1] + j) * self.nn[0] + i
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Generates a patch, resampling non-admissible draws up to the retry cap.
pub fn spdg_generate(spec: &SpdgSpec, seed: u64) -> Result<SpdgPatch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=spec.retry_cap.max(1) {
        let patch = draw_patch(spec, &mut rng, attempt)?;
        if admissible(spec, &patch)? {
            return Ok(patch);
        }
    }
    Err(Error::GenerationRetries(format!(
        "no admissible patch after {} draws",
        spec.retry_cap.max(1)
    )))
}

fn draw_patch(spec: &SpdgSpec, rng: &mut ChaCha8Rng, attempt: usize) -> Result<SpdgPatch> {
    if spec.two_d {
        draw_patch_2d(spec, rng, attempt)
    } else {
        draw_patch_3d(spec, rng, attempt)
    }
}

fn draw_patch_2d(spec: &SpdgSpec, rng: &mut ChaCha8Rng, attempt: usize) -> Result<SpdgPatch> {
    let n = [spec.resolution[0].max(1), spec.resolution[1].max(1), 1];
    let dims = [spec.dims[0], spec.dims[1], spec.dims[2]];
    let mesh0 = box_mesh(n, dims);
    let lat = Lattice {
        nn: [n[0] + 1, n[1] + 1, 2],
    };
    let (l1, l2) = (dims[0], dims[1]);

    // corners in lattice terms: (i, j) with reference positions
    let corners = [
        (0usize, 0usize),
        (n[0], 0),
        (n[0], n[1]),
        (0, n[1]),
    ];
    let corner_ref = [
        [0.0, 0.0],
        [l1, 0.0],
        [l1, l2],
        [0.0, l2],
    ];

    // step 1: corner displacements
    let mut corner_strains = vec![[0.0f64; 3]; 4];
    let mut corner_disp = vec![[0.0f64; 3]; 4];
    if spec.enable_corners {
        for c in 0..4 {
            for dim in 0..2 {
                let b = spec.corner_strain_bounds[dim];
                let eps = sample_range(rng, b[0], b[1]);
                corner_strains[c][dim] = eps;
                let sign = if corner_ref[c][dim] > 0.0 { 1.0 } else { -1.0 };
                corner_disp[c][dim] = sign * 0.5 * eps * dims[dim];
            }
        }
    }
    let corner_disp_step1 = corner_disp.clone();

    // edges: (corner A, corner B, along-dim, orth-dim, outward sign of orth dim)
    let edge_defs = [
        (0usize, 1usize, 0usize, 1usize, -1.0f64), // bottom
        (1, 2, 1, 0, 1.0),                         // right
        (3, 2, 0, 1, 1.0),                         // top
        (0, 3, 1, 0, -1.0),                        // left
    ];
    // sample orders first; p = 0 edges average the corner offsets in place
    let mut orders = [1usize; 4];
    if spec.enable_edges {
        for (e, &(a, b, _, orth, _)) in edge_defs.iter().enumerate() {
            let p = rng.gen_range(spec.edge_order_bounds[0]..=spec.edge_order_bounds[1]);
            orders[e] = p;
            if p == 0 {
                let avg = 0.5 * (corner_disp[a][orth] + corner_disp[b][orth]);
                corner_disp[a][orth] = avg;
                corner_disp[b][orth] = avg;
            }
        }
    }

    let mut displacement: Vec<Option<[f64; 3]>> = vec![None; mesh0.n_nodes()];
    let set2 = |disp: &mut Vec<Option<[f64; 3]>>, i: usize, j: usize, val: [f64; 2]| {
        for k in 0..2 {
            displacement_index(disp, lat.id(i, j, k), [val[0], val[1], 0.0]);
        }
    };

    // corners
    for (c, &(ci, cj)) in corners.iter().enumerate() {
        set2(
            &mut displacement,
            ci,
            cj,
            [corner_disp[c][0], corner_disp[c][1]],
        );
    }

    // step 2: edge curves and node placement
    let mut edge_reports = Vec::new();
    for (e, &(a, b, along, orth, outward)) in edge_defs.iter().enumerate() {
        let p = if spec.enable_edges { orders[e] } else { 1 };
        let a_def = [
            corner_ref[a][0] + corner_disp[a][0],
            corner_ref[a][1] + corner_disp[a][1],
            0.0,
        ];
        let b_def = [
            corner_ref[b][0] + corner_disp[b][0],
            corner_ref[b][1] + corner_disp[b][1],
            0.0,
        ];
        let chord_vec = sub3(b_def, a_def);
        let chord = norm3(chord_vec);
        let m1 = [chord_vec[0] / chord, chord_vec[1] / chord, 0.0];
        // in-plane normal with the requested outward orientation
        let mut m2 = [-m1[1], m1[0], 0.0];
        let out_ref = {
            let mut v = [0.0, 0.0];
            v[orth] = outward;
            v
        };
        if m2[0] * out_ref[0] + m2[1] * out_ref[1] < 0.0 {
            m2 = [-m2[0], -m2[1], 0.0];
        }

        // offsets at chord fractions 0, 1/p … 1 (ends pinned to the corners)
        let l_orth = dims[orth];
        let mut offsets = vec![0.0f64];
        if p > 1 && spec.enable_edges {
            for _ in 1..p {
                offsets.push(sample_range(
                    rng,
                    0.5 * spec.edge_strain_bounds[0] * l_orth,
                    0.5 * spec.edge_strain_bounds[1] * l_orth,
                ));
            }
        }
        offsets.push(0.0);
        let poly = if p > 1 { fit_poly(&offsets) } else { vec![0.0] };

        // uniform arc-length placement of the n_edge+1 nodes
        let n_e = n[along];
        let total = arc_length(&poly, chord, 1.0, 1024);
        let mut xi = Vec::with_capacity(n_e + 1);
        let mut node_ids = Vec::with_capacity(n_e + 1);
        for s in 0..=n_e {
            let x = if s == 0 {
                0.0
            } else if s == n_e {
                1.0
            } else {
                invert_arc_length(&poly, chord, total * s as f64 / n_e as f64, total)
            };
            xi.push(x);
            let (gi, gj) = edge_lattice_coords(e, s, n);
            node_ids.push(lat.id(gi, gj, 0));
            let w = poly_eval(&poly, x);
            let pos = [
                a_def[0] + x * chord_vec[0] + w * m2[0],
                a_def[1] + x * chord_vec[1] + w * m2[1],
            ];
            let reference = ref_coords_2d(e, s, n, dims);
            set2(
                &mut displacement,
                gi,
                gj,
                [pos[0] - reference[0], pos[1] - reference[1]],
            );
        }
        edge_reports.push(EdgeReport {
            corner_a: a_def,
            corner_b: b_def,
            m1,
            chord_len: chord,
            m2,
            order: p,
            poly,
            xi,
            node_ids,
            arc_length: total,
        });
    }

    // optional interior fill (Coons-style averaging of the two lerp directions)
    if spec.face_interpolation {
        fill_interior_2d(&mesh0, &lat, n, dims, &mut displacement);
    }

    // step 3: rigid motion
    let rigid = if spec.enable_rigid {
        Some(apply_rigid(spec, rng, &mesh0, &mut displacement, true))
    } else {
        None
    };

    let mut mesh = mesh0;
    let boundary: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&i| displacement[i].is_some())
        .collect();
    mesh.node_sets.insert("boundary".into(), boundary);

    Ok(SpdgPatch {
        mesh,
        displacement,
        report: SpdgReport {
            attempts: attempt,
            corner_strains,
            corner_disp_step1,
            edges: edge_reports,
            rigid,
        },
    })
}

fn displacement_index(disp: &mut [Option<[f64; 3]>], id: usize, val: [f64; 3]) {
    disp[id] = Some(val);
}

fn sample_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Lattice coordinates of node `s` along 2D edge `e`.
fn edge_lattice_coords(e: usize, s: usize, n: [usize; 3]) -> (usize, usize) {
    match e {
        0 => (s, 0),
        1 => (n[0], s),
        2 => (s, n[1]),
        _ => (0, s),
    }
}

fn ref_coords_2d(e: usize, s: usize, n: [usize; 3], dims: [f64; 3]) -> [f64; 2] {
    let (i, j) = edge_lattice_coords(e, s, n);
    [
        dims[0] * i as f64 / n[0] as f64,
        dims[1] * j as f64 / n[1] as f64,
    ]
}

fn fill_interior_2d(
    _mesh: &Mesh,
    lat: &Lattice,
    n: [usize; 3],
    _dims: [f64; 3],
    disp: &mut Vec<Option<[f64; 3]>>,
) {
    // boundary values by lattice coordinates
    let get = |disp: &Vec<Option<[f64; 3]>>, i: usize, j: usize| -> [f64; 3] {
        disp[lat.id(i, j, 0)].expect("boundary value set")
    };
    for j in 1..n[1] {
        for i in 1..n[0] {
            let xi = i as f64 / n[0] as f64;
            let eta = j as f64 / n[1] as f64;
            let left = get(disp, 0, j);
            let right = get(disp, n[0], j);
            let bottom = get(disp, i, 0);
            let top = get(disp, i, n[1]);
            let val: [f64; 3] = std::array::from_fn(|c| {
                0.5 * ((1.0 - xi) * left[c] + xi * right[c])
                    + 0.5 * ((1.0 - eta) * bottom[c] + eta * top[c])
            });
            for k in 0..2 {
                disp[lat.id(i, j, k)] = Some(val);
            }
        }
    }
}

fn apply_rigid(
    spec: &SpdgSpec,
    rng: &mut ChaCha8Rng,
    mesh: &Mesh,
    disp: &mut [Option<[f64; 3]>],
    two_d: bool,
) -> RigidMotion {
    let t: [f64; 3] = std::array::from_fn(|i| {
        sample_range(rng, spec.translation_bounds[i][0], spec.translation_bounds[i][1])
    });
    let angles: [f64; 3] = std::array::from_fn(|i| {
        sample_range(rng, spec.rotation_bounds[i][0], spec.rotation_bounds[i][1])
    });
    let rot = if two_d {
        rot_z(angles[0])
    } else {
        // Bunge convention: R = R_z(θ1) · R_x(θ2) · R_z(θ3)
        mat_mul3(&mat_mul3(&rot_z(angles[0]), &rot_x(angles[1])), &rot_z(angles[2]))
    };
    // deformed centroid over prescribed nodes
    let mut c = [0.0f64; 3];
    let mut count = 0usize;
    for (i, d) in disp.iter().enumerate() {
        if let Some(u) = d {
            for k in 0..3 {
                c[k] += mesh.nodes[i][k] + u[k];
            }
            count += 1;
        }
    }
    for v in &mut c {
        *v /= count.max(1) as f64;
    }
    for (i, d) in disp.iter_mut().enumerate() {
        if let Some(u) = d {
            let x: [f64; 3] = std::array::from_fn(|k| mesh.nodes[i][k] + u[k] - c[k]);
            let rx = [
                rot[0][0] * x[0] + rot[0][1] * x[1] + rot[0][2] * x[2],
                rot[1][0] * x[0] + rot[1][1] * x[1] + rot[1][2] * x[2],
                rot[2][0] * x[0] + rot[2][1] * x[1] + rot[2][2] * x[2],
            ];
            *u = std::array::from_fn(|k| rx[k] + c[k] + t[k] - mesh.nodes[i][k]);
        }
    }
    RigidMotion {
        translation: t,
        rotation: rot,
        center: c,
    }
}

fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
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

// ---- 3D ---------------------------------------------------------------------

fn draw_patch_3d(spec: &SpdgSpec, rng: &mut ChaCha8Rng, attempt: usize) -> Result<SpdgPatch> {
    let n = spec.resolution.map(|x| x.max(1));
    let dims = spec.dims;
    let mesh0 = box_mesh(n, dims);
    let lat = Lattice {
        nn: [n[0] + 1, n[1] + 1, n[2] + 1],
    };

    // 8 corners in lattice terms
    let corner_lat: [[usize; 3]; 8] = [
        [0, 0, 0],
        [n[0], 0, 0],
        [n[0], n[1], 0],
        [0, n[1], 0],
        [0, 0, n[2]],
        [n[0], 0, n[2]],
        [n[0], n[1], n[2]],
        [0, n[1], n[2]],
    ];
    let corner_ref: Vec<[f64; 3]> = corner_lat
        .iter()
        .map(|c| [
            dims[0] * c[0] as f64 / n[0] as f64,
            dims[1] * c[1] as f64 / n[1] as f64,
            dims[2] * c[2] as f64 / n[2] as f64,
        ])
        .collect();

    let mut corner_strains = vec![[0.0f64; 3]; 8];
    let mut corner_disp = vec![[0.0f64; 3]; 8];
    if spec.enable_corners {
        for c in 0..8 {
            for dim in 0..3 {
                let b = spec.corner_strain_bounds[dim];
                let eps = sample_range(rng, b[0], b[1]);
                corner_strains[c][dim] = eps;
                let sign = if corner_ref[c][dim] > 0.0 { 1.0 } else { -1.0 };
                corner_disp[c][dim] = sign * 0.5 * eps * dims[dim];
            }
        }
    }
    let corner_disp_step1 = corner_disp.clone();
    let corner_def: Vec<[f64; 3]> = (0..8)
        .map(|c| std::array::from_fn(|k| corner_ref[c][k] + corner_disp[c][k]))
        .collect();

    // faces: (4 corner ids CCW, fixed lattice dim, fixed value is max?)
    // each face lists its corners so consecutive pairs are its edges
    let faces: [( [usize; 4], usize, bool); 6] = [
        ([0, 1, 2, 3], 2, false), // z = 0
        ([4, 5, 6, 7], 2, true),  // z = max
        ([0, 1, 5, 4], 1, false), // y = 0
        ([3, 2, 6, 7], 1, true),  // y = max
        ([0, 3, 7, 4], 0, false), // x = 0
        ([1, 2, 6, 5], 0, true),  // x = max
    ];

    // accumulate per-node displacement sums from face-wise edge processing
    let mut acc: Vec<[f64; 3]> = vec![[0.0; 3]; mesh0.n_nodes()];
    let mut hits: Vec<usize> = vec![0; mesh0.n_nodes()];
    let mut edge_reports = Vec::new();

    for &(fc, _fixed_dim, _at_max) in &faces {
        for e in 0..4 {
            let a = fc[e];
            let b = fc[(e + 1) % 4];
            let opposite = fc[(e + 2) % 4];
            let p = if spec.enable_edges {
                rng.gen_range(spec.edge_order_bounds[0].max(1)..=spec.edge_order_bounds[1].max(1))
            } else {
                1
            };
            let a_def = corner_def[a];
            let b_def = corner_def[b];
            let chord_vec = sub3(b_def, a_def);
            let chord = norm3(chord_vec);
            let m1: [f64; 3] = std::array::from_fn(|k| chord_vec[k] / chord);
            // deformation plane from the deformed face diagonal; tensile points
            // away from the face interior
            let diag = sub3(corner_def[opposite], a_def);
            let proj = m1[0] * diag[0] + m1[1] * diag[1] + m1[2] * diag[2];
            let mut m2: [f64; 3] = std::array::from_fn(|k| diag[k] - proj * m1[k]);
            let m2n = norm3(m2);
            for v in &mut m2 {
                *v /= m2n;
            }
            // inward → flip to make positive offsets tensile (outward)
            for v in &mut m2 {
                *v = -*v;
            }

            // orthogonal patch size: the dimension with the largest |m2| span
            let l_orth = {
                let mut best = (0.0f64, 0usize);
                for (dim, m) in m2.iter().enumerate() {
                    if m.abs() > best.0 {
                        best = (m.abs(), dim);
                    }
                }
                dims[best.1]
            };
            let mut offsets = vec![0.0f64];
            if p > 1 && spec.enable_edges {
                for _ in 1..p {
                    offsets.push(sample_range(
                        rng,
                        0.5 * spec.edge_strain_bounds[0] * l_orth,
                        0.5 * spec.edge_strain_bounds[1] * l_orth,
                    ));
                }
            }
            offsets.push(0.0);
            let poly = if p > 1 { fit_poly(&offsets) } else { vec![0.0] };

            let (ids, refs) = edge_nodes_3d(&lat, &corner_lat, a, b, n, dims);
            let n_e = ids.len() - 1;
            let total = arc_length(&poly, chord, 1.0, 1024);
            let mut xi = Vec::with_capacity(n_e + 1);
            for s in 0..=n_e {
                let x = if s == 0 {
                    0.0
                } else if s == n_e {
                    1.0
                } else {
                    invert_arc_length(&poly, chord, total * s as f64 / n_e as f64, total)
                };
                xi.push(x);
                let w = poly_eval(&poly, x);
                let pos: [f64; 3] =
                    std::array::from_fn(|k| a_def[k] + x * chord_vec[k] + w * m2[k]);
                for k in 0..3 {
                    acc[ids[s]][k] += pos[k] - refs[s][k];
                }
                hits[ids[s]] += 1;
            }
            edge_reports.push(EdgeReport {
                corner_a: a_def,
                corner_b: b_def,
                m1,
                chord_len: chord,
                m2,
                order: p,
                poly,
                xi,
                node_ids: ids,
                arc_length: total,
            });
        }
    }

    // average the duplicated edges (corners are hit by several edges as well)
    let mut displacement: Vec<Option<[f64; 3]>> = vec![None; mesh0.n_nodes()];
    for i in 0..mesh0.n_nodes() {
        if hits[i] > 0 {
            displacement[i] = Some(std::array::from_fn(|k| acc[i][k] / hits[i] as f64));
        }
    }

    // face interpolation for face-interior nodes
    if spec.face_interpolation {
        fill_faces_3d(&lat, n, &mut displacement);
    }

    let rigid = if spec.enable_rigid {
        Some(apply_rigid(spec, rng, &mesh0, &mut displacement, false))
    } else {
        None
    };

    let mut mesh = mesh0;
    let boundary: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&i| displacement[i].is_some())
        .collect();
    mesh.node_sets.insert("boundary".into(), boundary);

    Ok(SpdgPatch {
        mesh,
        displacement,
        report: SpdgReport {
            attempts: attempt,
            corner_strains,
            corner_disp_step1,
            edges: edge_reports,
            rigid,
        },
    })
}

/// Node ids and reference coordinates along the straight lattice edge between
/// two corners.
fn edge_nodes_3d(
    lat: &Lattice,
    corner_lat: &[[usize; 3]; 8],
    a: usize,
    b: usize,
    n: [usize; 3],
    dims: [f64; 3],
) -> (Vec<usize>, Vec<[f64; 3]>) {
    let ca = corner_lat[a];
    let cb = corner_lat[b];
    let dim = (0..3).find(|&d| ca[d] != cb[d]).expect("corners differ");
    let steps = n[dim];
    let mut ids = Vec::with_capacity(steps + 1);
    let mut refs = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let frac = s as f64 / steps as f64;
        let mut c = ca;
        c[dim] = if cb[dim] > ca[dim] { s } else { steps - s };
        ids.push(lat.id(c[0], c[1], c[2]));
        let mut r = [0.0; 3];
        for k in 0..3 {
            r[k] = dims[k] * c[k] as f64 / n[k] as f64;
        }
        let _ = frac;
        refs.push(r);
    }
    (ids, refs)
}

fn fill_faces_3d(lat: &Lattice, n: [usize; 3], disp: &mut Vec<Option<[f64; 3]>>) {
    // for each of the six faces, interpolate interior nodes by averaging the
    // two in-face lerps between opposite edges
    let faces: [(usize, usize, usize, bool); 6] = [
        (0, 1, 2, false),
        (0, 1, 2, true),
        (0, 2, 1, false),
        (0, 2, 1, true),
        (1, 2, 0, false),
        (1, 2, 0, true),
    ];
    for &(da, db, fixed, at_max) in &faces {
        let fixed_val = if at_max { n[fixed] } else { 0 };
        let coord = |ia: usize, ib: usize| -> usize {
            let mut c = [0usize; 3];
            c[da] = ia;
            c[db] = ib;
            c[fixed] = fixed_val;
            lat.id(c[0], c[1], c[2])
        };
        for ia in 1..n[da] {
            for ib in 1..n[db] {
                let xi = ia as f64 / n[da] as f64;
                let eta = ib as f64 / n[db] as f64;
                let left = disp[coord(0, ib)].expect("edge set");
                let right = disp[coord(n[da], ib)].expect("edge set");
                let bottom = disp[coord(ia, 0)].expect("edge set");
                let top = disp[coord(ia, n[db])].expect("edge set");
                let val: [f64; 3] = std::array::from_fn(|c| {
                    0.5 * ((1.0 - xi) * left[c] + xi * right[c])
                        + 0.5 * ((1.0 - eta) * bottom[c] + eta * top[c])
                });
                disp[coord(ia, ib)] = Some(val);
            }
        }
    }
}

// ---- admissibility -----------------------------------------------------------

/// Deformed check mesh: prescribed nodes move as drawn, the remaining interior
/// follows a transfinite fill, and the result must have positive Jacobians at
/// every Gauss point plus a self-intersection-free boundary.
fn admissible(spec: &SpdgSpec, patch: &SpdgPatch) -> Result<bool> {
    let mesh = &patch.mesh;
    let mut disp: Vec<[f64; 3]> = Vec::with_capacity(mesh.n_nodes());
    let full = interior_fill(spec, patch);
    for (i, d) in patch.displacement.iter().enumerate() {
        disp.push(d.unwrap_or(full[i]));
    }
    let mut deformed = mesh.clone();
    for (node, d) in deformed.nodes.iter_mut().zip(disp.iter()) {
        for k in 0..3 {
            node[k] += d[k];
        }
    }
    if MeshQuadrature::build(&deformed).is_err() {
        return Ok(false);
    }
    Ok(!boundary_self_intersects(spec, &deformed))
}

/// Transfinite interior values for unset nodes (volume fill by averaging the
/// three axis lerps between opposite boundary values).
fn interior_fill(spec: &SpdgSpec, patch: &SpdgPatch) -> Vec<[f64; 3]> {
    let n = if spec.two_d {
        [spec.resolution[0].max(1), spec.resolution[1].max(1), 1]
    } else {
        spec.resolution.map(|x| x.max(1))
    };
    let lat = Lattice {
        nn: [n[0] + 1, n[1] + 1, n[2] + 1],
    };
    let mut out = vec![[0.0f64; 3]; patch.mesh.n_nodes()];
    // first ensure faces are filled (working copy)
    let mut disp = patch.displacement.clone();
    if spec.two_d {
        if disp.iter().any(|d| d.is_none()) {
            fill_interior_2d(&patch.mesh, &lat, n, spec.dims, &mut disp);
        }
    } else if disp.iter().any(|d| d.is_none()) {
        fill_faces_3d(&lat, n, &mut disp);
        // volume fill by axis-lerp averaging
        for k in 1..n[2] {
            for j in 1..n[1] {
                for i in 1..n[0] {
                    let xi = i as f64 / n[0] as f64;
                    let eta = j as f64 / n[1] as f64;
                    let zeta = k as f64 / n[2] as f64;
                    let gx0 = disp[lat.id(0, j, k)].expect("face set");
                    let gx1 = disp[lat.id(n[0], j, k)].expect("face set");
                    let gy0 = disp[lat.id(i, 0, k)].expect("face set");
                    let gy1 = disp[lat.id(i, n[1], k)].expect("face set");
                    let gz0 = disp[lat.id(i, j, 0)].expect("face set");
                    let gz1 = disp[lat.id(i, j, n[2])].expect("face set");
                    let val: [f64; 3] = std::array::from_fn(|c| {
                        ((1.0 - xi) * gx0[c]
                            + xi * gx1[c]
                            + (1.0 - eta) * gy0[c]
                            + eta * gy1[c]
                            + (1.0 - zeta) * gz0[c]
                            + zeta * gz1[c])
                            / 3.0
                    });
                    disp[lat.id(i, j, k)] = Some(val);
                }
            }
        }
    }
    for (i, d) in disp.iter().enumerate() {
        out[i] = d.unwrap_or([0.0; 3]);
    }
    out
}

/// Segment/face bounding-volume test for boundary self-intersection: 2D checks
/// non-adjacent outline segments, 3D checks AABB-filtered triangle pairs of the
/// boundary surface.
fn boundary_self_intersects(spec: &SpdgSpec, deformed: &Mesh) -> bool {
    if spec.two_d {
        let n = [spec.resolution[0].max(1), spec.resolution[1].max(1), 1];
        let lat = Lattice {
            nn: [n[0] + 1, n[1] + 1, 2],
        };
        // closed outline at the first grid layer
        let mut outline = Vec::new();
        for i in 0..n[0] {
            outline.push((lat.id(i, 0, 0), lat.id(i + 1, 0, 0)));
        }
        for j in 0..n[1] {
            outline.push((lat.id(n[0], j, 0), lat.id(n[0], j + 1, 0)));
        }
        for i in (0..n[0]).rev() {
            outline.push((lat.id(i + 1, n[1], 0), lat.id(i, n[1], 0)));
        }
        for j in (0..n[1]).rev() {
            outline.push((lat.id(0, j + 1, 0), lat.id(0, j, 0)));
        }
        let m = outline.len();
        for a in 0..m {
            for b in (a + 2)..m {
                if a == 0 && b == m - 1 {
                    continue; // adjacent around the loop
                }
                let (a0, a1) = outline[a];
                let (b0, b1) = outline[b];
                if segments_intersect_2d(
                    deformed.nodes[a0],
                    deformed.nodes[a1],
                    deformed.nodes[b0],
                    deformed.nodes[b1],
                ) {
                    return true;
                }
            }
        }
        false
    } else {
        let tris = boundary_triangles(spec, deformed);
        let boxes: Vec<([f64; 3], [f64; 3])> = tris
            .iter()
            .map(|t| {
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for p in t.0.iter() {
                    for c in 0..3 {
                        lo[c] = lo[c].min(p[c]);
                        hi[c] = hi[c].max(p[c]);
                    }
                }
                (lo, hi)
            })
            .collect();
        for a in 0..tris.len() {
            for b in (a + 1)..tris.len() {
                if tris[a].1.iter().any(|v| tris[b].1.contains(v)) {
                    continue; // shared node: adjacent patches
                }
                let (alo, ahi) = boxes[a];
                let (blo, bhi) = boxes[b];
                if (0..3).any(|c| ahi[c] < blo[c] || bhi[c] < alo[c]) {
                    continue;
                }
                if triangles_intersect(&tris[a].0, &tris[b].0) {
                    return true;
                }
            }
        }
        false
    }
}

fn segments_intersect_2d(a0: [f64; 3], a1: [f64; 3], b0: [f64; 3], b1: [f64; 3]) -> bool {
    let d = |p: [f64; 3], q: [f64; 3], r: [f64; 3]| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let d1 = d(b0, b1, a0);
    let d2 = d(b0, b1, a1);
    let d3 = d(a0, a1, b0);
    let d4 = d(a0, a1, b1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

type Tri = ([[f64; 3]; 3], [usize; 3]);

fn boundary_triangles(spec: &SpdgSpec, deformed: &Mesh) -> Vec<Tri> {
    let n = spec.resolution.map(|x| x.max(1));
    let lat = Lattice {
        nn: [n[0] + 1, n[1] + 1, n[2] + 1],
    };
    let mut tris = Vec::new();
    let mut quad = |ids: [usize; 4], tris: &mut Vec<Tri>| {
        let p: Vec<[f64; 3]> = ids.iter().map(|&i| deformed.nodes[i]).collect();
        tris.push(([p[0], p[1], p[2]], [ids[0], ids[1], ids[2]]));
        tris.push(([p[0], p[2], p[3]], [ids[0], ids[2], ids[3]]));
    };
    for &(da, db, fixed, at_max) in &[
        (0usize, 1usize, 2usize, false),
        (0, 1, 2, true),
        (0, 2, 1, false),
        (0, 2, 1, true),
        (1, 2, 0, false),
        (1, 2, 0, true),
    ] {
        let f = if at_max { n[fixed] } else { 0 };
        for ia in 0..n[da] {
            for ib in 0..n[db] {
                let id = |x: usize, y: usize| {
                    let mut c = [0usize; 3];
                    c[da] = x;
                    c[db] = y;
                    c[fixed] = f;
                    lat.id(c[0], c[1], c[2])
                };
                quad(
                    [id(ia, ib), id(ia + 1, ib), id(ia + 1, ib + 1), id(ia, ib + 1)],
                    &mut tris,
                );
            }
        }
    }
    tris
}

/// Separating-axis triangle-triangle intersection test.
fn triangles_intersect(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> bool {
    let axes = candidate_axes(a, b);
    for ax in axes {
        let n = norm3(ax);
        if n < 1e-14 {
            continue;
        }
        let proj = |t: &[[f64; 3]; 3]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in t {
                let v = p[0] * ax[0] + p[1] * ax[1] + p[2] * ax[2];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (alo, ahi) = proj(a);
        let (blo, bhi) = proj(b);
        if ahi < blo - 1e-14 || bhi < alo - 1e-14 {
            return false;
        }
    }
    true
}

fn candidate_axes(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> Vec<[f64; 3]> {
    let cross = |u: [f64; 3], v: [f64; 3]| {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let ea: Vec<[f64; 3]> = (0..3).map(|i| sub3(a[(i + 1) % 3], a[i])).collect();
    let eb: Vec<[f64; 3]> = (0..3).map(|i| sub3(b[(i + 1) % 3], b[i])).collect();
    let mut axes = vec![cross(ea[0], ea[1]), cross(eb[0], eb[1])];
    for u in &ea {
        for v in &eb {
            axes.push(cross(*u, *v));
        }
    }
    axes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_configuration_when_everything_disabled() {
        let mut spec = SpdgSpec::default_2d();
        spec.enable_corners = false;
        spec.enable_edges = false;
        spec.enable_rigid = false;
        let patch = spdg_generate(&spec, 1).unwrap();
        for d in patch.displacement.iter().flatten() {
            for c in d {
                assert_eq!(*c, 0.0);
            }
        }
    }

    #[test]
    fn corner_displacements_satisfy_step1_formula() {
        let spec = SpdgSpec {
            edge_order_bounds: [1, 1], // no p = 0 averaging, corners stay exact
            ..SpdgSpec::default_2d()
        };
        let patch = spdg_generate(&spec, 7).unwrap();
        let r = &patch.report;
        for c in 0..4 {
            for dim in 0..2 {
                let expect = 0.5 * r.corner_strains[c][dim] * spec.dims[dim];
                assert!(
                    (r.corner_disp_step1[c][dim].abs() - expect.abs()).abs() < 1e-15,
                    "corner {c} dim {dim}"
                );
            }
        }
        // fixed strain sign convention: ε̄ > 0 stretches the patch
        let strains = &r.corner_strains;
        let disp = &r.corner_disp_step1;
        // corner 0 sits at the origin: tensile x moves it in −x
        if strains[0][0] > 0.0 {
            assert!(disp[0][0] < 0.0);
        }
        // corner 1 sits at x = l1: tensile x moves it in +x
        if strains[1][0] > 0.0 {
            assert!(disp[1][0] > 0.0);
        }
    }

    #[test]
    fn edge_nodes_lie_on_their_polynomials_with_uniform_spacing() {
        let spec = SpdgSpec {
            edge_order_bounds: [2, 4],
            ..SpdgSpec::default_2d()
        };
        let patch = spdg_generate(&spec, 21).unwrap();
        for edge in &patch.report.edges {
            // membership: offset of each node from the chord equals w(ξ)
            for (s, &id) in edge.node_ids.iter().enumerate() {
                let u = patch.displacement[id].unwrap();
                let x = [
                    patch.mesh.nodes[id][0] + u[0],
                    patch.mesh.nodes[id][1] + u[1],
                    0.0,
                ];
                let rel = sub3(x, edge.corner_a);
                let along = rel[0] * edge.m1[0] + rel[1] * edge.m1[1];
                let off = rel[0] * edge.m2[0] + rel[1] * edge.m2[1];
                let xi = along / edge.chord_len;
                assert!(
                    (off - poly_eval(&edge.poly, xi)).abs() < 1e-6,
                    "node {s} off-curve by {}",
                    (off - poly_eval(&edge.poly, xi)).abs()
                );
            }
            // uniform arc-length spacing via an independent fine quadrature
            let mut arcs = Vec::new();
            for w in edge.xi.windows(2) {
                let fine = 4000;
                let mut s = 0.0;
                for i in 0..fine {
                    let t0 = w[0] + (w[1] - w[0]) * i as f64 / fine as f64;
                    let t1 = w[0] + (w[1] - w[0]) * (i + 1) as f64 / fine as f64;
                    let p0 = poly_eval(&edge.poly, t0);
                    let p1 = poly_eval(&edge.poly, t1);
                    let dx = (t1 - t0) * edge.chord_len;
                    let dy = p1 - p0;
                    s += (dx * dx + dy * dy).sqrt();
                }
                arcs.push(s);
            }
            let mean = arcs.iter().sum::<f64>() / arcs.len() as f64;
            for a in &arcs {
                assert!(
                    (a - mean).abs() < 1e-6 * mean,
                    "non-uniform arc spacing: {a} vs mean {mean}"
                );
            }
        }
    }

    #[test]
    fn p0_edges_stay_parallel_to_reference() {
        let spec = SpdgSpec {
            edge_order_bounds: [0, 0],
            ..SpdgSpec::default_2d()
        };
        let patch = spdg_generate(&spec, 3).unwrap();
        for (e, edge) in patch.report.edges.iter().enumerate() {
            // reference orientations: edges 0, 2 along x; 1, 3 along y
            let along_x = e % 2 == 0;
            for &id in &edge.node_ids {
                let u = patch.displacement[id].unwrap();
                let first = patch.displacement[edge.node_ids[0]].unwrap();
                if along_x {
                    assert!((u[1] - first[1]).abs() < 1e-12, "edge {e} not parallel");
                } else {
                    assert!((u[0] - first[0]).abs() < 1e-12, "edge {e} not parallel");
                }
            }
        }
    }

    #[test]
    fn rigid_motion_is_isometric() {
        let spec = SpdgSpec {
            translation_bounds: [[-0.1, 0.1]; 3],
            rotation_bounds: [[-0.3, 0.3], [0.0, 0.0], [0.0, 0.0]],
            enable_rigid: true,
            ..SpdgSpec::default_2d()
        };
        let patch = spdg_generate(&spec, 5).unwrap();
        let rigid = patch.report.rigid.as_ref().unwrap();
        // rotation matrix orthonormal
        let r = rigid.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hundred_seeds_admissible_2d() {
        let spec = SpdgSpec::default_2d();
        for seed in 0..100 {
            let patch = spdg_generate(&spec, seed).unwrap();
            assert!(patch.report.attempts <= spec.retry_cap);
        }
    }

    #[test]
    fn three_d_patch_generates_and_averages_edges() {
        let spec = SpdgSpec::default_3d();
        let patch = spdg_generate(&spec, 11).unwrap();
        // 24 face-edge reports (6 faces × 4 edges), 12 unique edges averaged
        assert_eq!(patch.report.edges.len(), 24);
        // every boundary node is prescribed with face interpolation on
        let n = spec.resolution;
        let expected_boundary = {
            let nn = [n[0] + 1, n[1] + 1, n[2] + 1];
            nn[0] * nn[1] * nn[2] - (nn[0] - 2) * (nn[1] - 2) * (nn[2] - 2)
        };
        let count = patch.displacement.iter().filter(|d| d.is_some()).count();
        assert_eq!(count, expected_boundary);
    }

    #[test]
    fn rejects_p0_in_three_d() {
        let spec = SpdgSpec {
            edge_order_bounds: [0, 2],
            ..SpdgSpec::default_3d()
        };
        assert!(spdg_generate(&spec, 1).is_err());
    }
}
