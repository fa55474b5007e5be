//! Meshes, displacement-force histories, strain extraction, internal-force
//! assembly, the dimensionless force-equilibrium loss and a small implicit
//! forward solver for synthesizing ground-truth data.

pub mod element;
mod loss;
mod solver;

pub use loss::{fabricate_consistent_history, FieldGenerator, GlobalLoss};
pub use solver::{forward_solve, SolverOptions};

use crate::error::{Error, Result};
use crate::tensor::{SymTensor3, TensorKind};
use element::ElementQuadrature;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Hex8 mesh with named node sets. Coordinates in mm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 3]>,
    pub hex8: Vec<[usize; 8]>,
    #[serde(default)]
    pub node_sets: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.nodes.len()
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 3]; 8] {
        std::array::from_fn(|i| self.nodes[self.hex8[e][i]])
    }

    /// Validates connectivity and the positive-Jacobian invariant.
    pub fn validate(&self) -> Result<()> {
        for (e, conn) in self.hex8.iter().enumerate() {
            for &n in conn {
                if n >= self.nodes.len() {
                    return Err(Error::Mesh(format!("element {e} references node {n}")));
                }
            }
            element::element_quadrature(&self.element_coords(e))
                .map_err(|err| Error::Mesh(format!("element {e}: {err}")))?;
        }
        for (name, set) in &self.node_sets {
            for &n in set {
                if n >= self.nodes.len() {
                    return Err(Error::Mesh(format!("node set `{name}` references node {n}")));
                }
            }
        }
        Ok(())
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for n in &self.nodes {
            for c in 0..3 {
                lo[c] = lo[c].min(n[c]);
                hi[c] = hi[c].max(n[c]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        self.node_sets
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Mesh(format!("unknown node set `{name}`")))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = serde_json::json!({
            "format": "mudi/1",
            "kind": "mesh",
            "nodes": self.nodes,
            "hex8": self.hex8,
            "node_sets": self.node_sets,
        });
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Mesh> {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc["format"] != "mudi/1" || doc["kind"] != "mesh" {
            return Err(Error::Config(format!(
                "{} is not a mudi/1 mesh file",
                path.display()
            )));
        }
        let mesh: Mesh = serde_json::from_value(doc)?;
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Characteristic scales making the force-equilibrium loss dimensionless:
/// α⁻¹ = E_c² l_c⁴ t_c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    /// Characteristic Young modulus (MPa).
    pub e_c: f64,
    /// Characteristic length (mm).
    pub l_c: f64,
    /// Characteristic pseudo-time span.
    pub t_c: f64,
}

impl Scales {
    pub fn alpha(&self) -> f64 {
        1.0 / (self.e_c * self.e_c * self.l_c.powi(4) * self.t_c)
    }
}

/// Nodal displacement/force history of a specimen (pseudo-time steps).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalHistory {
    pub n_t: usize,
    /// Pseudo-time increments, one per step (all positive).
    pub dt: Vec<f64>,
    pub scales: Scales,
    /// Displacements `u[t][node]` (mm).
    pub u: Vec<Vec<[f64; 3]>>,
    /// External forces (N).
    pub f_ext: Vec<Vec<[f64; 3]>>,
    /// Reaction forces (N).
    pub f_r: Vec<Vec<[f64; 3]>>,
    /// Uniform displacement-noise amplitude injected into `u`, if any.
    #[serde(default)]
    pub noise_amp: Option<f64>,
}

impl GlobalHistory {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let n = mesh.n_nodes();
        if self.u.len() != self.n_t || self.f_ext.len() != self.n_t || self.f_r.len() != self.n_t {
            return Err(Error::Shape(format!(
                "history arrays shorter than n_t = {}",
                self.n_t
            )));
        }
        if self.dt.len() != self.n_t || self.dt.iter().any(|&d| d <= 0.0) {
            return Err(Error::Shape("dt must have n_t positive entries".into()));
        }
        for t in 0..self.n_t {
            if self.u[t].len() != n || self.f_ext[t].len() != n || self.f_r[t].len() != n {
                return Err(Error::Shape(format!(
                    "step {t}: nodal array length != {n} nodes"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = serde_json::json!({
            "format": "mudi/1",
            "kind": "global_history",
            "history": self,
        });
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<GlobalHistory> {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc["format"] != "mudi/1" || doc["kind"] != "global_history" {
            return Err(Error::Config(format!(
                "{} is not a mudi/1 global_history file",
                path.display()
            )));
        }
        Ok(serde_json::from_value(doc["history"].clone())?)
    }
}

/// One Dirichlet condition: the dof follows u(t) = λ(t)·amplitude on a node set
/// (amplitude 0 keeps the dof fixed).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bc {
    pub node_set: String,
    /// 0 = x, 1 = y, 2 = z.
    pub dof: usize,
    pub amplitude: f64,
}

/// Proportional loading: prescribed displacements scale with the total load
/// factor λ(t).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadSchedule {
    pub lambda: Vec<f64>,
    pub bcs: Vec<Bc>,
}

// ---------------------------------------------------------------------------
// quadrature caches and assembly
// ---------------------------------------------------------------------------

/// Per-element quadrature data for a whole mesh.
pub struct MeshQuadrature {
    pub elements: Vec<ElementQuadrature>,
    pub n_gp: usize,
}

impl MeshQuadrature {
    pub fn build(mesh: &Mesh) -> Result<MeshQuadrature> {
        let elements = (0..mesh.hex8.len())
            .map(|e| element::element_quadrature(&mesh.element_coords(e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeshQuadrature {
            n_gp: 8 * elements.len(),
            elements,
        })
    }
}

/// Small-strain tensors at every Gauss point (lane order: element-major, then
/// Gauss point) from a nodal displacement field.
pub fn element_strains(
    mesh: &Mesh,
    quad: &MeshQuadrature,
    u: &[[f64; 3]],
) -> Vec<SymTensor3> {
    let mut out = Vec::with_capacity(quad.n_gp);
    for (e, eq) in quad.elements.iter().enumerate() {
        let mut ue = [0.0f64; 24];
        for (i, &n) in mesh.hex8[e].iter().enumerate() {
            ue[3 * i] = u[n][0];
            ue[3 * i + 1] = u[n][1];
            ue[3 * i + 2] = u[n][2];
        }
        for g in 0..8 {
            let mut m = [0.0f64; 6];
            for (c, mc) in m.iter_mut().enumerate() {
                let row = &eq.b[g][c];
                let mut acc = 0.0;
                for (k, &uk) in ue.iter().enumerate() {
                    acc += row[k] * uk;
                }
                *mc = acc;
            }
            out.push(SymTensor3::from_mandel(m, TensorKind::Strain));
        }
    }
    out
}

/// Nodal internal forces from per-Gauss-point stresses (same lane order as
/// [`element_strains`]): f_int = Σ_e Σ_g detJ·Bᵀσ.
pub fn internal_forces(
    mesh: &Mesh,
    quad: &MeshQuadrature,
    stresses: &[SymTensor3],
) -> Vec<[f64; 3]> {
    let map = assembly_map(mesh, quad);
    let mut comps: Vec<Vec<f64>> = vec![vec![0.0; quad.n_gp]; 6];
    for (lane, s) in stresses.iter().enumerate() {
        for c in 0..6 {
            comps[c][lane] = s.m[c];
        }
    }
    let comp_refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
    let flat = assemble_f64(&map, &comp_refs);
    flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Builds the sparse scatter-add map from Gauss-point stress components to
/// nodal force dofs; shared between the f64 and tape assembly routes so both
/// sum in the identical order.
pub fn assembly_map(mesh: &Mesh, quad: &MeshQuadrature) -> Arc<crate::autodiff::AssemblyMap> {
    let mut terms = Vec::new();
    for (e, eq) in quad.elements.iter().enumerate() {
        for g in 0..8 {
            let lane = (e * 8 + g) as u32;
            for c in 0..6 {
                for (i, &n) in mesh.hex8[e].iter().enumerate() {
                    for d in 0..3 {
                        let w = eq.detj[g] * eq.b[g][c][3 * i + d];
                        if w != 0.0 {
                            terms.push(((3 * n + d) as u32, c as u8, lane, w));
                        }
                    }
                }
            }
        }
    }
    Arc::new(crate::autodiff::AssemblyMap {
        n_out: mesh.n_dofs(),
        terms,
    })
}

/// f64 twin of the tape `assemble` op, iterating the same term order.
pub fn assemble_f64(map: &crate::autodiff::AssemblyMap, comps: &[&[f64]]) -> Vec<f64> {
    let mut out = vec![0.0; map.n_out];
    for &(o, sel, lane, w) in &map.terms {
        out[o as usize] += w * comps[sel as usize][lane as usize];
    }
    out
}

/// Adds zero-centered uniform noise ũ ∼ U(−u_amp/2, +u_amp/2) independently to
/// every node, displacement component and time step; forces stay untouched.
pub fn add_displacement_noise(history: &GlobalHistory, u_amp: f64, seed: u64) -> GlobalHistory {
    let mut out = history.clone();
    if u_amp == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in &mut out.u {
        for node in step {
            for c in node {
                *c += rng.gen_range(-0.5 * u_amp..0.5 * u_amp);
            }
        }
    }
    out.noise_amp = Some(u_amp);
    out
}

/// Encodes an experiment: maps point-cloud displacement samples to mesh nodes
/// by nearest point and distributes the global reaction force uniformly over a
/// named node set (along `force_axis`); external forces are zero.
#[allow(clippy::too_many_arguments)]
pub fn encode_experiment(
    mesh: &Mesh,
    sample_points: &[[f64; 3]],
    sample_u: &[Vec<[f64; 3]>],
    global_force: &[f64],
    force_set: &str,
    force_axis: usize,
    tolerance: f64,
    scales: Scales,
) -> Result<GlobalHistory> {
    let n_t = sample_u.len();
    if global_force.len() != n_t {
        return Err(Error::Shape("force history length != displacement steps".into()));
    }
    // nearest sample for every mesh node
    let mut mapping = Vec::with_capacity(mesh.n_nodes());
    for (ni, n) in mesh.nodes.iter().enumerate() {
        let mut best = (f64::INFINITY, usize::MAX);
        for (pi, p) in sample_points.iter().enumerate() {
            let d2 = (n[0] - p[0]).powi(2) + (n[1] - p[1]).powi(2) + (n[2] - p[2]).powi(2);
            if d2 < best.0 {
                best = (d2, pi);
            }
        }
        if best.0.sqrt() > tolerance {
            return Err(Error::Mesh(format!(
                "node {ni} has no displacement sample within {tolerance} mm (nearest {:.3e})",
                best.0.sqrt()
            )));
        }
        mapping.push(best.1);
    }
    let set = mesh.node_set(force_set)?.to_vec();
    if set.is_empty() {
        return Err(Error::Mesh(format!("force node set `{force_set}` is empty")));
    }
    let n = mesh.n_nodes();
    let mut u = Vec::with_capacity(n_t);
    let mut f_r = Vec::with_capacity(n_t);
    for t in 0..n_t {
        if sample_u[t].len() != sample_points.len() {
            return Err(Error::Shape(format!(
                "step {t}: {} displacement samples for {} points",
                sample_u[t].len(),
                sample_points.len()
            )));
        }
        u.push((0..n).map(|ni| sample_u[t][mapping[ni]]).collect());
        let mut fr = vec![[0.0; 3]; n];
        let share = global_force[t] / set.len() as f64;
        for &ni in &set {
            fr[ni][force_axis] = share;
        }
        f_r.push(fr);
    }
    Ok(GlobalHistory {
        n_t,
        dt: vec![1.0 / n_t as f64; n_t],
        scales,
        f_ext: vec![vec![[0.0; 3]; n]; n_t],
        u,
        f_r,
        noise_amp: None,
    })
}

/// Single unit-cube element with corner numbering matching [`element`].
pub fn unit_cube() -> Mesh {
    let nodes = (0..8)
        .map(|i| {
            [
                0.5 * (element::XI[i] + 1.0),
                0.5 * (element::ETA[i] + 1.0),
                0.5 * (element::ZETA[i] + 1.0),
            ]
        })
        .collect();
    Mesh {
        nodes,
        hex8: vec![[0, 1, 2, 3, 4, 5, 6, 7]],
        node_sets: BTreeMap::new(),
    }
}

/// Regular n₁×n₂×n₃ grid of hex8 elements over a box, with face node sets
/// ("xmin", "xmax", …) and an "all" set.
pub fn box_mesh(n: [usize; 3], size: [f64; 3]) -> Mesh {
    let nn = [n[0] + 1, n[1] + 1, n[2] + 1];
    let idx = |i: usize, j: usize, k: usize| (k * nn[1] + j) * nn[0] + i;
    let mut nodes = Vec::with_capacity(nn[0] * nn[1] * nn[2]);
    for k in 0..nn[2] {
        for j in 0..nn[1] {
            for i in 0..nn[0] {
                nodes.push([
                    size[0] * i as f64 / n[0] as f64,
                    size[1] * j as f64 / n[1] as f64,
                    size[2] * k as f64 / n[2] as f64,
                ]);
            }
        }
    }
    let mut hex8 = Vec::with_capacity(n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                hex8.push([
                    idx(i, j, k),
                    idx(i + 1, j, k),
                    idx(i + 1, j + 1, k),
                    idx(i, j + 1, k),
                    idx(i, j, k + 1),
                    idx(i + 1, j, k + 1),
                    idx(i + 1, j + 1, k + 1),
                    idx(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let mut node_sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut push = |name: &str, pred: &dyn Fn(usize, usize, usize) -> bool| {
        let mut v = Vec::new();
        for k in 0..nn[2] {
            for j in 0..nn[1] {
                for i in 0..nn[0] {
                    if pred(i, j, k) {
                        v.push(idx(i, j, k));
                    }
                }
            }
        }
        node_sets.insert(name.to_string(), v);
    };
    push("xmin", &|i, _, _| i == 0);
    push("xmax", &|i, _, _| i == n[0]);
    push("ymin", &|_, j, _| j == 0);
    push("ymax", &|_, j, _| j == n[1]);
    push("zmin", &|_, _, k| k == 0);
    push("zmax", &|_, _, k| k == n[2]);
    push("all", &|_, _, _| true);
    Mesh {
        nodes,
        hex8,
        node_sets,
    }
}
