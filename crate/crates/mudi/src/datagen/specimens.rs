//! Canned specimen geometries as parametric hex8 meshes plus their loading
//! schedules: tensile dogbone, tensile double-notched plate, and the randomly
//! deformed material patch with a regular grid of cubic voids.
//!
//! Symmetry is exploited: one half/quarter is meshed with symmetry node sets
//! ("symmetry-x", "symmetry-y", "symmetry-z") and the load is prescribed on the
//! "shoulder" set along y.

use super::spdg::{spdg_generate, SpdgPatch, SpdgSpec};
use super::{load_schedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::fem::{Bc, LoadSchedule, Mesh};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Tensile dogbone: gauge section blending into wider shoulders (cosine taper),
/// meshed as nx×nz×ny hex elements over the quarter model (x, z symmetric).
pub fn dogbone(nx: usize, nz: usize, ny: usize, v_bar: f64, n_increments: usize) -> (Mesh, LoadSchedule) {
    let half_len = 60.0;
    let gauge_half_width = 3.0;
    let shoulder_half_width = 5.0;
    let half_thick = 2.0;
    let gauge_end = 0.35;
    let blend_end = 0.6;
    let width = |y_frac: f64| -> f64 {
        if y_frac <= gauge_end {
            gauge_half_width
        } else if y_frac >= blend_end {
            shoulder_half_width
        } else {
            let s = (y_frac - gauge_end) / (blend_end - gauge_end);
            let c = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
            gauge_half_width + (shoulder_half_width - gauge_half_width) * c
        }
    };

    let nn = [nx + 1, nz + 1, ny + 1];
    let idx = |i: usize, k: usize, j: usize| (j * nn[1] + k) * nn[0] + i;
    let mut nodes = Vec::with_capacity(nn[0] * nn[1] * nn[2]);
    for j in 0..nn[2] {
        let y_frac = j as f64 / ny as f64;
        let w = width(y_frac);
        for k in 0..nn[1] {
            for i in 0..nn[0] {
                nodes.push([
                    w * i as f64 / nx as f64,
                    y_frac * half_len,
                    half_thick * k as f64 / nz as f64,
                ]);
            }
        }
    }
    let mut hex8 = Vec::with_capacity(nx * nz * ny);
    for j in 0..ny {
        for k in 0..nz {
            for i in 0..nx {
                hex8.push([
                    idx(i, k, j),
                    idx(i + 1, k, j),
                    idx(i + 1, k, j + 1),
                    idx(i, k, j + 1),
                    idx(i, k + 1, j),
                    idx(i + 1, k + 1, j),
                    idx(i + 1, k + 1, j + 1),
                    idx(i, k + 1, j + 1),
                ]);
            }
        }
    }
    let mut node_sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut collect = |pred: &dyn Fn(usize, usize, usize) -> bool| {
        let mut v = Vec::new();
        for j in 0..nn[2] {
            for k in 0..nn[1] {
                for i in 0..nn[0] {
                    if pred(i, k, j) {
                        v.push(idx(i, k, j));
                    }
                }
            }
        }
        v
    };
    node_sets.insert("symmetry-x".into(), collect(&|i, _, _| i == 0));
    node_sets.insert("symmetry-z".into(), collect(&|_, k, _| k == 0));
    node_sets.insert("symmetry-y".into(), collect(&|_, _, j| j == 0));
    node_sets.insert("shoulder".into(), collect(&|_, _, j| j == ny));
    let mesh = Mesh {
        nodes,
        hex8,
        node_sets,
    };
    let schedule = LoadSchedule {
        lambda: load_schedule(ScheduleKind::Ramp, n_increments, 0),
        bcs: vec![
            Bc { node_set: "symmetry-x".into(), dof: 0, amplitude: 0.0 },
            Bc { node_set: "symmetry-y".into(), dof: 1, amplitude: 0.0 },
            Bc { node_set: "symmetry-z".into(), dof: 2, amplitude: 0.0 },
            Bc { node_set: "shoulder".into(), dof: 1, amplitude: v_bar },
        ],
    };
    (mesh, schedule)
}

/// Paper-scale dogbone (1200 elements) with v̄ = 10 mm over 200 increments.
pub fn dogbone_default() -> (Mesh, LoadSchedule) {
    dogbone(5, 3, 80, 10.0, 200)
}

/// Desk-scale dogbone (60 elements) for quick forward solves.
pub fn dogbone_mini(n_increments: usize) -> (Mesh, LoadSchedule) {
    dogbone(2, 2, 15, 10.0, n_increments)
}

/// Tensile double-notched plate (half model, stair-step semicircular notches on
/// the free edge), v̄ = 1 mm over 200 increments by default.
pub fn double_notched(nx: usize, ny: usize, nz: usize, v_bar: f64, n_increments: usize) -> (Mesh, LoadSchedule) {
    let half_width = 5.0;
    let half_len = 15.0;
    let half_thick = 1.0;
    let notch_radius = 2.5;
    let base = crate::fem::box_mesh([nx, ny, nz], [half_width, half_len, half_thick]);
    // notch centered on the outer edge (x = half_width) at the specimen middle
    // of the half model (y = 0 after symmetry): remove elements whose centroid
    // falls inside the notch circle
    let keep: Vec<bool> = base
        .hex8
        .iter()
        .map(|conn| {
            let mut cx = 0.0;
            let mut cy = 0.0;
            for &n in conn {
                cx += base.nodes[n][0];
                cy += base.nodes[n][1];
            }
            cx /= 8.0;
            cy /= 8.0;
            let dx = cx - half_width;
            let dy = cy;
            dx * dx + dy * dy > notch_radius * notch_radius
        })
        .collect();
    let mesh = filter_elements(&base, &keep, &["xmin", "ymin", "ymax", "zmin"]);
    let mut mesh = mesh;
    rename_set(&mut mesh, "xmin", "symmetry-x");
    rename_set(&mut mesh, "ymin", "symmetry-y");
    rename_set(&mut mesh, "zmin", "symmetry-z");
    rename_set(&mut mesh, "ymax", "shoulder");
    let schedule = LoadSchedule {
        lambda: load_schedule(ScheduleKind::Ramp, n_increments, 0),
        bcs: vec![
            Bc { node_set: "symmetry-x".into(), dof: 0, amplitude: 0.0 },
            Bc { node_set: "symmetry-y".into(), dof: 1, amplitude: 0.0 },
            Bc { node_set: "symmetry-z".into(), dof: 2, amplitude: 0.0 },
            Bc { node_set: "shoulder".into(), dof: 1, amplitude: v_bar },
        ],
    };
    (mesh, schedule)
}

pub fn double_notched_default() -> (Mesh, LoadSchedule) {
    double_notched(8, 21, 3, 1.0, 200)
}

/// Material patch specimen: 9×9×9 element cube with a regular 2×2×2 grid of
/// cubic voids (two-element blocks at offsets {1, 5} per dimension, 665
/// elements), boundary-driven by an SPDG draw under a random polynomial
/// non-monotonic load factor.
pub fn patch_specimen(
    size: f64,
    seed: u64,
    n_increments: usize,
) -> Result<(Mesh, SpdgPatch, BoundaryHistory)> {
    let n = 9usize;
    let base = crate::fem::box_mesh([n, n, n], [size, size, size]);
    let voids = [1usize, 5];
    let keep: Vec<bool> = (0..base.hex8.len())
        .map(|e| {
            let k = e / (n * n);
            let j = (e / n) % n;
            let i = e % n;
            let inside = |x: usize| voids.iter().any(|&s| x == s || x == s + 1);
            !(inside(i) && inside(j) && inside(k))
        })
        .collect();
    let mut mesh = filter_elements(&base, &keep, &[]);

    // SPDG boundary displacements on the solid patch of the same dimensions
    let spec = SpdgSpec {
        dims: [size, size, size],
        resolution: [n, n, n],
        ..SpdgSpec::default_3d()
    };
    let patch = spdg_generate(&spec, seed)?;

    // map patch boundary displacements to the void mesh's outer boundary by
    // coordinates (identical lattice spacing)
    let outer: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&i| {
            mesh.nodes[i]
                .iter()
                .any(|&c| c < 1e-12 || (c - size).abs() < 1e-12)
        })
        .collect();
    let mut nodes_list = Vec::new();
    let mut u_bar = Vec::new();
    for &ni in &outer {
        let x = mesh.nodes[ni];
        let mut found = None;
        for (pi, pn) in patch.mesh.nodes.iter().enumerate() {
            if (pn[0] - x[0]).abs() < 1e-9
                && (pn[1] - x[1]).abs() < 1e-9
                && (pn[2] - x[2]).abs() < 1e-9
            {
                found = patch.displacement[pi];
                break;
            }
        }
        if let Some(u) = found {
            nodes_list.push(ni);
            u_bar.push(u);
        }
    }
    mesh.node_sets.insert("boundary".into(), nodes_list.clone());
    let lambda = load_schedule(ScheduleKind::RandomPolyNonmonotonic, n_increments, seed ^ 0x7f);
    Ok((
        mesh,
        patch,
        BoundaryHistory {
            nodes: nodes_list,
            u_bar,
            lambda,
        },
    ))
}

/// Prescribed boundary displacement history: u_t = λ(t)·ū on listed nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryHistory {
    pub nodes: Vec<usize>,
    pub u_bar: Vec<[f64; 3]>,
    pub lambda: Vec<f64>,
}

impl BoundaryHistory {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = serde_json::json!({
            "format": "mudi/1",
            "kind": "boundary_history",
            "history": self,
        });
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<BoundaryHistory> {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc["format"] != "mudi/1" || doc["kind"] != "boundary_history" {
            return Err(Error::Config(format!(
                "{} is not a mudi/1 boundary_history file",
                path.display()
            )));
        }
        Ok(serde_json::from_value(doc["history"].clone())?)
    }
}

/// Keeps the flagged elements, drops unused nodes, renumbers, and restricts the
/// listed node sets to surviving nodes.
fn filter_elements(mesh: &Mesh, keep: &[bool], sets: &[&str]) -> Mesh {
    let mut used = vec![false; mesh.n_nodes()];
    let mut hex8 = Vec::new();
    for (e, conn) in mesh.hex8.iter().enumerate() {
        if keep[e] {
            for &n in conn {
                used[n] = true;
            }
            hex8.push(*conn);
        }
    }
    let mut remap = vec![usize::MAX; mesh.n_nodes()];
    let mut nodes = Vec::new();
    for (old, &u) in used.iter().enumerate() {
        if u {
            remap[old] = nodes.len();
            nodes.push(mesh.nodes[old]);
        }
    }
    let hex8 = hex8
        .iter()
        .map(|conn| std::array::from_fn(|i| remap[conn[i]]))
        .collect();
    let mut node_sets = BTreeMap::new();
    for &name in sets {
        if let Some(list) = mesh.node_sets.get(name) {
            let filtered: Vec<usize> = list
                .iter()
                .filter(|&&n| used[n])
                .map(|&n| remap[n])
                .collect();
            node_sets.insert(name.to_string(), filtered);
        }
    }
    Mesh {
        nodes,
        hex8,
        node_sets,
    }
}

fn rename_set(mesh: &mut Mesh, old: &str, new: &str) {
    if let Some(v) = mesh.node_sets.remove(old) {
        mesh.node_sets.insert(new.to_string(), v);
    }
}
