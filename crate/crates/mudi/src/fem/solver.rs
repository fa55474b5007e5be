//! Implicit quasi-static forward solver used only to synthesize ground-truth
//! displacement-force data (replaces an external finite element code).
//!
//! Per load increment, a global Newton-Raphson iteration drives the free-dof
//! residual f_int(u) to zero under prescribed boundary displacements, using the
//! consistent tangents of the material models. The linearized systems are
//! solved by dense LU factorization — desk-scale meshes stay small, so
//! robustness wins over sparsity.

use super::{assembly_map, assemble_f64, element_strains, GlobalHistory, LoadSchedule, Mesh, MeshQuadrature, Scales};
use crate::autodiff::NewtonCfg;
use crate::constitutive::{GenericModel, MaterialState};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Relative residual tolerance (w.r.t. the internal-force scale).
    pub tol_rel: f64,
    pub tol_abs: f64,
    pub max_iter: usize,
    /// Material-level Newton settings.
    pub material_newton: NewtonCfg,
    pub scales: Scales,
}

impl SolverOptions {
    pub fn with_scales(scales: Scales) -> Self {
        SolverOptions {
            tol_rel: 1e-9,
            tol_abs: 1e-9,
            max_iter: 30,
            material_newton: NewtonCfg::default(),
            scales,
        }
    }
}

/// Runs the proportional loading schedule and records (u, f_r) per increment;
/// external forces are zero (displacement-driven tests).
pub fn forward_solve(
    mesh: &Mesh,
    quad: &MeshQuadrature,
    model: &GenericModel<f64>,
    schedule: &LoadSchedule,
    opts: &SolverOptions,
) -> Result<GlobalHistory> {
    let n_dofs = mesh.n_dofs();
    // constrained dofs and their amplitude
    let mut amplitude: Vec<Option<f64>> = vec![None; n_dofs];
    for bc in &schedule.bcs {
        let set = mesh.node_set(&bc.node_set)?;
        if bc.dof > 2 {
            return Err(Error::Config(format!("bc dof {} out of range", bc.dof)));
        }
        for &n in set {
            amplitude[3 * n + bc.dof] = Some(bc.amplitude);
        }
    }
    let free: Vec<usize> = (0..n_dofs).filter(|d| amplitude[*d].is_none()).collect();
    let free_index: Vec<Option<usize>> = {
        let mut v = vec![None; n_dofs];
        for (fi, &d) in free.iter().enumerate() {
            v[d] = Some(fi);
        }
        v
    };
    let map = assembly_map(mesh, quad);

    let mut u = vec![[0.0f64; 3]; mesh.n_nodes()];
    let mut states = vec![MaterialState::initial(); quad.n_gp];
    let mut history_u = Vec::new();
    let mut history_fr = Vec::new();
    let n_t = schedule.lambda.len();

    for (t, &lambda) in schedule.lambda.iter().enumerate() {
        for d in 0..n_dofs {
            if let Some(a) = amplitude[d] {
                u[d / 3][d % 3] = lambda * a;
            }
        }
        let mut converged = false;
        let mut f_int_full = vec![0.0; n_dofs];
        for _iter in 0..opts.max_iter {
            // trial stresses and tangents at the current displacement iterate
            let strains = element_strains(mesh, quad, &u);
            let mut comps: Vec<Vec<f64>> = vec![vec![0.0; quad.n_gp]; 6];
            let mut tangents = Vec::with_capacity(quad.n_gp);
            for (lane, eps) in strains.iter().enumerate() {
                let res = model
                    .state_update(eps, &states[lane], true, &opts.material_newton)
                    .map_err(|e| Error::StateUpdate {
                        sample: lane,
                        step: t,
                        source: Box::new(e),
                    })?;
                for c in 0..6 {
                    comps[c][lane] = res.stress.m[c];
                }
                tangents.push(res.tangent.expect("tangent requested"));
            }
            let comp_refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
            f_int_full = assemble_f64(&map, &comp_refs);
            let scale = f_int_full.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let mut r_inf = 0.0f64;
            for &d in &free {
                r_inf = r_inf.max(f_int_full[d].abs());
            }
            if r_inf <= opts.tol_abs + opts.tol_rel * scale {
                converged = true;
                break;
            }

            // tangent stiffness on free dofs
            let nf = free.len();
            let mut kff = DMatrix::<f64>::zeros(nf, nf);
            for (e, eq) in quad.elements.iter().enumerate() {
                let conn = &mesh.hex8[e];
                for g in 0..8 {
                    let lane = e * 8 + g;
                    let d = &tangents[lane];
                    let b = &eq.b[g];
                    let w = eq.detj[g];
                    // K_e += w Bᵀ D B
                    let mut db = [[0.0f64; 24]; 6];
                    for i in 0..6 {
                        for jj in 0..24 {
                            let mut acc = 0.0;
                            for kk in 0..6 {
                                acc += d.m[i][kk] * b[kk][jj];
                            }
                            db[i][jj] = acc;
                        }
                    }
                    for a in 0..24 {
                        let ga = 3 * conn[a / 3] + a % 3;
                        let Some(fa) = free_index[ga] else { continue };
                        for bcol in 0..24 {
                            let gb = 3 * conn[bcol / 3] + bcol % 3;
                            let Some(fb) = free_index[gb] else { continue };
                            let mut acc = 0.0;
                            for i in 0..6 {
                                acc += b[i][a] * db[i][bcol];
                            }
                            kff[(fa, fb)] += w * acc;
                        }
                    }
                }
            }
            let r = DVector::from_iterator(nf, free.iter().map(|&d| f_int_full[d]));
            let lu = kff.lu();
            let delta = lu.solve(&r).ok_or_else(|| Error::Convergence {
                context: format!("forward solve: singular stiffness at increment {t}"),
                iterations: _iter,
                residual: r_inf,
            })?;
            for (fi, &d) in free.iter().enumerate() {
                u[d / 3][d % 3] -= delta[fi];
            }
        }
        if !converged {
            let r_inf = free
                .iter()
                .fold(0.0f64, |a, &d| a.max(f_int_full[d].abs()));
            return Err(Error::Convergence {
                context: format!("forward solve: global Newton at increment {t}"),
                iterations: opts.max_iter,
                residual: r_inf,
            });
        }
        // commit converged states
        let strains = element_strains(mesh, quad, &u);
        for (lane, eps) in strains.iter().enumerate() {
            let res = model.state_update(eps, &states[lane], false, &opts.material_newton)?;
            states[lane] = res.state;
        }
        let mut fr = vec![[0.0; 3]; mesh.n_nodes()];
        for d in 0..n_dofs {
            if amplitude[d].is_some() {
                fr[d / 3][d % 3] = f_int_full[d];
            }
        }
        history_u.push(u.clone());
        history_fr.push(fr);
    }

    Ok(GlobalHistory {
        n_t,
        dt: vec![1.0 / n_t.max(1) as f64; n_t],
        scales: opts.scales,
        f_ext: vec![vec![[0.0; 3]; mesh.n_nodes()]; n_t],
        u: history_u,
        f_r: history_fr,
        noise_amp: None,
    })
}
