//! The dimensionless force-equilibrium loss and fabricated-consistent histories.
//!
//! ```text
//! L(θ) = α Σ_t { Σ_j Σ_k [f_int − f_ext − f_r]²_{j,k,t} } Δt ,   α⁻¹ = E_c² l_c⁴ t_c
//! ```
//!
//! Displacements are data, so strains at Gauss points are constants of the
//! optimization; only the stresses depend on θ. The model state is threaded
//! over the full history on one flat tape (no truncation), with the Gauss
//! points as batch lanes sharing a single computation graph per step.

use super::{assemble_f64, assembly_map, element_strains, GlobalHistory, Mesh, MeshQuadrature, Scales};
use crate::autodiff::{AssemblyMap, NewtonCfg, Tape, TapeKernel, Var};
use crate::constitutive::{GenericModel, KernelState, MaterialState};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Precomputed, θ-independent context of the force-equilibrium loss.
pub struct GlobalLoss {
    pub map: Arc<AssemblyMap>,
    /// Gauss-point strain components per step (Mandel), lane-major per component.
    strain_cols: Vec<[Vec<f64>; 6]>,
    /// Per-step target f_ext + f_r, flattened dof-major.
    target: Vec<Vec<f64>>,
    pub alpha: f64,
    pub dt: Vec<f64>,
    pub n_gp: usize,
}

impl GlobalLoss {
    pub fn build(mesh: &Mesh, quad: &MeshQuadrature, history: &GlobalHistory) -> Result<GlobalLoss> {
        history.validate(mesh)?;
        let map = assembly_map(mesh, quad);
        let mut strain_cols = Vec::with_capacity(history.n_t);
        let mut target = Vec::with_capacity(history.n_t);
        for t in 0..history.n_t {
            let strains = element_strains(mesh, quad, &history.u[t]);
            let mut cols: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; quad.n_gp]);
            for (lane, s) in strains.iter().enumerate() {
                for c in 0..6 {
                    cols[c][lane] = s.m[c];
                }
            }
            strain_cols.push(cols);
            let mut tgt = vec![0.0; mesh.n_dofs()];
            for (n, (fe, fr)) in history.f_ext[t].iter().zip(history.f_r[t].iter()).enumerate() {
                for d in 0..3 {
                    tgt[3 * n + d] = fe[d] + fr[d];
                }
            }
            target.push(tgt);
        }
        Ok(GlobalLoss {
            map,
            strain_cols,
            target,
            alpha: history.scales.alpha(),
            dt: history.dt.clone(),
            n_gp: quad.n_gp,
        })
    }

    /// Records L(θ) on the tape; the model carries θ leaves.
    pub fn record(
        &self,
        k: &mut TapeKernel,
        model: &GenericModel<Var>,
        newton: &NewtonCfg,
    ) -> Result<Var> {
        let zero_lanes = vec![0.0; self.n_gp];
        let zero = k.tape.constant(&zero_lanes, self.n_gp, 1);
        let mut state = KernelState {
            eps_e: [zero; 6],
            eps_p_bar: zero,
        };
        let mut prev: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; self.n_gp]);
        let mut loss: Option<Var> = None;
        for (t, cols) in self.strain_cols.iter().enumerate() {
            let deps: [Var; 6] = std::array::from_fn(|c| {
                let d: Vec<f64> = cols[c]
                    .iter()
                    .zip(prev[c].iter())
                    .map(|(a, b)| a - b)
                    .collect();
                k.tape.constant(&d, self.n_gp, 1)
            });
            prev = cols.clone();
            let out = model
                .update(k, &state, &deps, newton)
                .map_err(|e| Error::StateUpdate {
                    sample: 0,
                    step: t,
                    source: Box::new(e),
                })?;
            state = out.state;
            let f_int = k.tape.assemble(&out.stress, self.map.clone());
            let tgt = k.tape.constant(&self.target[t], 1, self.target[t].len());
            let diff = k.tape.sub(f_int, tgt);
            let sq = k.tape.mul(diff, diff);
            let sum = k.tape.sum(sq);
            let weighted = k.tape.scale(sum, self.alpha * self.dt[t]);
            loss = Some(match loss {
                None => weighted,
                Some(l) => k.tape.add(l, weighted),
            });
        }
        Ok(loss.expect("history has at least one step"))
    }

    /// Plain-float evaluation of the same loss; sums in the identical order as
    /// the taped route, so the two agree bit-for-bit.
    pub fn eval_f64(&self, model: &GenericModel<f64>, newton: &NewtonCfg) -> Result<f64> {
        let mut k = crate::autodiff::F64Kernel;
        let mut states = vec![
            KernelState {
                eps_e: [0.0; 6],
                eps_p_bar: 0.0,
            };
            self.n_gp
        ];
        let mut prev: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; self.n_gp]);
        let mut loss = 0.0;
        let mut comps: Vec<Vec<f64>> = vec![vec![0.0; self.n_gp]; 6];
        for (t, cols) in self.strain_cols.iter().enumerate() {
            for lane in 0..self.n_gp {
                let deps: [f64; 6] = std::array::from_fn(|c| cols[c][lane] - prev[c][lane]);
                let out = states[lane]
                    .clone_update(&mut k, model, &deps, newton)
                    .map_err(|e| Error::StateUpdate {
                        sample: lane,
                        step: t,
                        source: Box::new(e),
                    })?;
                states[lane] = out.0;
                for c in 0..6 {
                    comps[c][lane] = out.1[c];
                }
            }
            prev = cols.clone();
            let comp_refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
            let f_int = assemble_f64(&self.map, &comp_refs);
            let mut sum = 0.0;
            for (fi, tg) in f_int.iter().zip(self.target[t].iter()) {
                let d = fi - tg;
                sum += d * d;
            }
            loss += sum * (self.alpha * self.dt[t]);
        }
        Ok(loss)
    }
}

impl KernelState<f64> {
    fn clone_update(
        &self,
        k: &mut crate::autodiff::F64Kernel,
        model: &GenericModel<f64>,
        deps: &[f64; 6],
        newton: &NewtonCfg,
    ) -> Result<(KernelState<f64>, [f64; 6])> {
        let out = model.update(k, self, deps, newton)?;
        Ok((out.state, out.stress))
    }
}

/// Smooth synthetic displacement fields u(x, λ) for fabricated histories.
#[derive(Clone, Debug)]
pub struct FieldGenerator {
    /// Linear part: u_i += Σ_j lin[i][j]·x_j.
    pub linear: [[f64; 3]; 3],
    /// Quadratic part over the basis (x², y², z², xy, yz, xz).
    pub quadratic: [[f64; 6]; 3],
}

impl FieldGenerator {
    /// Random smooth field with strain magnitudes around `strain_scale` over a
    /// specimen of size `length_scale`.
    pub fn random(seed: u64, strain_scale: f64, length_scale: f64) -> FieldGenerator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linear = [[0.0; 3]; 3];
        for row in &mut linear {
            for v in row.iter_mut() {
                *v = rng.gen_range(-strain_scale..strain_scale);
            }
        }
        let q = strain_scale / length_scale.max(1e-12);
        let mut quadratic = [[0.0; 6]; 3];
        for row in &mut quadratic {
            for v in row.iter_mut() {
                *v = rng.gen_range(-0.5 * q..0.5 * q);
            }
        }
        FieldGenerator { linear, quadratic }
    }

    pub fn eval(&self, x: [f64; 3], lambda: f64) -> [f64; 3] {
        let basis = [
            x[0] * x[0],
            x[1] * x[1],
            x[2] * x[2],
            x[0] * x[1],
            x[1] * x[2],
            x[0] * x[2],
        ];
        std::array::from_fn(|i| {
            let mut v = 0.0;
            for j in 0..3 {
                v += self.linear[i][j] * x[j];
            }
            for j in 0..6 {
                v += self.quadratic[i][j] * basis[j];
            }
            lambda * v
        })
    }
}

/// Builds a displacement-force history that is consistent by construction:
/// f_ext + f_r := f_int(θ_truth), so L(θ_truth) = 0 exactly. Reaction forces
/// live on `reaction_set` nodes, external forces everywhere else.
pub fn fabricate_consistent_history(
    mesh: &Mesh,
    quad: &MeshQuadrature,
    model: &GenericModel<f64>,
    field: &FieldGenerator,
    n_t: usize,
    reaction_set: &str,
    scales: Scales,
    newton: &NewtonCfg,
) -> Result<GlobalHistory> {
    let reaction = mesh.node_set(reaction_set)?.to_vec();
    let is_reaction: Vec<bool> = {
        let mut v = vec![false; mesh.n_nodes()];
        for &n in &reaction {
            v[n] = true;
        }
        v
    };
    let map = assembly_map(mesh, quad);
    let mut states = vec![MaterialState::initial(); quad.n_gp];
    let mut u_hist = Vec::with_capacity(n_t);
    let mut fe_hist = Vec::with_capacity(n_t);
    let mut fr_hist = Vec::with_capacity(n_t);
    let mut comps: Vec<Vec<f64>> = vec![vec![0.0; quad.n_gp]; 6];
    for t in 0..n_t {
        let lambda = (t + 1) as f64 / n_t as f64;
        let u: Vec<[f64; 3]> = mesh.nodes.iter().map(|x| field.eval(*x, lambda)).collect();
        let strains = element_strains(mesh, quad, &u);
        for (lane, eps) in strains.iter().enumerate() {
            let res = model
                .state_update(eps, &states[lane], false, newton)
                .map_err(|e| Error::StateUpdate {
                    sample: lane,
                    step: t,
                    source: Box::new(e),
                })?;
            states[lane] = res.state;
            for c in 0..6 {
                comps[c][lane] = res.stress.m[c];
            }
        }
        let comp_refs: Vec<&[f64]> = comps.iter().map(|v| v.as_slice()).collect();
        let f_int = assemble_f64(&map, &comp_refs);
        let mut fe = vec![[0.0; 3]; mesh.n_nodes()];
        let mut fr = vec![[0.0; 3]; mesh.n_nodes()];
        for n in 0..mesh.n_nodes() {
            for d in 0..3 {
                if is_reaction[n] {
                    fr[n][d] = f_int[3 * n + d];
                } else {
                    fe[n][d] = f_int[3 * n + d];
                }
            }
        }
        u_hist.push(u);
        fe_hist.push(fe);
        fr_hist.push(fr);
    }
    Ok(GlobalHistory {
        n_t,
        dt: vec![1.0 / n_t as f64; n_t],
        scales,
        u: u_hist,
        f_ext: fe_hist,
        f_r: fr_hist,
        noise_amp: None,
    })
}

/// Records the loss on a fresh tape with the given Var-model builder; utility
/// used by discovery and tests.
pub fn record_global_loss<F>(
    tape: &mut Tape,
    loss_ctx: &GlobalLoss,
    newton: &NewtonCfg,
    build_model: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape) -> GenericModel<Var>,
{
    let model = build_model(tape);
    let mut k = TapeKernel::new(tape);
    loss_ctx.record(&mut k, &model, newton)
}
