//! Multi-layer gated recurrent unit (GRU) material model.
//!
//! Maps a strain sequence to a stress sequence. Each layer computes, per step,
//!
//! ```text
//! z_t = σ(W_xz x_t + b_xz + W_hz h_{t−1} + b_hz)
//! r_t = σ(W_xr x_t + b_xr + W_hr h_{t−1} + b_hr)
//! h̃_t = tanh(W_xh x_t + b_xh + r_t ⊙ (W_hh h_{t−1} + b_hh))
//! h_t = z_t ⊙ h_{t−1} + (1 − z_t) ⊙ h̃_t
//! ```
//!
//! with h₀ = 0 in all layers; deeper layers consume the previous layer's hidden
//! state. A final linear head y_t = W_hy h_t + b_hy produces 6 stress features.
//! Strains are min-max scaled by the dataset strain bounds before entering the
//! network; stresses are standardized per component with statistics stored in
//! the model and de-standardized to MPa on output.
//!
//! The flat parameter block is ordered per layer as W_xz, W_xr, W_xh, W_hz,
//! W_hr, W_hh, b_xz, b_hz, b_xr, b_hr, b_xh, b_hh (matrices row-major), followed
//! by W_hy and b_hy; checkpoints store exactly this order.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const STRAIN_FEATURES: usize = 6;
pub const STRESS_FEATURES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl GruConfig {
    pub fn new(layers: usize, hidden: usize) -> Self {
        assert!(layers >= 1 && hidden >= 1);
        GruConfig { layers, hidden }
    }

    /// Total learnable parameter count: Σ_ℓ 3(h·p_ℓ + h² + 2h) + q·h + q.
    pub fn param_count(&self) -> usize {
        let h = self.hidden;
        let mut count = 0;
        for l in 0..self.layers {
            let p = if l == 0 { STRAIN_FEATURES } else { h };
            count += 3 * (h * p + h * h + 2 * h);
        }
        count + STRESS_FEATURES * h + STRESS_FEATURES
    }
}

/// Per-component I/O normalization stored with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Symmetric strain bound; inputs are scaled to x = ε / bound ∈ [−1, 1].
    pub strain_bound: f64,
    pub stress_mean: [f64; 6],
    pub stress_std: [f64; 6],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            strain_bound: 1.0,
            stress_mean: [0.0; 6],
            stress_std: [1.0; 6],
        }
    }

    /// Per-component mean/std over a training set of stress paths.
    pub fn fit(strain_bound: f64, stress_paths: &[Vec<[f64; 6]>]) -> Self {
        let mut mean = [0.0f64; 6];
        let mut count = 0usize;
        for p in stress_paths {
            for s in p {
                for c in 0..6 {
                    mean[c] += s[c];
                }
            }
            count += p.len();
        }
        let n = count.max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = [0.0f64; 6];
        for p in stress_paths {
            for s in p {
                for c in 0..6 {
                    let d = s[c] - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let mut std = [0.0f64; 6];
        for c in 0..6 {
            std[c] = (var[c] / n).sqrt().max(1e-8);
        }
        Normalization {
            strain_bound,
            stress_mean: mean,
            stress_std: std,
        }
    }
}

/// Parameter block layout descriptor.
#[derive(Clone, Debug)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

pub fn layout(config: &GruConfig) -> Vec<Block> {
    let h = config.hidden;
    let mut blocks = Vec::new();
    let mut off = 0;
    let push = |blocks: &mut Vec<Block>, name: String, rows: usize, cols: usize, off: &mut usize| {
        blocks.push(Block {
            name,
            offset: *off,
            rows,
            cols,
        });
        *off += rows * cols;
    };
    for l in 0..config.layers {
        let p = if l == 0 { STRAIN_FEATURES } else { h };
        push(&mut blocks, format!("l{l}.w_xz"), h, p, &mut off);
        push(&mut blocks, format!("l{l}.w_xr"), h, p, &mut off);
        push(&mut blocks, format!("l{l}.w_xh"), h, p, &mut off);
        push(&mut blocks, format!("l{l}.w_hz"), h, h, &mut off);
        push(&mut blocks, format!("l{l}.w_hr"), h, h, &mut off);
        push(&mut blocks, format!("l{l}.w_hh"), h, h, &mut off);
        push(&mut blocks, format!("l{l}.b_xz"), 1, h, &mut off);
        push(&mut blocks, format!("l{l}.b_hz"), 1, h, &mut off);
        push(&mut blocks, format!("l{l}.b_xr"), 1, h, &mut off);
        push(&mut blocks, format!("l{l}.b_hr"), 1, h, &mut off);
        push(&mut blocks, format!("l{l}.b_xh"), 1, h, &mut off);
        push(&mut blocks, format!("l{l}.b_hh"), 1, h, &mut off);
    }
    push(&mut blocks, "head.w_hy".into(), STRESS_FEATURES, h, &mut off);
    push(&mut blocks, "head.b_hy".into(), 1, STRESS_FEATURES, &mut off);
    blocks
}

/// GRU material model: configuration, flat parameters, normalization.
#[derive(Clone, Debug)]
pub struct Gru {
    pub config: GruConfig,
    pub params: Vec<f64>,
    pub norm: Normalization,
    pub seed: u64,
}

impl Gru {
    /// Reproducible random initialization: U(−1/√h, +1/√h) for all weights and
    /// biases (std 1/√(3h)).
    pub fn init(config: GruConfig, norm: Normalization, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.hidden as f64).sqrt();
        let params = (0..config.param_count())
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Gru {
            config,
            params,
            norm,
            seed,
        }
    }

    pub fn zeroed(config: GruConfig, norm: Normalization) -> Self {
        Gru {
            params: vec![0.0; config.param_count()],
            config,
            norm,
            seed: 0,
        }
    }

    fn block(&self, b: &Block) -> &[f64] {
        &self.params[b.offset..b.offset + b.rows * b.cols]
    }

    /// Plain-float forward pass over one strain path (tensor components, MPa out).
    pub fn forward(&self, strains: &[[f64; 6]]) -> Vec<[f64; 6]> {
        let h = self.config.hidden;
        let blocks = layout(&self.config);
        let mut hidden = vec![vec![0.0f64; h]; self.config.layers];
        let mut out = Vec::with_capacity(strains.len());
        let mut zb = vec![0.0f64; h];
        let mut rb = vec![0.0f64; h];
        let mut hb = vec![0.0f64; h];
        for eps in strains {
            let mut x: Vec<f64> = eps.iter().map(|e| e / self.norm.strain_bound).collect();
            for l in 0..self.config.layers {
                let base = l * 12;
                let w_xz = self.block(&blocks[base]);
                let w_xr = self.block(&blocks[base + 1]);
                let w_xh = self.block(&blocks[base + 2]);
                let w_hz = self.block(&blocks[base + 3]);
                let w_hr = self.block(&blocks[base + 4]);
                let w_hh = self.block(&blocks[base + 5]);
                let b_xz = self.block(&blocks[base + 6]);
                let b_hz = self.block(&blocks[base + 7]);
                let b_xr = self.block(&blocks[base + 8]);
                let b_hr = self.block(&blocks[base + 9]);
                let b_xh = self.block(&blocks[base + 10]);
                let b_hh = self.block(&blocks[base + 11]);
                let p = x.len();
                let hprev = &hidden[l];
                for i in 0..h {
                    let mut z = b_xz[i] + b_hz[i];
                    let mut r = b_xr[i] + b_hr[i];
                    let mut c = b_xh[i];
                    let mut ch = b_hh[i];
                    for (j, xj) in x.iter().enumerate() {
                        z += w_xz[i * p + j] * xj;
                        r += w_xr[i * p + j] * xj;
                        c += w_xh[i * p + j] * xj;
                    }
                    for (j, hj) in hprev.iter().enumerate() {
                        z += w_hz[i * h + j] * hj;
                        r += w_hr[i * h + j] * hj;
                        ch += w_hh[i * h + j] * hj;
                    }
                    zb[i] = 1.0 / (1.0 + (-z).exp());
                    rb[i] = 1.0 / (1.0 + (-r).exp());
                    hb[i] = (c + rb[i] * ch).tanh();
                }
                let hl = &mut hidden[l];
                for i in 0..h {
                    hl[i] = zb[i] * hl[i] + (1.0 - zb[i]) * hb[i];
                }
                x = hl.clone();
            }
            let w_hy = self.block(&blocks[blocks.len() - 2]);
            let b_hy = self.block(&blocks[blocks.len() - 1]);
            let mut y = [0.0f64; 6];
            for (i, yo) in y.iter_mut().enumerate() {
                let mut acc = b_hy[i];
                for (j, xj) in x.iter().enumerate() {
                    acc += w_hy[i * h + j] * xj;
                }
                *yo = acc * self.norm.stress_std[i] + self.norm.stress_mean[i];
            }
            out.push(y);
        }
        out
    }

    // ---- checkpoint I/O ----------------------------------------------------

    /// Writes a checkpoint: one JSON header line, then the little-endian f64
    /// parameter block in layout order.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let header = serde_json::json!({
            "format": "mudi/1",
            "kind": "gru_checkpoint",
            "config": self.config,
            "norm": self.norm,
            "seed": self.seed,
            "param_count": self.params.len(),
        });
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
        for v in &self.params {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Gru> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            f.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        #[derive(Deserialize)]
        struct Header {
            format: String,
            kind: String,
            config: GruConfig,
            norm: Normalization,
            seed: u64,
            param_count: usize,
        }
        let h: Header = serde_json::from_slice(&header_bytes)?;
        if h.format != "mudi/1" || h.kind != "gru_checkpoint" {
            return Err(Error::Config(format!(
                "not a mudi/1 gru_checkpoint: format={}, kind={}",
                h.format, h.kind
            )));
        }
        if h.param_count != h.config.param_count() {
            return Err(Error::Config(format!(
                "checkpoint parameter count {} does not match config ({})",
                h.param_count,
                h.config.param_count()
            )));
        }
        let mut params = vec![0.0f64; h.param_count];
        let mut buf = [0u8; 8];
        for v in &mut params {
            f.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Gru {
            config: h.config,
            params,
            norm: h.norm,
            seed: h.seed,
        })
    }
}

/// Tape-side GRU: parameter block leaves plus the recorded forward graph.
pub struct GruTape {
    pub blocks: Vec<Block>,
    pub leaves: Vec<Var>,
}

impl GruTape {
    /// Creates one differentiable leaf per parameter block.
    pub fn leaves(tape: &mut Tape, gru: &Gru) -> GruTape {
        let blocks = layout(&gru.config);
        let leaves = blocks
            .iter()
            .map(|b| {
                let data = &gru.params[b.offset..b.offset + b.rows * b.cols];
                tape.leaf(data, 1, b.rows * b.cols)
            })
            .collect();
        GruTape { blocks, leaves }
    }

    /// Copies flat parameters into the leaves (used with [`Tape::replay`]).
    pub fn set_params(&self, tape: &mut Tape, params: &[f64]) {
        for (b, leaf) in self.blocks.iter().zip(self.leaves.iter()) {
            tape.set_value(*leaf, &params[b.offset..b.offset + b.rows * b.cols]);
        }
    }

    /// Gathers leaf gradients into a flat vector in layout order.
    pub fn gather_grads(&self, tape: &Tape, out: &mut [f64]) {
        for (b, leaf) in self.blocks.iter().zip(self.leaves.iter()) {
            out[b.offset..b.offset + b.rows * b.cols].copy_from_slice(tape.grad(*leaf));
        }
    }

    /// Records the batched forward pass: `strain_paths[b][t]` are raw strain
    /// components; returns per-step outputs of shape (B, 6) in the standardized
    /// stress space (multiply by std and add the mean to obtain MPa).
    pub fn forward(
        &self,
        tape: &mut Tape,
        config: &GruConfig,
        norm: &Normalization,
        strain_paths: &[Vec<[f64; 6]>],
    ) -> Vec<Var> {
        let b = strain_paths.len();
        assert!(b > 0, "empty batch");
        let n_t = strain_paths[0].len();
        for p in strain_paths {
            assert_eq!(p.len(), n_t, "ragged strain paths");
        }
        let h = config.hidden;
        let zeros = vec![0.0; b * h];
        let mut hidden: Vec<Var> = (0..config.layers)
            .map(|_| tape.constant(&zeros, b, h))
            .collect();
        let mut outputs = Vec::with_capacity(n_t);
        for t in 0..n_t {
            let mut xbuf = vec![0.0; b * STRAIN_FEATURES];
            for (lane, path) in strain_paths.iter().enumerate() {
                for c in 0..STRAIN_FEATURES {
                    xbuf[lane * STRAIN_FEATURES + c] = path[t][c] / norm.strain_bound;
                }
            }
            let mut x = tape.constant(&xbuf, b, STRAIN_FEATURES);
            for l in 0..config.layers {
                let p = if l == 0 { STRAIN_FEATURES } else { h };
                let base = l * 12;
                let lv = |i: usize| self.leaves[base + i];
                let hprev = hidden[l];
                let z = {
                    let a1 = tape.matvec(lv(0), x, h, p);
                    let a2 = tape.add(a1, lv(6));
                    let a3 = tape.matvec(lv(3), hprev, h, h);
                    let a4 = tape.add(a3, lv(7));
                    let s = tape.add(a2, a4);
                    tape.sigmoid(s)
                };
                let r = {
                    let a1 = tape.matvec(lv(1), x, h, p);
                    let a2 = tape.add(a1, lv(8));
                    let a3 = tape.matvec(lv(4), hprev, h, h);
                    let a4 = tape.add(a3, lv(9));
                    let s = tape.add(a2, a4);
                    tape.sigmoid(s)
                };
                let cand = {
                    let a1 = tape.matvec(lv(2), x, h, p);
                    let a2 = tape.add(a1, lv(10));
                    let a3 = tape.matvec(lv(5), hprev, h, h);
                    let a4 = tape.add(a3, lv(11));
                    let gated = tape.mul(r, a4);
                    let s = tape.add(a2, gated);
                    tape.tanh(s)
                };
                let hnew = {
                    let keep = tape.mul(z, hprev);
                    let one_m_z = tape.sub_from_c(1.0, z);
                    let upd = tape.mul(one_m_z, cand);
                    tape.add(keep, upd)
                };
                hidden[l] = hnew;
                x = hnew;
            }
            let w_hy = self.leaves[self.leaves.len() - 2];
            let b_hy = self.leaves[self.leaves.len() - 1];
            let y0 = tape.matvec(w_hy, x, STRESS_FEATURES, h);
            let y = tape.add(y0, b_hy);
            outputs.push(y);
        }
        outputs
    }
}

/// De-standardizes a (B, 6) normalized output Var into MPa.
pub fn destandardize(tape: &mut Tape, norm: &Normalization, y: Var) -> Var {
    let std = tape.constant(&norm.stress_std, 1, 6);
    let mean = tape.constant(&norm.stress_mean, 1, 6);
    let scaled = tape.mul(y, std);
    tape.add(scaled, mean)
}
