//! Synthetic data factories: random polynomial strain paths, measurement-noise
//! families, the stochastic patch deformation generator and specimen loading
//! schedules.

pub mod noise;
pub mod spdg;
pub mod specimens;

pub use noise::{inject_noise, NoiseDistribution, NoiseLevel, NoiseSpec, Variability};

use crate::constitutive::GenericModel;
use crate::error::{Error, Result};
use crate::tensor::{SymTensor3, TensorKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Random polynomial strain path specification.
///
/// Per strain component, an order p is sampled uniformly from
/// [p_min, p_max]; a degree-p polynomial is fitted through p+1 control points
/// equally spaced on the time axis — the first fixed at zero (undeformed
/// start), the rest sampled uniformly within the component bounds — and then
/// evaluated at n_t uniform times.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PathGenSpec {
    pub n_t: usize,
    pub p_min: usize,
    pub p_max: usize,
    /// Symmetric per-component strain bound (ε_min = −bound, ε_max = +bound).
    pub strain_bound: f64,
}

impl Default for PathGenSpec {
    fn default() -> Self {
        PathGenSpec {
            n_t: 100,
            p_min: 2,
            p_max: 5,
            strain_bound: 0.02,
        }
    }
}

impl PathGenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_t < 2 {
            return Err(Error::invalid("n_t", "need at least 2 steps"));
        }
        if self.p_min > self.p_max {
            return Err(Error::invalid("p_min", "p_min > p_max"));
        }
        if !(self.strain_bound > 0.0 && self.strain_bound.is_finite()) {
            return Err(Error::invalid("strain_bound", "must be finite positive"));
        }
        Ok(())
    }
}

/// Evaluates the degree-p interpolating polynomial through (times, values) at x
/// using the barycentric Lagrange form (numerically stable evaluation).
pub fn interpolate_polynomial(times: &[f64], values: &[f64], x: f64) -> f64 {
    let n = times.len();
    // exact hits avoid the singular barycentric ratio
    for (i, &t) in times.iter().enumerate() {
        if (x - t).abs() < 1e-14 {
            return values[i];
        }
    }
    let mut weights = vec![1.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                weights[i] /= times[i] - times[j];
            }
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let w = weights[i] / (x - times[i]);
        num += w * values[i];
        den += w;
    }
    num / den
}

/// One random polynomial strain path: n_t × 6 tensor components.
pub fn gen_polynomial_path(spec: &PathGenSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 6]> {
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(6);
    for _ in 0..6 {
        let p = rng.gen_range(spec.p_min..=spec.p_max);
        // control points at k/p (k = 0..p), first fixed at zero
        let times: Vec<f64> = if p == 0 {
            vec![0.0]
        } else {
            (0..=p).map(|k| k as f64 / p as f64).collect()
        };
        let mut values = vec![0.0f64];
        for _ in 1..times.len() {
            values.push(rng.gen_range(-spec.strain_bound..spec.strain_bound));
        }
        let series: Vec<f64> = (0..spec.n_t)
            .map(|t| {
                let x = t as f64 / (spec.n_t - 1) as f64;
                if p == 0 {
                    0.0
                } else {
                    interpolate_polynomial(&times, &values, x)
                }
            })
            .collect();
        comps.push(series);
    }
    (0..spec.n_t)
        .map(|t| std::array::from_fn(|c| comps[c][t]))
        .collect()
}

/// Scalar variant used for random polynomial load-factor schedules; bounds are
/// [−1, 1] and the first control point is zero.
pub fn gen_polynomial_scalar(
    n_t: usize,
    p_min: usize,
    p_max: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let p = rng.gen_range(p_min..=p_max).max(1);
    let times: Vec<f64> = (0..=p).map(|k| k as f64 / p as f64).collect();
    let mut values = vec![0.0f64];
    for _ in 1..times.len() {
        values.push(rng.gen_range(-1.0..1.0));
    }
    (0..n_t)
        .map(|t| {
            let x = t as f64 / (n_t - 1) as f64;
            interpolate_polynomial(&times, &values, x)
        })
        .collect()
}

/// Loading schedule kinds for specimen histories.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Ramp,
    RandomPolyNonmonotonic,
}

/// λ(t) history: a uniform ramp (1/n … 1) or a random polynomial non-monotonic
/// factor in [−1, 1] starting from zero.
pub fn load_schedule(kind: ScheduleKind, n_increments: usize, seed: u64) -> Vec<f64> {
    match kind {
        ScheduleKind::Ramp => (1..=n_increments)
            .map(|i| i as f64 / n_increments as f64)
            .collect(),
        ScheduleKind::RandomPolyNonmonotonic => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            gen_polynomial_scalar(n_increments, 3, 6, &mut rng)
        }
    }
}

/// A strain-stress path pair (tensor components; stresses in MPa).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSample {
    pub strain: Vec<[f64; 6]>,
    pub stress: Vec<[f64; 6]>,
}

/// Local data set: strain → stress path collections plus provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalDataset {
    pub spec: PathGenSpec,
    pub seed: u64,
    /// Human-readable model tag recorded for provenance.
    pub model: String,
    pub paths: Vec<PathSample>,
    /// Fraction of evaluation points where a fitted polynomial overshoots the
    /// control-point bounds (the fit interpolates, no clipping is applied).
    pub overshoot_fraction: f64,
}

impl LocalDataset {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let doc = serde_json::json!({
            "format": "mudi/1",
            "kind": "local_dataset",
            "dataset": self,
        });
        std::fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<LocalDataset> {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if doc["format"] != "mudi/1" || doc["kind"] != "local_dataset" {
            return Err(Error::Config(format!(
                "{} is not a mudi/1 local_dataset file",
                path.display()
            )));
        }
        Ok(serde_json::from_value(doc["dataset"].clone())?)
    }

    /// CSV export of one path (step, 6 strain, 6 stress columns).
    pub fn export_csv(&self, index: usize, path: &std::path::Path) -> Result<()> {
        let sample = self
            .paths
            .get(index)
            .ok_or_else(|| Error::Shape(format!("path index {index} out of range")))?;
        let mut out = String::from(
            "step,eps_11,eps_22,eps_33,eps_12,eps_23,eps_13,sig_11,sig_22,sig_33,sig_12,sig_23,sig_13\n",
        );
        for (t, (e, s)) in sample.strain.iter().zip(sample.stress.iter()).enumerate() {
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                e[0], e[1], e[2], e[3], e[4], e[5], s[0], s[1], s[2], s[3], s[4], s[5]
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Per-sample RNG stream: one ChaCha stream per path, so generation is
/// reproducible independent of thread count.
pub fn path_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64 + 1);
    rng
}

/// Generates `n_paths` random polynomial strain paths and the model's stress
/// response to each, from the virgin state.
pub fn gen_dataset(
    spec: &PathGenSpec,
    model: &GenericModel<f64>,
    model_tag: &str,
    n_paths: usize,
    seed: u64,
) -> Result<LocalDataset> {
    spec.validate()?;
    let newton = crate::autodiff::NewtonCfg::default();
    let results: Vec<Result<(PathSample, usize)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let strain = gen_polynomial_path(spec, &mut rng);
            let overshoot = strain
                .iter()
                .flat_map(|s| s.iter())
                .filter(|v| v.abs() > spec.strain_bound)
                .count();
            let tensors: Vec<SymTensor3> = strain
                .iter()
                .map(|c| SymTensor3::from_tensor_components(*c, TensorKind::Strain))
                .collect();
            let stress = model.run_path(&tensors, &newton).map_err(|e| match e {
                Error::StateUpdate { step, source, .. } => Error::StateUpdate {
                    sample: i,
                    step,
                    source,
                },
                other => other,
            })?;
            let stress: Vec<[f64; 6]> = stress.iter().map(|s| s.to_tensor_components()).collect();
            Ok((PathSample { strain, stress }, overshoot))
        })
        .collect();
    let mut paths = Vec::with_capacity(n_paths);
    let mut overshoots = 0usize;
    for r in results {
        let (s, o) = r?;
        paths.push(s);
        overshoots += o;
    }
    let total = (n_paths * spec.n_t * 6).max(1);
    Ok(LocalDataset {
        spec: spec.clone(),
        seed,
        model: model_tag.to_string(),
        paths,
        overshoot_fraction: overshoots as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{ElasticConstants, Hardening, LzyModel};

    fn lzy() -> GenericModel<f64> {
        GenericModel::Lzy(LzyModel {
            elastic: ElasticConstants {
                e: 110_000.0,
                nu: 0.33,
            },
            a: 1.0,
            b: 0.05,
            c: 1.0,
            d: 0.5,
            omega: 1.0,
            eps_apex: 1e-8,
            hardening: Hardening::NadaiLudwik {
                s0: 900.0,
                s1: 700.0,
                s2: 0.5,
            },
            yield_slopes: None,
        })
    }

    #[test]
    fn linear_ramp_case() {
        // p_min = p_max = 1 with one random control point: a straight ramp 0→v
        let spec = PathGenSpec {
            n_t: 50,
            p_min: 1,
            p_max: 1,
            strain_bound: 0.02,
        };
        let mut rng = path_rng(3, 0);
        let path = gen_polynomial_path(&spec, &mut rng);
        for c in 0..6 {
            assert_eq!(path[0][c], 0.0, "first point must be zero");
            let v = path[spec.n_t - 1][c];
            for (t, s) in path.iter().enumerate() {
                let x = t as f64 / (spec.n_t - 1) as f64;
                assert!((s[c] - v * x).abs() < 1e-12, "not a linear ramp");
            }
            assert!(v.abs() <= spec.strain_bound);
        }
    }

    #[test]
    fn first_point_is_always_zero() {
        let spec = PathGenSpec::default();
        for i in 0..20 {
            let mut rng = path_rng(11, i);
            let path = gen_polynomial_path(&spec, &mut rng);
            for c in 0..6 {
                assert_eq!(path[0][c], 0.0);
            }
        }
    }

    #[test]
    fn polynomial_interpolates_control_points() {
        // Vandermonde residual oracle: fit via nalgebra least squares and check
        // the barycentric evaluation reproduces the control points
        let mut rng = path_rng(5, 0);
        use rand::Rng;
        for p in 1..=7usize {
            let times: Vec<f64> = (0..=p).map(|k| k as f64 / p as f64).collect();
            let mut values = vec![0.0];
            for _ in 1..=p {
                values.push(rng.gen_range(-1.0..1.0));
            }
            for (t, v) in times.iter().zip(values.iter()) {
                let e = interpolate_polynomial(&times, &values, *t);
                assert!((e - v).abs() < 1e-10, "interpolation misses a control point");
            }
            // Vandermonde coefficients reproduce the same mid-point values
            let n = p + 1;
            let vand = nalgebra::DMatrix::from_fn(n, n, |i, j| times[i].powi(j as i32));
            let rhs = nalgebra::DVector::from_vec(values.clone());
            let coef = vand.lu().solve(&rhs).unwrap();
            for probe in [0.23f64, 0.57, 0.89] {
                let direct: f64 = (0..n).map(|j| coef[j] * probe.powi(j as i32)).sum();
                let bary = interpolate_polynomial(&times, &values, probe);
                assert!(
                    (bary - direct).abs() < 1e-10 * direct.abs().max(1.0),
                    "barycentric {bary} vs Vandermonde {direct}"
                );
            }
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let spec = PathGenSpec {
            n_t: 100,
            ..Default::default()
        };
        let d1 = gen_dataset(&spec, &lzy(), "lzy-truth", 8, 42).unwrap();
        assert_eq!(d1.n_paths(), 8);
        for p in &d1.paths {
            assert_eq!(p.strain.len(), 100);
            assert_eq!(p.stress.len(), 100);
        }
        let d2 = gen_dataset(&spec, &lzy(), "lzy-truth", 8, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&d1).unwrap(),
            serde_json::to_string(&d2).unwrap(),
            "same seed must give byte-identical datasets"
        );
        let d3 = gen_dataset(&spec, &lzy(), "lzy-truth", 8, 43).unwrap();
        assert_ne!(
            serde_json::to_string(&d1).unwrap(),
            serde_json::to_string(&d3).unwrap()
        );
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("data.json");
        let spec = PathGenSpec {
            n_t: 20,
            ..Default::default()
        };
        let d = gen_dataset(&spec, &lzy(), "lzy", 3, 7).unwrap();
        d.save(&file).unwrap();
        let back = LocalDataset::load(&file).unwrap();
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
        let csv = dir.path().join("path0.csv");
        d.export_csv(0, &csv).unwrap();
        let content = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(content.lines().count(), 21);
    }

    #[test]
    fn schedules() {
        let ramp = load_schedule(ScheduleKind::Ramp, 200, 0);
        assert_eq!(ramp.len(), 200);
        assert!((ramp[0] - 1.0 / 200.0).abs() < 1e-15);
        assert!((ramp[199] - 1.0).abs() < 1e-15);
        for w in ramp.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 200.0).abs() < 1e-12);
        }
        let r1 = load_schedule(ScheduleKind::RandomPolyNonmonotonic, 200, 9);
        let r2 = load_schedule(ScheduleKind::RandomPolyNonmonotonic, 200, 9);
        assert_eq!(r1, r2);
        assert_eq!(r1[0], 0.0, "polynomial load factor starts at zero");
        assert!(r1.iter().all(|l| l.abs() <= 1.0 + 1e-12));
    }
}
