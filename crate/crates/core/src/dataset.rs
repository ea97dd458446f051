//! Synthetic samples: one random elliptical void per specimen, its scaling
//! field and the sensor traces it produces.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Physics};
use crate::error::{Error, Result};
use crate::field::{rasterize_ellipse, EllipseParams, GridSpec, ScalarField};
use crate::nn::NormStats;
use crate::solver::{solve_forward, SensorTraces};

/// Sampling ranges for void geometry, in absolute length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseBounds {
    pub a: (f64, f64),
    pub b_ratio: (f64, f64),
    pub margin: f64,
    pub lx: f64,
    pub ly: f64,
}

impl EllipseBounds {
    pub fn new(a: (f64, f64), b_ratio: (f64, f64), margin: f64, lx: f64, ly: f64) -> Result<Self> {
        if !(a.0 > 0.0 && a.0 <= a.1) {
            return Err(Error::Config(format!("a_range {a:?} must be positive and increasing")));
        }
        if !(b_ratio.0 > 0.0 && b_ratio.0 <= b_ratio.1 && b_ratio.1 <= 1.0) {
            return Err(Error::Config(format!("b_ratio {b_ratio:?} must lie in (0, 1]")));
        }
        // any orientation of the largest void must fit with clearance
        let need = 2.0 * (a.1 + margin);
        if need > lx.min(ly) {
            return Err(Error::Config(format!(
                "a_range upper end {} with margin {margin} does not fit a {lx} x {ly} domain",
                a.1
            )));
        }
        Ok(Self { a, b_ratio, margin, lx, ly })
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let g = cfg.grid()?;
        let d = &cfg.dataset;
        let s = g.lx().min(g.ly());
        Self::new(
            (d.a_range[0] * s, d.a_range[1] * s),
            (d.b_ratio[0], d.b_ratio[1]),
            d.margin_nodes * g.hx().max(g.hy()),
            g.lx(),
            g.ly(),
        )
    }
}

/// Draws semi-axes, angle and then a centre uniformly from the box where the
/// rotated void keeps its margin to every side.
pub fn sample_ellipse(rng: &mut impl Rng, bounds: &EllipseBounds) -> EllipseParams {
    let a = uniform(rng, bounds.a);
    let b = a * uniform(rng, bounds.b_ratio);
    let theta = rng.gen_range(0.0..PI);
    let mut e = EllipseParams { xc: 0.0, yc: 0.0, a, b, theta };
    let (ex, ey) = e.half_extents();
    e.xc = uniform(rng, (ex + bounds.margin, bounds.lx - ex - bounds.margin));
    e.yc = uniform(rng, (ey + bounds.margin, bounds.ly - ey - bounds.margin));
    e
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: usize,
    pub ellipse: EllipseParams,
    pub gamma_true: ScalarField,
    pub traces: SensorTraces,
}

/// Builds sample `id` from its own seed, independent of every other sample.
pub fn generate_sample(physics: &Physics, bounds: &EllipseBounds, seed: u64, id: usize) -> Result<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ id as u64);
    let ellipse = sample_ellipse(&mut rng, bounds);
    let gamma_true = rasterize_ellipse(&ellipse, &physics.grid, physics.eps)?;
    let m = physics.material(gamma_true.clone())?;
    let (traces, _) = solve_forward(&m, &physics.source, &physics.time, &physics.sensors, false)?;
    Ok(SampleRecord { id, ellipse, gamma_true, traces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub ellipse: EllipseParams,
    pub traces: String,
    pub gamma: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    /// Ids `[0, train)` form the training split, the rest validation.
    pub train: usize,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub nt: usize,
    pub dt: f64,
    pub norm: NormStats,
    pub entries: Vec<ManifestEntry>,
    pub failures: Vec<SampleFailure>,
}

impl DatasetManifest {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.lx, self.ly)
    }

    pub fn train_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).filter(|&id| id < self.train).collect()
    }

    pub fn validation_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.id).filter(|&id| id >= self.train).collect()
    }

    pub fn entry(&self, id: usize) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("sample {id} is not in the dataset")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }
}

/// First `n_d` training ids. Nested by construction: smaller subsets are
/// prefixes of larger ones.
pub fn pretrain_subset(manifest: &DatasetManifest, n_d: usize) -> Result<Vec<usize>> {
    let ids = manifest.train_ids();
    if n_d > ids.len() {
        return Err(Error::InvalidInput(format!(
            "N_D = {n_d} exceeds the {} available training samples",
            ids.len()
        )));
    }
    Ok(ids[..n_d].to_vec())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

pub fn trace_file(id: usize) -> String {
    format!("traces_{id:05}.wft")
}

pub fn gamma_file(id: usize) -> String {
    format!("gamma_{id:05}.wfi")
}

/// Generates every sample of the configured dataset. Samples whose forward
/// solve fails are listed in the manifest and left out.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let physics = cfg.physics()?;
    let bounds = EllipseBounds::from_config(cfg)?;
    let n = cfg.dataset.samples;
    let results: Vec<Result<SampleRecord>> =
        (0..n).into_par_iter().map(|id| generate_sample(&physics, &bounds, seed, id)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(SampleFailure { id, error: e.to_string() }),
        }
    }
    let train = cfg.dataset.train;
    let norm = if records.iter().any(|r| r.id < train) {
        NormStats::from_traces(records.iter().filter(|r| r.id < train).map(|r| &r.traces))?
    } else {
        NormStats::identity(cfg.sensors.count)
    };
    let entries = records
        .iter()
        .map(|r| ManifestEntry { id: r.id, ellipse: r.ellipse, traces: trace_file(r.id), gamma: gamma_file(r.id) })
        .collect();
    let g = &physics.grid;
    let manifest = DatasetManifest {
        config_hash: cfg.data_hash(),
        seed,
        samples: n,
        train,
        nx: g.nx(),
        ny: g.ny(),
        lx: g.lx(),
        ly: g.ly(),
        nt: physics.time.nt,
        dt: physics.time.dt,
        norm,
        entries,
        failures,
    };
    Ok(Dataset { manifest, records })
}

impl Dataset {
    /// Every file of the dataset as (relative name, contents), manifest first.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        text.push('\n');
        let mut out = vec![("manifest.json".to_string(), text.into_bytes())];
        for r in &self.records {
            out.push((trace_file(r.id), r.traces.to_bytes()));
            out.push((gamma_file(r.id), r.gamma_true.to_bytes()));
        }
        out
    }
}

/// Reads one stored sample back.
pub fn load_sample(dir: &Path, manifest: &DatasetManifest, id: usize) -> Result<SampleRecord> {
    let e = manifest.entry(id)?;
    let grid = manifest.grid()?;
    let traces = SensorTraces::load(&dir.join(&e.traces))?;
    if traces.nt() != manifest.nt {
        return Err(Error::format(&dir.join(&e.traces), format!("{} steps, manifest says {}", traces.nt(), manifest.nt)));
    }
    let gamma_true = ScalarField::load(&dir.join(&e.gamma), grid)?;
    Ok(SampleRecord { id, ellipse: e.ellipse, gamma_true, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_ignores_angle() {
        let b = EllipseBounds::new((0.1, 0.1), (1.0, 1.0), 0.0, 2.0, 1.0).unwrap();
        let g = GridSpec::new(64, 32, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = sample_ellipse(&mut rng, &b);
        assert_eq!((e.a, e.b), (0.1, 0.1));
        let rotated = EllipseParams { theta: e.theta + 1.0, ..e };
        assert_eq!(rasterize_ellipse(&e, &g, 1e-3).unwrap(), rasterize_ellipse(&rotated, &g, 1e-3).unwrap());
    }

    #[test]
    fn infeasible_range_is_a_config_error() {
        assert!(matches!(EllipseBounds::new((0.1, 0.5), (0.4, 1.0), 0.01, 2.0, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_sequence() {
        let b = EllipseBounds::new((0.08, 0.3), (0.4, 1.0), 0.06, 2.0, 1.0).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            assert_eq!(sample_ellipse(&mut r1, &b), sample_ellipse(&mut r2, &b));
        }
    }
}
