//! Experiment configuration, loaded from TOML. Every field has a default so a
//! config file only needs the keys it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::nn::Architecture;
use crate::solver::{stable_dt, MaterialModel, SensorArray, SourceSpec, TimeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 64, ny: 32, lx: 2.0, ly: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub rho0: f64,
    pub c0: f64,
    /// Floor of the scaling field; voids take this value.
    pub eps: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { rho0: 1.0, c0: 1.0, eps: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Source position; `None` puts it at the middle of the top edge.
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub psi0: f64,
    pub frequency: f64,
    pub cycles: u32,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { x: None, y: None, psi0: 1.0, frequency: 3.0, cycles: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub nt: usize,
    /// Fraction of the stability limit used for dt.
    pub safety: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { nt: 2048, safety: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Sensors spaced evenly along the top edge, excluding the corners.
    pub count: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { count: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let a = Architecture::default_for(1);
        Self { input_h: a.input_h, input_w: a.input_w, encoder: a.encoder, decoder: a.decoder }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub samples: usize,
    pub train: usize,
    pub seed: u64,
    /// Semi-major axis range as fractions of `min(lx, ly)`.
    pub a_range: [f64; 2],
    /// Semi-minor axis as a fraction of the semi-major axis.
    pub b_ratio: [f64; 2],
    /// Clearance between a void and the boundary, in node spacings.
    pub margin_nodes: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples: 160,
            train: 128,
            seed: 2024,
            a_range: [0.08, 0.3],
            b_ratio: [0.4, 1.0],
            margin_nodes: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub n_d: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self { n_d: 32, epochs: 300, batch_size: 8, lr: 1e-3, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FwiSection {
    pub max_epochs: usize,
    pub lr_scratch: f64,
    pub lr_transfer: f64,
    /// Layers frozen when starting from a pretrained checkpoint.
    pub freeze: usize,
    pub ap_target: f64,
    /// Initialisation seed for runs without a checkpoint.
    pub seed: u64,
}

impl Default for FwiSection {
    fn default() -> Self {
        Self { max_epochs: 200, lr_scratch: 3e-3, lr_transfer: 2.5e-4, freeze: 6, ap_target: 0.99, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub n_d_list: Vec<usize>,
    pub repetitions: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self { n_d_list: vec![0, 2, 8, 32], repetitions: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub material: MaterialConfig,
    pub source: SourceConfig,
    pub time: TimeConfig,
    pub sensors: SensorConfig,
    pub network: NetworkConfig,
    pub dataset: DatasetConfig,
    pub pretrain: PretrainSection,
    pub fwi: FwiSection,
    pub experiment: ExperimentSection,
}

/// Everything needed to run the forward model of a sample.
#[derive(Debug, Clone)]
pub struct Physics {
    pub grid: GridSpec,
    pub rho0: f64,
    pub c0: f64,
    pub eps: f64,
    pub source: SourceSpec,
    pub time: TimeSpec,
    pub sensors: SensorArray,
}

impl Physics {
    pub fn material(&self, gamma: ScalarField) -> Result<MaterialModel> {
        MaterialModel::new(self.rho0, self.c0, gamma)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.physics()?;
        let d = &self.dataset;
        if d.samples == 0 || d.train > d.samples {
            return cfg(format!("dataset.train = {} must not exceed dataset.samples = {} (> 0)", d.train, d.samples));
        }
        if !(0.0 < d.a_range[0] && d.a_range[0] <= d.a_range[1]) {
            return cfg(format!("dataset.a_range {:?} must be increasing and positive", d.a_range));
        }
        if !(0.0 < d.b_ratio[0] && d.b_ratio[0] <= d.b_ratio[1] && d.b_ratio[1] <= 1.0) {
            return cfg(format!("dataset.b_ratio {:?} must lie in (0, 1] and be increasing", d.b_ratio));
        }
        if !(d.margin_nodes >= 0.0) {
            return cfg(format!("dataset.margin_nodes {} must be non-negative", d.margin_nodes));
        }
        crate::dataset::EllipseBounds::from_config(self)?;
        let arch = self.architecture();
        let (oh, ow) = arch.output_dims().map_err(|e| Error::Config(format!("network: {e}")))?;
        if (oh, ow) != (self.grid.nx, self.grid.ny) {
            return cfg(format!(
                "network output {oh}x{ow} does not match the {}x{} grid",
                self.grid.nx, self.grid.ny
            ));
        }
        if self.time.nt % 4 != 0 || self.time.nt / 4 != arch.input_h * arch.input_w {
            return cfg(format!(
                "time.nt = {} but the network input needs 4 * {} * {} samples",
                self.time.nt, arch.input_h, arch.input_w
            ));
        }
        let p = &self.pretrain;
        if !(p.lr > 0.0) || p.batch_size == 0 {
            return cfg("pretrain.lr must be positive and pretrain.batch_size at least 1".into());
        }
        let f = &self.fwi;
        if !(f.lr_scratch > 0.0 && f.lr_transfer > 0.0) {
            return cfg("fwi learning rates must be positive".into());
        }
        if !(f.ap_target > 0.0 && f.ap_target <= 1.0) {
            return cfg(format!("fwi.ap_target {} outside (0, 1]", f.ap_target));
        }
        if f.freeze > arch.layers().len() {
            return cfg(format!("fwi.freeze {} exceeds {} layers", f.freeze, arch.layers().len()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new(g.nx, g.ny, g.lx, g.ly).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn physics(&self) -> Result<Physics> {
        let grid = self.grid()?;
        let m = &self.material;
        if !(m.rho0 > 0.0 && m.c0 > 0.0) {
            return Err(Error::Config("material.rho0 and material.c0 must be positive".into()));
        }
        if !(m.eps > 0.0 && m.eps < 0.5) {
            return Err(Error::Config(format!("material.eps {} outside (0, 0.5)", m.eps)));
        }
        let s = &self.source;
        let source = SourceSpec::new(
            &grid,
            s.x.unwrap_or(grid.lx() / 2.0),
            s.y.unwrap_or(grid.ly()),
            s.psi0,
            s.frequency,
            s.cycles,
        )
        .map_err(|e| Error::Config(format!("source: {e}")))?;
        if !(self.time.safety > 0.0 && self.time.safety <= 0.8) {
            return Err(Error::Config(format!("time.safety {} outside (0, 0.8]", self.time.safety)));
        }
        let time = TimeSpec::new(stable_dt(&grid, m.c0, self.time.safety), self.time.nt)
            .map_err(|e| Error::Config(format!("time: {e}")))?;
        let sensors = SensorArray::top_boundary(&grid, self.sensors.count)
            .map_err(|e| Error::Config(format!("sensors: {e}")))?;
        Ok(Physics { grid, rho0: m.rho0, c0: m.c0, eps: m.eps, source, time, sensors })
    }

    pub fn architecture(&self) -> Architecture {
        let n = &self.network;
        Architecture {
            channels: self.sensors.count,
            input_h: n.input_h,
            input_w: n.input_w,
            encoder: n.encoder.clone(),
            decoder: n.decoder.clone(),
        }
    }

    /// Digest of the settings that determine generated data: grid, material,
    /// source, timing, sensors and sampling ranges. Seeds and training
    /// settings are excluded.
    pub fn data_hash(&self) -> String {
        let d = &self.dataset;
        let scope = serde_json::json!({
            "grid": self.grid,
            "material": self.material,
            "source": self.source,
            "time": self.time,
            "sensors": self.sensors,
            "dataset": {
                "samples": d.samples,
                "train": d.train,
                "a_range": d.a_range,
                "b_ratio": d.b_ratio,
                "margin_nodes": d.margin_nodes,
            },
        });
        hex::encode(Sha256::digest(scope.to_string().as_bytes()))
    }
}
