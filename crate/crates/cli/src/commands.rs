use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use wfi_core::config::ExperimentConfig;
use wfi_core::dataset::{generate_dataset, load_sample, pretrain_subset, DatasetManifest};
use wfi_core::field::{resample_nearest, ScalarField};
use wfi_core::inversion::{pretrain as pretrain_loop, run_fwi, transfer_weights, FwiConfig, PretrainConfig, RunHistory, StopReason};
use wfi_core::nn::{prepare_input, Checkpoint, NetworkParams};

use crate::args::{GenDataArgs, InvertArgs, PretrainArgs};
use crate::guard::Writer;
use crate::{CliError, CliResult};

pub const HISTORY: &str = "history.csv";
pub const CHECKPOINT: &str = "checkpoint.wfc";
pub const FINAL_GAMMA: &str = "gamma_final.wfi";
pub const RUN_META: &str = "run.json";
pub const PRETRAIN_META: &str = "pretrain.json";
pub const SNAPSHOTS: &str = "snapshots";

pub fn snapshot_file(epoch: usize) -> String {
    format!("gamma_e{epoch:05}.wfi")
}

/// Written next to a pretraining checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub n_d: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ids: Vec<usize>,
    pub config_hash: String,
}

/// Written into every inversion run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub sample: usize,
    pub lr: f64,
    pub freeze: usize,
    pub max_epochs: usize,
    pub stop: String,
    /// Grid of the stored fields.
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

pub fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            wfi_core::Error::Io { .. } => CliError::Usage(e.to_string()),
            e => e.into(),
        }),
    }
}

fn load_manifest(dir: &Path, cfg: &ExperimentConfig, allow_mismatch: bool) -> CliResult<DatasetManifest> {
    let m = DatasetManifest::load(dir).map_err(|e| CliError::Usage(e.to_string()))?;
    let h = cfg.data_hash();
    if m.config_hash != h && !allow_mismatch {
        return Err(CliError::Usage(format!(
            "dataset {} was generated under config hash {}, the current config hashes to {h}; \
             pass --allow-config-mismatch to use it anyway",
            dir.display(),
            m.config_hash
        )));
    }
    Ok(m)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

pub fn gen_data(a: &GenDataArgs) -> CliResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let seed = a.common.seed.unwrap_or(cfg.dataset.seed);
    let t = Instant::now();
    let ds = generate_dataset(&cfg, seed)?;
    if ds.records.is_empty() {
        return Err(CliError::Runtime(format!("all {} samples failed", ds.manifest.samples)));
    }
    let w = Writer { force: a.common.force };
    for (name, bytes) in ds.files() {
        w.write(&a.common.out.join(name), &bytes)?;
    }
    println!(
        "generated {} samples ({} failed) in {:.1} s -> {}",
        ds.records.len(),
        ds.manifest.failures.len(),
        t.elapsed().as_secs_f64(),
        a.common.out.display()
    );
    for f in &ds.manifest.failures {
        println!("  sample {}: {}", f.id, f.error);
    }
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> CliResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let manifest = load_manifest(&a.data, &cfg, a.allow_config_mismatch)?;
    let n_d = a.n_d.unwrap_or(cfg.pretrain.n_d);
    let ids = pretrain_subset(&manifest, n_d)?;
    let seed = a.common.seed.unwrap_or(cfg.pretrain.seed);
    let epochs = a.epochs.unwrap_or(cfg.pretrain.epochs);
    let arch = cfg.architecture();
    let mut net = NetworkParams::new(arch.clone(), cfg.material.eps)?;
    net.glorot_init(seed);
    let out_grid = net.output_grid(manifest.lx, manifest.ly)?;

    let t = Instant::now();
    let (adam, history) = if ids.is_empty() {
        (None, RunHistory::default())
    } else {
        let mut samples = Vec::with_capacity(ids.len());
        for &id in &ids {
            let rec = load_sample(&a.data, &manifest, id)?;
            let x = prepare_input(&rec.traces, &manifest.norm, arch.input_h, arch.input_w)?;
            samples.push((x, on_grid(rec.gamma_true, &out_grid)));
        }
        let pc = PretrainConfig { epochs, batch_size: cfg.pretrain.batch_size, lr: cfg.pretrain.lr, seed };
        let (adam, h) = pretrain_loop(&mut net, &samples, &pc)?;
        (Some(adam), h)
    };

    let w = Writer { force: a.common.force };
    let out = &a.common.out;
    w.write(&out.join(CHECKPOINT), &Checkpoint::capture(&net, adam.as_ref()).to_bytes())?;
    w.write(&out.join(HISTORY), history.to_csv().as_bytes())?;
    let meta = PretrainMeta { n_d, epochs, seed, ids, config_hash: manifest.config_hash.clone() };
    w.write(&out.join(PRETRAIN_META), &json_bytes(&meta))?;
    let span = match (history.rows.first(), history.rows.last()) {
        (Some(f), Some(l)) => format!(", L_D {:.4e} -> {:.4e}", f.loss_d.unwrap_or(f64::NAN), l.loss_d.unwrap_or(f64::NAN)),
        _ => String::new(),
    };
    println!("pretrained on N_D = {n_d} for {} epochs in {:.1} s{span}", history.rows.len(), t.elapsed().as_secs_f64());
    Ok(())
}

fn on_grid(f: ScalarField, grid: &wfi_core::field::GridSpec) -> ScalarField {
    if f.grid() == grid {
        f
    } else {
        resample_nearest(&f, grid)
    }
}

fn checkpoint_label(path: &Path) -> String {
    let meta = path.parent().map(|d| d.join(PRETRAIN_META)).and_then(|p| std::fs::read_to_string(p).ok());
    match meta.and_then(|s| serde_json::from_str::<PretrainMeta>(&s).ok()) {
        Some(m) => format!("N_D={}", m.n_d),
        None => "pretrained".into(),
    }
}

pub fn invert(a: &InvertArgs) -> CliResult {
    let cfg = load_config(a.common.config.as_deref())?;
    let manifest = load_manifest(&a.data, &cfg, a.allow_config_mismatch)?;
    let rec = load_sample(&a.data, &manifest, a.sample)?;
    let physics = cfg.physics()?;
    let arch = cfg.architecture();
    let mut net = NetworkParams::new(arch.clone(), cfg.material.eps)?;
    let (lr, freeze, label) = match &a.checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let freeze = a.freeze.unwrap_or(cfg.fwi.freeze);
            transfer_weights(&ckpt, &mut net, freeze)?;
            (a.lr.unwrap_or(cfg.fwi.lr_transfer), freeze, checkpoint_label(path))
        }
        None => {
            net.glorot_init(a.common.seed.unwrap_or(cfg.fwi.seed));
            let freeze = a.freeze.unwrap_or(0);
            net.freeze_prefix(freeze)?;
            (a.lr.unwrap_or(cfg.fwi.lr_scratch), freeze, "scratch".to_string())
        }
    };
    let label = a.label.clone().unwrap_or(label);
    let out_grid = net.output_grid(physics.grid.lx(), physics.grid.ly())?;
    let x = prepare_input(&rec.traces, &manifest.norm, arch.input_h, arch.input_w)?;
    let truth = on_grid(rec.gamma_true, &out_grid);
    let max_epochs = a.max_epochs.unwrap_or(cfg.fwi.max_epochs);
    let fc = FwiConfig {
        max_epochs,
        lr,
        ap_target: cfg.fwi.ap_target,
        early_stop: !a.no_early_stop,
        record_wall_time: a.wall_time,
        snapshot_every: a.snapshot_every,
    };
    let t = Instant::now();
    let run = run_fwi(&mut net, &x, &rec.traces, Some(&truth), &physics, &fc)?;

    let w = Writer { force: a.common.force };
    let out = &a.common.out;
    w.write(&out.join(HISTORY), run.history.to_csv().as_bytes())?;
    w.write(&out.join(CHECKPOINT), &Checkpoint::capture(&net, Some(&run.adam)).to_bytes())?;
    if let Some(g) = &run.final_gamma {
        w.write(&out.join(FINAL_GAMMA), &g.to_bytes())?;
    }
    for (epoch, g) in &run.snapshots {
        w.write(&out.join(SNAPSHOTS).join(snapshot_file(*epoch)), &g.to_bytes())?;
    }
    let stop = match &run.stop {
        StopReason::TargetReached { epoch } => format!("target reached at epoch {epoch}"),
        StopReason::MaxEpochs => "max epochs".into(),
        StopReason::Failed(m) => format!("failed: {m}"),
    };
    let meta = RunMeta {
        label,
        sample: a.sample,
        lr,
        freeze,
        max_epochs,
        stop: stop.clone(),
        nx: out_grid.nx(),
        ny: out_grid.ny(),
        lx: out_grid.lx(),
        ly: out_grid.ly(),
    };
    w.write(&out.join(RUN_META), &json_bytes(&meta))?;
    if let Some(last) = run.history.rows.last() {
        println!(
            "sample {}: {} epochs in {:.1} s, L_M {:.4e}, AP {:.6}, {stop}",
            a.sample,
            run.history.rows.len(),
            t.elapsed().as_secs_f64(),
            last.loss_m.unwrap_or(f64::NAN),
            last.avg_precision.unwrap_or(f64::NAN)
        );
    }
    if let StopReason::Failed(m) = run.stop {
        return Err(CliError::Runtime(format!("inversion of sample {} failed: {m}", a.sample)));
    }
    Ok(())
}

pub fn history_path(dir: &Path) -> PathBuf {
    dir.join(HISTORY)
}
