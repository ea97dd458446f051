//! Training loops: supervised pretraining on labelled samples and
//! full waveform inversion of a single specimen.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjoint::misfit_gradient;
use crate::config::Physics;
use crate::error::{Error, Result};
use crate::field::{nearest_map, resample_nearest, ScalarField};
use crate::metrics::field_average_precision;
use crate::nn::{adam_step, AdamState, Checkpoint, NetworkParams, Tensor};
use crate::solver::SensorTraces;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss_m: Option<f64>,
    pub loss_d: Option<f64>,
    pub avg_precision: Option<f64>,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "epoch,loss_m,loss_d,avg_precision,wall_ms";

impl RunHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch,
                cell(r.loss_m),
                cell(r.loss_d),
                cell(r.avg_precision),
                cell(r.wall_ms)
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::InvalidInput(format!("history header must be `{HISTORY_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| Error::InvalidInput(format!("history line {}: {what}", n + 2));
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |c: &str| -> Result<Option<f64>> {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).map_err(|_| bad(&format!("`{c}` is not a number")))
                }
            };
            let row = HistoryRow {
                epoch: cells[0].parse().map_err(|_| bad("bad epoch"))?,
                loss_m: num(cells[1])?,
                loss_d: num(cells[2])?,
                avg_precision: num(cells[3])?,
                wall_ms: num(cells[4])?,
            };
            if rows.last().is_some_and(|p: &HistoryRow| p.epoch >= row.epoch) {
                return Err(bad("epochs must increase"));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// First epoch whose average precision reaches `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.avg_precision.is_some_and(|a| a >= target)).map(|r| r.epoch)
    }
}

/// `1/2 sum_j (pred_j - truth_j)^2 hx hy` and its gradient with respect to `pred`.
pub fn data_loss(pred: &ScalarField, truth: &ScalarField) -> Result<(f64, ScalarField)> {
    if pred.grid() != truth.grid() {
        return Err(Error::Shape("prediction and label live on different grids".into()));
    }
    let w = pred.grid().hx() * pred.grid().hy();
    let diff: Vec<f64> = pred.values().iter().zip(truth.values()).map(|(p, t)| p - t).collect();
    let loss = 0.5 * w * diff.iter().map(|d| d * d).sum::<f64>();
    let grad = ScalarField::new(*pred.grid(), diff.iter().map(|d| d * w).collect())?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// One labelled example: network input and its true scaling field on the
/// network output grid.
pub type LabelledInput = (Tensor, ScalarField);

/// Minimises the data loss over `samples` with mini-batch Adam. Each history
/// row holds the summed loss seen during that epoch, before each update.
pub fn pretrain(
    net: &mut NetworkParams,
    samples: &[LabelledInput],
    cfg: &PretrainConfig,
) -> Result<(AdamState, RunHistory)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("pretraining needs at least one sample".into()));
    }
    if !(cfg.lr > 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidInput("learning rate and batch size must be positive".into()));
    }
    let out_grid = *samples[0].1.grid();
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = RunHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&k| {
                    let (x, truth) = &samples[k];
                    let tape = net.forward(x)?;
                    let pred = net.gamma(&tape, &out_grid)?;
                    let (loss, up) = data_loss(&pred, truth)?;
                    Ok((loss, net.backward(&tape, &up)?))
                })
                .collect();
            let mut grad = vec![0.0; net.param_count()];
            for part in parts {
                let (loss, g) = part?;
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / batch.len() as f64;
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam_step(net, &mut adam, &grad)?;
        }
        history.rows.push(HistoryRow { epoch, loss_d: Some(epoch_loss), ..Default::default() });
    }
    Ok((adam, history))
}

#[derive(Debug, Clone)]
pub struct FwiEval {
    pub loss_m: f64,
    pub grad: Vec<f64>,
    /// Prediction on the network output grid.
    pub gamma: ScalarField,
}

/// Measurement misfit of the network's current prediction and its gradient
/// with respect to every network parameter.
pub fn fwi_gradient(
    net: &NetworkParams,
    input: &Tensor,
    meas: &SensorTraces,
    physics: &Physics,
) -> Result<FwiEval> {
    let out_grid = net.output_grid(physics.grid.lx(), physics.grid.ly())?;
    let tape = net.forward(input).map_err(|e| e.in_stage("network forward"))?;
    let gamma = net.gamma(&tape, &out_grid)?;
    let same = out_grid == physics.grid;
    let solver_gamma = if same { gamma.clone() } else { resample_nearest(&gamma, &physics.grid) };
    let m = physics.material(solver_gamma)?;
    let mg = misfit_gradient(&m, &physics.source, &physics.time, &physics.sensors, meas)
        .map_err(|e| e.in_stage("misfit gradient"))?;
    let upstream = if same {
        mg.gradient
    } else {
        // adjoint of nearest resampling: scatter-add onto the source nodes
        let map = nearest_map(&out_grid, &physics.grid);
        let mut back = vec![0.0; out_grid.len()];
        for (dst, &src) in map.iter().enumerate() {
            back[src] += mg.gradient.values()[dst];
        }
        ScalarField::new(out_grid, back)?
    };
    let grad = net.backward(&tape, &upstream).map_err(|e| e.in_stage("network backward"))?;
    Ok(FwiEval { loss_m: mg.loss, grad, gamma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwiConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub ap_target: f64,
    /// Stop at the first epoch reaching `ap_target`.
    pub early_stop: bool,
    /// Record wall-clock time per epoch; off by default to keep histories
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    /// Keep the prediction of every n-th epoch (and the last).
    pub snapshot_every: Option<usize>,
}

impl FwiConfig {
    pub fn new(max_epochs: usize, lr: f64, ap_target: f64) -> Self {
        Self { max_epochs, lr, ap_target, early_stop: true, record_wall_time: false, snapshot_every: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    TargetReached { epoch: usize },
    MaxEpochs,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct FwiRun {
    pub history: RunHistory,
    pub stop: StopReason,
    pub final_gamma: Option<ScalarField>,
    pub snapshots: Vec<(usize, ScalarField)>,
    pub adam: AdamState,
}

/// Gradient-descent loop of the inversion. Row `n` of the history evaluates
/// the parameters after `n` updates. A failing epoch ends the run with the
/// rows recorded so far.
pub fn run_fwi(
    net: &mut NetworkParams,
    input: &Tensor,
    meas: &SensorTraces,
    gamma_true: Option<&ScalarField>,
    physics: &Physics,
    cfg: &FwiConfig,
) -> Result<FwiRun> {
    if !(cfg.lr > 0.0) || !(cfg.ap_target > 0.0 && cfg.ap_target <= 1.0) {
        return Err(Error::InvalidInput("invalid learning rate or AP target".into()));
    }
    let mut adam = AdamState::new(net.param_count(), cfg.lr);
    let mut history = RunHistory::default();
    let mut snapshots = Vec::new();
    let mut final_gamma = None;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 0..=cfg.max_epochs {
        let t0 = Instant::now();
        let eval = match fwi_gradient(net, input, meas, physics) {
            Ok(e) if e.loss_m.is_finite() => e,
            Ok(_) => {
                stop = StopReason::Failed(Error::NonFiniteLoss { epoch }.to_string());
                break;
            }
            Err(e) => {
                stop = StopReason::Failed(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        let mut row = HistoryRow { epoch, loss_m: Some(eval.loss_m), ..Default::default() };
        if let Some(truth) = gamma_true {
            let truth = if truth.grid() == eval.gamma.grid() {
                truth.clone()
            } else {
                resample_nearest(truth, eval.gamma.grid())
            };
            row.loss_d = Some(data_loss(&eval.gamma, &truth)?.0);
            row.avg_precision = field_average_precision(&eval.gamma, &truth).ok();
        }
        let last = epoch == cfg.max_epochs;
        let reached = row.avg_precision.is_some_and(|a| a >= cfg.ap_target);
        let done = last || (cfg.early_stop && reached);
        if let Some(k) = cfg.snapshot_every {
            if done || (k > 0 && epoch % k == 0) {
                snapshots.push((epoch, eval.gamma.clone()));
            }
        }
        if !done {
            if let Err(e) = adam_step(net, &mut adam, &eval.grad) {
                stop = StopReason::Failed(format!("epoch {epoch}: {e}"));
                final_gamma = Some(eval.gamma);
                history.rows.push(row);
                break;
            }
        }
        if cfg.record_wall_time {
            row.wall_ms = Some(t0.elapsed().as_secs_f64() * 1e3);
        }
        history.rows.push(row);
        final_gamma = Some(eval.gamma);
        if done {
            if cfg.early_stop && reached {
                stop = StopReason::TargetReached { epoch };
            }
            break;
        }
    }
    Ok(FwiRun { history, stop, final_gamma, snapshots, adam })
}

/// Loads pretrained parameters into `net` and freezes its first `freeze`
/// layers. Nothing is modified when the architectures differ.
pub fn transfer_weights(ckpt: &Checkpoint, net: &mut NetworkParams, freeze: usize) -> Result<()> {
    if freeze > net.layers().len() {
        return Err(Error::InvalidInput(format!("cannot freeze {freeze} of {} layers", net.layers().len())));
    }
    ckpt.transfer_into(net)?;
    net.freeze_prefix(freeze)
}
