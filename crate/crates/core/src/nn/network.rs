use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, Tensor};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize },
    Avgpool2x2,
    UpsampleNearest2x,
    Prelu,
    AdaptiveSigmoid,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels } => out_channels * in_channels * 9 + out_channels,
            LayerSpec::Prelu | LayerSpec::AdaptiveSigmoid => 1,
            LayerSpec::Avgpool2x2 | LayerSpec::UpsampleNearest2x => 0,
        }
    }

    fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels } => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Shape("conv channel counts must be at least 1".into()));
                }
                if in_channels != c {
                    return Err(Error::Shape(format!("conv expects {in_channels} channels, got {c}")));
                }
                Ok((out_channels, h, w))
            }
            LayerSpec::Avgpool2x2 => {
                if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                    return Err(Error::Shape(format!("cannot pool a {h}x{w} map")));
                }
                Ok((c, h / 2, w / 2))
            }
            LayerSpec::UpsampleNearest2x => Ok((c, 2 * h, 2 * w)),
            LayerSpec::Prelu | LayerSpec::AdaptiveSigmoid => Ok((c, h, w)),
        }
    }
}

/// Encoder-decoder layout. The input is `channels x input_h x input_w`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Conv widths of the encoder stages; each stage is conv, PReLU, pool.
    pub encoder: Vec<usize>,
    /// Conv widths of the decoder stages; each stage is upsample, conv, PReLU.
    pub decoder: Vec<usize>,
}

impl Architecture {
    pub fn default_for(channels: usize) -> Self {
        Self { channels, input_h: 32, input_w: 16, encoder: vec![16, 32], decoder: vec![32, 16, 8] }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut c = self.channels;
        for &k in &self.encoder {
            out.push(LayerSpec::Conv2d { in_channels: c, out_channels: k });
            out.push(LayerSpec::Prelu);
            out.push(LayerSpec::Avgpool2x2);
            c = k;
        }
        for &k in &self.decoder {
            out.push(LayerSpec::UpsampleNearest2x);
            out.push(LayerSpec::Conv2d { in_channels: c, out_channels: k });
            out.push(LayerSpec::Prelu);
            c = k;
        }
        out.push(LayerSpec::Conv2d { in_channels: c, out_channels: 1 });
        out.push(LayerSpec::AdaptiveSigmoid);
        out
    }

    /// Number of leading layers that make up the encoder.
    pub fn encoder_layers(&self) -> usize {
        3 * self.encoder.len()
    }

    pub fn output_dims(&self) -> Result<(usize, usize)> {
        let mut s = (self.channels, self.input_h, self.input_w);
        for l in self.layers() {
            s = l.output_shape(s)?;
        }
        Ok((s.1, s.2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
    freeze_mask: Vec<bool>,
    eps: f64,
}

/// Intermediate activations of one forward pass, needed by `backward`.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Tensor>,
    fingerprint: u64,
}

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("tape holds the input at least")
    }

    /// Input of layer `k`; `k = layers` gives the network output.
    pub fn activation(&self, k: usize) -> &Tensor {
        &self.activations[k]
    }
}

impl NetworkParams {
    /// Zero-initialised parameters; call `glorot_init` before use.
    pub fn new(arch: Architecture, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidInput(format!("eps {eps} outside (0,1)")));
        }
        if arch.channels == 0 || arch.input_h == 0 || arch.input_w == 0 {
            return Err(Error::Shape("empty network input".into()));
        }
        let (c, ..) = arch.layers().iter().try_fold((arch.channels, arch.input_h, arch.input_w), |s, l| {
            l.output_shape(s)
        })?;
        if c != 1 {
            return Err(Error::Shape(format!("network emits {c} channels, expected 1")));
        }
        let layers = arch.layers();
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut n = 0;
        for l in &layers {
            offsets.push(n);
            n += l.param_count();
        }
        offsets.push(n);
        let freeze_mask = vec![false; layers.len()];
        Ok(Self { arch, layers, offsets, weights: vec![0.0; n], freeze_mask, eps })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.weights.len() {
            return Err(Error::Shape(format!("{} weights for a {}-parameter network", w.len(), self.weights.len())));
        }
        self.weights = w;
        Ok(())
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Parameter range of layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn freeze_mask(&self) -> &[bool] {
        &self.freeze_mask
    }

    pub fn set_freeze_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.layers.len() {
            return Err(Error::Shape(format!("freeze mask of {} for {} layers", mask.len(), self.layers.len())));
        }
        self.freeze_mask = mask;
        Ok(())
    }

    /// Freezes exactly the first `k` layers.
    pub fn freeze_prefix(&mut self, k: usize) -> Result<()> {
        if k > self.layers.len() {
            return Err(Error::InvalidInput(format!("cannot freeze {k} of {} layers", self.layers.len())));
        }
        for (l, f) in self.freeze_mask.iter_mut().enumerate() {
            *f = l < k;
        }
        Ok(())
    }

    /// Per-parameter view of the freeze mask.
    pub fn frozen_params(&self) -> Vec<bool> {
        let mut out = vec![false; self.weights.len()];
        for (l, &f) in self.freeze_mask.iter().enumerate() {
            if f {
                out[self.layer_range(l)].fill(true);
            }
        }
        out
    }

    pub fn glorot_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..self.layers.len() {
            let r = self.layer_range(l);
            let w = &mut self.weights[r];
            match self.layers[l] {
                LayerSpec::Conv2d { in_channels, out_channels } => {
                    let bound = (6.0 / ((in_channels + out_channels) * 9) as f64).sqrt();
                    let nw = in_channels * out_channels * 9;
                    for v in &mut w[..nw] {
                        *v = rng.gen_range(-bound..bound);
                    }
                    w[nw..].fill(0.0);
                }
                LayerSpec::Prelu => w[0] = 0.25,
                LayerSpec::AdaptiveSigmoid => w[0] = 1.0,
                LayerSpec::Avgpool2x2 | LayerSpec::UpsampleNearest2x => {}
            }
        }
    }

    /// Grid the network output lives on: output rows map to x, columns to y.
    pub fn output_grid(&self, lx: f64, ly: f64) -> Result<GridSpec> {
        let (h, w) = self.arch.output_dims()?;
        GridSpec::new(h, w, lx, ly)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tape> {
        let expect = (self.arch.channels, self.arch.input_h, self.arch.input_w);
        if x.shape() != expect {
            return Err(Error::Shape(format!("input {:?}, network expects {:?}", x.shape(), expect)));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (l, spec) in self.layers.iter().enumerate() {
            let inp = acts.last().unwrap();
            let p = &self.weights[self.layer_range(l)];
            let out = match *spec {
                LayerSpec::Conv2d { out_channels, .. } => layers::conv3x3_forward(inp, p, out_channels),
                LayerSpec::Avgpool2x2 => layers::avgpool2_forward(inp),
                LayerSpec::UpsampleNearest2x => layers::upsample2_forward(inp),
                LayerSpec::Prelu => layers::prelu_forward(inp, p[0]),
                LayerSpec::AdaptiveSigmoid => layers::sigmoid_forward(inp, p[0]),
            };
            if out.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            acts.push(out);
        }
        Ok(Tape { activations: acts, fingerprint: self.fingerprint() })
    }

    /// Maps the sigmoid output of a tape onto a scaling field in `[eps, 1]`.
    pub fn gamma(&self, tape: &Tape, grid: &GridSpec) -> Result<ScalarField> {
        let out = tape.output();
        if (grid.nx(), grid.ny()) != (out.h, out.w) {
            return Err(Error::Shape(format!(
                "network output {}x{} vs grid {}x{}",
                out.h,
                out.w,
                grid.nx(),
                grid.ny()
            )));
        }
        let eps = self.eps;
        let mut vals = vec![0.0; grid.len()];
        for i in 0..out.h {
            for j in 0..out.w {
                vals[grid.index(i, j)] = eps + (1.0 - eps) * out.data[i * out.w + j];
            }
        }
        ScalarField::new(*grid, vals)
    }

    /// Convenience: forward pass straight to the scaling field.
    pub fn predict(&self, x: &Tensor, lx: f64, ly: f64) -> Result<ScalarField> {
        let tape = self.forward(x)?;
        self.gamma(&tape, &self.output_grid(lx, ly)?)
    }

    /// Gradient of `sum(upstream * gamma)` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, upstream: &ScalarField) -> Result<Vec<f64>> {
        if tape.activations.len() != self.layers.len() + 1 || tape.fingerprint != self.fingerprint() {
            return Err(Error::InvalidInput("tape does not belong to these parameters".into()));
        }
        let out = tape.output();
        let grid = upstream.grid();
        if (grid.nx(), grid.ny()) != (out.h, out.w) {
            return Err(Error::Shape("upstream field does not match network output".into()));
        }
        let mut g = Tensor::zeros(1, out.h, out.w);
        let scale = 1.0 - self.eps;
        for i in 0..out.h {
            for j in 0..out.w {
                g.data[i * out.w + j] = scale * upstream.values()[grid.index(i, j)];
            }
        }
        let mut grad = vec![0.0; self.weights.len()];
        for l in (0..self.layers.len()).rev() {
            let x = &tape.activations[l];
            let r = self.layer_range(l);
            let p = &self.weights[r.clone()];
            g = match self.layers[l] {
                LayerSpec::Conv2d { out_channels, .. } => {
                    layers::conv3x3_backward(x, p, out_channels, &g, &mut grad[r])
                }
                LayerSpec::Avgpool2x2 => layers::avgpool2_backward(x.shape(), &g),
                LayerSpec::UpsampleNearest2x => layers::upsample2_backward(x.shape(), &g),
                LayerSpec::Prelu => {
                    let (gx, gs) = layers::prelu_backward(x, p[0], &g);
                    grad[r.start] += gs;
                    gx
                }
                LayerSpec::AdaptiveSigmoid => {
                    let (gx, ga) = layers::sigmoid_backward(x, p[0], &g);
                    grad[r.start] += ga;
                    gx
                }
            };
        }
        Ok(grad)
    }

    // Cheap identity check that a tape was produced by the current weights.
    fn fingerprint(&self) -> u64 {
        self.weights.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, w| {
            (h ^ w.to_bits()).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_architecture_shapes() {
        let a = Architecture::default_for(8);
        assert_eq!(a.output_dims().unwrap(), (64, 32));
        assert_eq!(a.layers().len(), 17);
        assert_eq!(a.encoder_layers(), 6);
    }

    #[test]
    fn bad_compositions_are_rejected() {
        let mut a = Architecture::default_for(8);
        a.input_h = 30;
        assert!(NetworkParams::new(a, 1e-3).is_err());
        assert!(NetworkParams::new(Architecture::default_for(8), 0.0).is_err());
    }

    #[test]
    fn freeze_prefix_bounds() {
        let mut p = NetworkParams::new(Architecture::default_for(2), 1e-3).unwrap();
        p.freeze_prefix(0).unwrap();
        assert!(p.freeze_mask().iter().all(|&f| !f));
        p.freeze_prefix(17).unwrap();
        assert!(p.freeze_mask().iter().all(|&f| f));
        assert!(p.freeze_prefix(18).is_err());
    }

    #[test]
    fn glorot_is_deterministic_and_zeroes_biases() {
        let mut a = NetworkParams::new(Architecture::default_for(4), 1e-3).unwrap();
        let mut b = a.clone();
        a.glorot_init(9);
        b.glorot_init(9);
        assert_eq!(a.weights(), b.weights());
        for (l, spec) in a.layers().iter().enumerate() {
            let w = &a.weights()[a.layer_range(l)];
            match *spec {
                LayerSpec::Conv2d { in_channels, out_channels } => {
                    assert!(w[in_channels * out_channels * 9..].iter().all(|&v| v == 0.0))
                }
                LayerSpec::Prelu => assert_eq!(w, &[0.25]),
                LayerSpec::AdaptiveSigmoid => assert_eq!(w, &[1.0]),
                _ => assert!(w.is_empty()),
            }
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut p = NetworkParams::new(Architecture::default_for(1), 1e-3).unwrap();
        p.glorot_init(1);
        let x = Tensor::zeros(1, 32, 16);
        let tape = p.forward(&x).unwrap();
        p.weights_mut()[0] += 1.0;
        let g = p.output_grid(2.0, 1.0).unwrap();
        assert!(p.backward(&tape, &ScalarField::constant(g, 1.0)).is_err());
    }
}
