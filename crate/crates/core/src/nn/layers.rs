//! Tensor kernels for the encoder-decoder: forward pass and vector-Jacobian
//! product of every layer kind.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }
}

/// 3x3 convolution, stride 1, zero padding 1. `weights` is laid out
/// `[out][in][ky][kx]`, followed by `out` biases.
pub fn conv3x3_forward(x: &Tensor, params: &[f64], out_ch: usize) -> Tensor {
    let (cin, h, w) = x.shape();
    let (weights, bias) = params.split_at(out_ch * cin * 9);
    let mut y = Tensor::zeros(out_ch, h, w);
    let plane = h * w;
    for o in 0..out_ch {
        let out = &mut y.data[o * plane..(o + 1) * plane];
        out.fill(bias[o]);
        for i in 0..cin {
            let src = x.plane(i);
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[((o * cin + i) * 3 + ky) * 3 + kx];
                    // output row r reads input row r + ky - 1
                    let (r0, r1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                    let (c0, c1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for r in r0..r1 {
                        let sr = r + ky - 1;
                        let orow = &mut out[r * w + c0..r * w + c1];
                        let irow = &src[sr * w + c0 + kx - 1..sr * w + c1 + kx - 1];
                        for (o_v, i_v) in orow.iter_mut().zip(irow) {
                            *o_v += wv * i_v;
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns the gradient with respect to the input and accumulates parameter
/// gradients into `grad_params` (same layout as the parameters).
pub fn conv3x3_backward(
    x: &Tensor,
    params: &[f64],
    out_ch: usize,
    upstream: &Tensor,
    grad_params: &mut [f64],
) -> Tensor {
    let (cin, h, w) = x.shape();
    let nw = out_ch * cin * 9;
    let weights = &params[..nw];
    let (gw, gb) = grad_params.split_at_mut(nw);
    let mut gx = Tensor::zeros(cin, h, w);
    let plane = h * w;
    for o in 0..out_ch {
        let up = upstream.plane(o);
        gb[o] += up.iter().sum::<f64>();
        for i in 0..cin {
            let src = x.plane(i);
            let gsrc = &mut gx.data[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * cin + i) * 3 + ky) * 3 + kx;
                    let wv = weights[widx];
                    let (r0, r1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                    let (c0, c1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let sr = r + ky - 1;
                        let urow = &up[r * w + c0..r * w + c1];
                        let off = sr * w + c0 + kx - 1;
                        let irow = &src[off..off + (c1 - c0)];
                        let grow = &mut gsrc[off..off + (c1 - c0)];
                        for ((u, iv), g) in urow.iter().zip(irow).zip(grow.iter_mut()) {
                            acc += u * iv;
                            *g += wv * u;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    gx
}

pub fn avgpool2_forward(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let src = x.plane(ch);
        for r in 0..oh {
            for q in 0..ow {
                let s = src[2 * r * w + 2 * q]
                    + src[2 * r * w + 2 * q + 1]
                    + src[(2 * r + 1) * w + 2 * q]
                    + src[(2 * r + 1) * w + 2 * q + 1];
                y.data[(ch * oh + r) * ow + q] = 0.25 * s;
            }
        }
    }
    y
}

pub fn avgpool2_backward(x_shape: (usize, usize, usize), upstream: &Tensor) -> Tensor {
    let (c, h, w) = x_shape;
    let mut g = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for r in 0..h {
            for q in 0..w {
                g.data[(ch * h + r) * w + q] =
                    0.25 * upstream.data[(ch * upstream.h + r / 2) * upstream.w + q / 2];
            }
        }
    }
    g
}

pub fn upsample2_forward(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        for r in 0..oh {
            for q in 0..ow {
                y.data[(ch * oh + r) * ow + q] = x.data[(ch * h + r / 2) * w + q / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward(x_shape: (usize, usize, usize), upstream: &Tensor) -> Tensor {
    let (c, h, w) = x_shape;
    let mut g = Tensor::zeros(c, h, w);
    let ow = upstream.w;
    for ch in 0..c {
        let up = upstream.plane(ch);
        for r in 0..upstream.h {
            for q in 0..ow {
                g.data[(ch * h + r / 2) * w + q / 2] += up[r * ow + q];
            }
        }
    }
    g
}

#[inline]
pub fn prelu(x: f64, slope: f64) -> f64 {
    x.max(0.0) + slope * x.min(0.0)
}

pub fn prelu_forward(x: &Tensor, slope: f64) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| prelu(v, slope)).collect(),
        ..*x
    }
}

/// Returns (input gradient, slope gradient).
pub fn prelu_backward(x: &Tensor, slope: f64, upstream: &Tensor) -> (Tensor, f64) {
    let mut gs = 0.0;
    let data = x
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&v, &u)| {
            if v > 0.0 {
                u
            } else {
                gs += v * u;
                slope * u
            }
        })
        .collect();
    (Tensor { data, ..*x }, gs)
}

#[inline]
pub fn adaptive_sigmoid(x: f64, steepness: f64) -> f64 {
    1.0 / (1.0 + (-steepness * x).exp())
}

pub fn sigmoid_forward(x: &Tensor, steepness: f64) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| adaptive_sigmoid(v, steepness)).collect(),
        ..*x
    }
}

/// Returns (input gradient, steepness gradient).
pub fn sigmoid_backward(x: &Tensor, steepness: f64, upstream: &Tensor) -> (Tensor, f64) {
    let mut ga = 0.0;
    let data = x
        .data
        .iter()
        .zip(&upstream.data)
        .map(|(&v, &u)| {
            let s = adaptive_sigmoid(v, steepness);
            let ds = s * (1.0 - s);
            ga += u * ds * v;
            u * ds * steepness
        })
        .collect();
    (Tensor { data, ..*x }, ga)
}
