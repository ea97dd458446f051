use serde::{Deserialize, Serialize};

use super::layers::Tensor;
use crate::error::{Error, Result};
use crate::solver::SensorTraces;

/// Per-channel normalisation scale: the max-abs of the last trace quarter
/// over a set of reference traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        Self { scale: vec![1.0; channels] }
    }

    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a SensorTraces>) -> Result<Self> {
        let mut scale: Vec<f64> = Vec::new();
        for t in traces {
            if scale.is_empty() {
                scale = vec![0.0; t.n_sensors()];
            } else if scale.len() != t.n_sensors() {
                return Err(Error::Shape("traces with differing sensor counts".into()));
            }
            let q = t.nt() - t.nt() / 4;
            for (c, s) in scale.iter_mut().enumerate() {
                *s = t.trace(c)[q..].iter().fold(*s, |a, v| a.max(v.abs()));
            }
        }
        if scale.is_empty() {
            return Err(Error::InvalidInput("no traces to normalise against".into()));
        }
        for s in &mut scale {
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Ok(Self { scale })
    }
}

/// Network input: the last quarter of each trace folded into an `h x w`
/// plane, row-major in time, divided by the channel scale.
pub fn prepare_input(traces: &SensorTraces, norm: &NormStats, h: usize, w: usize) -> Result<Tensor> {
    let (c, nt) = (traces.n_sensors(), traces.nt());
    if nt % 4 != 0 || nt / 4 != h * w {
        return Err(Error::Shape(format!(
            "trace length {nt} does not fold into a {h}x{w} input (need {})",
            4 * h * w
        )));
    }
    if norm.scale.len() != c {
        return Err(Error::Shape(format!("{} normalisation scales for {c} sensors", norm.scale.len())));
    }
    let mut x = Tensor::zeros(c, h, w);
    let start = nt - nt / 4;
    for ch in 0..c {
        let s = norm.scale[ch];
        for (dst, v) in x.data[ch * h * w..(ch + 1) * h * w].iter_mut().zip(&traces.trace(ch)[start..]) {
            *dst = v / s;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_traces_give_zero_input() {
        let t = SensorTraces::zeros(3, 2048, 0.01);
        let x = prepare_input(&t, &NormStats::identity(3), 32, 16).unwrap();
        assert_eq!(x.shape(), (3, 32, 16));
        assert!(x.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn final_sample_lands_in_last_cell() {
        let mut data = vec![0.0; 2 * 2048];
        data[2048 + 2047] = 5.0;
        let t = SensorTraces::new(2, 2048, 0.01, data).unwrap();
        let x = prepare_input(&t, &NormStats::identity(2), 32, 16).unwrap();
        let nz: Vec<usize> = (0..x.data.len()).filter(|&k| x.data[k] != 0.0).collect();
        assert_eq!(nz, vec![512 + 31 * 16 + 15]);
    }

    #[test]
    fn wrong_length_is_a_shape_error() {
        let t = SensorTraces::zeros(1, 1000, 0.01);
        assert!(matches!(prepare_input(&t, &NormStats::identity(1), 32, 16), Err(Error::Shape(_))));
    }

    #[test]
    fn normalisation_uses_last_quarter_only() {
        let mut data = vec![0.0; 8];
        data[0] = 100.0;
        data[7] = -2.0;
        let t = SensorTraces::new(1, 8, 0.1, data).unwrap();
        assert_eq!(NormStats::from_traces([&t]).unwrap().scale, vec![2.0]);
    }
}
