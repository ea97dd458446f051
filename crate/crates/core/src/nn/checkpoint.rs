//! "WFC1" checkpoint: layer table, flat parameters and optional optimiser
//! state. All integers and floats little-endian.

use std::path::Path;

use super::adam::AdamState;
use super::network::{LayerSpec, NetworkParams};
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"WFC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub layers: Vec<LayerSpec>,
    pub frozen: Vec<bool>,
    pub weights: Vec<f64>,
    pub adam: Option<AdamState>,
}

fn kind_id(l: &LayerSpec) -> (u32, Vec<u32>) {
    match *l {
        LayerSpec::Conv2d { in_channels, out_channels } => {
            (0, vec![in_channels as u32, out_channels as u32, 3, 3])
        }
        LayerSpec::Avgpool2x2 => (1, vec![]),
        LayerSpec::UpsampleNearest2x => (2, vec![]),
        LayerSpec::Prelu => (3, vec![]),
        LayerSpec::AdaptiveSigmoid => (4, vec![]),
    }
}

fn layer_from(id: u32, shape: &[u32], path: &Path) -> Result<LayerSpec> {
    let l = match (id, shape) {
        (0, &[i, o, 3, 3]) if i > 0 && o > 0 => {
            LayerSpec::Conv2d { in_channels: i as usize, out_channels: o as usize }
        }
        (1, []) => LayerSpec::Avgpool2x2,
        (2, []) => LayerSpec::UpsampleNearest2x,
        (3, []) => LayerSpec::Prelu,
        (4, []) => LayerSpec::AdaptiveSigmoid,
        _ => return Err(Error::format(path, format!("unknown layer kind {id} with shape {shape:?}"))),
    };
    Ok(l)
}

impl Checkpoint {
    pub fn capture(p: &NetworkParams, adam: Option<&AdamState>) -> Self {
        Self {
            layers: p.layers().to_vec(),
            frozen: p.freeze_mask().to_vec(),
            weights: p.weights().to_vec(),
            adam: adam.cloned(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(MAGIC);
        w.u32(self.layers.len() as u32);
        for (l, &f) in self.layers.iter().zip(&self.frozen) {
            let (id, shape) = kind_id(l);
            w.u32(id);
            w.u32(shape.len() as u32);
            for s in shape {
                w.u32(s);
            }
            w.u8(f as u8);
        }
        w.f64s(&self.weights);
        match &self.adam {
            None => w.u8(0),
            Some(a) => {
                w.u8(1);
                w.u64(a.step);
                w.f64(a.lr);
                w.f64(a.beta1);
                w.f64(a.beta2);
                w.f64(a.eps);
                w.f64s(&a.m);
                w.f64s(&a.v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(MAGIC)?;
        let n = r.u32()? as usize;
        let mut layers = Vec::new();
        let mut frozen = Vec::new();
        for _ in 0..n {
            let id = r.u32()?;
            let ns = r.u32()? as usize;
            if ns > 8 {
                return Err(Error::format(path, format!("layer shape of rank {ns}")));
            }
            let shape = (0..ns).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            layers.push(layer_from(id, &shape, path)?);
            frozen.push(match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(Error::format(path, format!("frozen flag {b}"))),
            });
        }
        let count: usize = layers.iter().map(|l| l.param_count()).sum();
        let weights = r.f64s(count)?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let lr = r.f64()?;
                let beta1 = r.f64()?;
                let beta2 = r.f64()?;
                let eps = r.f64()?;
                let m = r.f64s(count)?;
                let v = r.f64s(count)?;
                Some(AdamState { step, lr, beta1, beta2, eps, m, v })
            }
            b => return Err(Error::format(path, format!("optimiser flag {b}"))),
        };
        r.finish()?;
        Ok(Self { layers, frozen, weights, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    /// Copies the stored parameters into `net`. The layer tables must agree.
    pub fn transfer_into(&self, net: &mut NetworkParams) -> Result<()> {
        if self.layers.as_slice() != net.layers() {
            let at = self
                .layers
                .iter()
                .zip(net.layers())
                .position(|(a, b)| a != b)
                .unwrap_or(self.layers.len().min(net.layers().len()));
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint has {} layers, network {}; first difference at layer {at}",
                self.layers.len(),
                net.layers().len()
            )));
        }
        net.set_weights(self.weights.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::Architecture;

    #[test]
    fn layout_starts_with_magic_and_layer_count() {
        let mut p = NetworkParams::new(Architecture::default_for(2), 1e-3).unwrap();
        p.glorot_init(3);
        let b = Checkpoint::capture(&p, None).to_bytes();
        assert_eq!(&b[..4], b"WFC1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 17);
        assert_eq!(*b.last().unwrap(), 0);
    }

    #[test]
    fn truncated_or_padded_files_are_rejected() {
        let mut p = NetworkParams::new(Architecture::default_for(1), 1e-3).unwrap();
        p.glorot_init(3);
        let b = Checkpoint::capture(&p, None).to_bytes();
        let path = Path::new("mem");
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1], path).is_err());
        let mut longer = b.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer, path).is_err());
    }

    #[test]
    fn mismatched_architecture_is_refused() {
        let mut a = NetworkParams::new(Architecture::default_for(2), 1e-3).unwrap();
        a.glorot_init(1);
        let mut b = NetworkParams::new(Architecture::default_for(3), 1e-3).unwrap();
        let err = Checkpoint::capture(&a, None).transfer_into(&mut b).unwrap_err();
        assert!(matches!(err, Error::ArchitectureMismatch(_)));
    }
}
