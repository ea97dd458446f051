//! Encoder-decoder network mapping sensor traces to a scaling field, with
//! hand-written reverse mode, Adam and layer freezing.

mod adam;
mod checkpoint;
mod input;
pub mod layers;
mod network;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use input::{prepare_input, NormStats};
pub use layers::Tensor;
pub use network::{Architecture, LayerSpec, NetworkParams, Tape};
