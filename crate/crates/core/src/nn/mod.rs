//! Minimal feed-forward layers with hand-written reverse passes.

mod conv;
mod network;
mod params;
mod spec;

pub use network::{infer_shapes, Layer, Network, Trace};
pub use params::{Grads, Owner, ParamStore, ParamTensor};
pub use spec::{format_layers, parse_layers, LayerSpec};
