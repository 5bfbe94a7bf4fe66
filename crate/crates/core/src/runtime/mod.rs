//! Deterministic CPU kernels, a recorded-forward executor and SGD.

pub mod exec;
pub mod kernels;
pub mod optim;
pub mod params;

pub use exec::{infer, layer_forward, Gradients, Tape};
pub use kernels::{Mode, BN_EPS, BN_MOMENTUM};
pub use optim::{sgd_step, sgd_update, OptState};
pub use params::{BnParams, ConvAttrs, ConvParams, LayerGrads, LayerTensors, PoolAttrs};
