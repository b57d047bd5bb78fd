//! Small reverse-mode training engine: tensors, a layer DAG, Adam.

mod gemm;
mod kernels;
mod par;

pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;

pub use graph::{mse_loss, ForwardCache, GraphBuilder, Layer, ModelGraph, ModelState, NodeId};
pub use io::{fingerprint, load_weights, save_weights};
pub use layers::{ConvSpec, LayerSpec, Padding, TransposedConvSpec};
pub use optim::{adam_update, AdamSlot, AdamState};
pub use tensor::Tensor;
pub use train::{train, train_with, EpochRecord, Select, TrainConfig, TrainReport};
