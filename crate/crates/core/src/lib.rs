//! Memory-minimal inference for binarized neural networks.
//!
//! Every hidden activation is a single bit. Fused blocks compute one output
//! value at a time with a single real accumulator, so the only working
//! storage is two bit-packed buffers sized to the widest block output.

pub mod bitops;
pub mod codegen;
pub mod dataio;
pub mod error;
pub mod inference;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod presets;
pub mod random;
pub mod reference;
pub mod screening;
pub mod trainer;

pub use bitops::{BitTensor, BitView, Shape, SignBit};
pub use codegen::{generate, CodegenOptions, GeneratedCode};
pub use dataio::LabeledDataset;
pub use error::{Error, Result};
pub use inference::{network_forward, predict, BlockInput, InputTensor, Observer, Prediction, TempArena};
pub use memory::{memory_report, MemoryReport};
pub use metrics::{CostMetrics, DeviceProfile};
pub use model::{
    fold_bn, Block, BnFold, BnParams, ConvBlock, ElementKind, FcBlock, InputSpec, Network, PoolSpec,
};
pub use reference::{reference_forward, ReferenceOutput};
pub use screening::{enumerate, screen, Candidate, Family, ScreenConfig, ScreenReport, SearchSpace};
pub use trainer::{evaluate, train, Evaluation, TrainConfig};
