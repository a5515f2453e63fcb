//! Sequence classifier: per-frame convolutional extractor, batch norm and
//! channel reduction, self-attention, stacked bidirectional LSTM and a
//! sigmoid head. All arithmetic is `f64` with hand-written gradients.

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod lstm;
mod network;
mod tensor;

pub use attention::{attention_map, self_attention, SelfAttentionParams};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointMeta,
};
pub use lstm::{bilstm_forward, LstmDirection, LstmLayer};
pub use network::{
    decide, sequence_input, BatchNormParams, ConvParams, ExtractorBlock, ExtractorParams, LinearParams, Mode,
    ModelConfig, ModelParams, Slot, TrainStep,
};
pub use tensor::Tensor;
