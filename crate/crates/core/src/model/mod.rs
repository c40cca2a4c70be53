//! Decoder-only transformer whose blocks carry question-aware memory rows.

mod config;
mod forward;
mod mask;
mod params;

pub use config::ModelConfig;
pub use forward::{
    attn_with_memory, embed_block, embed_rows, forward_block, forward_block_graph, past_from_bank, sinusoidal,
    AttnOutput, BlockOutputs, BlockResult, BlockRows, MemKv, PastKv,
};
pub use mask::{build_mask, AttnMask};
pub use params::{LayerIndex, ModelParams, ParamIndex, TrainableSet};
