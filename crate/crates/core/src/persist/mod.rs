//! Configuration files, the binary container, checkpoints and dumps.

mod checkpoint;
mod config;
pub mod container;

pub use checkpoint::{
    decode_checkpoint, decode_episode_dump, decode_samples, encode_checkpoint, encode_episode_dump, encode_samples,
    load_checkpoint, save_checkpoint, Checkpoint, EpisodeDump, RngState,
};
pub use config::{config_keys, parse_config, EvalConfig, PathsConfig, RunConfig};
