//! Segment recurrence over a token stream.
//!
//! [`plan_layout`] cuts the stream into segments and assigns positions,
//! [`process_segment`] turns one segment into memory-bank entries, and
//! [`decode_answer`] answers from the bank and the question alone.

mod layout;
mod run;
pub mod vocab;

pub use layout::{plan_layout, BlockInputs, FinalBlock, SegmentBlock, SegmentedLayout, SeqItem};
pub use run::{
    decode_answer, decode_with_stats, frame_tokens, process_segment, run_episode, BankStats, EpisodeOptions,
    EpisodeResult, ProfileReport,
};
pub use vocab::Vocabulary;
