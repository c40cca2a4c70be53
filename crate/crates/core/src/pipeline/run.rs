use std::time::Instant;

use super::layout::{plan_layout, SegmentBlock, SegmentedLayout};
use super::vocab::{EOS, SPLIT};
use crate::error::{Error, Result};
use crate::membank::MemoryBank;
use crate::model::{forward_block_graph, past_from_bank, BlockOutputs, BlockRows, ModelParams};
use crate::numcore::{Graph, GraphStats, Scalar, Tensor};
use crate::tasks::TaskSample;

/// Resource measurements of one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileReport {
    pub peak_attention_width: usize,
    pub bank_entries_final: usize,
    /// Largest activation count held by any single forward call, bank included.
    pub peak_live_scalars: usize,
    pub wall_ms: f64,
    pub segments: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankStats {
    pub entries: usize,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub answer_tokens: Vec<usize>,
    pub bank_stats: BankStats,
    pub profile: ProfileReport,
    pub layout: SegmentedLayout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeOptions {
    /// When false every segment starts from an empty bank, so the answer sees
    /// only the last segment's memory.
    pub history: bool,
    /// Copies of each frame token fed to the model.
    pub tokens_per_frame: usize,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self { history: true, tokens_per_frame: 1 }
    }
}

fn merge(a: GraphStats, b: GraphStats) -> GraphStats {
    GraphStats {
        peak_attention_width: a.peak_attention_width.max(b.peak_attention_width),
        live_scalars: a.live_scalars.max(b.live_scalars),
    }
}

/// Runs one segment block and returns the bank with its memory appended.
pub fn process_segment(
    model: &ModelParams,
    bank: &MemoryBank,
    block: &SegmentBlock,
    question: &[usize],
) -> Result<(MemoryBank, GraphStats)> {
    let q = question.len();
    let mut tokens = block.frames.clone();
    tokens.extend_from_slice(question);
    let token_positions: Vec<usize> = (block.start_pos..block.question_pos() + q).collect();
    let mem_positions: Vec<usize> = (block.mem_pos(q)..block.split_pos(q)).collect();
    let rows = BlockRows { tokens: &tokens, token_positions: &token_positions, mem_positions: &mem_positions };
    let mut g = Graph::new(&model.params, false);
    let past = past_from_bank(&mut g, bank);
    let res = forward_block_graph(&mut g, model, &past, &rows, BlockOutputs::MemoryOnly)?;
    let mem = res
        .mem_kv
        .iter()
        .map(|kv| {
            let (k, v) = kv.expect("segments always carry memory rows");
            (g.value(k).clone(), g.value(v).clone())
        })
        .collect();
    let mut next = bank.clone();
    next.append(mem, &mem_positions)?;
    Ok((next, g.stats()))
}

fn argmax(row: &[Scalar]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy answer from the bank and the question alone.
///
/// The context is the bank followed by `<split>, question` placed right after
/// the last stored memory token. Generated tokens extend a transient cache of
/// regular keys and values that never enters the bank.
pub fn decode_answer(model: &ModelParams, bank: &MemoryBank, question: &[usize], max_new: usize) -> Result<Vec<usize>> {
    decode_with_stats(model, bank, question, max_new).map(|(t, _, _)| t)
}

/// [`decode_answer`] plus merged graph statistics and the number of forward calls.
pub fn decode_with_stats(
    model: &ModelParams,
    bank: &MemoryBank,
    question: &[usize],
    max_new: usize,
) -> Result<(Vec<usize>, GraphStats, usize)> {
    let split_pos = match bank.positions().last() {
        Some(&p) => p + 1,
        None => return Err(Error::State("cannot decode from an empty memory bank".into())),
    };
    let n_layers = model.config.n_layers;
    let mut out = Vec::new();
    let mut stats = GraphStats::default();
    let mut calls = 0;
    let mut cache: Vec<(Tensor, Tensor)> =
        (0..n_layers).map(|l| (bank.layer(l).keys.clone(), bank.layer(l).values.clone())).collect();
    let mut tokens = vec![SPLIT];
    tokens.extend_from_slice(question);
    let mut positions: Vec<usize> = (split_pos..split_pos + tokens.len()).collect();
    while out.len() < max_new {
        let rows = BlockRows { tokens: &tokens, token_positions: &positions, mem_positions: &[] };
        let mut g = Graph::new(&model.params, false);
        let past = cache
            .iter()
            .map(|(k, v)| if k.rows() == 0 { None } else { Some((g.constant(k.clone()), g.constant(v.clone()))) })
            .collect();
        let res = forward_block_graph(&mut g, model, &past, &rows, BlockOutputs::Logits { from_row: tokens.len() - 1 })?;
        calls += 1;
        stats = merge(stats, g.stats());
        let logits = g.value(res.logits.expect("logits requested"));
        let next = argmax(logits.row(logits.rows() - 1));
        if next == EOS {
            break;
        }
        out.push(next);
        if out.len() == max_new {
            break;
        }
        for (l, kv) in res.reg_kv.iter().enumerate() {
            let (k, v) = kv.expect("every layer computes regular keys during decoding");
            let (ck, cv) = &cache[l];
            cache[l] = (Tensor::concat_rows(&[ck, g.value(k)])?, Tensor::concat_rows(&[cv, g.value(v)])?);
        }
        let next_pos = positions.last().expect("non-empty") + 1;
        tokens = vec![next];
        positions = vec![next_pos];
    }
    Ok((out, stats, calls))
}

/// Expands each frame token to `tokens_per_frame` copies.
pub fn frame_tokens(frames: &[usize], tokens_per_frame: usize) -> Vec<usize> {
    frames.iter().flat_map(|&f| std::iter::repeat_n(f, tokens_per_frame.max(1))).collect()
}

/// Plans, runs every segment, and decodes `sample.answer.len()` tokens.
pub fn run_episode(model: &ModelParams, sample: &TaskSample, opts: &EpisodeOptions) -> Result<EpisodeResult> {
    let start = Instant::now();
    let frames = frame_tokens(&sample.frames, opts.tokens_per_frame);
    let layout = plan_layout(&frames, &sample.question, &model.config)?;
    let empty = MemoryBank::new(model.config.n_layers, model.config.d_model);
    let mut bank = empty.clone();
    let mut stats = GraphStats::default();
    for block in &layout.segments {
        let input = if opts.history { &bank } else { &empty };
        let (next, s) = process_segment(model, input, block, &layout.question)?;
        stats = merge(stats, s);
        bank = next;
    }
    let (answer_tokens, s, _) = decode_with_stats(model, &bank, &layout.question, sample.answer.len())?;
    stats = merge(stats, s);
    let bank_stats = BankStats { entries: bank.len(), segments: bank.segments() };
    let profile = ProfileReport {
        peak_attention_width: stats.peak_attention_width,
        bank_entries_final: if opts.history { bank.len() } else { layout.bank_entries() },
        peak_live_scalars: stats.live_scalars,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        segments: layout.segments.len(),
    };
    Ok(EpisodeResult { answer_tokens, bank_stats, profile, layout })
}
