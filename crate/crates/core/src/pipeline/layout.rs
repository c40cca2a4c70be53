use super::vocab::SPLIT;
use crate::error::{Error, Result};
use crate::model::{BlockRows, ModelConfig};

/// One recurrence step: `[frames, question, memory × mem_count, <split>]`
/// laid out from `start_pos`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentBlock {
    pub frames: Vec<usize>,
    pub mem_count: usize,
    pub start_pos: usize,
}

impl SegmentBlock {
    pub fn question_pos(&self) -> usize {
        self.start_pos + self.frames.len()
    }

    pub fn mem_pos(&self, q_len: usize) -> usize {
        self.question_pos() + q_len
    }

    pub fn split_pos(&self, q_len: usize) -> usize {
        self.mem_pos(q_len) + self.mem_count
    }

    /// Position just past this block's `<split>`.
    pub fn end(&self, q_len: usize) -> usize {
        self.split_pos(q_len) + 1
    }
}

/// `<split>, question` closing the organized sequence, followed by the answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FinalBlock {
    /// The last segment's `<split>`.
    pub split_pos: usize,
    pub question_pos: usize,
    pub answer_pos: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedLayout {
    pub question: Vec<usize>,
    pub segments: Vec<SegmentBlock>,
    pub final_block: FinalBlock,
}

/// Element of the organized sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqItem {
    Token(usize),
    /// Memory row with this slot index within its block.
    Memory(usize),
}

/// Owned tokens and positions of one forward call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInputs {
    pub tokens: Vec<usize>,
    pub token_positions: Vec<usize>,
    pub mem_positions: Vec<usize>,
}

impl BlockInputs {
    pub fn rows(&self) -> BlockRows<'_> {
        BlockRows { tokens: &self.tokens, token_positions: &self.token_positions, mem_positions: &self.mem_positions }
    }
}

/// Splits `frames` into segments of `cfg.seg_len` tokens (the last may be
/// shorter), gives each `max(1, ceil(N/alpha))` memory tokens, and assigns
/// cumulative positions.
pub fn plan_layout(frames: &[usize], question: &[usize], cfg: &ModelConfig) -> Result<SegmentedLayout> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("an episode needs at least one frame token".into()));
    }
    if cfg.seg_len == 0 || cfg.alpha == 0 {
        return Err(Error::Config("seg_len and alpha must be positive".into()));
    }
    let q = question.len();
    let mut segments = Vec::with_capacity(frames.len().div_ceil(cfg.seg_len));
    let mut pos = 0;
    for chunk in frames.chunks(cfg.seg_len) {
        let k = cfg.memory_count(chunk.len());
        if k > cfg.max_memory_slots {
            return Err(Error::Config(format!(
                "segment of {} tokens needs {k} memory tokens; model.max_memory_slots is {}",
                chunk.len(),
                cfg.max_memory_slots
            )));
        }
        let block = SegmentBlock { frames: chunk.to_vec(), mem_count: k, start_pos: pos };
        pos = block.end(q);
        segments.push(block);
    }
    let split_pos = pos - 1;
    let final_block = FinalBlock { split_pos, question_pos: split_pos + 1, answer_pos: split_pos + 1 + q };
    if final_block.answer_pos > cfg.max_position {
        return Err(Error::Range { position: final_block.answer_pos, max: cfg.max_position });
    }
    Ok(SegmentedLayout { question: question.to_vec(), segments, final_block })
}

impl SegmentedLayout {
    pub fn memory_counts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.mem_count).collect()
    }

    /// Bank entries per layer once every segment is processed.
    pub fn bank_entries(&self) -> usize {
        self.segments.iter().map(|s| s.mem_count).sum()
    }

    /// Inputs of segment `i`. Its `<split>` is causally after every stored
    /// row and never stored itself, so it is not part of the forward call.
    pub fn block_inputs(&self, i: usize) -> BlockInputs {
        let s = &self.segments[i];
        let q = self.question.len();
        let mut tokens = s.frames.clone();
        tokens.extend_from_slice(&self.question);
        BlockInputs {
            tokens,
            token_positions: (s.start_pos..s.question_pos() + q).collect(),
            mem_positions: (s.mem_pos(q)..s.split_pos(q)).collect(),
        }
    }

    /// `[<split>, question, answer_prefix]` at their positions.
    pub fn final_inputs(&self, answer_prefix: &[usize]) -> BlockInputs {
        let f = self.final_block;
        let mut tokens = vec![SPLIT];
        tokens.extend_from_slice(&self.question);
        tokens.extend_from_slice(answer_prefix);
        let mut token_positions = vec![f.split_pos];
        token_positions.extend(f.question_pos..f.answer_pos + answer_prefix.len());
        BlockInputs { tokens, token_positions, mem_positions: Vec::new() }
    }

    /// The full organized sequence: every block's frames, question, memory
    /// rows and `<split>`, then the trailing question.
    pub fn organized_sequence(&self) -> Vec<SeqItem> {
        let mut out = Vec::new();
        for s in &self.segments {
            out.extend(s.frames.iter().map(|&t| SeqItem::Token(t)));
            out.extend(self.question.iter().map(|&t| SeqItem::Token(t)));
            out.extend((0..s.mem_count).map(SeqItem::Memory));
            out.push(SeqItem::Token(SPLIT));
        }
        out.extend(self.question.iter().map(|&t| SeqItem::Token(t)));
        out
    }

    /// Widest attention of an episode that runs `decode_steps` answer-side
    /// forward calls: a segment attends over `P + N + |Q| + k` keys, answer
    /// step `j` over `P_final + 1 + |Q| + j`.
    pub fn peak_attention_width(&self, decode_steps: usize) -> usize {
        let q = self.question.len();
        let mut p = 0;
        let mut peak = 0;
        for s in &self.segments {
            peak = peak.max(p + s.frames.len() + q + s.mem_count);
            p += s.mem_count;
        }
        if decode_steps > 0 {
            peak = peak.max(p + q + decode_steps);
        }
        peak
    }

    /// Same quantity when history is disabled: every segment starts from an
    /// empty bank and the answer sees only the last segment's memory.
    pub fn peak_attention_width_without_history(&self, decode_steps: usize) -> usize {
        let q = self.question.len();
        let mut peak = self.segments.iter().map(|s| s.frames.len() + q + s.mem_count).max().unwrap_or(0);
        if decode_steps > 0 {
            let last = self.segments.last().map_or(0, |s| s.mem_count);
            peak = peak.max(last + q + decode_steps);
        }
        peak
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seg_len: usize, alpha: usize) -> ModelConfig {
        ModelConfig { seg_len, alpha, max_memory_slots: 64, ..Default::default() }
    }

    #[test]
    fn memory_counts_follow_rounding_rule() {
        let q = [4, 7];
        assert_eq!(plan_layout(&[9; 64], &q, &cfg(32, 16)).unwrap().memory_counts(), vec![2, 2]);
        let l = plan_layout(&[9; 33], &q, &cfg(32, 16)).unwrap();
        assert_eq!(l.memory_counts(), vec![2, 1]);
        assert_eq!(l.segments[1].frames.len(), 1);
        assert_eq!(plan_layout(&[9; 5], &q, &cfg(32, 64)).unwrap().memory_counts(), vec![1]);
    }

    #[test]
    fn positions_are_cumulative() {
        let l = plan_layout(&[9; 10], &[4, 7], &cfg(4, 2)).unwrap();
        // blocks: 4 frames + 2 question + 2 memory + split = 9 positions, then 9, then 2+2+1+1 = 6
        let starts: Vec<usize> = l.segments.iter().map(|s| s.start_pos).collect();
        assert_eq!(starts, vec![0, 9, 18]);
        assert_eq!(l.final_block, FinalBlock { split_pos: 23, question_pos: 24, answer_pos: 26 });
        let b = l.block_inputs(1);
        assert_eq!(b.token_positions, vec![9, 10, 11, 12, 13, 14]);
        assert_eq!(b.mem_positions, vec![15, 16]);
        let f = l.final_inputs(&[40]);
        assert_eq!(f.tokens, vec![SPLIT, 4, 7, 40]);
        assert_eq!(f.token_positions, vec![23, 24, 25, 26]);
    }

    #[test]
    fn organized_sequence_positions_match_blocks() {
        let l = plan_layout(&(10..23).collect::<Vec<_>>(), &[4, 7], &cfg(5, 2)).unwrap();
        let seq = l.organized_sequence();
        assert_eq!(seq.len(), l.final_block.answer_pos);
        for (i, s) in l.segments.iter().enumerate() {
            let b = l.block_inputs(i);
            for (t, &p) in b.tokens.iter().zip(&b.token_positions) {
                assert_eq!(seq[p], SeqItem::Token(*t));
            }
            for (m, &p) in b.mem_positions.iter().enumerate() {
                assert_eq!(seq[p], SeqItem::Memory(m));
            }
            assert_eq!(seq[s.split_pos(2)], SeqItem::Token(SPLIT));
        }
        let f = l.final_inputs(&[]);
        for (t, &p) in f.tokens.iter().zip(&f.token_positions) {
            assert_eq!(seq[p], SeqItem::Token(*t));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(plan_layout(&[], &[4], &cfg(4, 2)), Err(Error::InvalidInput(_))));
        let tight = ModelConfig { seg_len: 32, alpha: 1, max_memory_slots: 8, ..Default::default() };
        assert!(matches!(plan_layout(&[9; 16], &[4], &tight), Err(Error::Config(_))));
        let short = ModelConfig { max_position: 20, ..cfg(8, 4) };
        assert!(matches!(plan_layout(&[9; 40], &[4], &short), Err(Error::Range { .. })));
    }

    #[test]
    fn closed_form_width_at_scale() {
        let l = plan_layout(&[9; 4096], &[4, 7], &cfg(32, 16)).unwrap();
        assert_eq!(l.bank_entries(), 256);
        assert_eq!(l.peak_attention_width(1), 254 + 32 + 2 + 2);
        assert!(l.peak_attention_width(1) <= 256 + 32 + 2 + 2 + 1);
    }
}
