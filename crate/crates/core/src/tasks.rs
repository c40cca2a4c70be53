//! Synthetic long-stream tasks with known clue frames.
//!
//! Every frame is one token. Timestamps are frame indices (one frame per
//! second).

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::vocab::{Vocabulary, N_DIGITS, N_ENTITIES, N_FILLERS, N_KEYS, N_VALUES, QUERY, SEP};

/// Hex digits used to write one timestamp in a grounded answer.
pub const TIMESTAMP_DIGITS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// One key/value pair in filler; asks for the value of the key.
    Needle,
    /// Overwrite events on several entities; asks for one entity's chain of written values.
    MultiClue,
    /// [`TaskKind::MultiClue`] whose answer also lists the clue timestamps.
    MultiClueGrounded,
    /// Marked value tokens in filler; asks for all of them in order.
    Summary,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Needle => "needle",
            TaskKind::MultiClue => "multiclue",
            TaskKind::MultiClueGrounded => "multiclue-grounded",
            TaskKind::Summary => "summary",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "needle" => TaskKind::Needle,
            "multiclue" => TaskKind::MultiClue,
            "multiclue-grounded" => TaskKind::MultiClueGrounded,
            "summary" => TaskKind::Summary,
            other => return Err(Error::Format(format!("unknown task kind {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub kind: TaskKind,
    pub seed: u64,
    pub frames: Vec<usize>,
    pub question: Vec<usize>,
    pub answer: Vec<usize>,
    /// Sorted clue frame indices, in seconds.
    pub clue_timestamps: Vec<f64>,
}

fn fillers(rng: &mut ChaCha8Rng, t: usize) -> Vec<usize> {
    (0..t).map(|_| Vocabulary::filler(rng.gen_range(0..N_FILLERS))).collect()
}

/// Needle frame for a depth in `[0, 1]`: `floor(depth · (T − 1))`.
pub fn needle_index(t: usize, depth: f64) -> usize {
    ((depth * (t - 1) as f64).floor() as usize).min(t - 1)
}

/// Plants a value token at [`needle_index`] with its key in the frame before
/// it (after it when the needle is frame 0).
pub fn gen_needle(seed: u64, t: usize, depth: f64) -> Result<TaskSample> {
    if t == 0 {
        return Err(Error::InvalidInput("haystack length must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&depth) {
        return Err(Error::InvalidInput(format!("needle depth {depth} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = Vocabulary::key(rng.gen_range(0..N_KEYS));
    let value = Vocabulary::value(rng.gen_range(0..N_VALUES));
    let mut frames = fillers(&mut rng, t);
    let i = needle_index(t, depth);
    frames[i] = value;
    if t > 1 {
        frames[if i == 0 { 1 } else { i - 1 }] = key;
    }
    Ok(TaskSample {
        kind: TaskKind::Needle,
        seed,
        frames,
        question: vec![QUERY, key],
        answer: vec![value],
        clue_timestamps: vec![i as f64],
    })
}

/// `n` non-overlapping two-frame slots in `0..t`, sorted.
fn event_slots(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Option<Vec<usize>> {
    if 2 * n > t {
        return None;
    }
    let mut picks = sample(rng, t - n, n).into_vec();
    picks.sort_unstable();
    Some(picks.iter().enumerate().map(|(j, s)| s + j).collect())
}

fn grounded_suffix(timestamps: &[usize]) -> Vec<usize> {
    let mut out = vec![SEP];
    for &ts in timestamps {
        for d in (0..TIMESTAMP_DIGITS).rev() {
            out.push(Vocabulary::digit((ts / N_DIGITS.pow(d as u32)) % N_DIGITS));
        }
    }
    out
}

/// Reads the timestamps after the separator of a grounded answer; `None` if malformed.
pub fn parse_grounded_timestamps(answer: &[usize]) -> Option<Vec<f64>> {
    let sep = answer.iter().position(|&t| t == SEP)?;
    let digits = &answer[sep + 1..];
    if !digits.len().is_multiple_of(TIMESTAMP_DIGITS) {
        return None;
    }
    digits
        .chunks(TIMESTAMP_DIGITS)
        .map(|c| c.iter().try_fold(0usize, |acc, &t| Vocabulary::digit_index(t).map(|d| acc * N_DIGITS + d)))
        .map(|ts| ts.map(|x| x as f64))
        .collect()
}

/// Values written to `entity` by the events whose value frames are `clue_frames`, in order.
fn write_chain(frames: &[usize], entity: usize, clue_frames: &[usize]) -> Vec<usize> {
    clue_frames.iter().filter(|&&f| frames[f - 1] == entity).map(|&f| frames[f]).collect()
}

fn multiclue(seed: u64, t: usize, n_clues: usize, n_distractors: usize, grounded: bool) -> Result<TaskSample> {
    if n_clues < 2 {
        return Err(Error::InvalidInput("multi-clue samples need at least two clues".into()));
    }
    if t < n_clues + n_distractors {
        return Err(Error::InvalidInput(format!("T={t} cannot hold {} clue events", n_clues + n_distractors)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_events = n_clues + n_distractors;
    const ATTEMPTS: usize = 8;
    for _ in 0..ATTEMPTS {
        let slots = match event_slots(&mut rng, t, n_events) {
            Some(s) => s,
            None => continue,
        };
        let target = rng.gen_range(0..N_ENTITIES);
        let target_events: Vec<usize> = sample(&mut rng, n_events, n_clues).into_vec();
        let mut frames = fillers(&mut rng, t);
        let mut clue_frames = Vec::with_capacity(n_clues);
        for (j, &s) in slots.iter().enumerate() {
            let entity = if target_events.contains(&j) {
                clue_frames.push(s + 1);
                target
            } else {
                (target + rng.gen_range(1..N_ENTITIES)) % N_ENTITIES
            };
            frames[s] = Vocabulary::entity(entity);
            frames[s + 1] = Vocabulary::value(rng.gen_range(0..N_VALUES));
        }
        clue_frames.sort_unstable();
        let entity = Vocabulary::entity(target);
        let chain = write_chain(&frames, entity, &clue_frames);
        let all_values: Vec<usize> = slots.iter().map(|s| s + 1).collect();
        if write_chain(&frames, entity, &all_values) != chain {
            continue;
        }
        let needs_every_clue = (0..clue_frames.len()).all(|drop| {
            let rest: Vec<usize> =
                clue_frames.iter().enumerate().filter(|&(j, _)| j != drop).map(|(_, &f)| f).collect();
            write_chain(&frames, entity, &rest) != chain
        });
        if !needs_every_clue {
            continue;
        }
        let mut answer = chain;
        let kind = if grounded {
            answer.extend(grounded_suffix(&clue_frames));
            TaskKind::MultiClueGrounded
        } else {
            TaskKind::MultiClue
        };
        return Ok(TaskSample {
            kind,
            seed,
            frames,
            question: vec![QUERY, entity],
            answer,
            clue_timestamps: clue_frames.iter().map(|&f| f as f64).collect(),
        });
    }
    Err(Error::Generator(format!(
        "could not place {n_events} two-frame events in {t} frames after {ATTEMPTS} attempts"
    )))
}

/// Events are an entity frame followed by a value frame that overwrites the
/// entity's slot. The question names one entity and the answer is the
/// sequence of values written to it, oldest first, ending with its final
/// value; dropping or reordering any of its events changes the answer. Clue
/// timestamps are the value frames of the queried entity.
pub fn gen_multiclue(seed: u64, t: usize, n_clues: usize, n_distractors: usize) -> Result<TaskSample> {
    multiclue(seed, t, n_clues, n_distractors, false)
}

/// [`gen_multiclue`] with the answer `v₁ … vₙ <sep> ts₁ ts₂ …`, each timestamp
/// written as [`TIMESTAMP_DIGITS`] base-16 digit tokens.
pub fn gen_multiclue_grounded(seed: u64, t: usize, n_clues: usize, n_distractors: usize) -> Result<TaskSample> {
    if t > N_DIGITS.pow(TIMESTAMP_DIGITS as u32) {
        return Err(Error::InvalidInput(format!("T={t} does not fit in {TIMESTAMP_DIGITS} timestamp digits")));
    }
    multiclue(seed, t, n_clues, n_distractors, true)
}

/// Marks `n_marked` distinct frames with value tokens; the answer lists them in order.
pub fn gen_summary(seed: u64, t: usize, n_marked: usize) -> Result<TaskSample> {
    if n_marked == 0 || n_marked > t {
        return Err(Error::InvalidInput(format!("cannot mark {n_marked} of {t} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = fillers(&mut rng, t);
    let mut at = sample(&mut rng, t, n_marked).into_vec();
    at.sort_unstable();
    for &i in &at {
        frames[i] = Vocabulary::value(rng.gen_range(0..N_VALUES));
    }
    Ok(TaskSample {
        kind: TaskKind::Summary,
        seed,
        answer: at.iter().map(|&i| frames[i]).collect(),
        frames,
        question: vec![QUERY],
        clue_timestamps: at.iter().map(|&i| i as f64).collect(),
    })
}

/// Answer recomputed from the question and the clue frames alone.
pub fn solve_from_clues(s: &TaskSample) -> Option<Vec<usize>> {
    let clue: Vec<usize> = s.clue_timestamps.iter().map(|&t| t as usize).collect();
    if clue.iter().any(|&i| i >= s.frames.len()) {
        return None;
    }
    match s.kind {
        TaskKind::Needle => {
            let (&i, key) = (clue.first()?, *s.question.get(1)?);
            let neighbour = if i == 0 { s.frames.get(1) } else { s.frames.get(i - 1) };
            if s.frames.len() > 1 && neighbour != Some(&key) {
                return None;
            }
            Vocabulary::value_index(s.frames[i])?;
            Some(vec![s.frames[i]])
        }
        TaskKind::MultiClue | TaskKind::MultiClueGrounded => {
            let entity = *s.question.get(1)?;
            if clue.iter().any(|&i| i == 0 || s.frames[i - 1] != entity) {
                return None;
            }
            let mut answer = write_chain(&s.frames, entity, &clue);
            if s.kind == TaskKind::MultiClueGrounded {
                answer.extend(grounded_suffix(&clue));
            }
            Some(answer)
        }
        TaskKind::Summary => Some(clue.iter().map(|&i| s.frames[i]).collect()),
    }
}

/// Recipe for train/validation/test sample streams.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: TaskKind,
    /// Train, validation and test sizes.
    pub sizes: [usize; 3],
    pub t_min: usize,
    pub t_max: usize,
    /// First sample seed of each split; split `i` uses `seeds[i]..seeds[i] + sizes[i]`.
    pub seeds: [u64; 3],
    pub n_clues: usize,
    pub n_distractors: usize,
    pub n_marked: usize,
    /// Needle depths are drawn from this range.
    pub depth_range: (f64, f64),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Needle,
            sizes: [1000, 100, 100],
            t_min: 64,
            t_max: 512,
            seeds: [0, 10_000_000, 20_000_000],
            n_clues: 2,
            n_distractors: 4,
            n_marked: 4,
            depth_range: (0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitStreams {
    pub train: Vec<TaskSample>,
    pub val: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::Config(format!("task length range {}..={} is empty", self.t_min, self.t_max)));
        }
        let (lo, hi) = self.depth_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("depth range ({lo}, {hi}) not inside [0, 1]")));
        }
        let names = ["train", "val", "test"];
        for a in 0..3 {
            for b in a + 1..3 {
                let (sa, sb) = (self.seeds[a] as u128, self.seeds[b] as u128);
                let (ea, eb) = (sa + self.sizes[a] as u128, sb + self.sizes[b] as u128);
                if self.sizes[a] > 0 && self.sizes[b] > 0 && sa < eb && sb < ea {
                    return Err(Error::Config(format!("{} and {} seed ranges overlap", names[a], names[b])));
                }
            }
        }
        Ok(())
    }

    /// The sample with this seed.
    pub fn sample(&self, seed: u64) -> Result<TaskSample> {
        let mut meta = ChaCha8Rng::seed_from_u64(seed);
        meta.set_stream(1);
        let t = meta.gen_range(self.t_min..=self.t_max);
        match self.kind {
            TaskKind::Needle => {
                let (lo, hi) = self.depth_range;
                gen_needle(seed, t, lo + (hi - lo) * meta.gen::<f64>())
            }
            TaskKind::MultiClue => gen_multiclue(seed, t, self.n_clues, self.n_distractors),
            TaskKind::MultiClueGrounded => gen_multiclue_grounded(seed, t, self.n_clues, self.n_distractors),
            TaskKind::Summary => gen_summary(seed, t, self.n_marked),
        }
    }

    pub fn split(&self, which: usize) -> Result<Vec<TaskSample>> {
        (0..self.sizes[which] as u64).map(|i| self.sample(self.seeds[which] + i)).collect()
    }
}

pub fn gen_split(spec: &DatasetSpec) -> Result<SplitStreams> {
    spec.validate()?;
    Ok(SplitStreams { train: spec.split(0)?, val: spec.split(1)?, test: spec.split(2)? })
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("string write");
    }
    s
}

fn split_list<T: FromStr>(field: &str, line: usize) -> Result<Vec<T>> {
    field
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| Error::ConfigParse { line, msg: format!("bad list entry {x:?}") }))
        .collect()
}

/// One sample per line: `kind,seed,T,frames,question,answer,clue_ts`.
pub fn write_samples<W: Write>(mut w: W, samples: &[TaskSample]) -> Result<()> {
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.kind.as_str(),
            s.seed,
            s.frames.len(),
            join(&s.frames),
            join(&s.question),
            join(&s.answer),
            join(&s.clue_timestamps)
        )?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<TaskSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(Error::ConfigParse { line: n, msg: format!("expected 7 columns, found {}", cols.len()) });
        }
        let bad = |msg: String| Error::ConfigParse { line: n, msg };
        let kind = cols[0].parse().map_err(|e: Error| bad(e.to_string()))?;
        let seed = cols[1].parse().map_err(|_| bad(format!("bad seed {:?}", cols[1])))?;
        let t: usize = cols[2].parse().map_err(|_| bad(format!("bad length {:?}", cols[2])))?;
        let frames: Vec<usize> = split_list(cols[3], n)?;
        if frames.len() != t {
            return Err(bad(format!("T={t} but {} frames", frames.len())));
        }
        out.push(TaskSample {
            kind,
            seed,
            frames,
            question: split_list(cols[4], n)?,
            answer: split_list(cols[5], n)?,
            clue_timestamps: split_list(cols[6], n)?,
        });
    }
    Ok(out)
}
