//! Answer-only training through the segment recurrence.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::accuracy;
use crate::model::{forward_block_graph, BlockOutputs, ModelConfig, ModelParams, PastKv, TrainableSet};
use crate::numcore::{Graph, ParamGrads, Scalar, Var};
use crate::persist::{save_checkpoint, Checkpoint, RngState};
use crate::pipeline::vocab::BOS;
use crate::pipeline::{frame_tokens, plan_layout, EpisodeOptions, SegmentedLayout};
use crate::tasks::{DatasetSpec, TaskSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Only the memory embedding table and memory projections are updated.
    MemoryOnly,
    All,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MemoryOnly => "memory_only",
            Stage::All => "all",
        }
    }

    pub fn trainable(self) -> TrainableSet {
        match self {
            Stage::MemoryOnly => TrainableSet::MemoryOnly,
            Stage::All => TrainableSet::All,
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory_only" => Ok(Stage::MemoryOnly),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown training stage {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: Scalar,
    pub betas: (Scalar, Scalar),
    pub weight_decay: Scalar,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Stop gradients at the memory bank (truncated backpropagation).
    pub detach_memory: bool,
    /// Global gradient-norm ceiling; zero disables clipping.
    pub grad_clip: Scalar,
    /// Linear learning-rate ramp length in steps.
    pub warmup_steps: usize,
    /// Cosine-decay the learning rate to this fraction of `lr` by the last step; 1 keeps it constant.
    pub final_lr_fraction: Scalar,
    /// Evaluate validation accuracy every this many steps (0: only at the end).
    pub eval_every: usize,
    /// Validation samples used per evaluation (0: the whole split).
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::All,
            lr: 3e-4,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            batch_size: 8,
            steps: 1000,
            seed: 0,
            detach_memory: false,
            grad_clip: 1.0,
            warmup_steps: 0,
            final_lr_fraction: 1.0,
            eval_every: 0,
            eval_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("train.betas must lie in [0, 1)".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("train.steps and train.batch_size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("train.weight_decay and train.grad_clip must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("train.final_lr_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Learning rate used at 1-based step `t`.
    pub fn lr_at(&self, t: usize) -> Scalar {
        let warm = if self.warmup_steps > 0 && t <= self.warmup_steps {
            t as Scalar / self.warmup_steps as Scalar
        } else {
            1.0
        };
        let progress = (t.saturating_sub(1)) as f64 / (self.steps.max(2) - 1) as f64;
        let f = self.final_lr_fraction as f64;
        let decay = f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * warm * decay as Scalar
    }
}

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<Scalar>>,
    pub v: Vec<Vec<Scalar>>,
}

impl AdamState {
    pub fn new(model: &ModelParams) -> Self {
        let zeros = || model.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// Recorded graph of one teacher-forced episode.
pub struct EpisodeGraph {
    pub loss: Var,
    pub logits: Var,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub layout: SegmentedLayout,
}

fn concat_chunks(g: &mut Graph, chunks: &[Vec<(Var, Var)>]) -> Result<PastKv> {
    chunks
        .iter()
        .map(|layer| {
            if layer.is_empty() {
                return Ok(None);
            }
            if layer.len() == 1 {
                return Ok(Some(layer[0]));
            }
            let ks: Vec<Var> = layer.iter().map(|p| p.0).collect();
            let vs: Vec<Var> = layer.iter().map(|p| p.1).collect();
            Ok(Some((g.concat_rows(&ks)?, g.concat_rows(&vs)?)))
        })
        .collect()
}

/// Builds the whole episode in `g`: every segment block, then
/// `[<split>, question, answer[..l-1]]` with logits for the `l` rows that
/// predict answer tokens. Bank entries stay graph nodes, so gradients reach
/// earlier segments unless `detach_memory` turns them into constants.
pub fn episode_forward(
    g: &mut Graph,
    model: &ModelParams,
    sample: &TaskSample,
    tokens_per_frame: usize,
    detach_memory: bool,
) -> Result<EpisodeGraph> {
    let l = sample.answer.len();
    if l == 0 {
        return Err(Error::InvalidInput(format!("sample {} has an empty answer", sample.seed)));
    }
    let frames = frame_tokens(&sample.frames, tokens_per_frame);
    let layout = plan_layout(&frames, &sample.question, &model.config)?;
    let mut chunks: Vec<Vec<(Var, Var)>> = vec![Vec::new(); model.config.n_layers];
    for i in 0..layout.segments.len() {
        let inputs = layout.block_inputs(i);
        let past = concat_chunks(g, &chunks)?;
        let res = forward_block_graph(g, model, &past, &inputs.rows(), BlockOutputs::MemoryOnly)?;
        for (layer, kv) in chunks.iter_mut().zip(res.mem_kv) {
            let (k, v) = kv.expect("segments always carry memory rows");
            if detach_memory {
                let (kc, vc) = (g.value(k).clone(), g.value(v).clone());
                layer.push((g.constant(kc), g.constant(vc)));
            } else {
                layer.push((k, v));
            }
        }
    }
    let inputs = layout.final_inputs(&sample.answer[..l - 1]);
    let first_answer_row = layout.question.len();
    let past = concat_chunks(g, &chunks)?;
    let res = forward_block_graph(g, model, &past, &inputs.rows(), BlockOutputs::Logits { from_row: first_answer_row })?;
    let logits = res.logits.expect("logits requested");
    // Rows first_answer_row.. are the last question token and the teacher-forced
    // answer prefix; nothing from the stream, the memory or the question
    // interior is scored.
    let mask = vec![true; l];
    debug_assert_eq!(g.value(logits).rows(), l);
    debug_assert_eq!(inputs.token_positions[first_answer_row] + 1, layout.final_block.answer_pos);
    let targets = sample.answer.clone();
    let loss = g.cross_entropy(logits, &targets, &mask)?;
    Ok(EpisodeGraph { loss, logits, targets, mask, layout })
}

/// Mean answer-token negative log-likelihood of one sample.
pub fn episode_loss(model: &ModelParams, sample: &TaskSample, tokens_per_frame: usize) -> Result<Scalar> {
    let mut g = Graph::new(&model.params, false);
    let ep = episode_forward(&mut g, model, sample, tokens_per_frame, false)?;
    Ok(g.value(ep.loss).data()[0])
}

/// Loss and parameter gradients of one sample.
pub fn episode_gradients(
    model: &ModelParams,
    sample: &TaskSample,
    tokens_per_frame: usize,
    detach_memory: bool,
) -> Result<(Scalar, ParamGrads)> {
    let mut g = Graph::new(&model.params, true);
    let ep = episode_forward(&mut g, model, sample, tokens_per_frame, detach_memory)?;
    let loss = g.value(ep.loss).data()[0];
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss} on sample seed {}", sample.seed)));
    }
    Ok((loss, g.backward(ep.loss)?))
}

/// Divides the summed gradients by `n`, clips them to `cfg.grad_clip` by
/// global norm, and applies one bias-corrected adaptive-moment update with
/// decoupled weight decay to every tensor that has a gradient buffer.
/// Returns the pre-clipping norm.
pub fn apply_gradients(
    model: &mut ModelParams,
    grad_sums: &mut [Option<Vec<Scalar>>],
    n: Scalar,
    opt: &mut AdamState,
    cfg: &TrainConfig,
) -> Scalar {
    let mut sq = 0.0;
    for g in grad_sums.iter_mut().flatten() {
        for x in g.iter_mut() {
            *x /= n;
            sq += *x * *x;
        }
    }
    let grad_norm = sq.sqrt();
    let scale = if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip { cfg.grad_clip / grad_norm } else { 1.0 };

    opt.step += 1;
    let t = opt.step as i32;
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = cfg.lr_at(opt.step as usize);
    const EPS: Scalar = 1e-8;
    for (i, p) in model.params.iter_mut().enumerate() {
        if p.tensor.grad().is_none() {
            continue;
        }
        let zeros;
        let g: &[Scalar] = match &grad_sums[i] {
            Some(g) => g,
            None => {
                zeros = vec![0.0; p.tensor.len()];
                &zeros
            }
        };
        let (m, v) = (&mut opt.m[i], &mut opt.v[i]);
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            let gj = g[j] * scale;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let update = (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            *w -= lr * (update + cfg.weight_decay * *w);
        }
    }
    grad_norm
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: Scalar,
    /// Global gradient norm before clipping.
    pub grad_norm: Scalar,
}

/// Sums per-episode gradients in batch order and hands the mean to
/// [`apply_gradients`]. The trainable set follows `cfg.stage`.
pub fn train_step(
    model: &mut ModelParams,
    batch: &[TaskSample],
    opt: &mut AdamState,
    cfg: &TrainConfig,
    tokens_per_frame: usize,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    model.set_trainable(cfg.stage.trainable());
    let shared: &ModelParams = model;
    let per_episode: Vec<Result<(Scalar, ParamGrads)>> = batch
        .par_iter()
        .map(|s| episode_gradients(shared, s, tokens_per_frame, cfg.detach_memory))
        .collect();
    let n = batch.len() as Scalar;
    let mut loss = 0.0;
    let mut sum: Vec<Option<Vec<Scalar>>> = vec![None; model.params.len()];
    for r in per_episode {
        let (l, grads) = r?;
        loss += l;
        for (acc, g) in sum.iter_mut().zip(grads.grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.iter_mut().zip(g.data()).for_each(|(x, &y)| *x += y),
                    None => *acc = Some(g.into_data()),
                }
            }
        }
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {loss}")));
    }
    let grad_norm = apply_gradients(model, &mut sum, n, opt, cfg);
    Ok(StepStats { loss, grad_norm })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: Scalar,
    pub grad_norm: Scalar,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub eval_acc: Scalar,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    /// `step,loss,grad_norm,ms` rows.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,loss,grad_norm,ms\n");
        for r in &self.steps {
            s.push_str(&format!("{},{},{},{:.3}\n", r.step, r.loss, r.grad_norm, r.ms));
        }
        s
    }

    /// `step,eval_acc` rows.
    pub fn evals_csv(&self) -> String {
        let mut s = String::from("step,eval_acc\n");
        for r in &self.evals {
            s.push_str(&format!("{},{}\n", r.step, r.eval_acc));
        }
        s
    }

    pub fn parse(steps_csv: &str, evals_csv: &str) -> Result<Self> {
        fn rows(text: &str, header: &str) -> Result<Vec<Vec<String>>> {
            let mut lines = text.lines();
            if lines.next() != Some(header) {
                return Err(Error::Format(format!("expected header {header}")));
            }
            Ok(lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect())
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in log")))
        }
        let mut log = TrainLog::default();
        for r in rows(steps_csv, "step,loss,grad_norm,ms")? {
            if r.len() != 4 {
                return Err(Error::Format("step log rows have 4 columns".into()));
            }
            log.steps.push(StepRecord { step: num(&r[0])?, loss: num(&r[1])?, grad_norm: num(&r[2])?, ms: num(&r[3])? });
        }
        for r in rows(evals_csv, "step,eval_acc")? {
            if r.len() != 2 {
                return Err(Error::Format("eval log rows have 2 columns".into()));
            }
            log.evals.push(EvalRecord { step: num(&r[0])?, eval_acc: num(&r[1])? });
        }
        Ok(log)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("train_log.csv"), self.steps_csv())?;
        std::fs::write(dir.join("eval_log.csv"), self.evals_csv())?;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: ModelParams,
    pub opt: AdamState,
    pub log: TrainLog,
    pub rng: RngState,
}

/// Trains on the train split of `data` and evaluates on its validation split.
///
/// `init` continues from an earlier stage; otherwise weights are drawn from
/// `cfg.seed`. Batches are drawn by reshuffling the train split each epoch
/// with a generator seeded from `cfg.seed`, so a run is a pure function of
/// its inputs. With `out_dir` set, writes `checkpoint.bin`, `train_log.csv`
/// and `eval_log.csv` there.
pub fn run_training(
    data: &DatasetSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    tokens_per_frame: usize,
    init: Option<ModelParams>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    run_training_with(data, model_cfg, cfg, tokens_per_frame, init, out_dir, |_, _| {})
}

/// [`run_training`] that reports every step, and the evaluation made after
/// it if there was one, to `on_step`.
pub fn run_training_with(
    data: &DatasetSpec,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    tokens_per_frame: usize,
    init: Option<ModelParams>,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord, Option<&EvalRecord>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let mut model = match init {
        Some(m) => m,
        None => ModelParams::init(model_cfg, BOS, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
    };
    let train = data.split(0)?;
    let mut val = data.split(1)?;
    if cfg.eval_samples > 0 {
        val.truncate(cfg.eval_samples);
    }
    if train.is_empty() {
        return Err(Error::Config("the train split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = Vec::new();
    let mut opt = AdamState::new(&model);
    let mut log = TrainLog::default();
    let opts = EpisodeOptions { history: true, tokens_per_frame };
    for step in 1..=cfg.steps {
        let started = Instant::now();
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            batch.push(train[order.pop().expect("refilled")].clone());
        }
        let s = train_step(&mut model, &batch, &mut opt, cfg, tokens_per_frame)?;
        log.steps.push(StepRecord { step, loss: s.loss, grad_norm: s.grad_norm, ms: started.elapsed().as_secs_f64() * 1e3 });
        let due = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if due && !val.is_empty() {
            log.evals.push(EvalRecord { step, eval_acc: accuracy(&model, &val, &opts)? });
        }
        let evaluated = log.evals.last().filter(|e| e.step == step);
        on_step(log.steps.last().expect("just pushed"), evaluated);
    }
    model.freeze_all();
    let rng = RngState::capture(&rng);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let ck = Checkpoint { model: model.clone(), opt: Some(opt.clone()), rng: Some(rng.clone()), config_text: String::new() };
        save_checkpoint(&dir.join("checkpoint.bin"), &ck)?;
        log.write(dir)?;
    }
    Ok(TrainOutcome { model, opt, log, rng })
}
