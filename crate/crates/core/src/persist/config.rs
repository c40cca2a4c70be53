//! Flat `section.key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::plan_layout;
use crate::pipeline::vocab::STANDARD_LEN;
use crate::tasks::{DatasetSpec, TaskKind, TIMESTAMP_DIGITS};
use crate::train::{Stage, TrainConfig};

/// Evaluation axes and budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub niah_lengths: Vec<usize>,
    pub niah_depths: Vec<f64>,
    pub niah_trials: usize,
    pub niah_seed: u64,
    pub thetas: Vec<f64>,
    pub profile_lengths: Vec<usize>,
    /// Live-scalar ceiling for the full-attention baseline in `profile`.
    pub scalar_budget: usize,
    pub ablate_alphas: Vec<usize>,
    pub ablate_seeds: usize,
    /// Test samples used by `eval` (0: the whole split).
    pub samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            niah_lengths: vec![64, 128, 256, 512],
            niah_depths: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            niah_trials: 10,
            niah_seed: 90_000_000,
            thetas: vec![5.0, 10.0, 15.0],
            profile_lengths: vec![512, 1024, 2048, 4096],
            scalar_budget: 50_000_000,
            ablate_alphas: vec![2, 8, 32],
            ablate_seeds: 3,
            samples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    /// Checkpoint read by `eval`, `niah`, `profile` and `inspect-ckpt`.
    pub checkpoint: PathBuf,
    /// Checkpoint a `train` run starts from instead of a fresh init.
    pub init: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), checkpoint: PathBuf::from("out/checkpoint.bin"), init: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: DatasetSpec,
    pub tokens_per_frame: usize,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig { vocab_size: STANDARD_LEN, ..Default::default() },
            train: TrainConfig::default(),
            task: DatasetSpec::default(),
            tokens_per_frame: 1,
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

type Setter = fn(&mut RunConfig, &str, &str) -> Result<()>;
type Getter = fn(&RunConfig) -> String;

macro_rules! field {
    ($key:literal, $($path:tt)+) => {
        (
            $key,
            (|c: &mut RunConfig, k: &str, v: &str| {
                c.$($path)+ = parse(k, v)?;
                Ok(())
            }) as Setter,
            (|c: &RunConfig| c.$($path)+.to_string()) as Getter,
        )
    };
}

macro_rules! list_field {
    ($key:literal, $($path:ident).+) => {
        (
            $key,
            (|c: &mut RunConfig, k: &str, v: &str| {
                c.$($path).+ = parse_list(k, v)?;
                Ok(())
            }) as Setter,
            (|c: &RunConfig| list(&c.$($path).+)) as Getter,
        )
    };
}

fn fields() -> Vec<(&'static str, Setter, Getter)> {
    vec![
        field!("model.vocab_size", model.vocab_size),
        field!("model.d_model", model.d_model),
        field!("model.n_layers", model.n_layers),
        field!("model.n_heads", model.n_heads),
        field!("model.mlp_hidden", model.mlp_hidden),
        field!("model.max_memory_slots", model.max_memory_slots),
        field!("model.max_position", model.max_position),
        field!("model.alpha", model.alpha),
        field!("model.seg_len", model.seg_len),
        field!("model.tie_head", model.tie_head),
        field!("model.init_std", model.init_std),
        field!("model.ln_eps", model.ln_eps),
        (
            "train.stage",
            |c, k, v| {
                c.train.stage = Stage::from_str(v).map_err(|_| Error::Config(format!("{k}: unknown stage {v:?}")))?;
                Ok(())
            },
            |c| c.train.stage.as_str().to_string(),
        ),
        field!("train.lr", train.lr),
        field!("train.beta1", train.betas.0),
        field!("train.beta2", train.betas.1),
        field!("train.weight_decay", train.weight_decay),
        field!("train.batch_size", train.batch_size),
        field!("train.steps", train.steps),
        field!("train.seed", train.seed),
        field!("train.detach_memory", train.detach_memory),
        field!("train.grad_clip", train.grad_clip),
        field!("train.warmup_steps", train.warmup_steps),
        field!("train.final_lr_fraction", train.final_lr_fraction),
        field!("train.eval_every", train.eval_every),
        field!("train.eval_samples", train.eval_samples),
        (
            "task.kind",
            |c, k, v| {
                c.task.kind = TaskKind::from_str(v).map_err(|_| Error::Config(format!("{k}: unknown task {v:?}")))?;
                Ok(())
            },
            |c| c.task.kind.as_str().to_string(),
        ),
        field!("task.train_size", task.sizes[0]),
        field!("task.val_size", task.sizes[1]),
        field!("task.test_size", task.sizes[2]),
        field!("task.train_seed", task.seeds[0]),
        field!("task.val_seed", task.seeds[1]),
        field!("task.test_seed", task.seeds[2]),
        field!("task.t_min", task.t_min),
        field!("task.t_max", task.t_max),
        field!("task.n_clues", task.n_clues),
        field!("task.n_distractors", task.n_distractors),
        field!("task.n_marked", task.n_marked),
        field!("task.depth_min", task.depth_range.0),
        field!("task.depth_max", task.depth_range.1),
        field!("task.tokens_per_frame", tokens_per_frame),
        list_field!("eval.niah_lengths", eval.niah_lengths),
        list_field!("eval.niah_depths", eval.niah_depths),
        field!("eval.niah_trials", eval.niah_trials),
        field!("eval.niah_seed", eval.niah_seed),
        list_field!("eval.thetas", eval.thetas),
        list_field!("eval.profile_lengths", eval.profile_lengths),
        field!("eval.scalar_budget", eval.scalar_budget),
        list_field!("eval.ablate_alphas", eval.ablate_alphas),
        field!("eval.ablate_seeds", eval.ablate_seeds),
        field!("eval.samples", eval.samples),
        (
            "paths.out_dir",
            |c, _, v| {
                c.paths.out_dir = PathBuf::from(v);
                Ok(())
            },
            |c| c.paths.out_dir.display().to_string(),
        ),
        (
            "paths.checkpoint",
            |c, _, v| {
                c.paths.checkpoint = PathBuf::from(v);
                Ok(())
            },
            |c| c.paths.checkpoint.display().to_string(),
        ),
        (
            "paths.init",
            |c, _, v| {
                c.paths.init = if v.is_empty() { None } else { Some(PathBuf::from(v)) };
                Ok(())
            },
            |c| c.paths.init.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        ),
    ]
}

/// Every recognised key, in file order.
pub fn config_keys() -> Vec<&'static str> {
    fields().into_iter().map(|f| f.0).collect()
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match fields().into_iter().find(|f| f.0 == key) {
            Some((_, set, _)) => set(self, key, value.trim()),
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fields().into_iter().find(|f| f.0 == key).map(|(_, _, get)| get(self))
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses text without validating it.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigParse { line: i + 1, msg: format!("expected key = value, found {line:?}") })?;
            cfg.set(k.trim(), v).map_err(|e| Error::ConfigParse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(cfg)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, _, get) in fields() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{key} = {}\n", get(self)));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        if self.model.vocab_size < STANDARD_LEN {
            return Err(Error::Config(format!(
                "model.vocab_size {} cannot hold the {STANDARD_LEN} task symbols",
                self.model.vocab_size
            )));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::Config("task.tokens_per_frame must be at least 1".into()));
        }
        if self.task.kind == TaskKind::MultiClueGrounded && self.task.t_max > 16usize.pow(TIMESTAMP_DIGITS as u32) {
            return Err(Error::Config("task.t_max too large for grounded timestamps".into()));
        }
        let longest = vec![0; self.task.t_max * self.tokens_per_frame];
        let layout = plan_layout(&longest, &[0, 0], &self.model)?;
        let answer = match self.task.kind {
            TaskKind::Needle | TaskKind::MultiClue => 1,
            TaskKind::MultiClueGrounded => 2 + TIMESTAMP_DIGITS * self.task.n_clues,
            TaskKind::Summary => self.task.n_marked,
        };
        if layout.final_block.answer_pos + answer > self.model.max_position {
            return Err(Error::Config(format!(
                "task.t_max {} with task.tokens_per_frame {} needs {} positions; model.max_position is {}",
                self.task.t_max,
                self.tokens_per_frame,
                layout.final_block.answer_pos + answer,
                self.model.max_position
            )));
        }
        if self.eval.thetas.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::Config("eval.thetas must be non-negative".into()));
        }
        if self.eval.niah_depths.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::Config("eval.niah_depths must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg = RunConfig::parse_text(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let c = RunConfig::parse_text("model.d_model = 32\n").unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.n_layers, RunConfig::default().model.n_layers);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = RunConfig::parse_text("# comment\nmodle.alpha = 3\n").unwrap_err();
        match err {
            Error::ConfigParse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("modle.alpha"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn zero_alpha_fails_validation() {
        let c = RunConfig::parse_text("model.alpha = 0").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_and_round_trip() {
        let mut c = RunConfig::parse_text("model.alpha = 4\neval.thetas = 1, 2.5\n").unwrap();
        c.apply_override("model.alpha=8").unwrap();
        assert_eq!(c.model.alpha, 8);
        assert_eq!(c.eval.thetas, vec![1.0, 2.5]);
        assert!(c.apply_override("model.alpha").is_err());
        assert_eq!(RunConfig::parse_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn positions_must_fit() {
        let c = RunConfig::parse_text("task.t_max = 9000\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_)) | Err(Error::Range { .. })));
    }
}
