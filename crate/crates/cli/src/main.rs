use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use memseeker::evalkit::{
    ablation_csv, accuracy, clue_grounding_eval, compression_sweep, grounding_table, niah_grid, profile_csv,
    profile_run, ProfileRow,
};
use memseeker::model::ModelParams;
use memseeker::persist::{load_checkpoint, save_checkpoint, Checkpoint, RunConfig};
use memseeker::pipeline::vocab::BOS;
use memseeker::pipeline::EpisodeOptions;
use memseeker::tasks::TaskKind;
use memseeker::train::run_training_with;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "memseeker", version, about = "Recurrent question-aware memory over long token streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.alpha=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint.bin, train_log.csv and eval_log.csv.
    Train(Common),
    /// Test-split accuracy, plus mIoU for grounded multi-clue tasks.
    Eval(Common),
    /// Needle accuracy over the configured length × depth grid.
    Niah(Common),
    /// Train and score one model per compression ratio and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Peak attention width and live activations against a full-attention baseline.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
    },
    /// Score timestamp files: one sample per line, timestamps separated by spaces or commas.
    ScoreMiou {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 15.0])]
        theta: Vec<f64>,
    },
    /// Summarise a checkpoint.
    InspectCkpt {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to read; defaults to paths.checkpoint.
        path: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::parse_text(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => RunConfig::default(),
    };
    for s in &c.set {
        cfg.apply_override(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.paths.out_dir).with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    Ok(&cfg.paths.out_dir)
}

fn load_model(cfg: &RunConfig) -> Result<ModelParams> {
    let path = &cfg.paths.checkpoint;
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    ck.check_against(&cfg.model).with_context(|| format!("{} does not fit the configured model", path.display()))?;
    Ok(ck.model)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn episode_opts(cfg: &RunConfig) -> EpisodeOptions {
    EpisodeOptions { history: true, tokens_per_frame: cfg.tokens_per_frame }
}

fn train(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    let init = match &cfg.paths.init {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading init checkpoint {}", p.display()))?;
            ck.check_against(&cfg.model)?;
            Some(ck.model)
        }
        None => None,
    };
    let every = (cfg.train.steps / 20).max(1);
    let out = run_training_with(&cfg.task, &cfg.model, &cfg.train, cfg.tokens_per_frame, init, None, |s, e| {
        if s.step % every == 0 {
            eprintln!("step {:>6}  loss {:.4}  grad_norm {:.3}  {:.0} ms", s.step, s.loss, s.grad_norm, s.ms);
        }
        if let Some(e) = e {
            eprintln!("step {:>6}  validation accuracy {:.4}", e.step, e.eval_acc);
        }
    })?;
    let ck = Checkpoint { model: out.model, opt: Some(out.opt), rng: Some(out.rng), config_text: cfg.to_text() };
    save_checkpoint(&dir.join("checkpoint.bin"), &ck)?;
    out.log.write(&dir)?;
    if let (Some(first), Some(last)) = (out.log.steps.first(), out.log.steps.last()) {
        println!("step {}: loss {:.4}; step {}: loss {:.4}", first.step, first.loss, last.step, last.loss);
    }
    if let Some(e) = out.log.evals.last() {
        println!("validation accuracy at step {}: {:.4}", e.step, e.eval_acc);
    }
    println!("wrote {}", dir.join("checkpoint.bin").display());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    let model = load_model(cfg)?;
    let mut test = cfg.task.split(2)?;
    if cfg.eval.samples > 0 {
        test.truncate(cfg.eval.samples);
    }
    let acc = accuracy(&model, &test, &episode_opts(cfg))?;
    println!("accuracy {acc:.6} over {} test samples", test.len());
    write(dir.join("eval.csv"), &format!("task,n,accuracy\n{},{},{acc}\n", cfg.task.kind.as_str(), test.len()))?;
    if cfg.task.kind == TaskKind::MultiClueGrounded {
        let table = clue_grounding_eval(&model, &test, &cfg.eval.thetas, &episode_opts(cfg))?;
        print!("{}", table.to_csv());
        if table.unparseable > 0 {
            println!("# {} predictions had unreadable timestamps and were scored as empty", table.unparseable);
        }
        write(dir.join("miou.csv"), &table.to_csv())?;
    }
    Ok(())
}

fn niah(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    let model = load_model(cfg)?;
    let e = &cfg.eval;
    let grid = niah_grid(&model, &e.niah_lengths, &e.niah_depths, e.niah_trials, e.niah_seed, &episode_opts(cfg))?;
    print!("{}", grid.to_csv());
    write(dir.join("niah.csv"), &grid.to_csv())?;
    write(dir.join("niah.svg"), &grid.to_svg())
}

fn ablate(cfg: &RunConfig, alphas: &[usize], seeds: usize) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    let rows = compression_sweep(cfg, alphas, seeds, |r| {
        println!("alpha {} seed {}: accuracy {:.4}", r.alpha, r.seed, r.accuracy)
    })?;
    write(dir.join("ablation.csv"), &ablation_csv(&rows))
}

/// Width and activation counts do not depend on the weights, so a fresh
/// model from `train.seed` is profiled.
fn profile(cfg: &RunConfig, lengths: &[usize]) -> Result<()> {
    let dir = out_dir(cfg)?.to_path_buf();
    let model = ModelParams::init(&cfg.model, BOS, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let rows: Vec<ProfileRow> = lengths
        .iter()
        .map(|&t| profile_run(&model, t, &episode_opts(cfg), cfg.eval.scalar_budget))
        .collect::<memseeker::Result<_>>()?;
    for r in &rows {
        if r.predicted_width != r.report.peak_attention_width {
            bail!("T={}: measured width {} differs from layout {}", r.t, r.report.peak_attention_width, r.predicted_width);
        }
    }
    let csv = profile_csv(&rows);
    print!("{csv}");
    write(dir.join("profile.csv"), &csv)
}

/// One list per line; an empty line is an empty list, `None` if unreadable.
fn read_timestamps(path: &Path) -> Result<Vec<Option<Vec<f64>>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(|s| s.parse().ok()).collect())
        .collect())
}

fn score_miou(pred: &Path, gt: &Path, thetas: &[f64]) -> Result<()> {
    let preds = read_timestamps(pred)?;
    let gts = read_timestamps(gt)?
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.with_context(|| format!("{} line {}: unreadable timestamp", gt.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let table = grounding_table(&preds, &gts, thetas)?;
    print!("{}", table.to_csv());
    if table.unparseable > 0 {
        println!("# {} predictions had unreadable timestamps and were scored as empty", table.unparseable);
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let m = &ck.model;
    let c = &m.config;
    println!("checkpoint {}", path.display());
    println!(
        "model: {} layers, d_model {}, {} heads, mlp {}, vocab {}, alpha {}, seg_len {}, {} memory slots",
        c.n_layers, c.d_model, c.n_heads, c.mlp_hidden, c.vocab_size, c.alpha, c.seg_len, c.max_memory_slots
    );
    println!("parameters: {} tensors, {} scalars", m.params.len(), m.scalar_count());
    for p in &m.params {
        println!("  {:<24} {:?}", p.name, p.tensor.dims());
    }
    match &ck.opt {
        Some(o) => println!("optimizer: {} steps taken", o.step),
        None => println!("optimizer: none"),
    }
    match &ck.rng {
        Some(r) => println!("rng: stream {}, word position {}", r.stream, r.word_pos),
        None => println!("rng: none"),
    }
    println!("config:\n{}", ck.config_text.trim_end());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => train(&load_config(&c)?),
        Command::Eval(c) => eval(&load_config(&c)?),
        Command::Niah(c) => niah(&load_config(&c)?),
        Command::Ablate { common, alphas, seeds } => {
            let cfg = load_config(&common)?;
            let alphas = alphas.unwrap_or_else(|| cfg.eval.ablate_alphas.clone());
            ablate(&cfg, &alphas, seeds.unwrap_or(cfg.eval.ablate_seeds))
        }
        Command::Profile { common, lengths } => {
            let cfg = load_config(&common)?;
            let lengths = lengths.unwrap_or_else(|| cfg.eval.profile_lengths.clone());
            profile(&cfg, &lengths)
        }
        Command::ScoreMiou { pred, gt, theta } => score_miou(&pred, &gt, &theta),
        Command::InspectCkpt { common, path } => match path {
            Some(p) => inspect(&p),
            None => inspect(&load_config(&common)?.paths.checkpoint),
        },
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("MEMSEEKER_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: MEMSEEKER_THREADS: {e}");
            return ExitCode::FAILURE;
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
