use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::container::{find, kind, read_container, write_container, ByteReader, ByteWriter, Section};
use crate::error::{Error, Result};
use crate::membank::{BankLayer, MemoryBank};
use crate::model::{ModelConfig, ModelParams};
use crate::numcore::{Param, Scalar, Tensor, SCALAR_DTYPE};
use crate::pipeline::{SegmentBlock, SegmentedLayout, Vocabulary};
use crate::tasks::{TaskKind, TaskSample};
use crate::train::AdamState;

/// Position of a counter-based generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub opt: Option<AdamState>,
    pub rng: Option<RngState>,
    /// Full run configuration text; empty to store the model section alone.
    pub config_text: String,
}

fn write_tensor(w: &mut ByteWriter, name: &str, t: &Tensor) {
    w.str(name);
    w.u8(SCALAR_DTYPE);
    w.u32(t.dims().len() as u32);
    for &d in t.dims() {
        w.u64(d as u64);
    }
    for &x in t.data() {
        w.buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_tensor(r: &mut ByteReader) -> Result<(String, Tensor)> {
    let name = r.str("tensor name")?;
    let dtype = r.u8("tensor dtype")?;
    let ndim = r.u32("tensor rank")? as usize;
    if ndim > 8 {
        return Err(Error::Format(format!("tensor {name} has rank {ndim}")));
    }
    let dims: Vec<usize> = (0..ndim).map(|_| r.u64("tensor dims").map(|d| d as usize)).collect::<Result<_>>()?;
    let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Truncated("tensor payload"))?;
    let data: Vec<Scalar> = match dtype {
        0 => {
            let b = r.take(n.checked_mul(4).ok_or(Error::Truncated("tensor payload"))?)?;
            b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as Scalar).collect()
        }
        1 => {
            let b = r.take(n.checked_mul(8).ok_or(Error::Truncated("tensor payload"))?)?;
            b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Scalar).collect()
        }
        other => return Err(Error::Format(format!("tensor {name} has unknown dtype code {other}"))),
    };
    Ok((name, Tensor::new(dims, data)?))
}

fn model_section(cfg: &ModelConfig) -> String {
    let run = RunConfig { model: cfg.clone(), ..Default::default() };
    run.to_text().lines().filter(|l| l.starts_with("model.")).map(|l| format!("{l}\n")).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let config = if ck.config_text.is_empty() { model_section(&ck.model.config) } else { ck.config_text.clone() };
    let mut sections = vec![Section { kind: kind::CONFIG, payload: config.into_bytes() }];

    let mut w = ByteWriter::new();
    let vocab = Vocabulary::standard();
    w.u32(vocab.len() as u32);
    for n in vocab.names() {
        w.str(n);
    }
    sections.push(Section { kind: kind::VOCAB, payload: w.buf });

    let mut w = ByteWriter::new();
    w.u32(ck.model.params.len() as u32);
    for p in &ck.model.params {
        write_tensor(&mut w, &p.name, &p.tensor);
    }
    sections.push(Section { kind: kind::TENSORS, payload: w.buf });

    if let Some(opt) = &ck.opt {
        let mut w = ByteWriter::new();
        w.u64(opt.step);
        w.u8(SCALAR_DTYPE);
        w.u32(opt.m.len() as u32);
        for (m, v) in opt.m.iter().zip(&opt.v) {
            w.u64(m.len() as u64);
            for x in m.iter().chain(v) {
                w.buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        sections.push(Section { kind: kind::OPTIM, payload: w.buf });
    }
    if let Some(rng) = &ck.rng {
        let mut w = ByteWriter::new();
        w.buf.extend_from_slice(&rng.seed);
        w.u64(rng.stream);
        w.u128(rng.word_pos);
        sections.push(Section { kind: kind::RNG, payload: w.buf });
    }
    write_container(&sections)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let sections = read_container(bytes)?;
    let text = find(&sections, kind::CONFIG).ok_or_else(|| Error::Format("checkpoint has no config section".into()))?;
    let config_text = String::from_utf8(text.to_vec()).map_err(|_| Error::Format("config is not UTF-8".into()))?;
    let run = RunConfig::parse_text(&config_text)?;

    if let Some(v) = find(&sections, kind::VOCAB) {
        let mut r = ByteReader::new(v);
        let n = r.u32("vocabulary")?;
        let names = (0..n).map(|_| r.str("vocabulary")).collect::<Result<Vec<_>>>()?;
        r.finish("vocabulary")?;
        Vocabulary::from_names(names)?;
    }

    let t = find(&sections, kind::TENSORS).ok_or_else(|| Error::Format("checkpoint has no tensor table".into()))?;
    let mut r = ByteReader::new(t);
    let n = r.u32("tensor table")?;
    let mut params = Vec::with_capacity(n.min(4096) as usize);
    for _ in 0..n {
        let (name, tensor) = read_tensor(&mut r)?;
        params.push(Param::new(name, tensor));
    }
    r.finish("tensor table")?;
    let model = ModelParams::from_params(run.model.clone(), params)?;

    let opt = match find(&sections, kind::OPTIM) {
        None => None,
        Some(o) => {
            let mut r = ByteReader::new(o);
            let step = r.u64("optimizer")?;
            let dtype = r.u8("optimizer")?;
            if dtype != SCALAR_DTYPE {
                return Err(Error::Format(format!("optimizer state has dtype code {dtype}, build uses {SCALAR_DTYPE}")));
            }
            let n = r.u32("optimizer")? as usize;
            if n != model.params.len() {
                return Err(Error::Shape(format!("optimizer state for {n} tensors, model has {}", model.params.len())));
            }
            let (mut ms, mut vs) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for p in &model.params {
                let len = r.u64("optimizer")? as usize;
                if len != p.tensor.len() {
                    return Err(Error::Shape(format!("optimizer moments for {} have {len} entries", p.name)));
                }
                let width = std::mem::size_of::<Scalar>();
                let b = r.take(2 * len * width)?;
                let vals: Vec<Scalar> = b.chunks_exact(width).map(scalar_from_le).collect();
                ms.push(vals[..len].to_vec());
                vs.push(vals[len..].to_vec());
            }
            r.finish("optimizer")?;
            Some(AdamState { step, m: ms, v: vs })
        }
    };
    let rng = match find(&sections, kind::RNG) {
        None => None,
        Some(b) => {
            let mut r = ByteReader::new(b);
            let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
            let stream = r.u64("rng")?;
            let word_pos = r.u128("rng")?;
            r.finish("rng")?;
            Some(RngState { seed, stream, word_pos })
        }
    };
    Ok(Checkpoint { model, opt, rng, config_text })
}

fn scalar_from_le(c: &[u8]) -> Scalar {
    Scalar::from_le_bytes(c.try_into().expect("scalar width"))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

impl Checkpoint {
    /// Shape error unless the stored tensors fit `expected`.
    pub fn check_against(&self, expected: &ModelConfig) -> Result<()> {
        ModelParams::from_params(expected.clone(), self.model.params.clone()).map(|_| ())
    }
}

/// One processed episode for offline inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDump {
    pub layout: SegmentedLayout,
    pub bank: MemoryBank,
    pub answer: Vec<usize>,
}

pub fn encode_episode_dump(d: &EpisodeDump) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.usizes(&d.layout.question);
    w.u64(d.layout.segments.len() as u64);
    for s in &d.layout.segments {
        w.u64(s.start_pos as u64);
        w.u64(s.mem_count as u64);
        w.usizes(&s.frames);
    }
    let f = d.layout.final_block;
    w.usizes(&[f.split_pos, f.question_pos, f.answer_pos]);
    let layout = w.buf;

    let mut w = ByteWriter::new();
    w.u64(d.bank.d_model() as u64);
    w.u64(d.bank.n_layers() as u64);
    w.usizes(d.bank.segment_offsets());
    w.usizes(d.bank.positions());
    for l in 0..d.bank.n_layers() {
        write_tensor(&mut w, "keys", &d.bank.layer(l).keys);
        write_tensor(&mut w, "values", &d.bank.layer(l).values);
    }
    let bank = w.buf;

    let mut w = ByteWriter::new();
    w.usizes(&d.answer);
    write_container(&[
        Section { kind: kind::LAYOUT, payload: layout },
        Section { kind: kind::BANK, payload: bank },
        Section { kind: kind::TOKENS, payload: w.buf },
    ])
}

pub fn decode_episode_dump(bytes: &[u8]) -> Result<EpisodeDump> {
    let sections = read_container(bytes)?;
    let need = |k| find(&sections, k).ok_or_else(|| Error::Format(format!("episode dump lacks section {k}")));
    let mut r = ByteReader::new(need(kind::LAYOUT)?);
    let question = r.usizes("layout")?;
    let n = r.len(24, "layout")?;
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        let start_pos = r.u64("layout")? as usize;
        let mem_count = r.u64("layout")? as usize;
        segments.push(SegmentBlock { frames: r.usizes("layout")?, mem_count, start_pos });
    }
    let f = r.usizes("layout")?;
    if f.len() != 3 {
        return Err(Error::Format("final block needs three positions".into()));
    }
    r.finish("layout")?;
    let final_block = crate::pipeline::FinalBlock { split_pos: f[0], question_pos: f[1], answer_pos: f[2] };

    let mut r = ByteReader::new(need(kind::BANK)?);
    let d_model = r.u64("bank")? as usize;
    let n_layers = r.u64("bank")? as usize;
    let offsets = r.usizes("bank")?;
    let positions = r.usizes("bank")?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let keys = read_tensor(&mut r)?.1;
        let values = read_tensor(&mut r)?.1;
        layers.push(BankLayer { keys, values });
    }
    r.finish("bank")?;
    let bank = MemoryBank::from_parts(d_model, layers, offsets, positions)?;

    let mut r = ByteReader::new(need(kind::TOKENS)?);
    let answer = r.usizes("answer")?;
    r.finish("answer")?;
    Ok(EpisodeDump { layout: SegmentedLayout { question, segments, final_block }, bank, answer })
}

/// Binary batch of task samples.
pub fn encode_samples(samples: &[TaskSample]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u64(samples.len() as u64);
    for s in samples {
        w.str(s.kind.as_str());
        w.u64(s.seed);
        w.usizes(&s.frames);
        w.usizes(&s.question);
        w.usizes(&s.answer);
        w.f64s(&s.clue_timestamps);
    }
    write_container(&[Section { kind: kind::SAMPLES, payload: w.buf }])
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<TaskSample>> {
    let sections = read_container(bytes)?;
    let b = find(&sections, kind::SAMPLES).ok_or_else(|| Error::Format("no sample section".into()))?;
    let mut r = ByteReader::new(b);
    let n = r.len(1, "samples")?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let kind: TaskKind = r.str("samples")?.parse()?;
        out.push(TaskSample {
            kind,
            seed: r.u64("samples")?,
            frames: r.usizes("samples")?,
            question: r.usizes("samples")?,
            answer: r.usizes("samples")?,
            clue_timestamps: r.f64s("samples")?,
        });
    }
    r.finish("samples")?;
    Ok(out)
}
