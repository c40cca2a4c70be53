use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::{Param, Scalar, Tensor};

/// Parameter indices for one transformer layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerIndex {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub wq_mem: usize,
    pub wk_mem: usize,
    pub wv_mem: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub mlp_w1: usize,
    pub mlp_b1: usize,
    pub mlp_w2: usize,
    pub mlp_b2: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIndex {
    pub tok_embed: usize,
    pub mem_embed: usize,
    pub layers: Vec<LayerIndex>,
    pub final_gamma: usize,
    pub final_beta: usize,
    /// `None` when the head is tied to `tok_embed`.
    pub head: Option<usize>,
}

/// All model weights as a flat list of named tensors, plus the index that
/// gives them structure.
///
/// Projection matrices are stored `d_in × d_out` and applied as `x · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub index: ParamIndex,
}

/// Which parameter groups receive updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainableSet {
    /// Only the memory embedding table and the memory projections.
    MemoryOnly,
    All,
}

impl ModelParams {
    /// Expected `(name, dims)` for every tensor of a config, in storage order.
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = cfg.d_model;
        let mut out = vec![
            ("tok_embed".to_string(), vec![cfg.vocab_size, d]),
            ("mem_embed".to_string(), vec![cfg.max_memory_slots, d]),
        ];
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("attn.wq_mem"), vec![d, d]),
                (p("attn.wk_mem"), vec![d, d]),
                (p("attn.wv_mem"), vec![d, d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("mlp.w1"), vec![d, cfg.mlp_hidden]),
                (p("mlp.b1"), vec![cfg.mlp_hidden]),
                (p("mlp.w2"), vec![cfg.mlp_hidden, d]),
                (p("mlp.b2"), vec![d]),
            ]);
        }
        out.push(("final_norm.gamma".into(), vec![d]));
        out.push(("final_norm.beta".into(), vec![d]));
        if !cfg.tie_head {
            out.push(("head".into(), vec![d, cfg.vocab_size]));
        }
        out
    }

    fn build_index(cfg: &ModelConfig) -> ParamIndex {
        let mut i = 2;
        let mut next = || {
            i += 1;
            i - 1
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerIndex {
                ln1_gamma: next(),
                ln1_beta: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                wq_mem: next(),
                wk_mem: next(),
                wv_mem: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                mlp_w1: next(),
                mlp_b1: next(),
                mlp_w2: next(),
                mlp_b2: next(),
            })
            .collect();
        let final_gamma = next();
        let final_beta = next();
        let head = if cfg.tie_head { None } else { Some(next()) };
        ParamIndex { tok_embed: 0, mem_embed: 1, layers, final_gamma, final_beta, head }
    }

    /// Wraps existing tensors after checking them against the config layout.
    pub fn from_params(config: ModelConfig, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let layout = Self::layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Shape(format!(
                "config expects {} tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, dims), p) in layout.iter().zip(&params) {
            if &p.name != name || p.tensor.dims() != dims.as_slice() {
                return Err(Error::Shape(format!(
                    "tensor {} has dims {:?}; config expects {} with dims {:?}",
                    p.name,
                    p.tensor.dims(),
                    name,
                    dims
                )));
            }
        }
        let index = Self::build_index(&config);
        Ok(Self { config, params, index })
    }

    /// Truncated-normal base weights, unit norms, zero biases; then every
    /// memory-embedding row is set to the BOS embedding and each memory
    /// projection to a copy of its regular counterpart.
    pub fn init<R: Rng>(config: &ModelConfig, bos_id: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if bos_id >= config.vocab_size {
            return Err(Error::Config(format!("BOS id {bos_id} outside vocabulary")));
        }
        let std = config.init_std;
        let params = Self::layout(config)
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let data: Vec<Scalar> = if name.ends_with("gamma") {
                    vec![1.0; n]
                } else if name.ends_with("beta") || name.ends_with(".b1") || name.ends_with(".b2") {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| truncated_normal(rng) * std).collect()
                };
                Param::new(name, Tensor::new(dims, data).expect("layout dims"))
            })
            .collect();
        let mut model = Self::from_params(config.clone(), params)?;
        model.apply_memory_init(bos_id);
        Ok(model)
    }

    /// Overwrites the memory parameters from their regular counterparts.
    pub fn apply_memory_init(&mut self, bos_id: usize) {
        let bos_row = self.params[self.index.tok_embed].tensor.row(bos_id).to_vec();
        let mem = &mut self.params[self.index.mem_embed].tensor;
        for r in 0..mem.rows() {
            mem.row_mut(r).copy_from_slice(&bos_row);
        }
        for l in 0..self.index.layers.len() {
            let li = self.index.layers[l].clone();
            for (src, dst) in [(li.wq, li.wq_mem), (li.wk, li.wk_mem), (li.wv, li.wv_mem)] {
                let data = self.params[src].tensor.data().to_vec();
                self.params[dst].tensor.data_mut().copy_from_slice(&data);
            }
        }
    }

    pub fn is_memory_param(&self, i: usize) -> bool {
        i == self.index.mem_embed
            || self.index.layers.iter().any(|l| i == l.wq_mem || i == l.wk_mem || i == l.wv_mem)
    }

    /// Attaches gradient buffers to the trainable set and removes them elsewhere.
    pub fn set_trainable(&mut self, set: TrainableSet) {
        for i in 0..self.params.len() {
            let on = match set {
                TrainableSet::All => true,
                TrainableSet::MemoryOnly => self.is_memory_param(i),
            };
            let t = &mut self.params[i].tensor;
            if on {
                if t.grad().is_none() {
                    t.enable_grad();
                }
            } else {
                t.disable_grad();
            }
        }
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.tensor.disable_grad();
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.params[i].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

/// Standard normal draw rejected outside ±2.
fn truncated_normal<R: Rng>(rng: &mut R) -> Scalar {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z as Scalar;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_copies_bos_and_projections() {
        let cfg = ModelConfig { vocab_size: 20, d_model: 16, n_heads: 2, ..Default::default() };
        let m = ModelParams::init(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let bos = m.tensor(m.index.tok_embed).row(1).to_vec();
        let mem = m.tensor(m.index.mem_embed);
        for r in 0..mem.rows() {
            assert_eq!(mem.row(r), &bos[..]);
        }
        for l in &m.index.layers {
            assert_eq!(m.tensor(l.wq).data(), m.tensor(l.wq_mem).data());
            assert_eq!(m.tensor(l.wk).data(), m.tensor(l.wk_mem).data());
            assert_eq!(m.tensor(l.wv).data(), m.tensor(l.wv_mem).data());
        }
        let wq = m.tensor(m.index.layers[0].wq);
        assert!(wq.data().iter().all(|x| x.abs() <= 2.0 * cfg.init_std));
    }

    #[test]
    fn layout_mismatch_is_a_shape_error() {
        let cfg = ModelConfig { vocab_size: 20, d_model: 16, n_heads: 2, ..Default::default() };
        let m = ModelParams::init(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let other = ModelConfig { d_model: 32, ..cfg };
        assert!(matches!(ModelParams::from_params(other, m.params), Err(Error::Shape(_))));
    }

    #[test]
    fn memory_only_trainable_set() {
        let cfg = ModelConfig { vocab_size: 20, d_model: 16, n_heads: 2, ..Default::default() };
        let mut m = ModelParams::init(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        m.set_trainable(TrainableSet::MemoryOnly);
        let trainable: Vec<&str> =
            m.params.iter().filter(|p| p.tensor.grad().is_some()).map(|p| p.name.as_str()).collect();
        assert_eq!(trainable.len(), 1 + 3 * cfg.n_layers);
        assert!(trainable.contains(&"mem_embed"));
        assert!(trainable.contains(&"layers.1.attn.wv_mem"));
    }
}
