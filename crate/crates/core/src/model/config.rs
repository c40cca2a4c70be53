use crate::error::{Error, Result};
use crate::numcore::Scalar;

/// Shape and recurrence hyper-parameters of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    /// Rows of the memory embedding table; the most memory tokens one segment may use.
    pub max_memory_slots: usize,
    pub max_position: usize,
    /// Compression ratio: segment tokens per memory token.
    pub alpha: usize,
    /// Tokens per segment.
    pub seg_len: usize,
    /// Reuse the token embedding as the output head.
    pub tie_head: bool,
    pub init_std: Scalar,
    pub ln_eps: Scalar,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 128,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            mlp_hidden: 256,
            max_memory_slots: 32,
            max_position: 8192,
            alpha: 4,
            seg_len: 32,
            tie_head: false,
            init_std: 0.02,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Memory tokens for a segment of `n` tokens: `max(1, ceil(n / alpha))`.
    pub fn memory_count(&self, n: usize) -> usize {
        n.div_ceil(self.alpha.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 {
            return bad("model.vocab_size must be positive".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model.d_model ({}) must be a positive multiple of model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return bad("model.n_layers must be at least 1".into());
        }
        if self.mlp_hidden == 0 {
            return bad("model.mlp_hidden must be positive".into());
        }
        if self.max_memory_slots == 0 {
            return bad("model.max_memory_slots must be at least 1".into());
        }
        if self.alpha == 0 {
            return bad("model.alpha must be at least 1".into());
        }
        if self.seg_len == 0 {
            return bad("model.seg_len must be at least 1".into());
        }
        if self.memory_count(self.seg_len) > self.max_memory_slots {
            return bad(format!(
                "a full segment needs {} memory tokens but model.max_memory_slots is {}",
                self.memory_count(self.seg_len),
                self.max_memory_slots
            ));
        }
        if !(self.init_std > 0.0) || !(self.ln_eps > 0.0) {
            return bad("model.init_std and model.ln_eps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_count_rounding() {
        let cfg = ModelConfig { alpha: 16, ..Default::default() };
        assert_eq!(cfg.memory_count(32), 2);
        assert_eq!(cfg.memory_count(1), 1);
        assert_eq!(cfg.memory_count(17), 2);
        let wide = ModelConfig { alpha: 64, ..Default::default() };
        assert_eq!(wide.memory_count(5), 1);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { alpha: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { d_model: 30, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { alpha: 1, max_memory_slots: 8, ..Default::default() }.validate().is_err());
    }
}
