//! Append-only per-layer store of memory-token keys and values.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Keys and values of every stored memory token for one layer, `P × d_model`
/// each (heads are contiguous column blocks).
#[derive(Clone, Debug, PartialEq)]
pub struct BankLayer {
    pub keys: Tensor,
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    d_model: usize,
    layers: Vec<BankLayer>,
    segment_offsets: Vec<usize>,
    positions: Vec<usize>,
}

/// Frozen copy of a bank.
#[derive(Clone, Debug, PartialEq)]
pub struct BankSnapshot(MemoryBank);

impl MemoryBank {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        let empty = BankLayer { keys: Tensor::zeros(&[0, d_model]), values: Tensor::zeros(&[0, d_model]) };
        Self { d_model, layers: vec![empty; n_layers], segment_offsets: vec![0], positions: Vec::new() }
    }

    /// Rebuilds a bank from stored parts, checking every invariant.
    pub fn from_parts(
        d_model: usize,
        layers: Vec<BankLayer>,
        segment_offsets: Vec<usize>,
        positions: Vec<usize>,
    ) -> Result<Self> {
        let p = *segment_offsets.last().ok_or_else(|| Error::State("empty offset list".into()))?;
        if segment_offsets[0] != 0 || segment_offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::State(format!("segment offsets {segment_offsets:?} not strictly increasing from 0")));
        }
        if positions.len() != p {
            return Err(Error::State(format!("{} positions for {p} entries", positions.len())));
        }
        for l in &layers {
            for t in [&l.keys, &l.values] {
                if t.dims() != [p, d_model] {
                    return Err(Error::State(format!("bank layer dims {:?}, expected [{p}, {d_model}]", t.dims())));
                }
            }
        }
        Ok(Self { d_model, layers, segment_offsets, positions })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Stored entries per layer (`P`).
    pub fn len(&self) -> usize {
        *self.segment_offsets.last().expect("offsets start at 0")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, l: usize) -> &BankLayer {
        &self.layers[l]
    }

    pub fn segment_offsets(&self) -> &[usize] {
        &self.segment_offsets
    }

    pub fn segments(&self) -> usize {
        self.segment_offsets.len() - 1
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn scalar_count(&self) -> usize {
        2 * self.layers.len() * self.len() * self.d_model
    }

    /// Appends one segment's memory: per layer `(K^m, V^m)` with `k ≥ 1` rows.
    pub fn append(&mut self, mem_kv: Vec<(Tensor, Tensor)>, positions: &[usize]) -> Result<()> {
        if mem_kv.len() != self.layers.len() {
            return Err(Error::State(format!(
                "append of {} layers into a {}-layer bank",
                mem_kv.len(),
                self.layers.len()
            )));
        }
        let k = positions.len();
        if k == 0 {
            return Err(Error::State("a segment must contribute at least one memory entry".into()));
        }
        for (keys, values) in &mem_kv {
            for t in [keys, values] {
                if t.rows() != k || t.cols() != self.d_model {
                    return Err(Error::State(format!(
                        "memory entry dims {:?}, expected [{k}, {}]",
                        t.dims(),
                        self.d_model
                    )));
                }
            }
        }
        for (layer, (keys, values)) in self.layers.iter_mut().zip(mem_kv) {
            layer.keys = Tensor::concat_rows(&[&layer.keys, &keys])?;
            layer.values = Tensor::concat_rows(&[&layer.values, &values])?;
        }
        let p = self.len() + k;
        self.segment_offsets.push(p);
        self.positions.extend_from_slice(positions);
        Ok(())
    }

    pub fn snapshot(&self) -> BankSnapshot {
        BankSnapshot(self.clone())
    }

    pub fn restore(snapshot: &BankSnapshot) -> Self {
        snapshot.0.clone()
    }

    /// A bank holding only the most recent segment's entries.
    pub fn last_segment_only(&self) -> Self {
        if self.segments() == 0 {
            return self.clone();
        }
        let start = self.segment_offsets[self.segment_offsets.len() - 2];
        let p = self.len();
        let layers = self
            .layers
            .iter()
            .map(|l| BankLayer {
                keys: l.keys.slice_rows(start, p).expect("in range"),
                values: l.values.slice_rows(start, p).expect("in range"),
            })
            .collect();
        Self {
            d_model: self.d_model,
            layers,
            segment_offsets: vec![0, p - start],
            positions: self.positions[start..].to_vec(),
        }
    }
}
