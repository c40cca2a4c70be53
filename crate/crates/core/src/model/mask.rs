use crate::numcore::BitMatrix;

/// Attention visibility for one block.
///
/// Rows are queries: `n_regular` regular rows followed by `n_mem` memory rows.
/// Columns are keys: `n_past` bank entries, then the block's regular rows,
/// then its memory rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    pub n_past: usize,
    pub n_regular: usize,
    pub n_mem: usize,
    pub bits: BitMatrix,
}

impl AttnMask {
    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.bits.get(row, col)
    }

    pub fn rows(&self) -> usize {
        self.n_regular + self.n_mem
    }

    pub fn cols(&self) -> usize {
        self.n_past + self.n_regular + self.n_mem
    }
}

/// Regular rows see the bank and the block causally but never the block's
/// memory columns; memory rows see the bank, every regular row, and the
/// memory rows up to themselves.
pub fn build_mask(n_past: usize, n_regular: usize, n_mem: usize) -> AttnMask {
    let rows = n_regular + n_mem;
    let mut bits = BitMatrix::new(rows, n_past + rows);
    for i in 0..n_regular {
        bits.set_prefix(i, n_past + i + 1);
    }
    for m in 0..n_mem {
        bits.set_prefix(n_regular + m, n_past + n_regular + m + 1);
    }
    AttnMask { n_past, n_regular, n_mem, bits }
}
