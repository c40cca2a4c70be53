//! Block forward pass with question-aware memory rows.
//!
//! A block is a run of regular tokens followed by `k` memory rows. Regular
//! rows are projected with the layer's regular `W_q/W_k/W_v`, memory rows with
//! the memory projections, and both attend over `[bank ; regular ; memory]`
//! under [`build_mask`]. Everything after the projections (`W_o`, MLP, norms)
//! is shared.

use std::sync::Arc;

use super::mask::build_mask;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::membank::MemoryBank;
use crate::numcore::{AttentionSpec, BitMatrix, Graph, Scalar, Tensor, Var};

/// Per-layer bank keys and values visible to a block; `None` when the bank is empty.
pub type PastKv = Vec<Option<(Var, Var)>>;

/// Tokens and global positions of one block.
#[derive(Clone, Debug)]
pub struct BlockRows<'a> {
    pub tokens: &'a [usize],
    pub token_positions: &'a [usize],
    /// One position per memory row; its length is the block's memory count.
    pub mem_positions: &'a [usize],
}

/// What the caller needs from a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOutputs {
    /// Logits for block rows `from_row..`.
    Logits { from_row: usize },
    /// Only the memory keys and values; rows that cannot influence them are skipped.
    MemoryOnly,
}

pub struct BlockResult {
    pub logits: Option<Var>,
    /// Per layer `(K^m, V^m)` of the block's memory rows, `None` when the block has none.
    pub mem_kv: Vec<Option<(Var, Var)>>,
    /// Per layer keys and values of the regular rows, `None` where they were not computed.
    pub reg_kv: Vec<Option<(Var, Var)>>,
}

/// Result of one attention sub-layer.
pub struct AttnOutput {
    /// Attention output after `W_o` for the requested rows.
    pub out: Option<Var>,
    pub mem_kv: Option<(Var, Var)>,
    pub reg_kv: Option<(Var, Var)>,
}

/// Fixed sinusoidal encoding of one position.
pub fn sinusoidal(pos: usize, d: usize) -> Vec<Scalar> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            (if i % 2 == 0 { angle.sin() } else { angle.cos() }) as Scalar
        })
        .collect()
}

fn positional_table(positions: &[usize], d: usize) -> Tensor {
    let data = positions.iter().flat_map(|&p| sinusoidal(p, d)).collect();
    Tensor::new(vec![positions.len(), d], data).expect("positional dims")
}

fn check_rows(model: &ModelParams, rows: &BlockRows) -> Result<()> {
    let cfg = &model.config;
    if rows.tokens.len() != rows.token_positions.len() {
        return Err(Error::Shape(format!(
            "{} tokens but {} positions",
            rows.tokens.len(),
            rows.token_positions.len()
        )));
    }
    let k = rows.mem_positions.len();
    if k > cfg.max_memory_slots {
        return Err(Error::Capacity { requested: k, capacity: cfg.max_memory_slots });
    }
    if let Some(&p) = rows.token_positions.iter().chain(rows.mem_positions).max() {
        if p >= cfg.max_position {
            return Err(Error::Range { position: p, max: cfg.max_position });
        }
    }
    if rows.tokens.len() + k == 0 {
        return Err(Error::InvalidInput("block has no rows".into()));
    }
    Ok(())
}

/// Embeddings of block rows `from_row..`: token rows, then rows of the memory
/// table, each plus its positional encoding.
pub fn embed_rows(g: &mut Graph, model: &ModelParams, rows: &BlockRows, from_row: usize) -> Result<Var> {
    check_rows(model, rows)?;
    let n = rows.tokens.len();
    let k = rows.mem_positions.len();
    let mut parts = Vec::new();
    let mut positions = Vec::new();
    if from_row < n {
        let table = g.param(model.index.tok_embed);
        parts.push(g.gather(table, &rows.tokens[from_row..])?);
        positions.extend_from_slice(&rows.token_positions[from_row..]);
    }
    if k > 0 {
        let first_mem = from_row.saturating_sub(n);
        let table = g.param(model.index.mem_embed);
        let ids: Vec<usize> = (first_mem..k).collect();
        parts.push(g.gather(table, &ids)?);
        positions.extend_from_slice(&rows.mem_positions[first_mem..]);
    }
    let x = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
    let pe = g.constant(positional_table(&positions, model.config.d_model));
    g.add(x, pe)
}

/// Tensor-level embedding of `tokens` plus `k` memory rows at consecutive
/// positions starting at `start_pos`.
pub fn embed_block(model: &ModelParams, tokens: &[usize], k: usize, start_pos: usize) -> Result<Tensor> {
    let n = tokens.len();
    let token_positions: Vec<usize> = (start_pos..start_pos + n).collect();
    let mem_positions: Vec<usize> = (start_pos + n..start_pos + n + k).collect();
    let rows = BlockRows { tokens, token_positions: &token_positions, mem_positions: &mem_positions };
    let mut g = Graph::new(&model.params, false);
    let x = embed_rows(&mut g, model, &rows, 0)?;
    Ok(g.value(x).clone())
}

fn cat_or_single(g: &mut Graph, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat_rows(parts)
    }
}

/// Attention output after `W_o` for block rows `out_start..`, plus this layer's
/// memory keys and values.
///
/// `normed` holds the layer-normalized hidden states of rows `in_start..`.
/// When `out_start` equals the row count no attention is computed.
#[allow(clippy::too_many_arguments)]
pub fn attn_with_memory(
    g: &mut Graph,
    model: &ModelParams,
    layer: usize,
    normed: Var,
    in_start: usize,
    n_regular: usize,
    n_mem: usize,
    out_start: usize,
    past: Option<(Var, Var)>,
    mask: &Arc<BitMatrix>,
) -> Result<AttnOutput> {
    let li = &model.index.layers[layer];
    let total = n_regular + n_mem;
    if in_start > n_regular || out_start < in_start || out_start > total {
        return Err(Error::State(format!(
            "row plan in={in_start} out={out_start} for {n_regular}+{n_mem} rows"
        )));
    }
    let reg_count = n_regular - in_start;
    let hn_reg = if reg_count > 0 { Some(g.slice_rows(normed, 0, reg_count)?) } else { None };
    let hn_mem = if n_mem > 0 { Some(g.slice_rows(normed, reg_count, reg_count + n_mem)?) } else { None };

    let mem_kv = match hn_mem {
        Some(m) => {
            let (wk, wv) = (g.param(li.wk_mem), g.param(li.wv_mem));
            Some((g.matmul(m, wk)?, g.matmul(m, wv)?))
        }
        None => None,
    };
    if out_start == total {
        return Ok(AttnOutput { out: None, mem_kv, reg_kv: None });
    }
    if in_start != 0 {
        return Err(Error::State("attention queries need every current row as a key".into()));
    }
    let mut q_parts = Vec::new();
    let mut reg_kv = None;
    let mut k_parts = Vec::new();
    let mut v_parts = Vec::new();
    if let Some((pk, pv)) = past {
        k_parts.push(pk);
        v_parts.push(pv);
    }
    if let Some(r) = hn_reg {
        let (wq, wk, wv) = (g.param(li.wq), g.param(li.wk), g.param(li.wv));
        if out_start < n_regular {
            let rq = if out_start == 0 { r } else { g.slice_rows(r, out_start, n_regular)? };
            q_parts.push(g.matmul(rq, wq)?);
        }
        let (rk, rv) = (g.matmul(r, wk)?, g.matmul(r, wv)?);
        reg_kv = Some((rk, rv));
        k_parts.push(rk);
        v_parts.push(rv);
    }
    if let (Some(m), Some((mk, mv))) = (hn_mem, mem_kv) {
        let first = out_start.saturating_sub(n_regular);
        let mq = if first == 0 { m } else { g.slice_rows(m, first, n_mem)? };
        let wq = g.param(li.wq_mem);
        q_parts.push(g.matmul(mq, wq)?);
        k_parts.push(mk);
        v_parts.push(mv);
    }
    let q = cat_or_single(g, &q_parts)?;
    let k = cat_or_single(g, &k_parts)?;
    let v = cat_or_single(g, &v_parts)?;
    let spec = AttentionSpec { mask: Arc::clone(mask), row_offset: out_start, n_heads: model.config.n_heads };
    let att = g.attention(q, k, v, spec)?;
    let wo = g.param(li.wo);
    Ok(AttnOutput { out: Some(g.matmul(att, wo)?), mem_kv, reg_kv })
}

/// One pre-norm residual layer over rows `in_start..`, returning rows `out_start..`.
#[allow(clippy::too_many_arguments)]
fn transformer_layer(
    g: &mut Graph,
    model: &ModelParams,
    layer: usize,
    h: Var,
    in_start: usize,
    n_regular: usize,
    n_mem: usize,
    out_start: usize,
    past: Option<(Var, Var)>,
    mask: &Arc<BitMatrix>,
) -> Result<AttnOutput> {
    let li = &model.index.layers[layer];
    let eps = model.config.ln_eps;
    let (g1, b1) = (g.param(li.ln1_gamma), g.param(li.ln1_beta));
    let normed = g.layer_norm(h, g1, b1, eps)?;
    let mut res = attn_with_memory(g, model, layer, normed, in_start, n_regular, n_mem, out_start, past, mask)?;
    let att = match res.out {
        Some(a) => a,
        None => return Ok(res),
    };
    let total = n_regular + n_mem;
    let kept = if out_start == in_start { h } else { g.slice_rows(h, out_start - in_start, total - in_start)? };
    let h1 = g.add(kept, att)?;
    let (g2, b2) = (g.param(li.ln2_gamma), g.param(li.ln2_beta));
    let n2 = g.layer_norm(h1, g2, b2, eps)?;
    let (w1, bias1, w2, bias2) = (g.param(li.mlp_w1), g.param(li.mlp_b1), g.param(li.mlp_w2), g.param(li.mlp_b2));
    let a = g.matmul(n2, w1)?;
    let a = g.add_bias(a, bias1)?;
    let a = g.gelu(a);
    let m = g.matmul(a, w2)?;
    let m = g.add_bias(m, bias2)?;
    res.out = Some(g.add(h1, m)?);
    Ok(res)
}

/// Per-layer `(in_start, out_start)` row ranges for a block.
fn row_plan(n_layers: usize, n_regular: usize, n_mem: usize, outputs: BlockOutputs) -> Vec<(usize, usize)> {
    let total = n_regular + n_mem;
    match outputs {
        BlockOutputs::Logits { from_row } => {
            (0..n_layers).map(|l| (0, if l + 1 == n_layers { from_row.min(total) } else { 0 })).collect()
        }
        BlockOutputs::MemoryOnly => {
            let mut plan = vec![(0, 0); n_layers];
            let mut needed = total;
            for l in (0..n_layers).rev() {
                let in_start = if needed < total { 0 } else { n_regular };
                plan[l] = (in_start, needed);
                needed = in_start;
            }
            plan
        }
    }
}

/// Runs the full layer stack over one block.
pub fn forward_block_graph(
    g: &mut Graph,
    model: &ModelParams,
    past: &PastKv,
    rows: &BlockRows,
    outputs: BlockOutputs,
) -> Result<BlockResult> {
    let cfg = &model.config;
    if past.len() != cfg.n_layers {
        return Err(Error::State(format!("bank has {} layers, model has {}", past.len(), cfg.n_layers)));
    }
    let n_past = match past[0] {
        Some((k, _)) => g.value(k).rows(),
        None => 0,
    };
    for p in past {
        let rows_here = p.map_or(0, |(k, _)| g.value(k).rows());
        if rows_here != n_past {
            return Err(Error::State("bank layers hold different entry counts".into()));
        }
    }
    let n = rows.tokens.len();
    let k = rows.mem_positions.len();
    if let BlockOutputs::Logits { from_row } = outputs {
        if from_row >= n + k {
            return Err(Error::InvalidInput(format!("logit rows start at {from_row} of {}", n + k)));
        }
    }
    let mask = Arc::new(build_mask(n_past, n, k).bits);
    let plan = row_plan(cfg.n_layers, n, k, outputs);
    let mut h = embed_rows(g, model, rows, plan[0].0)?;
    let mut mem_kv = Vec::with_capacity(cfg.n_layers);
    let mut reg_kv = Vec::with_capacity(cfg.n_layers);
    let mut last_out = None;
    for (l, &(in_start, out_start)) in plan.iter().enumerate() {
        let res = transformer_layer(g, model, l, h, in_start, n, k, out_start, past[l], &mask)?;
        mem_kv.push(res.mem_kv);
        reg_kv.push(res.reg_kv);
        match res.out {
            Some(o) => {
                h = o;
                last_out = Some(o);
            }
            None => last_out = None,
        }
    }
    let logits = match (outputs, last_out) {
        (BlockOutputs::Logits { .. }, Some(h)) => {
            let (fg, fb) = (g.param(model.index.final_gamma), g.param(model.index.final_beta));
            let hf = g.layer_norm(h, fg, fb, cfg.ln_eps)?;
            Some(match model.index.head {
                Some(head) => {
                    let w = g.param(head);
                    g.matmul(hf, w)?
                }
                None => {
                    let w = g.param(model.index.tok_embed);
                    g.matmul_nt(hf, w)?
                }
            })
        }
        _ => None,
    };
    Ok(BlockResult { logits, mem_kv, reg_kv })
}

/// Inserts the bank as constant leaves.
pub fn past_from_bank(g: &mut Graph, bank: &MemoryBank) -> PastKv {
    (0..bank.n_layers())
        .map(|l| {
            if bank.is_empty() {
                None
            } else {
                let layer = bank.layer(l);
                Some((g.constant(layer.keys.clone()), g.constant(layer.values.clone())))
            }
        })
        .collect()
}

/// Memory keys and values of one block, one `(K^m, V^m)` pair per layer.
pub type MemKv = Vec<(Tensor, Tensor)>;

/// Tensor-level forward of `tokens` plus `k` memory rows at consecutive
/// positions from `start_pos`, attending over `bank`.
///
/// Returns logits for every row and the per-layer memory keys and values.
pub fn forward_block(
    model: &ModelParams,
    bank: &MemoryBank,
    tokens: &[usize],
    k: usize,
    start_pos: usize,
) -> Result<(Tensor, MemKv)> {
    let n = tokens.len();
    let token_positions: Vec<usize> = (start_pos..start_pos + n).collect();
    let mem_positions: Vec<usize> = (start_pos + n..start_pos + n + k).collect();
    let rows = BlockRows { tokens, token_positions: &token_positions, mem_positions: &mem_positions };
    let mut g = Graph::new(&model.params, false);
    let past = past_from_bank(&mut g, bank);
    let res = forward_block_graph(&mut g, model, &past, &rows, BlockOutputs::Logits { from_row: 0 })?;
    let logits = g.value(res.logits.expect("logits requested")).clone();
    let mem = res
        .mem_kv
        .iter()
        .filter_map(|kv| kv.map(|(k, v)| (g.value(k).clone(), g.value(v).clone())))
        .collect();
    Ok((logits, mem))
}
