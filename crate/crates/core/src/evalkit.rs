//! Accuracy, needle grids, clue-grounding scores and resource profiles.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{forward_block_graph, BlockOutputs, BlockRows, ModelParams};
use crate::numcore::Graph;
use crate::pipeline::{frame_tokens, run_episode, EpisodeOptions, ProfileReport};
use crate::train::run_training;
use crate::persist::RunConfig;
use crate::tasks::{gen_needle, parse_grounded_timestamps, TaskSample};


/// Fraction of samples whose decoded answer equals the stored answer exactly.
pub fn accuracy(model: &ModelParams, samples: &[TaskSample], opts: &EpisodeOptions) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("accuracy over zero samples".into()));
    }
    let hits: Vec<Result<bool>> =
        samples.par_iter().map(|s| run_episode(model, s, opts).map(|r| r.answer_tokens == s.answer)).collect();
    let mut n = 0usize;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / samples.len() as f64)
}

/// Accuracy over a (depth × length) lattice of needle samples.
#[derive(Clone, Debug, PartialEq)]
pub struct NiahGrid {
    pub lengths: Vec<usize>,
    pub depths: Vec<f64>,
    /// `cells[depth][length]`.
    pub cells: Vec<Vec<f64>>,
    pub trials_per_cell: usize,
    /// Episodes that returned an error; each counts as a wrong answer.
    pub failed_trials: usize,
}

/// Seed of trial `t` in cell `(d, l)`.
pub fn niah_seed(seed: u64, n_lengths: usize, trials: usize, d: usize, l: usize, t: usize) -> u64 {
    seed + ((d * n_lengths + l) * trials + t) as u64
}

/// Runs every cell with `answer`, which maps a sample to predicted tokens.
pub fn niah_grid_with<F>(lengths: &[usize], depths: &[f64], trials: usize, seed: u64, answer: F) -> Result<NiahGrid>
where
    F: Fn(&TaskSample) -> Result<Vec<usize>> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidInput("a grid cell needs at least one trial".into()));
    }
    let mut jobs = Vec::new();
    for (d, &depth) in depths.iter().enumerate() {
        for (l, &len) in lengths.iter().enumerate() {
            for t in 0..trials {
                jobs.push((d, l, gen_needle(niah_seed(seed, lengths.len(), trials, d, l, t), len, depth)?));
            }
        }
    }
    let outcomes: Vec<Option<bool>> =
        jobs.par_iter().map(|(_, _, s)| answer(s).ok().map(|a| a == s.answer)).collect();
    let mut cells = vec![vec![0.0; lengths.len()]; depths.len()];
    let mut failed = 0;
    for ((d, l, _), o) in jobs.iter().zip(outcomes) {
        match o {
            Some(true) => cells[*d][*l] += 1.0,
            Some(false) => {}
            None => failed += 1,
        }
    }
    for row in &mut cells {
        for c in row.iter_mut() {
            *c /= trials as f64;
        }
    }
    Ok(NiahGrid {
        lengths: lengths.to_vec(),
        depths: depths.to_vec(),
        cells,
        trials_per_cell: trials,
        failed_trials: failed,
    })
}

pub fn niah_grid(
    model: &ModelParams,
    lengths: &[usize],
    depths: &[f64],
    trials: usize,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<NiahGrid> {
    niah_grid_with(lengths, depths, trials, seed, |s| run_episode(model, s, opts).map(|r| r.answer_tokens))
}

impl NiahGrid {
    /// Header `depth\length,T1,...`, one row per depth with six-decimal
    /// cells, then `# trials,<n>` and `# failed,<n>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth\\length");
        for l in &self.lengths {
            write!(s, ",{l}").expect("string write");
        }
        s.push('\n');
        for (d, row) in self.depths.iter().zip(&self.cells) {
            write!(s, "{d}").expect("string write");
            for c in row {
                write!(s, ",{c:.6}").expect("string write");
            }
            s.push('\n');
        }
        writeln!(s, "# trials,{}", self.trials_per_cell).expect("string write");
        writeln!(s, "# failed,{}", self.failed_trials).expect("string write");
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("NIAH CSV: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut cols = header.split(',');
        if cols.next() != Some("depth\\length") {
            return Err(bad("missing depth\\length header"));
        }
        let lengths = cols.map(|c| c.parse().map_err(|_| bad("bad length"))).collect::<Result<Vec<usize>>>()?;
        let (mut depths, mut cells) = (Vec::new(), Vec::new());
        let (mut trials, mut failed) = (None, 0);
        for line in lines.filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix("# ") {
                match rest.split_once(',') {
                    Some(("trials", n)) => trials = Some(n.parse().map_err(|_| bad("bad trial count"))?),
                    Some(("failed", n)) => failed = n.parse().map_err(|_| bad("bad failure count"))?,
                    _ => return Err(bad("unknown footer")),
                }
                continue;
            }
            let mut f = line.split(',');
            depths.push(f.next().unwrap_or("").parse().map_err(|_| bad("bad depth"))?);
            let row = f.map(|c| c.parse().map_err(|_| bad("bad cell"))).collect::<Result<Vec<f64>>>()?;
            if row.len() != lengths.len() {
                return Err(bad("row width differs from header"));
            }
            cells.push(row);
        }
        Ok(NiahGrid {
            lengths,
            depths,
            cells,
            trials_per_cell: trials.ok_or_else(|| bad("missing trials footer"))?,
            failed_trials: failed,
        })
    }

    /// Heatmap with one rect per cell, red at 0 through green at 1.
    pub fn to_svg(&self) -> String {
        let (cw, ch, left, top) = (60, 30, 70, 30);
        let w = left + cw * self.lengths.len() + 10;
        let h = top + ch * self.depths.len() + 30;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        for (i, l) in self.lengths.iter().enumerate() {
            let x = left + i * cw + cw / 2;
            writeln!(s, "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{l}</text>", top - 8).expect("write");
        }
        for (j, (d, row)) in self.depths.iter().zip(&self.cells).enumerate() {
            let y = top + j * ch;
            writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{d}</text>", left - 6, y + ch / 2 + 4).expect("write");
            for (i, &a) in row.iter().enumerate() {
                let a = a.clamp(0.0, 1.0);
                let (r, g) = ((255.0 * (1.0 - a)).round() as u8, (200.0 * a).round() as u8);
                writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{y}\" width=\"{cw}\" height=\"{ch}\" fill=\"rgb({r},{g},60)\"><title>{a:.6}</title></rect>",
                    left + i * cw
                )
                .expect("write");
            }
        }
        writeln!(s, "<text x=\"{left}\" y=\"{}\">frames</text>", h - 8).expect("write");
        s.push_str("</svg>\n");
        s
    }
}

/// Largest set of disjoint pairs `(p, g)` with `|p − g| ≤ theta`.
fn max_matching(pred: &[f64], gt: &[f64], theta: f64) -> usize {
    fn augment(p: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, seen, owner)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> =
        pred.iter().map(|&p| (0..gt.len()).filter(|&g| (p - gt[g]).abs() <= theta).collect()).collect();
    let mut owner = vec![None; gt.len()];
    (0..pred.len()).filter(|&p| augment(p, &adj, &mut vec![false; gt.len()], &mut owner)).count()
}

/// Jaccard score `M / (|pred| + |gt| − M)` over a maximum tolerance
/// matching of size `M`; two empty lists score 1.
pub fn miou_at_theta(pred: &[f64], gt: &[f64], theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {theta} must be non-negative")));
    }
    if pred.is_empty() && gt.is_empty() {
        return Ok(1.0);
    }
    let m = max_matching(pred, gt, theta);
    Ok(m as f64 / (pred.len() + gt.len() - m) as f64)
}

/// Mean mIoU at each tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingTable {
    /// `(theta, mean_miou, n)`.
    pub rows: Vec<(f64, f64, usize)>,
    /// Predictions that could not be read as timestamps and were scored as empty.
    pub unparseable: usize,
}

impl GroundingTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,mean_miou,n\n");
        for (t, m, n) in &self.rows {
            writeln!(s, "{t},{m},{n}").expect("string write");
        }
        s
    }

    /// Reads [`GroundingTable::to_csv`]; the unparseable count is not stored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("mIoU CSV: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("theta,mean_miou,n") {
            return Err(bad("missing header"));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 3 {
                    return Err(bad("expected three columns"));
                }
                Ok((
                    f[0].parse().map_err(|_| bad("bad theta"))?,
                    f[1].parse().map_err(|_| bad("bad mean"))?,
                    f[2].parse().map_err(|_| bad("bad count"))?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(GroundingTable { rows, unparseable: 0 })
    }
}

/// Scores predicted timestamp lists against ground truth; `None` predictions
/// count as empty and are tallied as unparseable.
pub fn grounding_table(preds: &[Option<Vec<f64>>], gts: &[Vec<f64>], thetas: &[f64]) -> Result<GroundingTable> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} references", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let empty = Vec::new();
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let mut sum = 0.0;
        for (p, g) in preds.iter().zip(gts) {
            sum += miou_at_theta(p.as_ref().unwrap_or(&empty), g, theta)?;
        }
        rows.push((theta, sum / preds.len() as f64, preds.len()));
    }
    Ok(GroundingTable { rows, unparseable: preds.iter().filter(|p| p.is_none()).count() })
}

/// Decodes grounded answers and scores their timestamps at each tolerance.
pub fn clue_grounding_eval(
    model: &ModelParams,
    samples: &[TaskSample],
    thetas: &[f64],
    opts: &EpisodeOptions,
) -> Result<GroundingTable> {
    let preds: Vec<Result<Option<Vec<f64>>>> = samples
        .par_iter()
        .map(|s| run_episode(model, s, opts).map(|r| parse_grounded_timestamps(&r.answer_tokens)))
        .collect();
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    let gts: Vec<Vec<f64>> = samples.iter().map(|s| s.clue_timestamps.clone()).collect();
    grounding_table(&preds, &gts, thetas)
}

/// Full-attention comparison for one profiled length.
#[derive(Clone, Debug, PartialEq)]
pub enum Baseline {
    Measured { width: usize, live_scalars: usize },
    /// The baseline would have held more than the budget.
    BudgetExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub t: usize,
    pub report: ProfileReport,
    /// Closed-form width from the layout.
    pub predicted_width: usize,
    pub baseline: Baseline,
}

impl ProfileRow {
    /// Baseline width over recurrent width.
    pub fn ratio(&self) -> Option<f64> {
        match self.baseline {
            Baseline::Measured { width, .. } => Some(width as f64 / self.report.peak_attention_width as f64),
            Baseline::BudgetExceeded => None,
        }
    }
}

/// Profiles one needle episode of `t` frames and a full-attention forward of
/// the same frames and question as one causal block with no memory.
pub fn profile_run(model: &ModelParams, t: usize, opts: &EpisodeOptions, scalar_budget: usize) -> Result<ProfileRow> {
    if t < model.config.seg_len {
        return Err(Error::InvalidInput(format!("profile length {t} is shorter than one segment")));
    }
    let sample = gen_needle(t as u64, t, 0.5)?;
    let result = run_episode(model, &sample, opts)?;
    let decode_steps = result.answer_tokens.len().max(1).min(sample.answer.len());
    let predicted_width = if opts.history {
        result.layout.peak_attention_width(decode_steps)
    } else {
        result.layout.peak_attention_width_without_history(decode_steps)
    };

    let mut tokens = frame_tokens(&sample.frames, opts.tokens_per_frame);
    tokens.extend_from_slice(&sample.question);
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let baseline = if tokens.len() > model.config.max_position {
        Baseline::BudgetExceeded
    } else {
        let rows = BlockRows { tokens: &tokens, token_positions: &positions, mem_positions: &[] };
        let mut g = Graph::new(&model.params, false).with_budget(scalar_budget);
        match forward_block_graph(&mut g, model, &vec![None; model.config.n_layers], &rows, BlockOutputs::Logits {
            from_row: tokens.len() - 1,
        }) {
            Ok(_) => {
                let s = g.stats();
                Baseline::Measured { width: s.peak_attention_width, live_scalars: s.live_scalars }
            }
            Err(Error::Capacity { .. }) => Baseline::BudgetExceeded,
            Err(e) => return Err(e),
        }
    };
    Ok(ProfileRow { t, report: result.profile, predicted_width, baseline })
}

/// `T,S,P_final,peak_width,peak_scalars,wall_ms,baseline_width,baseline_scalars,ratio`;
/// budget-exceeded baselines write `budget-exceeded` in the last three columns.
pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut s = String::from("T,S,P_final,peak_width,peak_scalars,wall_ms,baseline_width,baseline_scalars,ratio\n");
    for r in rows {
        let p = &r.report;
        write!(s, "{},{},{},{},{},{:.3},", r.t, p.segments, p.bank_entries_final, p.peak_attention_width, p.peak_live_scalars, p.wall_ms)
            .expect("string write");
        match (&r.baseline, r.ratio()) {
            (Baseline::Measured { width, live_scalars }, Some(ratio)) => {
                writeln!(s, "{width},{live_scalars},{ratio:.4}").expect("string write")
            }
            _ => s.push_str("budget-exceeded,budget-exceeded,budget-exceeded\n"),
        }
    }
    s
}

/// Reads [`profile_csv`] output back; wall time keeps its three decimals and
/// the predicted width is taken to be the measured one.
pub fn parse_profile_csv(text: &str) -> Result<Vec<ProfileRow>> {
    let bad = |m: &str| Error::Format(format!("profile CSV: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("T,S,P_final,peak_width,peak_scalars,wall_ms,baseline_width,baseline_scalars,ratio") {
        return Err(bad("missing header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 9 {
                return Err(bad("expected nine columns"));
            }
            let u = |i: usize| f[i].parse::<usize>().map_err(|_| bad("bad integer"));
            let report = ProfileReport {
                peak_attention_width: u(3)?,
                bank_entries_final: u(2)?,
                peak_live_scalars: u(4)?,
                wall_ms: f[5].parse().map_err(|_| bad("bad wall time"))?,
                segments: u(1)?,
            };
            let baseline = if f[6] == "budget-exceeded" {
                Baseline::BudgetExceeded
            } else {
                Baseline::Measured { width: u(6)?, live_scalars: u(7)? }
            };
            Ok(ProfileRow { t: u(0)?, predicted_width: report.peak_attention_width, report, baseline })
        })
        .collect()
}

/// One trained-and-scored point of a compression sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub alpha: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Trains one model per `(alpha, seed offset)` from `base` and scores it on
/// the test split (the first `base.eval.samples` samples when that is set).
/// `progress` sees each row as it completes.
pub fn compression_sweep(
    base: &RunConfig,
    alphas: &[usize],
    seeds: usize,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut test = base.task.split(2)?;
    if base.eval.samples > 0 {
        test.truncate(base.eval.samples);
    }
    let opts = EpisodeOptions { history: true, tokens_per_frame: base.tokens_per_frame };
    let mut rows = Vec::new();
    for &alpha in alphas {
        for s in 0..seeds as u64 {
            let mut cfg = base.clone();
            cfg.model.alpha = alpha;
            cfg.train.seed = base.train.seed + s;
            cfg.validate()?;
            let out = run_training(&cfg.task, &cfg.model, &cfg.train, cfg.tokens_per_frame, None, None)?;
            let row = AblationRow { alpha, seed: cfg.train.seed, accuracy: accuracy(&out.model, &test, &opts)? };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean accuracy per alpha, in first-appearance order.
pub fn ablation_means(rows: &[AblationRow]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|m| m.0 == r.alpha) {
            Some(m) => {
                m.1 += r.accuracy;
                m.2 += 1;
            }
            None => out.push((r.alpha, r.accuracy, 1)),
        }
    }
    out.into_iter().map(|(a, s, n)| (a, s / n as f64)).collect()
}

/// `alpha,seed,accuracy` rows followed by `alpha,mean` summary rows marked `mean`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("alpha,seed,accuracy\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.alpha, r.seed, r.accuracy).expect("string write");
    }
    for (a, m) in ablation_means(rows) {
        writeln!(s, "{a},mean,{m}").expect("string write");
    }
    s
}

pub fn parse_ablation_csv(text: &str) -> Result<Vec<AblationRow>> {
    let bad = |m: &str| Error::Format(format!("ablation CSV: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("alpha,seed,accuracy") {
        return Err(bad("missing header"));
    }
    let mut rows = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 3 {
            return Err(bad("expected three columns"));
        }
        if f[1] == "mean" {
            continue;
        }
        rows.push(AblationRow {
            alpha: f[0].parse().map_err(|_| bad("bad alpha"))?,
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            accuracy: f[2].parse().map_err(|_| bad("bad accuracy"))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tries every injective partial assignment of predictions to references.
    fn exhaustive(pred: &[f64], gt: &[f64], theta: f64) -> usize {
        fn go(i: usize, pred: &[f64], gt: &[f64], used: &mut Vec<bool>, theta: f64) -> usize {
            if i == pred.len() {
                return 0;
            }
            let mut best = go(i + 1, pred, gt, used, theta);
            for g in 0..gt.len() {
                if !used[g] && (pred[i] - gt[g]).abs() <= theta {
                    used[g] = true;
                    best = best.max(1 + go(i + 1, pred, gt, used, theta));
                    used[g] = false;
                }
            }
            best
        }
        go(0, pred, gt, &mut vec![false; gt.len()], theta)
    }

    #[test]
    fn worked_examples() {
        assert_eq!(miou_at_theta(&[10.0], &[12.0], 5.0).unwrap(), 1.0);
        assert_eq!(miou_at_theta(&[10.0, 50.0], &[12.0], 5.0).unwrap(), 0.5);
        assert_eq!(miou_at_theta(&[], &[], 5.0).unwrap(), 1.0);
        assert_eq!(miou_at_theta(&[], &[3.0], 5.0).unwrap(), 0.0);
        assert!(miou_at_theta(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn greedy_trap_needs_augmenting_path() {
        // Greedy pairs 5 with 3 and leaves 0 unmatched; optimum matches both.
        assert_eq!(max_matching(&[5.0, 0.0], &[3.0, 8.0], 3.0), 2);
        assert_eq!(exhaustive(&[5.0, 0.0], &[3.0, 8.0], 3.0), 2);
    }

    #[test]
    fn monotone_in_theta() {
        let (p, g) = ([1.0, 9.0, 20.0], [4.0, 14.0]);
        let scores: Vec<f64> = [0.0, 3.0, 5.0, 11.0].iter().map(|&t| miou_at_theta(&p, &g, t).unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn oracle_grid_is_all_ones() {
        let grid = niah_grid_with(&[64, 128], &[0.0, 0.5, 1.0], 5, 11, |s| Ok(s.answer.clone())).unwrap();
        assert_eq!(grid.cells.len(), 3);
        assert!(grid.cells.iter().all(|r| r.len() == 2 && r.iter().all(|&c| c == 1.0)));
        let failing = niah_grid_with(&[16], &[0.5], 4, 0, |_| Err(Error::State("x".into()))).unwrap();
        assert_eq!(failing.failed_trials, 4);
        assert_eq!(failing.cells, vec![vec![0.0]]);
    }

    #[test]
    fn grid_csv_round_trip_and_svg() {
        let grid = NiahGrid {
            lengths: vec![64, 128],
            depths: vec![0.0, 0.5, 1.0],
            cells: vec![vec![1.0, 0.8], vec![0.6, 0.4], vec![0.2, 0.0]],
            trials_per_cell: 5,
            failed_trials: 1,
        };
        let csv = grid.to_csv();
        assert!(csv.starts_with("depth\\length,64,128\n0,1.000000,0.800000\n"));
        assert_eq!(NiahGrid::from_csv(&csv).unwrap(), grid);
        let svg = grid.to_svg();
        assert_eq!(svg.matches("<rect").count(), 6);
        assert!(svg.contains("<title>0.800000</title>"));
    }

    #[test]
    fn grounding_table_and_csv() {
        let preds = vec![Some(vec![10.0]), None];
        let gts = vec![vec![12.0], vec![3.0]];
        let t = grounding_table(&preds, &gts, &[1.0, 5.0]).unwrap();
        assert_eq!(t.rows, vec![(1.0, 0.0, 2), (5.0, 0.5, 2)]);
        assert_eq!(t.unparseable, 1);
        let back = GroundingTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back.rows, t.rows);
    }

    /// Same five samples as the CLI fixture files.
    #[test]
    fn five_sample_fixture() {
        let preds = vec![
            Some(vec![10.0, 20.0]),
            Some(vec![]),
            Some(vec![5.0]),
            Some(vec![100.0, 104.0]),
            Some(vec![0.0, 50.0, 90.0]),
        ];
        let gts = vec![vec![12.0, 30.0], vec![], vec![], vec![102.0], vec![7.0, 49.0, 101.0]];
        let t = grounding_table(&preds, &gts, &[5.0, 10.0, 15.0]).unwrap();
        // Per sample at θ=5: 1/3, 1, 0, 1/2, 1/5; θ=10: 1, 1, 0, 1/2, 1/2; θ=15: 1, 1, 0, 1/2, 1.
        let expected = [61.0 / 150.0, 0.6, 0.7];
        for ((_, mean, n), e) in t.rows.iter().zip(expected) {
            assert!((mean - e).abs() < 1e-12, "{mean} vs {e}");
            assert_eq!(*n, 5);
        }
        assert_eq!(t.unparseable, 0);
    }

    #[test]
    fn random_instances_match_exhaustive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..300 {
            let p: Vec<f64> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..30) as f64).collect();
            let g: Vec<f64> = (0..rng.gen_range(0..=6)).map(|_| rng.gen_range(0..30) as f64).collect();
            let theta = rng.gen_range(0..8) as f64;
            assert_eq!(max_matching(&p, &g, theta), exhaustive(&p, &g, theta));
        }
    }
}
