//! Shapley attributions: local (SHAP) and global (SAGE), plus partial
//! dependence and the average local-importance ranking.
//!
//! Features outside a coalition are marginalized over a fixed background
//! sample: `v(S)` averages the model output (or loss) over background rows
//! with the coalition's features overwritten by the explained row.

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PortId;
use crate::model::{Node, RandomForest};

/// Largest feature count accepted by exact enumeration.
pub const MAX_EXACT_FEATURES: usize = 15;

/// Clip applied to predicted probabilities before taking logs.
pub const LOSS_EPSILON: f64 = 1e-6;

/// Anything that maps a feature row to a positive-class score.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;

    /// Evaluator for `v(S)` against a fixed background. The default runs the
    /// model once per background row.
    fn marginal<'a>(&'a self, background: &'a [Vec<f64>]) -> Box<dyn Marginal + 'a> {
        Box::new(RowByRow {
            predict: move |z: &[f64]| self.predict(z),
            background,
        })
    }
}

/// Mean model output over a background with some features pinned.
pub trait Marginal: Sync {
    /// Mean over background rows `b` of `f(z)`, where `z` takes `x` on
    /// `mask` and `b` elsewhere.
    fn mean(&self, x: &[f64], mask: &[bool]) -> f64;
}

struct RowByRow<'a, F> {
    predict: F,
    background: &'a [Vec<f64>],
}

impl<F: Fn(&[f64]) -> f64 + Sync> Marginal for RowByRow<'_, F> {
    fn mean(&self, x: &[f64], mask: &[bool]) -> f64 {
        let mut z = Vec::with_capacity(x.len());
        masked_mean(self.background, x, mask, &mut z, &self.predict)
    }
}

impl Predictor for RandomForest {
    fn n_features(&self) -> usize {
        RandomForest::n_features(self)
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.predict_one(x)
    }

    fn marginal<'a>(&'a self, background: &'a [Vec<f64>]) -> Box<dyn Marginal + 'a> {
        Box::new(ForestMarginal::new(self, background))
    }
}

/// Routes the whole background through each tree at once. Every split keeps
/// the bitset of background rows that go left; a pinned feature sends the
/// current row set one way, a free one intersects it with that bitset.
struct ForestMarginal<'a> {
    forest: &'a RandomForest,
    rows: usize,
    words: usize,
    /// Per tree, per node: left-going background rows (empty for leaves).
    left: Vec<Vec<Vec<u64>>>,
    depth: usize,
}

impl<'a> ForestMarginal<'a> {
    fn new(forest: &'a RandomForest, background: &[Vec<f64>]) -> Self {
        let words = background.len().div_ceil(64);
        let left = forest
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|node| match *node {
                        Node::Split { feature, threshold, .. } => {
                            let mut bits = vec![0u64; words];
                            for (r, b) in background.iter().enumerate() {
                                if b[feature] <= threshold {
                                    bits[r / 64] |= 1 << (r % 64);
                                }
                            }
                            bits
                        }
                        Node::Leaf { .. } => Vec::new(),
                    })
                    .collect()
            })
            .collect();
        let depth = forest.trees.iter().map(|t| t.depth()).max().unwrap_or(0);
        ForestMarginal {
            forest,
            rows: background.len(),
            words,
            left,
            depth,
        }
    }

    /// Background rows that reach a positive-voting leaf below `node`.
    fn walk(&self, tree: usize, node: usize, cur: &[u64], x: &[f64], mask: &[bool], scratch: &mut [u64]) -> u64 {
        match self.forest.trees[tree].nodes[node] {
            Node::Leaf { neg, pos } => {
                if pos > neg {
                    cur.iter().map(|w| u64::from(w.count_ones())).sum()
                } else {
                    0
                }
            }
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if mask[feature] {
                    let next = if x[feature] <= threshold { left } else { right };
                    return self.walk(tree, next, cur, x, mask, scratch);
                }
                let goes_left = &self.left[tree][node];
                let (buf, rest) = scratch.split_at_mut(self.words);
                let mut total = 0;
                for (child, flip) in [(left, 0u64), (right, !0u64)] {
                    let mut any = 0;
                    for w in 0..self.words {
                        buf[w] = cur[w] & (goes_left[w] ^ flip);
                        any |= buf[w];
                    }
                    if any != 0 {
                        total += self.walk(tree, child, buf, x, mask, rest);
                    }
                }
                total
            }
        }
    }
}

impl Marginal for ForestMarginal<'_> {
    fn mean(&self, x: &[f64], mask: &[bool]) -> f64 {
        let mut all = vec![!0u64; self.words];
        if !self.rows.is_multiple_of(64) {
            all[self.words - 1] = (1u64 << (self.rows % 64)) - 1;
        }
        let mut scratch = vec![0u64; self.words * (self.depth + 1)];
        let votes: u64 = (0..self.forest.trees.len())
            .map(|t| self.walk(t, 0, &all, x, mask, &mut scratch))
            .sum();
        votes as f64 / (self.rows * self.forest.trees.len()) as f64
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnPredictor<F> {
    pub d: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Mode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output at the explained row.
    pub prediction: f64,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    /// Standard error per feature (sampled mode only).
    pub stderr: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageValues {
    /// Loss of the feature-free prediction minus loss of the full model.
    pub total: f64,
    pub phi: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub loss: String,
}

/// Seeded subsample of at most `cap` rows, in original order.
pub fn background_sample(rows: &[Vec<f64>], cap: usize, seed: u64) -> Vec<Vec<f64>> {
    if rows.len() <= cap {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, rows.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| rows[i].clone()).collect()
}

fn check_inputs(model: &dyn Predictor, background: &[Vec<f64>], x: &[f64]) -> Result<usize> {
    if background.is_empty() {
        return Err(Error::Empty("background set"));
    }
    let d = model.n_features();
    if x.len() != d || background.iter().any(|b| b.len() != d) {
        return Err(Error::InvalidInput(format!("rows must have {d} features")));
    }
    Ok(d)
}

/// Mean over the background of `g(z)` where `z` takes `x` on `mask` and the
/// background row elsewhere.
fn masked_mean(background: &[Vec<f64>], x: &[f64], mask: &[bool], z: &mut Vec<f64>, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut sum = 0.0;
    for b in background {
        z.clear();
        z.extend(mask.iter().enumerate().map(|(i, &m)| if m { x[i] } else { b[i] }));
        sum += g(z);
    }
    sum / background.len() as f64
}

fn mask_of(bits: usize, d: usize) -> Vec<bool> {
    (0..d).map(|i| bits >> i & 1 == 1).collect()
}

/// Shapley combination of a set function given as `v[bits]` over all
/// subsets.
fn shapley_from_table(v: &[f64], d: usize) -> Vec<f64> {
    // weight[s] = s! (d - s - 1)! / d! = 1 / (d * C(d - 1, s))
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut c = 1.0;
        for k in 0..s {
            c = c * (d - 1 - k) as f64 / (k + 1) as f64;
        }
        *w = 1.0 / (d as f64 * c);
    }
    (0..d)
        .map(|i| {
            let bit = 1usize << i;
            (0..v.len())
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (v[s | bit] - v[s]))
                .sum()
        })
        .collect()
}

/// Streaming per-feature sums for permutation estimates.
#[derive(Clone)]
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; d],
            sumsq: vec![0.0; d],
        }
    }

    fn push(&mut self, delta: &[f64]) {
        self.n += 1;
        for (i, &v) in delta.iter().enumerate() {
            self.sum[i] += v;
            self.sumsq[i] += v * v;
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        self.n += other.n;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sumsq[i] += other.sumsq[i];
        }
        self
    }

    fn mean_and_stderr(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let se = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| {
                if self.n < 2 {
                    return 0.0;
                }
                let var = ((sq - n * m * m) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect();
        (mean, se)
    }
}

const CHUNK: usize = 32;

/// Runs `samples` permutation draws in fixed-size chunks with seeds drawn from
/// `seed`, so results do not depend on the thread count.
fn sample_permutations(d: usize, samples: usize, seed: u64, draw: impl Fn(&mut ChaCha8Rng, &mut Vec<usize>, &mut Vec<f64>) + Sync) -> Moments {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let chunks = samples.div_ceil(CHUNK);
    let seeds: Vec<u64> = (0..chunks).map(|_| master.random()).collect();
    let parts: Vec<Moments> = seeds
        .into_par_iter()
        .enumerate()
        .map(|(c, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut m = Moments::new(d);
            let mut perm: Vec<usize> = (0..d).collect();
            let mut delta = vec![0.0; d];
            for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                perm.shuffle(&mut rng);
                draw(&mut rng, &mut perm, &mut delta);
                m.push(&delta);
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::new(d), Moments::merge)
}

/// SHAP values of `model` at `x` against `background`.
pub fn shap_values(model: &dyn Predictor, background: &[Vec<f64>], x: &[f64], mode: Mode) -> Result<ShapExplanation> {
    let d = check_inputs(model, background, x)?;
    let marginal = model.marginal(background);
    let prediction = model.predict(x);
    let base_value = marginal.mean(x, &vec![false; d]);
    let (phi, stderr) = match mode {
        Mode::Exact => {
            if d > MAX_EXACT_FEATURES {
                return Err(Error::InvalidInput(format!(
                    "exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
                )));
            }
            let v: Vec<f64> = (0..1usize << d)
                .into_par_iter()
                .map(|bits| marginal.mean(x, &mask_of(bits, d)))
                .collect();
            (shapley_from_table(&v, d), None)
        }
        Mode::Sampled { permutations, seed } => {
            if permutations == 0 {
                return Err(Error::InvalidInput("permutations must be positive".into()));
            }
            let m = sample_permutations(d, permutations, seed, |_, perm, delta| {
                let mut mask = vec![false; d];
                let mut prev = base_value;
                for &i in perm.iter() {
                    mask[i] = true;
                    let cur = marginal.mean(x, &mask);
                    delta[i] = cur - prev;
                    prev = cur;
                }
            });
            let (phi, se) = m.mean_and_stderr();
            (phi, Some(se))
        }
    };
    Ok(ShapExplanation {
        base_value,
        prediction,
        x: x.to_vec(),
        phi,
        stderr,
    })
}

/// Binary cross-entropy with probabilities clipped to `[eps, 1 - eps]`.
pub fn cross_entropy(p: f64, y: bool) -> f64 {
    let p = p.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// SAGE values: Shapley attribution of the cross-entropy reduction
/// `E[l(f_empty)] - E[l(f_S)]`, with `f_S` averaging the model over
/// `background` for the features outside `S`.
pub fn sage_values(model: &dyn Predictor, rows: &[Vec<f64>], labels: &[bool], background: &[Vec<f64>], mode: Mode) -> Result<SageValues> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let d = check_inputs(model, background, &rows[0])?;
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput(format!("rows must have {d} features")));
    }
    let marginal = model.marginal(background);
    let f_empty = marginal.mean(&rows[0], &vec![false; d]);
    let loss_empty = labels.iter().map(|&y| cross_entropy(f_empty, y)).sum::<f64>() / labels.len() as f64;
    let loss_full = rows
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| cross_entropy(model.predict(x), y))
        .sum::<f64>()
        / rows.len() as f64;
    let total = loss_empty - loss_full;
    let (phi, stderr) = match mode {
        Mode::Exact => {
            if d > MAX_EXACT_FEATURES {
                return Err(Error::InvalidInput(format!(
                    "exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {d}"
                )));
            }
            let v: Vec<f64> = (0..1usize << d)
                .into_par_iter()
                .map(|bits| {
                    let mask = mask_of(bits, d);
                    let loss: f64 = rows
                        .iter()
                        .zip(labels)
                        .map(|(x, &y)| cross_entropy(marginal.mean(x, &mask), y))
                        .sum();
                    loss_empty - loss / rows.len() as f64
                })
                .collect();
            (shapley_from_table(&v, d), None)
        }
        Mode::Sampled { permutations, seed } => {
            if permutations == 0 {
                return Err(Error::InvalidInput("permutations must be positive".into()));
            }
            // Each draw pairs a random evaluation row with a random ordering.
            let m = sample_permutations(d, permutations, seed, |rng, perm, delta| {
                let r = rng.random_range(0..rows.len());
                let (x, y) = (&rows[r], labels[r]);
                let mut mask = vec![false; d];
                let mut prev = cross_entropy(f_empty, y);
                for &i in perm.iter() {
                    mask[i] = true;
                    let cur = cross_entropy(marginal.mean(x, &mask), y);
                    delta[i] = prev - cur;
                    prev = cur;
                }
            });
            let (phi, se) = m.mean_and_stderr();
            (phi, Some(se))
        }
    };
    Ok(SageValues {
        total,
        phi,
        stderr,
        loss: "cross_entropy".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependence {
    pub feature: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Rows whose feature value lies nearest each grid point.
    pub histogram: Vec<usize>,
}

/// Sorted distinct values of `feature`, thinned to at most `max_points`
/// evenly spaced quantiles.
pub fn default_grid(rows: &[Vec<f64>], feature: usize, max_points: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = rows.iter().map(|r| r[feature]).filter(|v| v.is_finite()).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    if vals.len() <= max_points || max_points < 2 {
        return vals;
    }
    let last = vals.len() - 1;
    let mut grid: Vec<f64> = (0..max_points).map(|k| vals[k * last / (max_points - 1)]).collect();
    grid.dedup();
    grid
}

pub fn partial_dependence(model: &dyn Predictor, rows: &[Vec<f64>], feature: usize, grid: Option<Vec<f64>>) -> Result<PartialDependence> {
    if rows.is_empty() {
        return Err(Error::Empty("evaluation rows"));
    }
    if feature >= model.n_features() {
        return Err(Error::InvalidInput(format!("feature {feature} out of range")));
    }
    let grid = grid.unwrap_or_else(|| default_grid(rows, feature, 64));
    if grid.is_empty() {
        return Err(Error::Empty("partial dependence grid"));
    }
    let mean = grid
        .par_iter()
        .map(|&g| {
            let mut z = Vec::new();
            rows.iter()
                .map(|r| {
                    z.clear();
                    z.extend_from_slice(r);
                    z[feature] = g;
                    model.predict(&z)
                })
                .sum::<f64>()
                / rows.len() as f64
        })
        .collect();
    let mut histogram = vec![0; grid.len()];
    for r in rows {
        let v = r[feature];
        let k = (0..grid.len())
            .min_by(|&a, &b| (grid[a] - v).abs().total_cmp(&(grid[b] - v).abs()))
            .unwrap();
        histogram[k] += 1;
    }
    Ok(PartialDependence {
        feature,
        grid,
        mean,
        histogram,
    })
}

/// Descending ranks of `|phi|`, 1 = largest; ties share their average rank.
pub fn abs_ranks(phi: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()));
    let mut ranks = vec![0.0; phi.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && phi[order[j]].abs() == phi[order[i]].abs() {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Average per-observation rank of each feature's `|phi|`.
pub fn local_rank(explanations: &[ShapExplanation]) -> Result<Vec<f64>> {
    let first = explanations.first().ok_or(Error::Empty("explanations"))?;
    let d = first.phi.len();
    if explanations.iter().any(|e| e.phi.len() != d) {
        return Err(Error::InvalidInput("explanations have different feature counts".into()));
    }
    let mut total = vec![0.0; d];
    for e in explanations {
        for (t, r) in total.iter_mut().zip(abs_ranks(&e.phi)) {
            *t += r;
        }
    }
    Ok(total.into_iter().map(|t| t / explanations.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    /// Decoded level for categorical features, filled in by the caller.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    pub port_id: Option<PortId>,
    pub base_value: f64,
    pub prediction: f64,
    /// Sorted by `|phi|` descending.
    pub contributions: Vec<Contribution>,
}

pub fn force_report(e: &ShapExplanation, names: &[String], port_id: Option<PortId>) -> Result<ForceReport> {
    if names.len() != e.phi.len() {
        return Err(Error::InvalidInput("feature names do not match explanation".into()));
    }
    let mut order: Vec<usize> = (0..e.phi.len()).collect();
    order.sort_by(|&a, &b| e.phi[b].abs().total_cmp(&e.phi[a].abs()).then(a.cmp(&b)));
    Ok(ForceReport {
        port_id,
        base_value: e.base_value,
        prediction: e.prediction,
        contributions: order
            .into_iter()
            .map(|i| Contribution {
                feature: names[i].clone(),
                value: e.x[i],
                display: None,
                phi: e.phi[i],
            })
            .collect(),
    })
}

pub fn write_shap_matrix<W: Write>(out: W, names: &[String], ports: &[PortId], explanations: &[ShapExplanation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["port_id".to_owned(), "base_value".to_owned()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (p, e) in ports.iter().zip(explanations) {
        let mut rec = vec![p.to_string(), e.base_value.to_string()];
        rec.extend(e.phi.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<shap>", e))?;
    Ok(())
}

pub fn write_sage<W: Write>(out: W, names: &[String], sage: &SageValues) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "value", "stderr"])?;
    for (i, n) in names.iter().enumerate() {
        let se = sage.stderr.as_ref().map_or(String::new(), |s| s[i].to_string());
        w.write_record([n.clone(), sage.phi[i].to_string(), se])?;
    }
    w.flush().map_err(|e| Error::io("<sage>", e))?;
    Ok(())
}

pub fn write_partial_dependence<W: Write>(out: W, pd: &PartialDependence) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grid_value", "mean_output", "count"])?;
    for i in 0..pd.grid.len() {
        w.write_record([pd.grid[i].to_string(), pd.mean[i].to_string(), pd.histogram[i].to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<pdp>", e))?;
    Ok(())
}

/// Picks `k` distinct rows uniformly at random (all rows if `k >= n`).
pub fn choose_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let all: Vec<usize> = (0..n).collect();
    if k >= n {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = all.choose_multiple(&mut rng, k).copied().collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_background(d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..40).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
    }

    #[test]
    fn shapley_weights_sum_to_one() {
        for d in 1..10 {
            // v(S) = 1 for every nonempty S: total gain 1 split evenly.
            let v: Vec<f64> = (0..1usize << d).map(|s| if s == 0 { 0.0 } else { 1.0 }).collect();
            let phi = shapley_from_table(&v, d);
            assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn additive_model_closed_form() {
        // f = x0 with background mean 0: phi0 = 3, phi1 = 0.
        let model = FnPredictor { d: 2, f: |x: &[f64]| x[0] };
        let bg = vec![vec![-1.0, 5.0], vec![1.0, -2.0]];
        let e = shap_values(&model, &bg, &[3.0, 7.0], Mode::Exact).unwrap();
        assert!((e.phi[0] - 3.0).abs() < 1e-12);
        assert_eq!(e.phi[1], 0.0);
        assert_eq!(e.base_value, 0.0);
    }

    #[test]
    fn symmetric_features_share_credit() {
        let model = FnPredictor { d: 2, f: |x: &[f64]| x[0] + x[1] + x[0] * x[1] };
        let bg = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 2.0], vec![2.0, -1.0]];
        let e = shap_values(&model, &bg, &[1.5, 1.5], Mode::Exact).unwrap();
        assert!((e.phi[0] - e.phi[1]).abs() < 1e-12);
    }

    #[test]
    fn exact_efficiency() {
        let model = FnPredictor {
            d: 4,
            f: |x: &[f64]| (x[0] * x[1]).sin() + x[2].max(x[3]) - 0.3 * x[3],
        };
        let bg = grid_background(4);
        let e = shap_values(&model, &bg, &[0.5, -1.0, 1.2, 0.1], Mode::Exact).unwrap();
        assert!((e.base_value + e.phi.iter().sum::<f64>() - e.prediction).abs() < 1e-12);
    }

    #[test]
    fn sampled_matches_exact_and_sums_exactly() {
        let model = FnPredictor {
            d: 3,
            f: |x: &[f64]| if x[0] > 0.0 { 0.8 } else { 0.1 } + 0.1 * (x[1] > x[2]) as u8 as f64,
        };
        let bg = grid_background(3);
        let x = [1.0, 0.5, -0.5];
        let exact = shap_values(&model, &bg, &x, Mode::Exact).unwrap();
        let sampled = shap_values(&model, &bg, &x, Mode::Sampled { permutations: 2000, seed: 3 }).unwrap();
        for i in 0..3 {
            assert!((exact.phi[i] - sampled.phi[i]).abs() < 0.02);
        }
        assert!((sampled.base_value + sampled.phi.iter().sum::<f64>() - sampled.prediction).abs() < 1e-12);
    }

    #[test]
    fn empty_background_and_large_d() {
        let model = FnPredictor { d: 2, f: |x: &[f64]| x[0] };
        assert!(matches!(shap_values(&model, &[], &[0.0, 0.0], Mode::Exact), Err(Error::Empty(_))));
        let big = FnPredictor { d: 16, f: |_: &[f64]| 0.0 };
        assert!(shap_values(&big, &[vec![0.0; 16]], &[0.0; 16], Mode::Exact).is_err());
    }

    #[test]
    fn forest_marginal_matches_row_by_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] + r[1] * r[2] > 0.7).collect();
        let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
        let params = crate::model::ForestParams { trees: 15, seed: 2, ..Default::default() };
        let forest = RandomForest::train(&rows, &labels, &names, &params).unwrap();
        // 70 rows spans two bitset words with a partial tail.
        let bg = &rows[..70];
        let fast = forest.marginal(bg);
        let slow = RowByRow {
            predict: |z: &[f64]| forest.predict_one(z),
            background: bg,
        };
        for (k, x) in rows[100..120].iter().enumerate() {
            let mask = mask_of(k * 7 % 32, 5);
            assert!((fast.mean(x, &mask) - slow.mean(x, &mask)).abs() < 1e-12);
        }
    }

    fn logistic_fixture() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..120).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = rows.iter().map(|r| rng.random::<f64>() < 1.0 / (1.0 + (-3.0 * r[0]).exp())).collect();
        (rows, labels)
    }

    #[test]
    fn sage_exact_efficiency_and_noise_feature() {
        let (rows, labels) = logistic_fixture();
        let model = FnPredictor {
            d: 3,
            f: |x: &[f64]| 1.0 / (1.0 + (-3.0 * x[0]).exp()),
        };
        let s = sage_values(&model, &rows, &labels, &rows, Mode::Exact).unwrap();
        assert!((s.phi.iter().sum::<f64>() - s.total).abs() < 1e-9);
        assert!(s.phi[0] > 0.1);
        assert_eq!(s.phi[1], 0.0);
        assert_eq!(s.phi[2], 0.0);
        let sampled = sage_values(&model, &rows, &labels, &rows, Mode::Sampled { permutations: 256, seed: 2 }).unwrap();
        let se = sampled.stderr.unwrap();
        assert!((sampled.phi[0] - s.phi[0]).abs() < 3.0 * se[0]);
        assert!(sampled.phi[1].abs() <= 2.0 * se[1]);
    }

    #[test]
    fn sage_rejects_one_class() {
        let model = FnPredictor { d: 1, f: |x: &[f64]| x[0] };
        let rows = vec![vec![0.2], vec![0.4]];
        assert!(matches!(
            sage_values(&model, &rows, &[true, true], &rows, Mode::Exact),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn partial_dependence_shapes() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let step = FnPredictor {
            d: 2,
            f: |x: &[f64]| (x[0] > 4.5) as u8 as f64,
        };
        let pd = partial_dependence(&step, &rows, 0, None).unwrap();
        assert_eq!(pd.grid.len(), 10);
        for (g, m) in pd.grid.iter().zip(&pd.mean) {
            assert_eq!(*m, if *g > 4.5 { 1.0 } else { 0.0 });
        }
        let flat = partial_dependence(&step, &rows, 1, None).unwrap();
        assert!(flat.mean.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(flat.histogram, vec![4, 3, 3]);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(abs_ranks(&[0.1, -0.5, 0.0, 0.0]), vec![2.0, 1.0, 3.5, 3.5]);
        let e = |phi: Vec<f64>| ShapExplanation {
            base_value: 0.0,
            prediction: 0.0,
            x: vec![0.0; phi.len()],
            phi,
            stderr: None,
        };
        let r = local_rank(&[e(vec![1.0, 0.5, 0.0]), e(vec![0.2, 0.9, 0.0])]).unwrap();
        assert_eq!(r, vec![1.5, 1.5, 3.0]);
        assert!(local_rank(&[]).is_err());
    }

    #[test]
    fn force_report_orders_by_magnitude() {
        let e = ShapExplanation {
            base_value: 0.2,
            prediction: 0.5,
            x: vec![1.0, 2.0, 3.0],
            phi: vec![0.05, -0.15, 0.4],
            stderr: None,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = force_report(&e, &names, Some(7)).unwrap();
        let order: Vec<&str> = r.contributions.iter().map(|c| c.feature.as_str()).collect();
        assert_eq!(order, vec!["c", "b", "a"]);
        assert_eq!(r.contributions[1].phi, -0.15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linearity_on_additive_models(a in prop::collection::vec(-3.0f64..3.0, 4), b in prop::collection::vec(-3.0f64..3.0, 4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bg: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a2, b2) = (a.clone(), b.clone());
            let f = FnPredictor { d: 4, f: move |x: &[f64]| x.iter().zip(&a).map(|(v, c)| c * v * v).sum() };
            let g = FnPredictor { d: 4, f: move |x: &[f64]| x.iter().zip(&b).map(|(v, c)| c * v).sum() };
            let fg = FnPredictor { d: 4, f: move |x: &[f64]| x.iter().enumerate().map(|(i, v)| a2[i] * v * v + b2[i] * v).sum() };
            let pf = shap_values(&f, &bg, &x, Mode::Exact).unwrap();
            let pg = shap_values(&g, &bg, &x, Mode::Exact).unwrap();
            let pfg = shap_values(&fg, &bg, &x, Mode::Exact).unwrap();
            for i in 0..4 {
                prop_assert!((pf.phi[i] + pg.phi[i] - pfg.phi[i]).abs() < 1e-9);
            }
        }
    }
}
