use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Gini impurity of a two-class node.
pub fn gini(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p, q) = (pos as f64 / n, neg as f64 / n);
    1.0 - p * p - q * q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { neg: usize, pos: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub seed: u64,
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn leaf(&self, x: &[f64]) -> (usize, usize) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf { neg, pos } => return (neg, pos),
            }
        }
    }

    /// Majority class of the leaf reached by `x`; an even leaf votes negative.
    pub fn vote(&self, x: &[f64]) -> bool {
        let (neg, pos) = self.leaf(x);
        pos > neg
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// Grows a tree on `samples` (indices into `rows`, repeats allowed).
    pub fn fit(rows: &[Vec<f64>], labels: &[bool], samples: Vec<usize>, max_features: usize, min_samples_split: usize, seed: u64) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = vec![Node::Leaf { neg: 0, pos: 0 }];
        let mut stack = vec![(0usize, samples)];
        let mut features: Vec<usize> = (0..d).collect();
        let mut order: Vec<usize> = Vec::new();
        while let Some((slot, idx)) = stack.pop() {
            let pos = idx.iter().filter(|&&i| labels[i]).count();
            let neg = idx.len() - pos;
            nodes[slot] = Node::Leaf { neg, pos };
            if pos == 0 || neg == 0 || idx.len() < min_samples_split {
                continue;
            }
            features.shuffle(&mut rng);
            let mut best: Option<(f64, usize, f64)> = None;
            for (tried, &f) in features.iter().enumerate() {
                // Beyond the first m candidates, keep looking only until some
                // valid split exists.
                if tried >= max_features && best.is_some() {
                    break;
                }
                order.clear();
                order.extend_from_slice(&idx);
                order.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]));
                let (mut lneg, mut lpos) = (0usize, 0usize);
                for k in 0..order.len() - 1 {
                    if labels[order[k]] {
                        lpos += 1;
                    } else {
                        lneg += 1;
                    }
                    let (lo, hi) = (rows[order[k]][f], rows[order[k + 1]][f]);
                    if lo == hi {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = (order.len() - k - 1) as f64;
                    let imp = (nl * gini(lneg, lpos) + nr * gini(neg - lneg, pos - lpos)) / idx.len() as f64;
                    if best.is_none_or(|b| imp < b.0) {
                        let mut t = lo + (hi - lo) / 2.0;
                        if t >= hi {
                            t = lo;
                        }
                        best = Some((imp, f, t));
                    }
                }
            }
            let Some((_, feature, threshold)) = best else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][feature] <= threshold);
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { neg: 0, pos: 0 });
            nodes.push(Node::Leaf { neg: 0, pos: 0 });
            nodes[slot] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            stack.push((right, r));
            stack.push((left, l));
        }
        DecisionTree { seed, nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            trees: 100,
            max_features: None,
            bootstrap: true,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub max_features: usize,
    pub bootstrap: bool,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn train(rows: &[Vec<f64>], labels: &[bool], feature_names: &[String], params: &ForestParams) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidInput(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::InvalidInput("no features".into()));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput(format!("rows must have {d} features")));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("training rows contain non-finite values".into()));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::SingleClass);
        }
        if params.trees == 0 {
            return Err(Error::InvalidInput("forest needs at least one tree".into()));
        }
        let m = params
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
            .clamp(1, d);
        let mut master = ChaCha8Rng::seed_from_u64(params.seed);
        let seeds: Vec<u64> = (0..params.trees).map(|_| master.random()).collect();
        let n = rows.len();
        let trees = seeds
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let samples = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(rows, labels, samples, m, params.min_samples_split.max(2), rng.random())
            })
            .collect();
        Ok(RandomForest {
            version: FOREST_FORMAT_VERSION,
            feature_names: feature_names.to_vec(),
            max_features: m,
            bootstrap: params.bootstrap,
            trees,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Fraction of trees voting positive.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.vote(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.n_features()) {
            return Err(Error::InvalidInput(format!("row has {} features, model expects {}", r.len(), self.n_features())));
        }
        Ok(rows.par_iter().map(|r| self.predict_one(r)).collect())
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<bool>> {
        Ok(self.predict_proba(rows)?.into_iter().map(|p| p >= 0.5).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: RandomForest = serde_json::from_str(s)?;
        if f.version != FOREST_FORMAT_VERSION {
            return Err(Error::Schema(format!("unsupported model version {}", f.version)));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
