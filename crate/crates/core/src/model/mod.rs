//! Centrality labels, train/test split, random forest and ROC evaluation.

mod forest;
mod roc;

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forest::{gini, DecisionTree, ForestParams, Node, RandomForest, FOREST_FORMAT_VERSION};
pub use roc::{permutation_aucs, rank_auc, read_roc, roc_auc, write_roc, RocCurve, RocPoint};

use crate::centrality::AggregatedCentrality;
use crate::error::{Error, Result};
use crate::geo::PortId;

/// Binary "central port" labels over a population of ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labeling {
    pub k: f64,
    pub ports: Vec<PortId>,
    pub aggregate: Vec<f64>,
    pub labels: Vec<bool>,
    pub positives: usize,
}

impl Labeling {
    pub fn label_of(&self, port: PortId) -> Option<bool> {
        self.ports.binary_search(&port).ok().map(|i| self.labels[i])
    }
}

/// Number of positives for fraction `k` of `n` ports (rounded up).
pub fn positive_count(n: usize, k: f64) -> usize {
    // The epsilon keeps exact products such as 0.1 * 1150 from rounding up
    // past their integer value.
    ((k * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Labels the top `k` fraction of ports by aggregated centrality as positive.
///
/// When `population` is given, only those ports are labeled (and counted
/// toward N); ports outside the centrality table are ignored. Output is
/// ordered by port id.
pub fn label_topk(agg: &AggregatedCentrality, population: Option<&[PortId]>, k: f64) -> Result<Labeling> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidInput(format!("k must be in (0, 1), got {k}")));
    }
    let allowed: Option<BTreeSet<PortId>> = population.map(|p| p.iter().copied().collect());
    let mut members: Vec<(PortId, f64)> = agg
        .ports
        .iter()
        .zip(&agg.aggregate)
        .filter(|(p, _)| allowed.as_ref().is_none_or(|a| a.contains(p)))
        .map(|(&p, &a)| (p, a))
        .collect();
    let n = members.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 labeled ports, got {n}")));
    }
    members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let positives = positive_count(n, k).min(n);
    let top: BTreeSet<PortId> = members[..positives].iter().map(|m| m.0).collect();
    members.sort_by_key(|m| m.0);
    Ok(Labeling {
        k,
        ports: members.iter().map(|m| m.0).collect(),
        aggregate: members.iter().map(|m| m.1).collect(),
        labels: members.iter().map(|m| top.contains(&m.0)).collect(),
        positives,
    })
}

pub fn write_labels<W: Write>(out: W, labels: &Labeling) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["port_id", "A", "label"])?;
    for i in 0..labels.ports.len() {
        w.write_record([
            labels.ports[i].to_string(),
            labels.aggregate[i].to_string(),
            u8::from(labels.labels[i]).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<labels>", e))?;
    Ok(())
}

pub fn read_labels<R: Read>(input: R, k: f64) -> Result<Labeling> {
    let mut r = csv::Reader::from_reader(input);
    let (mut ports, mut aggregate, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.deserialize() {
        let (p, a, l): (PortId, f64, u8) = rec?;
        ports.push(p);
        aggregate.push(a);
        labels.push(l == 1);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    Ok(Labeling {
        k,
        ports,
        aggregate,
        labels,
        positives,
    })
}

/// Row indices of a train/test partition, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class contributes `round(n_c * train_fraction)`
/// rows to training (kept within `1..n_c`, so both sides see every class).
pub fn split(labels: &[bool], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::TooFewInClass {
                class: class as u8,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let take = ((idx.len() as f64 * train_fraction).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centrality::Measure;
    use proptest::prelude::*;

    fn agg(ports: &[PortId], a: &[f64]) -> AggregatedCentrality {
        AggregatedCentrality {
            ports: ports.to_vec(),
            z: vec![a.to_vec(); Measure::ALL.len()],
            aggregate: a.to_vec(),
            rank: vec![0; ports.len()],
        }
    }

    #[test]
    fn positive_count_rounds_up() {
        assert_eq!(positive_count(1154, 0.10), 116);
        assert_eq!(positive_count(1150, 0.10), 115);
        assert_eq!(positive_count(1154, 0.05), 58);
        assert_eq!(positive_count(3, 0.2), 1);
    }

    #[test]
    fn top_port_and_boundary_ties() {
        let l = label_topk(&agg(&[5, 2, 9], &[0.1, 2.0, -1.0]), None, 0.2).unwrap();
        assert_eq!(l.ports, vec![2, 5, 9]);
        assert_eq!(l.labels, vec![true, false, false]);

        // Ports 7 and 3 tie at the boundary; 3 wins.
        let l = label_topk(&agg(&[7, 3, 1, 4], &[1.0, 1.0, 5.0, 0.0]), None, 0.5).unwrap();
        assert_eq!(l.positives, 2);
        assert_eq!(l.label_of(1), Some(true));
        assert_eq!(l.label_of(3), Some(true));
        assert_eq!(l.label_of(7), Some(false));
    }

    #[test]
    fn population_restricts_n() {
        let a = agg(&[1, 2, 3, 4, 5], &[5.0, 4.0, 3.0, 2.0, 1.0]);
        let l = label_topk(&a, Some(&[2, 4, 5, 99]), 0.3).unwrap();
        assert_eq!(l.ports, vec![2, 4, 5]);
        assert_eq!(l.labels, vec![true, false, false]);
        assert!(label_topk(&a, Some(&[1]), 0.3).is_err());
        assert!(label_topk(&a, None, 1.0).is_err());
    }

    #[test]
    fn stratified_split_arithmetic() {
        let labels: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
        let s = split(&labels, 0.75, 1).unwrap();
        let train_pos = s.train.iter().filter(|&&i| labels[i]).count();
        assert!(train_pos == 7 || train_pos == 8);
        assert_eq!(s.train.len() + s.test.len(), 100);
        assert_eq!(s, split(&labels, 0.75, 1).unwrap());
        assert_ne!(s, split(&labels, 0.75, 2).unwrap());
    }

    #[test]
    fn tiny_class_is_an_error() {
        let labels = [true, false, false, false];
        assert!(matches!(split(&labels, 0.75, 0), Err(Error::TooFewInClass { class: 1, count: 1 })));
    }

    #[test]
    fn labels_csv_round_trip() {
        let l = label_topk(&agg(&[5, 2, 9], &[0.1, 2.0, -1.0]), None, 0.5).unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &l).unwrap();
        assert_eq!(read_labels(buf.as_slice(), 0.5).unwrap(), l);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 4usize..200, seed in any::<u64>(), frac in 0.1f64..0.9) {
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let s = split(&labels, frac, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for class in [false, true] {
                let total = labels.iter().filter(|&&l| l == class).count() as f64;
                let tr = s.train.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!((tr - total * frac).abs() <= 1.0);
                prop_assert!(tr >= 1.0 && tr < total);
            }
        }

        #[test]
        fn positives_are_the_top_ranked(a in prop::collection::vec(-5i32..5, 2..60), k in 0.01f64..0.99) {
            let ports: Vec<PortId> = (0..a.len() as PortId).rev().collect();
            let vals: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let l = label_topk(&agg(&ports, &vals), None, k).unwrap();
            prop_assert_eq!(l.labels.iter().filter(|&&x| x).count(), l.positives);
            for i in 0..l.ports.len() {
                for j in 0..l.ports.len() {
                    if l.labels[i] && !l.labels[j] {
                        let better = l.aggregate[i] > l.aggregate[j]
                            || (l.aggregate[i] == l.aggregate[j] && l.ports[i] < l.ports[j]);
                        prop_assert!(better);
                    }
                }
            }
        }
    }
}
