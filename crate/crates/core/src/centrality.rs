//! Port centralities and their aggregate.
//!
//! Six measures are computed per port: in/out degree, PageRank, weighted
//! PageRank, betweenness and closeness. Each is standardized to a z-score
//! (mean 0, sample standard deviation 1) and the aggregate `A(p)` is the
//! arithmetic mean of the six z-scores.
//!
//! Paths are unweighted hop counts on the directed graph. Betweenness is
//! unnormalized over ordered pairs. Closeness uses distances into a node:
//! `CC(n) = |N| / sum_y d(y, n)`.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PortId;
use crate::network::PortsNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "DI")]
    InDegree,
    #[serde(rename = "DO")]
    OutDegree,
    #[serde(rename = "PR")]
    PageRank,
    #[serde(rename = "wPR")]
    WeightedPageRank,
    #[serde(rename = "BC")]
    Betweenness,
    #[serde(rename = "CC")]
    Closeness,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::InDegree,
        Measure::OutDegree,
        Measure::PageRank,
        Measure::WeightedPageRank,
        Measure::Betweenness,
        Measure::Closeness,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Measure::InDegree => "DI",
            Measure::OutDegree => "DO",
            Measure::PageRank => "PR",
            Measure::WeightedPageRank => "wPR",
            Measure::Betweenness => "BC",
            Measure::Closeness => "CC",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Transform applied to trip counts before weighted PageRank splits mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTransform {
    /// `ln(1 + w)`: every edge keeps positive influence.
    #[default]
    Log1p,
    /// `ln(w)`: single-trip edges get zero weight.
    Log,
}

impl WeightTransform {
    pub fn apply(self, w: u64) -> f64 {
        match self {
            WeightTransform::Log1p => (w as f64).ln_1p(),
            WeightTransform::Log => (w as f64).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosenessDirection {
    /// Distances from every node into the scored node.
    #[default]
    Incoming,
    Outgoing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CentralityParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub weight_transform: WeightTransform,
    pub closeness_direction: ClosenessDirection,
}

impl Default for CentralityParams {
    fn default() -> Self {
        CentralityParams {
            damping: 0.85,
            tol: 1e-12,
            max_iter: 10_000,
            weight_transform: WeightTransform::Log1p,
            closeness_direction: ClosenessDirection::Incoming,
        }
    }
}

/// Distinct in- and out-neighbour counts per node index.
pub fn degrees(net: &PortsNetwork) -> (Vec<usize>, Vec<usize>) {
    let n = net.node_count();
    let di = (0..n).map(|i| net.in_edges(i).len()).collect();
    let d_out = (0..n).map(|i| net.out_edges(i).len()).collect();
    (di, d_out)
}

/// PageRank by power iteration.
///
/// Unweighted mode splits a node's mass equally over its out-neighbours;
/// weighted mode splits it proportionally to `transform(w)`. Mass of nodes
/// with no (positively weighted) out-edges is spread uniformly. Stops when
/// the L1 change between iterates drops below `tol`.
pub fn pagerank(
    net: &PortsNetwork,
    damping: f64,
    weighted: Option<WeightTransform>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::InvalidInput(format!("damping {damping} outside (0, 1)")));
    }
    let n = net.node_count();
    if n == 0 {
        return Err(Error::Empty("network"));
    }
    // Per node: outgoing transition shares, or None when dangling.
    let shares: Vec<Option<Vec<(usize, f64)>>> = (0..n)
        .map(|u| {
            let raw: Vec<(usize, f64)> = net
                .out_edges(u)
                .iter()
                .map(|&(v, w)| (v, weighted.map_or(1.0, |t| t.apply(w))))
                .filter(|&(_, x)| x > 0.0)
                .collect();
            let total: f64 = raw.iter().map(|&(_, x)| x).sum();
            (total > 0.0).then(|| raw.into_iter().map(|(v, x)| (v, x / total)).collect())
        })
        .collect();

    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut delta = f64::INFINITY;
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&u| shares[u].is_none()).map(|u| rank[u]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for (u, s) in shares.iter().enumerate() {
            if let Some(s) = s {
                let mass = damping * rank[u];
                for &(v, p) in s {
                    next[v] += mass * p;
                }
            }
        }
        delta = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < tol {
            return Ok(rank);
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        delta,
        last: rank,
    })
}

/// Brandes dependency accumulation from a single source, added into `bc`.
fn brandes_source(net: &PortsNetwork, s: usize, bc: &mut [f64], ws: &mut BrandesWorkspace) {
    let BrandesWorkspace {
        sigma,
        dist,
        delta,
        order,
        queue,
    } = ws;
    sigma.fill(0.0);
    dist.fill(-1);
    delta.fill(0.0);
    order.clear();
    queue.clear();

    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(w, _) in net.out_edges(v) {
            if dist[w] < 0 {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    // Predecessors of w are in-neighbours one hop closer to s.
    for &w in order.iter().rev() {
        let coeff = (1.0 + delta[w]) / sigma[w];
        for &(v, _) in net.in_edges(w) {
            if dist[v] >= 0 && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] * coeff;
            }
        }
        if w != s {
            bc[w] += delta[w];
        }
    }
}

struct BrandesWorkspace {
    sigma: Vec<f64>,
    dist: Vec<i64>,
    delta: Vec<f64>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl BrandesWorkspace {
    fn new(n: usize) -> Self {
        BrandesWorkspace {
            sigma: vec![0.0; n],
            dist: vec![-1; n],
            delta: vec![0.0; n],
            order: Vec::with_capacity(n),
            queue: VecDeque::with_capacity(n),
        }
    }
}

/// Single-threaded Brandes betweenness.
pub fn betweenness_serial(net: &PortsNetwork) -> Vec<f64> {
    let n = net.node_count();
    let mut bc = vec![0.0; n];
    let mut ws = BrandesWorkspace::new(n);
    for s in 0..n {
        brandes_source(net, s, &mut bc, &mut ws);
    }
    bc
}

/// Brandes betweenness with sources distributed over the rayon pool.
///
/// Sources are split into chunks whose size depends only on the node count;
/// partial sums are combined in chunk order, so the result does not depend
/// on the number of worker threads.
pub fn betweenness(net: &PortsNetwork) -> Vec<f64> {
    let n = net.node_count();
    if n == 0 {
        return Vec::new();
    }
    let chunk = (n / 256).max(32);
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(chunk)
        .map(|srcs| {
            let mut bc = vec![0.0; n];
            let mut ws = BrandesWorkspace::new(n);
            for &s in srcs {
                brandes_source(net, s, &mut bc, &mut ws);
            }
            bc
        })
        .collect();
    let mut bc = vec![0.0; n];
    for p in partials {
        for (acc, x) in bc.iter_mut().zip(p) {
            *acc += x;
        }
    }
    bc
}

/// Closeness per node index; `None` where some node cannot reach (or, for
/// outgoing closeness, be reached from) the scored node.
pub fn closeness(net: &PortsNetwork, direction: ClosenessDirection) -> Vec<Option<f64>> {
    let n = net.node_count();
    let reverse = direction == ClosenessDirection::Incoming;
    (0..n)
        .into_par_iter()
        .map(|v| {
            let dist = net.bfs_distances(v, reverse);
            let mut total = 0u64;
            for d in dist {
                total += d? as u64;
            }
            (total > 0).then(|| n as f64 / total as f64)
        })
        .collect()
}

/// Standardizes values with the mean and the sample standard deviation.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    zscore_named("values", values)
}

fn zscore_named(name: &str, values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("{name}: z-score needs at least 2 values")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name}: non-finite value")));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::DegenerateCentrality(name.to_owned()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateCentrality(name.to_owned()));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Raw centralities per port, ports in ascending id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityVector {
    pub ports: Vec<PortId>,
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
    pub pagerank: Vec<f64>,
    pub weighted_pagerank: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
}

impl CentralityVector {
    pub fn values(&self, m: Measure) -> Vec<f64> {
        match m {
            Measure::InDegree => self.in_degree.iter().map(|&d| d as f64).collect(),
            Measure::OutDegree => self.out_degree.iter().map(|&d| d as f64).collect(),
            Measure::PageRank => self.pagerank.clone(),
            Measure::WeightedPageRank => self.weighted_pagerank.clone(),
            Measure::Betweenness => self.betweenness.clone(),
            Measure::Closeness => self.closeness.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ports.is_empty()
    }
}

pub fn compute_centralities(net: &PortsNetwork, params: &CentralityParams) -> Result<CentralityVector> {
    let (in_degree, out_degree) = degrees(net);
    let pagerank = pagerank(net, params.damping, None, params.tol, params.max_iter)?;
    let weighted_pagerank = self::pagerank(
        net,
        params.damping,
        Some(params.weight_transform),
        params.tol,
        params.max_iter,
    )?;
    let betweenness = betweenness(net);
    let closeness = closeness(net, params.closeness_direction)
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or(Error::Unreachable(net.nodes()[i] as u64)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(CentralityVector {
        ports: net.nodes().to_vec(),
        in_degree,
        out_degree,
        pagerank,
        weighted_pagerank,
        betweenness,
        closeness,
    })
}

/// One z-scored centrality over a port set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub measure: Measure,
    pub ports: Vec<PortId>,
    pub z: Vec<f64>,
}

pub fn standardize(c: &CentralityVector) -> Result<Vec<Standardized>> {
    Measure::ALL
        .iter()
        .map(|&m| {
            Ok(Standardized {
                measure: m,
                ports: c.ports.clone(),
                z: zscore_named(m.code(), &c.values(m))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedCentrality {
    pub ports: Vec<PortId>,
    /// z-scores in [`Measure::ALL`] order, each aligned with `ports`.
    pub z: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    /// 1-based rank per port (descending aggregate, ties by port id).
    pub rank: Vec<usize>,
}

impl AggregatedCentrality {
    /// Port positions in rank order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ports.len()).collect();
        order.sort_by_key(|&i| self.rank[i]);
        order
    }

    pub fn z_of(&self, m: Measure) -> &[f64] {
        let k = Measure::ALL.iter().position(|&x| x == m).unwrap();
        &self.z[k]
    }
}

/// Averages the six z-scores per port and ranks ports.
pub fn aggregate(zs: &[Standardized]) -> Result<AggregatedCentrality> {
    let mut ordered = Vec::with_capacity(Measure::ALL.len());
    for m in Measure::ALL {
        let mut found = zs.iter().filter(|s| s.measure == m);
        let s = found
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("missing z-scores for {m}")))?;
        if found.next().is_some() {
            return Err(Error::InvalidInput(format!("duplicate z-scores for {m}")));
        }
        ordered.push(s);
    }
    let ports = ordered[0].ports.clone();
    for s in &ordered {
        if s.ports != ports || s.z.len() != ports.len() {
            return Err(Error::MismatchedPorts(format!("{} differs from {}", s.measure, ordered[0].measure)));
        }
    }
    let k = ordered.len() as f64;
    let agg: Vec<f64> = (0..ports.len())
        .map(|p| ordered.iter().map(|s| s.z[p]).sum::<f64>() / k)
        .collect();
    let mut order: Vec<usize> = (0..ports.len()).collect();
    order.sort_by(|&a, &b| agg[b].total_cmp(&agg[a]).then(ports[a].cmp(&ports[b])));
    let mut rank = vec![0; ports.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    Ok(AggregatedCentrality {
        ports,
        z: ordered.into_iter().map(|s| s.z.clone()).collect(),
        aggregate: agg,
        rank,
    })
}

/// Raw and aggregated centralities for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityTable {
    pub raw: CentralityVector,
    pub aggregated: AggregatedCentrality,
}

pub fn centrality_table(net: &PortsNetwork, params: &CentralityParams) -> Result<CentralityTable> {
    let raw = compute_centralities(net, params)?;
    let aggregated = aggregate(&standardize(&raw)?)?;
    Ok(CentralityTable { raw, aggregated })
}

pub const CENTRALITY_HEADER: [&str; 15] = [
    "port_id", "DI", "DO", "PR", "wPR", "BC", "CC", "zDI", "zDO", "zPR", "zwPR", "zBC", "zCC", "A", "rank",
];

pub fn write_centrality<W: Write>(out: W, table: &CentralityTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CENTRALITY_HEADER)?;
    let (raw, agg) = (&table.raw, &table.aggregated);
    for i in 0..raw.len() {
        let mut row = vec![
            raw.ports[i].to_string(),
            raw.in_degree[i].to_string(),
            raw.out_degree[i].to_string(),
            raw.pagerank[i].to_string(),
            raw.weighted_pagerank[i].to_string(),
            raw.betweenness[i].to_string(),
            raw.closeness[i].to_string(),
        ];
        row.extend(agg.z.iter().map(|z| z[i].to_string()));
        row.push(agg.aggregate[i].to_string());
        row.push(agg.rank[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<centrality>", e))?;
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("centrality column {} unparseable", CENTRALITY_HEADER[i])))
}

pub fn read_centrality<R: Read>(input: R) -> Result<CentralityTable> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != CENTRALITY_HEADER {
        return Err(Error::Schema(format!("unexpected centrality header {header:?}")));
    }
    let mut raw = CentralityVector {
        ports: vec![],
        in_degree: vec![],
        out_degree: vec![],
        pagerank: vec![],
        weighted_pagerank: vec![],
        betweenness: vec![],
        closeness: vec![],
    };
    let mut z = vec![Vec::new(); 6];
    let mut aggregate = Vec::new();
    let mut rank = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        raw.ports.push(field(&rec, 0)?);
        raw.in_degree.push(field(&rec, 1)?);
        raw.out_degree.push(field(&rec, 2)?);
        raw.pagerank.push(field(&rec, 3)?);
        raw.weighted_pagerank.push(field(&rec, 4)?);
        raw.betweenness.push(field(&rec, 5)?);
        raw.closeness.push(field(&rec, 6)?);
        for (k, col) in z.iter_mut().enumerate() {
            col.push(field(&rec, 7 + k)?);
        }
        aggregate.push(field(&rec, 13)?);
        rank.push(field(&rec, 14)?);
    }
    Ok(CentralityTable {
        aggregated: AggregatedCentrality {
            ports: raw.ports.clone(),
            z,
            aggregate,
            rank,
        },
        raw,
    })
}
