//! Brute-force oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use portrank::geo::PortId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub type Edge = (PortId, PortId, u64);

/// Erdos-Renyi digraph on ports `1..=n` with integer weights in `1..=5`.
pub fn random_digraph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    for u in 1..=n as PortId {
        for v in 1..=n as PortId {
            if u != v && rng.random_bool(p) {
                edges.push((u, v, rng.random_range(1..=5)));
            }
        }
    }
    edges
}

/// Dense view of an edge list over the ports that appear in it.
pub struct Dense {
    pub ports: Vec<PortId>,
    /// `w[u][v]`, 0 when absent.
    pub w: Vec<Vec<u64>>,
}

impl Dense {
    pub fn new(edges: &[Edge]) -> Self {
        let ports: Vec<PortId> = edges
            .iter()
            .flat_map(|&(u, v, _)| [u, v])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let at = |p: PortId| ports.binary_search(&p).unwrap();
        let n = ports.len();
        let mut w = vec![vec![0; n]; n];
        for &(u, v, x) in edges {
            w[at(u)][at(v)] += x;
        }
        Dense { ports, w }
    }

    pub fn n(&self) -> usize {
        self.ports.len()
    }

    /// All-pairs hop distances (Floyd-Warshall); `None` when unreachable.
    pub fn distances(&self) -> Vec<Vec<Option<u32>>> {
        let n = self.n();
        let mut d = vec![vec![None; n]; n];
        for u in 0..n {
            d[u][u] = Some(0);
            for v in 0..n {
                if self.w[u][v] > 0 && u != v {
                    d[u][v] = Some(1);
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                        if d[i][j].is_none_or(|c| a + b < c) {
                            d[i][j] = Some(a + b);
                        }
                    }
                }
            }
        }
        d
    }

    pub fn in_degree(&self) -> Vec<usize> {
        (0..self.n()).map(|v| (0..self.n()).filter(|&u| self.w[u][v] > 0).count()).collect()
    }

    pub fn out_degree(&self) -> Vec<usize> {
        (0..self.n()).map(|u| self.w[u].iter().filter(|&&x| x > 0).count()).collect()
    }

    /// Betweenness by enumerating every shortest path explicitly.
    pub fn betweenness(&self) -> Vec<f64> {
        let n = self.n();
        let d = self.distances();
        let mut bc = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                let Some(len) = d[s][t] else { continue };
                if s == t {
                    continue;
                }
                let mut paths: Vec<Vec<usize>> = Vec::new();
                let mut path = vec![s];
                self.walk(&d, t, len, &mut path, &mut paths);
                let total = paths.len() as f64;
                let mut through = vec![0usize; n];
                for p in &paths {
                    for &v in &p[1..p.len() - 1] {
                        through[v] += 1;
                    }
                }
                for v in 0..n {
                    bc[v] += through[v] as f64 / total;
                }
            }
        }
        bc
    }

    fn walk(&self, d: &[Vec<Option<u32>>], t: usize, len: u32, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let u = *path.last().unwrap();
        let hops = path.len() as u32 - 1;
        if u == t {
            if hops == len {
                out.push(path.clone());
            }
            return;
        }
        for v in 0..self.n() {
            if self.w[u][v] > 0 && !path.contains(&v) && d[v][t].is_some_and(|r| hops + 1 + r == len) {
                path.push(v);
                self.walk(d, t, len, path, out);
                path.pop();
            }
        }
    }

    /// Node count over the summed incoming distances, `None` if some node
    /// cannot reach `v`.
    pub fn closeness_in(&self) -> Vec<Option<f64>> {
        let d = self.distances();
        let n = self.n();
        (0..n)
            .map(|v| {
                let mut total = 0u64;
                for u in 0..n {
                    total += d[u][v]? as u64;
                }
                (total > 0).then(|| n as f64 / total as f64)
            })
            .collect()
    }

    /// PageRank from an explicit dense Google matrix, iterated to a fixed point.
    pub fn pagerank(&self, damping: f64, transform: Option<fn(u64) -> f64>) -> Vec<f64> {
        let n = self.n();
        let nf = n as f64;
        let mut g = vec![vec![0.0; n]; n]; // g[v][u]: probability u -> v
        for u in 0..n {
            let row: Vec<f64> = (0..n)
                .map(|v| if self.w[u][v] > 0 { transform.map_or(1.0, |f| f(self.w[u][v])) } else { 0.0 })
                .collect();
            let total: f64 = row.iter().sum();
            for v in 0..n {
                let p = if total > 0.0 { row[v] / total } else { 1.0 / nf };
                g[v][u] = damping * p + (1.0 - damping) / nf;
            }
        }
        let mut x = vec![1.0 / nf; n];
        for _ in 0..100_000 {
            let next: Vec<f64> = (0..n).map(|v| (0..n).map(|u| g[v][u] * x[u]).sum()).collect();
            let delta: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
            x = next;
            if delta < 1e-15 {
                break;
            }
        }
        x
    }

    /// Reachability closure by BFS from every node.
    pub fn reach(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        (0..n)
            .map(|s| {
                let mut seen = vec![false; n];
                seen[s] = true;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for v in 0..n {
                        if self.w[u][v] > 0 && !seen[v] {
                            seen[v] = true;
                            q.push_back(v);
                        }
                    }
                }
                seen
            })
            .collect()
    }

    /// Components of the mutual-reachability relation, as port-id sets.
    pub fn mutual_components(&self) -> BTreeSet<BTreeSet<PortId>> {
        let r = self.reach();
        let n = self.n();
        (0..n)
            .map(|u| (0..n).filter(|&v| r[u][v] && r[v][u]).map(|v| self.ports[v]).collect())
            .collect()
    }
}

/// True when every node reaches, and is reached from, the first node.
pub fn double_bfs(edges: &[Edge]) -> bool {
    let dense = Dense::new(edges);
    let n = dense.n();
    if n == 0 {
        return false;
    }
    let r = dense.reach();
    (0..n).all(|v| r[0][v] && r[v][0])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy")
}

/// Every file under `root`, relative paths in sorted order.
pub fn list_files(root: &Path) -> Vec<PathBuf> {
    fn go(base: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                go(base, &p, out);
            } else {
                out.push(p.strip_prefix(base).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    if root.exists() {
        go(root, root, &mut out);
    }
    out
}

fn numbers_match(a: &str, b: &str, tol: f64) -> bool {
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x.is_nan() && y.is_nan()) || (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())),
        _ => false,
    }
}

fn split_tokens(s: &str) -> Vec<&str> {
    s.split(|c: char| c == ',' || c == '\n' || c.is_whitespace() || c == '=').collect()
}

fn json_match(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => numbers_match(&x.to_string(), &y.to_string(), tol),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_match(p, q, tol)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_match(v, w, tol)))
        }
        _ => a == b,
    }
}

/// Manifest fields that legitimately vary between runs or builds.
fn normalize_manifest(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("elapsed_ms");
        m.remove("version");
        // Hashes over bytes; the artifacts themselves are compared with tolerance.
        m.remove("upstream");
        if let Some(Value::Object(outputs)) = m.get_mut("outputs") {
            for h in outputs.values_mut() {
                *h = Value::Null;
            }
        }
    }
    v
}

/// Compares one artifact with its golden copy; numeric tokens may differ
/// by `tol` (relative to magnitude).
pub fn artifact_matches(rel: &Path, got: &[u8], want: &[u8], tol: f64) -> std::result::Result<(), String> {
    let name = rel.file_name().unwrap().to_string_lossy();
    let ext = rel.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default();
    if ext == "json" {
        let parse = |b: &[u8]| serde_json::from_slice::<Value>(b).map_err(|e| format!("{}: {e}", rel.display()));
        let (mut g, mut w) = (parse(got)?, parse(want)?);
        if name == "manifest.json" {
            g = normalize_manifest(g);
            w = normalize_manifest(w);
        }
        return if json_match(&g, &w, tol) { Ok(()) } else { Err(format!("{} differs", rel.display())) };
    }
    let (g, w) = (String::from_utf8_lossy(got), String::from_utf8_lossy(want));
    let (gt, wt) = (split_tokens(&g), split_tokens(&w));
    if gt.len() != wt.len() {
        return Err(format!("{}: {} tokens, golden has {}", rel.display(), gt.len(), wt.len()));
    }
    for (i, (a, b)) in gt.iter().zip(&wt).enumerate() {
        if !numbers_match(a, b, tol) {
            return Err(format!("{}: token {i} is {a:?}, golden {b:?}", rel.display()));
        }
    }
    Ok(())
}

/// Compares a run directory with a golden tree; returns the mismatches.
pub fn compare_tree(got: &Path, golden: &Path, tol: f64) -> Vec<String> {
    let (gf, wf) = (list_files(got), list_files(golden));
    let mut problems = Vec::new();
    let gs: BTreeSet<_> = gf.iter().collect();
    let ws: BTreeSet<_> = wf.iter().collect();
    for extra in gs.difference(&ws) {
        problems.push(format!("unexpected artifact {}", extra.display()));
    }
    for missing in ws.difference(&gs) {
        problems.push(format!("missing artifact {}", missing.display()));
    }
    for rel in gs.intersection(&ws) {
        let a = fs::read(got.join(rel)).unwrap();
        let b = fs::read(golden.join(rel)).unwrap();
        if let Err(e) = artifact_matches(rel, &a, &b, tol) {
            problems.push(e);
        }
    }
    problems
}

/// Replaces `golden` with a copy of `got`.
pub fn bless(got: &Path, golden: &Path) {
    if golden.exists() {
        fs::remove_dir_all(golden).unwrap();
    }
    for rel in list_files(got) {
        let to = golden.join(&rel);
        fs::create_dir_all(to.parent().unwrap()).unwrap();
        fs::copy(got.join(&rel), to).unwrap();
    }
}

pub fn blessing() -> bool {
    std::env::var_os("PORTRANK_BLESS").is_some()
}

/// Reads a two-or-more column CSV with a header into rows of strings.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect()
        })
        .collect()
}
