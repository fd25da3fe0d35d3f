//! The Ports Network: a weighted directed graph of ports.
//!
//! Nodes are port ids; an edge `(u, v)` carries the number of voyages from
//! `u` to `v`. Nodes are stored in ascending id order and addressed by dense
//! index internally.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PortId;
use crate::visits::Voyage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortsNetwork {
    nodes: Vec<PortId>,
    index: HashMap<PortId, usize>,
    /// Per node, `(target index, weight)` sorted by target.
    out: Vec<Vec<(usize, u64)>>,
    /// Per node, `(source index, weight)` sorted by source.
    inc: Vec<Vec<(usize, u64)>>,
}

impl PortsNetwork {
    /// Builds a network from distinct weighted edges.
    pub fn from_edges(edges: impl IntoIterator<Item = (PortId, PortId, u64)>) -> Result<Self> {
        let mut map: BTreeMap<(PortId, PortId), u64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u == v {
                return Err(Error::InvalidInput(format!("self-loop on port {u}")));
            }
            if w == 0 {
                return Err(Error::InvalidInput(format!("zero weight on edge {u}->{v}")));
            }
            if map.insert((u, v), w).is_some() {
                return Err(Error::InvalidInput(format!("duplicate edge {u}->{v}")));
            }
        }
        Ok(Self::from_map(map))
    }

    /// Builds a network with isolated nodes allowed, used for induced subgraphs.
    fn from_parts(mut nodes: Vec<PortId>, map: BTreeMap<(PortId, PortId), u64>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let index: HashMap<PortId, usize> = nodes.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let n = nodes.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        // BTreeMap order is (src, dst) ascending, so adjacency lists come out sorted.
        for (&(u, v), &w) in &map {
            let (iu, iv) = (index[&u], index[&v]);
            out[iu].push((iv, w));
        }
        for (&(u, v), &w) in &map {
            let (iu, iv) = (index[&u], index[&v]);
            inc[iv].push((iu, w));
        }
        for list in &mut inc {
            list.sort_unstable();
        }
        PortsNetwork { nodes, index, out, inc }
    }

    fn from_map(map: BTreeMap<(PortId, PortId), u64>) -> Self {
        let nodes = map.keys().flat_map(|&(u, v)| [u, v]).collect();
        Self::from_parts(nodes, map)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Port ids in ascending order; position = node index.
    pub fn nodes(&self) -> &[PortId] {
        &self.nodes
    }

    pub fn index_of(&self, port: PortId) -> Option<usize> {
        self.index.get(&port).copied()
    }

    pub fn out_edges(&self, node: usize) -> &[(usize, u64)] {
        &self.out[node]
    }

    pub fn in_edges(&self, node: usize) -> &[(usize, u64)] {
        &self.inc[node]
    }

    pub fn weight(&self, from: PortId, to: PortId) -> Option<u64> {
        let (u, v) = (self.index_of(from)?, self.index_of(to)?);
        self.out[u]
            .binary_search_by_key(&v, |&(t, _)| t)
            .ok()
            .map(|k| self.out[u][k].1)
    }

    /// All edges as `(src, dst, weight)` in ascending `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (PortId, PortId, u64)> + '_ {
        self.out.iter().enumerate().flat_map(move |(u, list)| {
            list.iter().map(move |&(v, w)| (self.nodes[u], self.nodes[v], w))
        })
    }

    pub fn total_weight(&self) -> u64 {
        self.out.iter().flatten().map(|&(_, w)| w).sum()
    }

    /// Copy with every edge weight replaced by `f(src, dst, w)`.
    pub fn map_weights(&self, mut f: impl FnMut(PortId, PortId, u64) -> u64) -> Result<Self> {
        let edges: Vec<_> = self.edges().map(|(u, v, w)| (u, v, f(u, v, w))).collect();
        Self::from_edges(edges)
    }

    /// Subgraph induced by the given node indices.
    pub fn induced(&self, members: &[usize]) -> Self {
        let keep: std::collections::HashSet<usize> = members.iter().copied().collect();
        let mut map = BTreeMap::new();
        for &u in members {
            for &(v, w) in &self.out[u] {
                if keep.contains(&v) {
                    map.insert((self.nodes[u], self.nodes[v]), w);
                }
            }
        }
        Self::from_parts(members.iter().map(|&i| self.nodes[i]).collect(), map)
    }

    /// Unweighted BFS hop distances from `source`, following edges forward
    /// (`reverse = false`) or backward.
    pub fn bfs_distances(&self, source: usize, reverse: bool) -> Vec<Option<u32>> {
        let adj = if reverse { &self.inc } else { &self.out };
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        if self.node_count() == 0 {
            return false;
        }
        self.bfs_distances(0, false).iter().all(Option::is_some)
            && self.bfs_distances(0, true).iter().all(Option::is_some)
    }
}

/// Aggregates voyages into per-ordered-pair trip counts.
pub fn build_network(voyages: &[Voyage]) -> Result<PortsNetwork> {
    if voyages.is_empty() {
        return Err(Error::Empty("voyage list"));
    }
    let mut map: BTreeMap<(PortId, PortId), u64> = BTreeMap::new();
    for v in voyages {
        if v.origin == v.destination {
            return Err(Error::InvalidInput(format!("voyage with origin = destination = {}", v.origin)));
        }
        *map.entry((v.origin, v.destination)).or_default() += 1;
    }
    Ok(PortsNetwork::from_map(map))
}

/// Strongly connected components (iterative Tarjan). Each component lists
/// node indices in ascending order; components come in discovery order.
pub fn strongly_connected_components(net: &PortsNetwork) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = net.node_count();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut counter = 0;
    // (node, next edge position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&(u, pos)) = call.last() {
            if let Some(&(v, _)) = net.out[u].get(pos) {
                call.last_mut().unwrap().1 += 1;
                if index[v] == UNSEEN {
                    index[v] = counter;
                    low[v] = counter;
                    counter += 1;
                    stack.push(v);
                    on_stack[v] = true;
                    call.push((v, 0));
                } else if on_stack[v] {
                    low[u] = low[u].min(index[v]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[u]);
            }
            if low[u] == index[u] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().unwrap();
                    on_stack[w] = false;
                    comp.push(w);
                    if w == u {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }
    components
}

/// Induced subgraph on the largest strongly connected component; size ties
/// go to the component containing the smallest port id.
pub fn largest_scc(net: &PortsNetwork) -> Result<PortsNetwork> {
    if net.node_count() == 0 {
        return Err(Error::Empty("network"));
    }
    let comps = strongly_connected_components(net);
    // Node indices are in ascending port-id order, so comp[0] is its smallest id.
    let best = comps
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .expect("non-empty network has a component");
    Ok(net.induced(best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub nodes: usize,
    pub edges: usize,
    /// Unordered pairs with edges in both directions.
    pub bidirectional_pairs: usize,
    pub density: f64,
    pub diameter: u32,
    pub average_shortest_path: f64,
    pub average_clustering: f64,
    /// False when path statistics were computed on the largest SCC because
    /// the input was not strongly connected.
    pub strongly_connected: bool,
}

fn path_stats(net: &PortsNetwork) -> (u32, f64) {
    let n = net.node_count();
    let (diam, sum, pairs) = (0..n)
        .into_par_iter()
        .map(|s| {
            let d = net.bfs_distances(s, false);
            let mut max = 0u32;
            let mut sum = 0u64;
            let mut pairs = 0u64;
            for (t, dist) in d.iter().enumerate() {
                if let (true, Some(x)) = (t != s, dist) {
                    max = max.max(*x);
                    sum += *x as u64;
                    pairs += 1;
                }
            }
            (max, sum, pairs)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0.max(b.0), a.1 + b.1, a.2 + b.2));
    let avg = if pairs == 0 { 0.0 } else { sum as f64 / pairs as f64 };
    (diam, avg)
}

/// Average local clustering of the undirected, unweighted projection.
/// Nodes with fewer than two neighbours contribute zero.
pub fn average_clustering(net: &PortsNetwork) -> f64 {
    let n = net.node_count();
    if n == 0 {
        return 0.0;
    }
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            let mut nb: Vec<usize> = net.out[u].iter().chain(&net.inc[u]).map(|&(v, _)| v).collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|u| {
            let nb = &neighbours[u];
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if neighbours[a].binary_search(&b).is_ok() {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .sum();
    total / n as f64
}

pub fn network_stats(net: &PortsNetwork) -> Result<NetworkStats> {
    let n = net.node_count();
    if n < 2 {
        return Err(Error::InvalidInput("density undefined for fewer than 2 nodes".into()));
    }
    let e = net.edge_count();
    let bidirectional_pairs = net
        .edges()
        .filter(|&(u, v, _)| u < v && net.weight(v, u).is_some())
        .count();
    let strongly_connected = net.is_strongly_connected();
    let (diameter, average_shortest_path) = if strongly_connected {
        path_stats(net)
    } else {
        path_stats(&largest_scc(net)?)
    };
    Ok(NetworkStats {
        nodes: n,
        edges: e,
        bidirectional_pairs,
        density: e as f64 / (n * (n - 1)) as f64,
        diameter,
        average_shortest_path,
        average_clustering: average_clustering(net),
        strongly_connected,
    })
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    src: PortId,
    dst: PortId,
    weight: u64,
}

/// Writes `src,dst,weight` rows in ascending `(src, dst)` order.
pub fn write_edge_list<W: Write>(out: W, net: &PortsNetwork) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (src, dst, weight) in net.edges() {
        w.serialize(EdgeRow { src, dst, weight })?;
    }
    w.flush().map_err(|e| Error::io("<edge list>", e))?;
    Ok(())
}

pub fn read_edge_list<R: Read>(input: R) -> Result<PortsNetwork> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<EdgeRow>() {
        let r = row?;
        rows.push((r.src, r.dst, r.weight));
    }
    if rows.is_empty() {
        return Err(Error::Empty("edge list"));
    }
    PortsNetwork::from_edges(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Timestamp, VesselId};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn voyage(o: PortId, d: PortId) -> Voyage {
        Voyage {
            vessel: VesselId::new("123456789", "9876543", "X").unwrap(),
            origin: o,
            destination: d,
            depart: Timestamp(0),
            arrive: Timestamp(1),
        }
    }

    fn net(edges: &[(PortId, PortId)]) -> PortsNetwork {
        PortsNetwork::from_edges(edges.iter().map(|&(u, v)| (u, v, 1))).unwrap()
    }

    #[test]
    fn weights_count_voyages() {
        let voyages = [voyage(1, 2), voyage(1, 2), voyage(1, 2), voyage(2, 1)];
        let g = build_network(&voyages).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(1, 2, 3), (2, 1, 1)]);
        let one = build_network(&voyages[..1]).unwrap();
        assert_eq!((one.node_count(), one.edge_count()), (2, 1));
        assert!(matches!(build_network(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn build_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<Voyage> = (0..10_000)
            .map(|_| {
                let o = rng.random_range(0..30);
                let d = (o + rng.random_range(1..30)) % 30;
                voyage(o, d)
            })
            .collect();
        let mut sorted = base.clone();
        sorted.sort_by_key(|v| (v.origin, v.destination));
        let reference = build_network(&sorted).unwrap();
        let mut shuffled = base;
        shuffled.shuffle(&mut rng);
        let g = build_network(&shuffled).unwrap();
        assert_eq!(g, reference);
        assert_eq!(g.total_weight(), 10_000);
    }

    #[test]
    fn rejects_invalid_edges() {
        assert!(PortsNetwork::from_edges([(1, 1, 1)]).is_err());
        assert!(PortsNetwork::from_edges([(1, 2, 0)]).is_err());
        assert!(PortsNetwork::from_edges([(1, 2, 1), (1, 2, 4)]).is_err());
    }

    #[test]
    fn scc_of_cycle_with_dangling_edge() {
        let g = net(&[(1, 2), (2, 3), (3, 1), (3, 4)]);
        let scc = largest_scc(&g).unwrap();
        assert_eq!(scc.nodes(), &[1, 2, 3]);
        assert_eq!(scc.edge_count(), 3);
        assert!(scc.is_strongly_connected());
    }

    #[test]
    fn scc_size_tie_breaks_on_smallest_id() {
        let g = net(&[(5, 6), (6, 5), (2, 9), (9, 2), (6, 9)]);
        assert_eq!(largest_scc(&g).unwrap().nodes(), &[2, 9]);
    }

    #[test]
    fn bidirectional_graph_is_its_own_scc() {
        let g = net(&[(1, 2), (2, 1), (2, 3), (3, 2)]);
        assert_eq!(largest_scc(&g).unwrap(), g);
    }

    #[test]
    fn stats_of_directed_four_cycle() {
        let s = network_stats(&net(&[(1, 2), (2, 3), (3, 4), (4, 1)])).unwrap();
        assert_eq!(s.diameter, 3);
        assert_eq!(s.average_shortest_path, 2.0);
        assert_eq!(s.average_clustering, 0.0);
        assert_eq!(s.bidirectional_pairs, 0);
        assert!((s.density - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn stats_of_complete_triangle() {
        let s = network_stats(&net(&[(1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1)])).unwrap();
        assert_eq!(s.density, 1.0);
        assert_eq!(s.diameter, 1);
        assert_eq!(s.average_clustering, 1.0);
        assert_eq!(s.bidirectional_pairs, 3);
        assert!(s.strongly_connected);
    }

    #[test]
    fn stats_need_two_nodes() {
        // An induced single-node graph.
        let g = net(&[(1, 2)]).induced(&[0]);
        assert!(network_stats(&g).is_err());
    }

    #[test]
    fn stats_flag_non_strongly_connected_input() {
        let s = network_stats(&net(&[(1, 2), (2, 3), (3, 1), (3, 4)])).unwrap();
        assert!(!s.strongly_connected);
        assert_eq!(s.nodes, 4);
        // Path statistics from the 3-cycle.
        assert_eq!(s.diameter, 2);
        assert_eq!(s.average_shortest_path, 1.5);
    }

    fn arb_edges() -> impl Strategy<Value = Vec<(PortId, PortId, u64)>> {
        prop::collection::btree_map((0u32..25, 0u32..25), 1u64..1000, 1..80).prop_map(|m| {
            m.into_iter().filter(|((u, v), _)| u != v).map(|((u, v), w)| (u, v, w)).collect()
        })
    }

    proptest! {
        #[test]
        fn edge_list_round_trip_is_bit_exact(edges in arb_edges()) {
            prop_assume!(!edges.is_empty());
            let g = PortsNetwork::from_edges(edges).unwrap();
            let mut buf = Vec::new();
            write_edge_list(&mut buf, &g).unwrap();
            let back = read_edge_list(buf.as_slice()).unwrap();
            let mut buf2 = Vec::new();
            write_edge_list(&mut buf2, &back).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(buf, buf2);
        }

        #[test]
        fn scc_output_is_strongly_connected(edges in arb_edges()) {
            prop_assume!(!edges.is_empty());
            let g = PortsNetwork::from_edges(edges).unwrap();
            let scc = largest_scc(&g).unwrap();
            prop_assert!(scc.is_strongly_connected());
            let total: usize = strongly_connected_components(&g).iter().map(Vec::len).sum();
            prop_assert_eq!(total, g.node_count());
        }
    }
}
