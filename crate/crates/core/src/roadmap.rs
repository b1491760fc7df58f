//! Probabilistic roadmap over the unit square.
//!
//! Every node keeps its `k` nearest other nodes as directed out-edges,
//! sorted by distance (index breaks ties). The roadmap defines both the
//! policy's action space and the travel cost of a trajectory.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::Rng;

use crate::belief::{BeliefState, SpaceTimePoint};
use crate::error::{invalid, Error, Result};
use crate::seed;

/// Slack used when comparing accumulated path lengths against budgets.
pub const LENGTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadmapGraph {
    pub nodes: Vec<[f64; 2]>,
    pub adjacency: Vec<Vec<usize>>,
    pub k: usize,
    pub seed: u64,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl RoadmapGraph {
    /// `n` uniform nodes with directed k-nearest-neighbor edges.
    pub fn build(n: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(seed);
        let nodes = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut graph = Self::from_nodes(nodes, k)?;
        graph.seed = seed;
        Ok(graph)
    }

    pub fn from_nodes(nodes: Vec<[f64; 2]>, k: usize) -> Result<Self> {
        let n = nodes.len();
        if k < 1 || k >= n {
            return Err(invalid("k", format!("need 1 <= k < n, got k={k}, n={n}")));
        }
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let adjacency = (0..n)
            .map(|i| {
                let mut cand: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (distance(nodes[i], nodes[j]), j))
                    .collect();
                cand.select_nth_unstable_by(k - 1, by_distance);
                cand.truncate(k);
                cand.sort_unstable_by(by_distance);
                cand.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        Ok(Self { nodes, adjacency, k, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_length(&self, from: usize, to: usize) -> f64 {
        distance(self.nodes[from], self.nodes[to])
    }

    pub fn nearest_node(&self, point: [f64; 2]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| distance(self.nodes[a], point).total_cmp(&distance(self.nodes[b], point)))
            .expect("graph has nodes")
    }

    /// Shortest directed-path length from every node to `target`
    /// (infinite when unreachable).
    pub fn distances_to(&self, target: usize) -> Vec<f64> {
        let mut reverse = vec![Vec::new(); self.len()];
        for (i, out) in self.adjacency.iter().enumerate() {
            for &j in out {
                reverse[j].push(i);
            }
        }
        self.dijkstra(target, &reverse).0
    }

    /// Shortest directed-path lengths and predecessors from `source`.
    pub fn distances_from(&self, source: usize) -> (Vec<f64>, Vec<Option<usize>>) {
        self.dijkstra(source, &self.adjacency)
    }

    /// Node sequence of a shortest path `source -> target`, excluding
    /// `source`; `None` when unreachable.
    pub fn shortest_path(&self, source: usize, target: usize) -> Option<Vec<usize>> {
        let (dist, prev) = self.distances_from(source);
        if !dist[target].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut at = target;
        while at != source {
            path.push(at);
            at = prev[at]?;
        }
        path.reverse();
        Some(path)
    }

    fn dijkstra(&self, source: usize, edges: &[Vec<usize>]) -> (Vec<f64>, Vec<Option<usize>>) {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
            }
        }

        let mut dist = vec![f64::INFINITY; self.len()];
        let mut prev = vec![None; self.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &v in &edges[u] {
                let nd = d + self.edge_length(u, v);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = Some(u);
                    heap.push(Entry(nd, v));
                }
            }
        }
        (dist, prev)
    }

    /// Plain-text dump: a `n k seed` header, `n` lines of `index x y`, then
    /// `n` adjacency lines `index: j1 j2 ...`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.len(), self.k, self.seed);
        for (i, [x, y]) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{i} {x:?} {y:?}");
        }
        for (i, adj) in self.adjacency.iter().enumerate() {
            let list: Vec<String> = adj.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{i}: {}", list.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Format { what: "graph dump", reason: reason.to_string() };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 3 {
            return Err(bad("header must be `n k seed`"));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad("expected integer"));
        let n = parse_usize(header[0])?;
        let k = parse_usize(header[1])?;
        let seed = header[2].parse::<u64>().map_err(|_| bad("expected seed"))?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let parts: Vec<&str> = lines.next().ok_or_else(|| bad("missing node line"))?.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad("node line must be `index x y`"));
            }
            let x = parts[1].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
            let y = parts[2].parse::<f64>().map_err(|_| bad("bad coordinate"))?;
            nodes.push([x, y]);
        }
        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("missing adjacency line"))?;
            let (_, rest) = line.split_once(':').ok_or_else(|| bad("adjacency line must contain `:`"))?;
            let adj = rest.split_whitespace().map(parse_usize).collect::<Result<Vec<_>>>()?;
            if adj.len() != k || adj.iter().any(|&j| j >= n) {
                return Err(bad("adjacency list malformed"));
            }
            adjacency.push(adj);
        }
        Ok(Self { nodes, adjacency, k, seed })
    }
}

/// A roadmap node with the belief at its position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedNode {
    pub position: [f64; 2],
    pub mean: f64,
    pub std: f64,
}

impl AugmentedNode {
    pub fn features(&self) -> [f64; 4] {
        [self.position[0], self.position[1], self.mean, self.std]
    }
}

/// Posterior mean and standard deviation at every node at time `t`.
pub fn augment(graph: &RoadmapGraph, belief: &BeliefState, t: f64) -> Vec<AugmentedNode> {
    let queries: Vec<_> = graph.nodes.iter().map(|&p| SpaceTimePoint::new(p, t)).collect();
    let (mean, var) = belief.marginals(&queries);
    graph
        .nodes
        .iter()
        .zip(mean.into_iter().zip(var))
        .map(|(&position, (mean, var))| AugmentedNode { position, mean, std: var.sqrt() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningState {
    pub current_node: usize,
    pub remaining_budget: f64,
    pub trajectory: Vec<usize>,
    /// Arc length travelled since the last measurement.
    pub distance_since_measurement: f64,
}

impl PlanningState {
    pub fn start(node: usize, budget: f64) -> Self {
        Self {
            current_node: node,
            remaining_budget: budget,
            trajectory: vec![node],
            distance_since_measurement: 0.0,
        }
    }

    pub fn travelled(&self, graph: &RoadmapGraph) -> f64 {
        self.trajectory.windows(2).map(|w| graph.edge_length(w[0], w[1])).sum()
    }
}

/// Positions along the straight segment `from -> to` at which a measurement
/// falls due, given `carry` arc length already accumulated. Returns the
/// points and the new carry.
pub fn measurement_points(from: [f64; 2], to: [f64; 2], carry: f64, interval: f64) -> (Vec<[f64; 2]>, f64) {
    let length = distance(from, to);
    let mut points = Vec::new();
    let mut s = interval - carry;
    while s <= length + LENGTH_EPS {
        let f = if length > 0.0 { (s / length).min(1.0) } else { 0.0 };
        points.push([from[0] + f * (to[0] - from[0]), from[1] + f * (to[1] - from[1])]);
        s += interval;
    }
    let carry = (carry + length - interval * points.len() as f64).max(0.0);
    (points, carry)
}

/// Moves along the edge to `target`, spending its length from the budget
/// and emitting interval measurement points along the way.
pub fn traverse(
    state: &PlanningState,
    graph: &RoadmapGraph,
    target: usize,
    interval: f64,
) -> Result<(PlanningState, Vec<[f64; 2]>)> {
    if !(interval > 0.0) {
        return Err(invalid("interval", "must be > 0"));
    }
    let current = state.current_node;
    if !graph.adjacency[current].contains(&target) {
        return Err(Error::NotANeighbor { current, target });
    }
    let edge = graph.edge_length(current, target);
    if edge > state.remaining_budget + LENGTH_EPS {
        return Err(Error::BudgetExceeded { edge, remaining: state.remaining_budget });
    }
    let (points, carry) = measurement_points(
        graph.nodes[current],
        graph.nodes[target],
        state.distance_since_measurement,
        interval,
    );
    let mut trajectory = state.trajectory.clone();
    trajectory.push(target);
    Ok((
        PlanningState {
            current_node: target,
            remaining_budget: (state.remaining_budget - edge).max(0.0),
            trajectory,
            distance_since_measurement: carry,
        },
        points,
    ))
}

/// Neighbors of the current node that leave enough budget to still reach
/// the destination afterwards.
pub fn feasible_mask(graph: &RoadmapGraph, state: &PlanningState, to_destination: &[f64]) -> Vec<bool> {
    let cur = state.current_node;
    graph.adjacency[cur]
        .iter()
        .map(|&j| graph.edge_length(cur, j) + to_destination[j] <= state.remaining_budget + LENGTH_EPS)
        .collect()
}
