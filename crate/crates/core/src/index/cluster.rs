//! k-means with a minimum cluster size, assignment solved as min-cost flow.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::kmeans::sq_dist;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

/// Successive shortest paths with Dijkstra on reduced costs.
struct FlowGraph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        // Min-heap on distance, then node index.
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            edges: Vec::new(),
            adj: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }

    /// Push `want` units from `s` to `t`; returns the amount pushed.
    fn min_cost_flow(&mut self, s: usize, t: usize, want: i64) -> i64 {
        let n = self.adj.len();
        let mut potential = vec![0.0; n];
        let mut pushed = 0;
        while pushed < want {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev_edge = vec![usize::MAX; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem(0.0, s));
            while let Some(HeapItem(d, u)) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let edge = self.edges[e];
                    if edge.cap <= 0 {
                        continue;
                    }
                    // Rounding can leave reduced costs a hair below zero.
                    let rc = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[edge.to] {
                        dist[edge.to] = nd;
                        prev_edge[edge.to] = e;
                        heap.push(HeapItem(nd, edge.to));
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut f = want - pushed;
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                f = f.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let e = prev_edge[v];
                self.edges[e].cap -= f;
                self.edges[e ^ 1].cap += f;
                v = self.edges[e ^ 1].to;
            }
            pushed += f;
        }
        pushed
    }
}

/// Optimal assignment of points to fixed centroids such that every cluster
/// receives at least `tau` points.
pub fn constrained_assign(points: &[Vec<f64>], centroids: &[Vec<f64>], tau: usize) -> Result<Vec<usize>> {
    let n = points.len();
    let k = centroids.len();
    if k * tau > n {
        return Err(Error::Config(format!(
            "{k} clusters of at least {tau} need {} points, got {n}",
            k * tau
        )));
    }
    // Nodes: source, points, clusters, overflow, sink.
    let src = 0;
    let p0 = 1;
    let c0 = p0 + n;
    let overflow = c0 + k;
    let sink = overflow + 1;
    let mut g = FlowGraph::new(sink + 1);
    let mut arcs = Vec::with_capacity(n * k);
    for i in 0..n {
        g.add(src, p0 + i, 1, 0.0);
        for (j, c) in centroids.iter().enumerate() {
            arcs.push((i, j, g.add(p0 + i, c0 + j, 1, sq_dist(&points[i], c))));
        }
    }
    for j in 0..k {
        g.add(c0 + j, sink, tau as i64, 0.0);
        g.add(c0 + j, overflow, n as i64, 0.0);
    }
    g.add(overflow, sink, (n - k * tau) as i64, 0.0);
    let flow = g.min_cost_flow(src, sink, n as i64);
    if flow != n as i64 {
        return Err(Error::Invalid(format!("flow solver routed {flow} of {n} points")));
    }
    let mut assignment = vec![usize::MAX; n];
    for (i, j, e) in arcs {
        if g.edges[e].cap == 0 {
            assignment[i] = j;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    pub iterations: usize,
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect()
}

fn single_run(points: &[Vec<f64>], k: usize, tau: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> Result<ConstrainedResult> {
    let mut centroids = crate::codec::kmeans::plus_plus_seeds(points, k, rng);
    let mut assignment = constrained_assign(points, &centroids, tau)?;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        centroids = means(points, &assignment, k);
        let next = constrained_assign(points, &centroids, tau)?;
        if next == assignment {
            break;
        }
        assignment = next;
    }
    centroids = means(points, &assignment, k);
    Ok(ConstrainedResult {
        objective: objective(points, &centroids, &assignment),
        assignment,
        centroids,
        iterations,
    })
}

/// Lloyd iterations with a size-constrained assignment step, best of
/// `restarts` seeded runs.
pub fn constrained_kmeans(
    points: &[Vec<f64>],
    k: usize,
    tau: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ConstrainedResult> {
    let n = points.len();
    if k == 0 || n == 0 {
        return Err(Error::Config("need at least one point and one cluster".into()));
    }
    if k * tau > n {
        return Err(Error::Config(format!(
            "minimum size {tau} is infeasible for {k} clusters over {n} points"
        )));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ConstrainedResult> = None;
    for _ in 0..restarts.max(1) {
        let r = single_run(points, k, tau, max_iter.max(1), &mut rng)?;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}
