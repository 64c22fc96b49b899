//! Modularity and the Leiden algorithm (local moving, refinement,
//! aggregation) for weighted undirected graphs.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{GraphError, SimilarityGraph};

/// Randomness of refinement merges; small values make it near-greedy.
const THETA: f64 = 0.01;
const MAX_OUTER_ITERATIONS: usize = 100;
const MAX_PASSES: usize = 50;
pub const DEFAULT_RESTARTS: usize = 32;

/// Weighted modularity of `assignment` with resolution `gamma`:
/// Q = Σ_c [ w_c / W − γ (s_c / 2W)² ].
pub fn modularity(g: &SimilarityGraph, assignment: &[usize], gamma: f64) -> Result<f64, GraphError> {
    if assignment.len() != g.n_nodes() {
        return Err(GraphError::AssignmentLength {
            expected: g.n_nodes(),
            got: assignment.len(),
        });
    }
    let total = g.total_weight();
    if !(total > 0.0) {
        return Err(GraphError::ZeroWeight);
    }
    let mut internal: HashMap<usize, f64> = HashMap::new();
    let mut strength: HashMap<usize, f64> = HashMap::new();
    for &(a, b, w) in g.edges() {
        let (ca, cb) = (assignment[a], assignment[b]);
        *strength.entry(ca).or_insert(0.0) += w;
        *strength.entry(cb).or_insert(0.0) += w;
        if ca == cb {
            *internal.entry(ca).or_insert(0.0) += w;
        }
    }
    // fixed summation order
    let mut keys: Vec<usize> = strength.keys().copied().collect();
    keys.sort_unstable();
    let mut q = 0.0;
    for c in keys {
        let s = strength[&c] / (2.0 * total);
        q += internal.get(&c).copied().unwrap_or(0.0) / total - gamma * s * s;
    }
    Ok(q)
}

/// A community assignment found by [`leiden_partition`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    /// Community of each node; ids are dense and numbered in node order.
    pub community_of: Vec<usize>,
    pub n_communities: usize,
    /// Modularity of `community_of` (0 for graphs without edges).
    pub quality: f64,
    pub resolution: f64,
    pub seed: u64,
    pub iterations: usize,
    /// Quality after each local-moving phase, then the final value.
    pub quality_history: Vec<f64>,
}

impl Partition {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_communities];
        for (v, &c) in self.community_of.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

/// Working graph with self-loops, used across aggregation levels.
struct WorkGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    strength: Vec<f64>,
    /// Sum of strengths (twice the total edge weight).
    two_m: f64,
}

impl WorkGraph {
    fn from_similarity(g: &SimilarityGraph) -> Self {
        let n = g.n_nodes();
        let adj: Vec<Vec<(usize, f64)>> = (0..n).map(|v| g.neighbors(v).to_vec()).collect();
        let strength: Vec<f64> = adj.iter().map(|l| l.iter().map(|e| e.1).sum()).collect();
        let two_m = strength.iter().sum();
        Self {
            adj,
            self_loop: vec![0.0; n],
            strength,
            two_m,
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    /// Collapses each community of `labels` (dense ids) into one node.
    fn aggregate(&self, labels: &[usize], n_comms: usize) -> WorkGraph {
        let mut self_loop = vec![0.0; n_comms];
        let mut strength = vec![0.0; n_comms];
        let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_comms];
        for v in 0..self.n() {
            let cv = labels[v];
            self_loop[cv] += self.self_loop[v];
            strength[cv] += self.strength[v];
            for &(u, w) in &self.adj[v] {
                let cu = labels[u];
                if cu == cv {
                    // each internal edge is visited from both ends
                    self_loop[cv] += 0.5 * w;
                } else {
                    raw[cv].push((cu, w));
                }
            }
        }
        let adj = raw
            .into_iter()
            .map(|mut l| {
                l.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(l.len());
                for (u, w) in l {
                    match merged.last_mut() {
                        Some(last) if last.0 == u => last.1 += w,
                        _ => merged.push((u, w)),
                    }
                }
                merged
            })
            .collect();
        WorkGraph {
            adj,
            self_loop,
            strength,
            two_m: self.two_m,
        }
    }
}

/// Renumbers labels densely in order of first appearance.
fn relabel(labels: &mut [usize]) -> usize {
    let mut map: HashMap<usize, usize> = HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Scratch space for accumulating edge weight from a node to communities.
struct NeighborWeights {
    weight: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl NeighborWeights {
    fn new(n: usize) -> Self {
        Self {
            weight: vec![0.0; n],
            seen: vec![false; n],
            touched: Vec::new(),
        }
    }

    fn add(&mut self, c: usize, w: f64) {
        if !self.seen[c] {
            self.seen[c] = true;
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for &c in &self.touched {
            self.weight[c] = 0.0;
            self.seen[c] = false;
        }
        self.touched.clear();
    }
}

/// Queue-based local moving. Returns whether any node moved.
fn move_nodes(g: &WorkGraph, comm: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.n();
    let mut comm_strength = vec![0.0; n];
    let mut comm_size = vec![0usize; n];
    for v in 0..n {
        comm_strength[comm[v]] += g.strength[v];
        comm_size[comm[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| comm_size[c] == 0).collect();
    empty.reverse();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut nw = NeighborWeights::new(n);
    let mut moved = false;

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let kv = g.strength[v];
        let old = comm[v];
        for &(u, w) in &g.adj[v] {
            nw.add(comm[u], w);
        }
        comm_strength[old] -= kv;
        comm_size[old] -= 1;
        if comm_size[old] == 0 {
            empty.push(old);
        }

        let scale = gamma * kv / g.two_m;
        let mut candidates = nw.touched.clone();
        candidates.push(old);
        if let Some(&e) = empty.last() {
            candidates.push(e);
        }
        candidates.sort_unstable();
        candidates.dedup();
        let gains: Vec<f64> = candidates
            .iter()
            .map(|&c| nw.weight[c] - scale * comm_strength[c])
            .collect();
        nw.clear();
        // highest gain, then lowest community id; staying wins near-ties
        let max_gain = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tie_eps = 1e-12 * kv.max(f64::MIN_POSITIVE);
        let old_gain = gains[candidates.binary_search(&old).expect("old community is a candidate")];
        let best = if old_gain >= max_gain - tie_eps {
            old
        } else {
            candidates
                .iter()
                .zip(&gains)
                .find(|(_, &gc)| gc >= max_gain - tie_eps)
                .map(|(&c, _)| c)
                .expect("maximum is attained")
        };

        if comm_size[best] == 0 {
            empty.retain(|&e| e != best);
        }
        comm_strength[best] += kv;
        comm_size[best] += 1;
        if best == old {
            continue;
        }
        comm[v] = best;
        moved = true;
        for &(u, _) in &g.adj[v] {
            if !queued[u] && comm[u] != best {
                queued[u] = true;
                queue.push_back(u);
            }
        }
    }
    moved
}

/// Refines each community of `comm` by merging singletons into
/// well-connected sub-communities. Returns refined labels (not dense).
fn refine(g: &WorkGraph, comm: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.n();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut ref_strength = g.strength.clone();
    let mut ref_size = vec![1usize; n];
    let mut comm_strength = vec![0.0; n];
    for v in 0..n {
        comm_strength[comm[v]] += g.strength[v];
    }
    // weight from each refined community to the rest of its parent community
    let mut ref_external: Vec<f64> = (0..n)
        .map(|v| g.adj[v].iter().filter(|(u, _)| comm[*u] == comm[v]).map(|e| e.1).sum())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut nw = NeighborWeights::new(n);
    for v in order {
        if ref_size[refined[v]] != 1 {
            continue;
        }
        let s = comm[v];
        let kv = g.strength[v];
        if ref_external[v] < gamma * kv * (comm_strength[s] - kv) / g.two_m {
            continue;
        }
        for &(u, w) in &g.adj[v] {
            if comm[u] == s {
                nw.add(refined[u], w);
            }
        }
        let own = refined[v];
        let mut cands: Vec<(usize, f64)> = vec![(own, 0.0)];
        let mut touched = nw.touched.clone();
        touched.sort_unstable();
        for c in touched {
            if c == own {
                continue;
            }
            let kc = ref_strength[c];
            if ref_external[c] < gamma * kc * (comm_strength[s] - kc) / g.two_m {
                continue;
            }
            let gain = nw.weight[c] - gamma * kv * kc / g.two_m;
            if gain >= 0.0 {
                cands.push((c, gain));
            }
        }
        let max_gain = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = cands.iter().map(|c| ((c.1 - max_gain) / THETA).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut chosen = cands[cands.len() - 1].0;
        for (c, w) in cands.iter().zip(&weights) {
            if r < *w {
                chosen = c.0;
                break;
            }
            r -= w;
        }
        if chosen != own {
            let w_vc = nw.weight[chosen];
            ref_external[chosen] = ref_external[chosen] + ref_external[v] - 2.0 * w_vc;
            ref_strength[chosen] += kv;
            ref_size[chosen] += 1;
            ref_size[own] = 0;
            refined[v] = chosen;
        }
        nw.clear();
    }
    refined
}

/// Splits communities that are not connected in `g` into their components.
fn split_disconnected(g: &SimilarityGraph, labels: &mut [usize]) -> bool {
    let n = g.n_nodes();
    let mut next = vec![usize::MAX; n];
    let mut fresh = 0;
    let mut seen_label: HashMap<usize, usize> = HashMap::new();
    let mut split = false;
    for start in 0..n {
        if next[start] != usize::MAX {
            continue;
        }
        let lab = labels[start];
        *seen_label.entry(lab).or_insert(0) += 1;
        if seen_label[&lab] > 1 {
            split = true;
        }
        next[start] = fresh;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &(u, _) in g.neighbors(v) {
                if labels[u] == lab && next[u] == usize::MAX {
                    next[u] = fresh;
                    stack.push(u);
                }
            }
        }
        fresh += 1;
    }
    labels.copy_from_slice(&next);
    split
}

/// One multi-level pass: local moving, refinement and aggregation until no
/// level merges anything. Returns dense labels of the original nodes.
fn leiden_pass(
    base: &WorkGraph,
    g: &SimilarityGraph,
    initial: &[usize],
    resolution: f64,
    rng: &mut ChaCha8Rng,
    history: &mut Vec<f64>,
    iterations: &mut usize,
) -> Result<Vec<usize>, GraphError> {
    let n = base.n();
    let mut work: Option<WorkGraph> = None;
    // node of the current working graph holding each original node
    let mut membership: Vec<usize> = (0..n).collect();
    let mut comm: Vec<usize> = initial.to_vec();
    relabel(&mut comm);
    loop {
        *iterations += 1;
        let level = work.as_ref().unwrap_or(base);
        move_nodes(level, &mut comm, resolution, rng);
        let n_comms = relabel(&mut comm);
        let flat: Vec<usize> = membership.iter().map(|&m| comm[m]).collect();
        let q = modularity(g, &flat, resolution)?;
        if let Some(&prev) = history.last() {
            assert!(
                q >= prev - 1e-10 * prev.abs().max(1.0),
                "Leiden quality decreased across iterations: {prev} -> {q}"
            );
        }
        history.push(q);
        if n_comms == level.n() || *iterations >= MAX_OUTER_ITERATIONS {
            return Ok(flat);
        }

        let mut refined = refine(level, &comm, resolution, rng);
        let mut n_refined = relabel(&mut refined);
        if n_refined == level.n() {
            // refinement merged nothing; collapse the unrefined partition
            refined = comm.clone();
            n_refined = n_comms;
        }
        let next = level.aggregate(&refined, n_refined);
        let mut next_comm = vec![0; n_refined];
        for v in 0..level.n() {
            next_comm[refined[v]] = comm[v];
        }
        for m in membership.iter_mut() {
            *m = refined[*m];
        }
        work = Some(next);
        comm = next_comm;
    }
}

/// Partitions `g` by maximizing modularity with the Leiden algorithm.
/// Deterministic for a given seed; every community is connected.
/// Runs [`DEFAULT_RESTARTS`] independent starts and keeps the best.
pub fn leiden_partition(g: &SimilarityGraph, resolution: f64, seed: u64) -> Result<Partition, GraphError> {
    leiden_partition_restarts(g, resolution, seed, DEFAULT_RESTARTS)
}

/// Best of `restarts` Leiden runs. Run `r` is seeded from `seed` and `r`;
/// odd runs start from a random partition. Ties keep the earliest run. The returned `seed` is the caller's.
pub fn leiden_partition_restarts(
    g: &SimilarityGraph,
    resolution: f64,
    seed: u64,
    restarts: usize,
) -> Result<Partition, GraphError> {
    let runs: Vec<Partition> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| leiden_single(g, resolution, seed ^ r.wrapping_mul(0x9E37_79B9_7F4A_7C15), r % 2 == 1))
        .collect::<Result<_, _>>()?;
    let best = runs.into_iter().reduce(|best, p| {
        if p.quality > best.quality + 1e-12 * best.quality.abs().max(1.0) {
            p
        } else {
            best
        }
    });
    let mut best = best.expect("at least one run");
    best.seed = seed;
    Ok(best)
}

fn leiden_single(
    g: &SimilarityGraph,
    resolution: f64,
    seed: u64,
    random_start: bool,
) -> Result<Partition, GraphError> {
    let n = g.n_nodes();
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(GraphError::InvalidParameter(format!("resolution must be positive, got {resolution}")));
    }
    if g.n_edges() == 0 {
        return Ok(Partition {
            community_of: (0..n).collect(),
            n_communities: n,
            quality: 0.0,
            resolution,
            seed,
            iterations: 0,
            quality_history: vec![0.0],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = WorkGraph::from_similarity(g);
    let mut labels: Vec<usize> = if random_start {
        let k = rng.random_range(2..=(n / 2).max(2));
        (0..n).map(|_| rng.random_range(0..k)).collect()
    } else {
        (0..n).collect()
    };
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    // each pass restarts from the original graph with the current partition
    for _ in 0..MAX_PASSES {
        let before = labels.clone();
        let start_quality = history.last().copied();
        labels = leiden_pass(&base, g, &labels, resolution, &mut rng, &mut history, &mut iterations)?;
        let end_quality = *history.last().expect("a pass records its quality");
        let improved = start_quality.map_or(true, |q| end_quality > q + 1e-12 * q.abs().max(1.0));
        if labels == before || !improved || iterations >= MAX_OUTER_ITERATIONS {
            break;
        }
    }

    split_disconnected(g, &mut labels);
    let n_communities = relabel(&mut labels);
    let quality = modularity(g, &labels, resolution)?;
    if let Some(&prev) = history.last() {
        assert!(quality >= prev - 1e-10 * prev.abs().max(1.0));
    }
    history.push(quality);
    Ok(Partition {
        community_of: labels,
        n_communities,
        quality,
        resolution,
        seed,
        iterations,
        quality_history: history,
    })
}
