//! Cosine-similarity kNN graph over deduplicated utterance texts.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use super::GraphError;
use crate::corpus::Corpus;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_TAU: f64 = 0.8;

/// Undirected weighted graph over text keys. `edges` holds each pair once
/// with `i < j`, sorted; `adjacency` mirrors it per node.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityGraph {
    pub node_ids: Vec<String>,
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KnnConfig {
    pub k: usize,
    pub tau: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
        }
    }
}

impl SimilarityGraph {
    /// Builds a graph from an explicit edge list. Duplicate pairs are
    /// merged (weights summed); self-loops and non-positive weights are
    /// rejected.
    pub fn from_edges(node_ids: Vec<String>, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let n = node_ids.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(GraphError::InvalidParameter(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(GraphError::InvalidParameter(format!("self-loop on node {a}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(GraphError::InvalidParameter(format!("edge ({a}, {b}) has non-positive weight {w}")));
            }
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        let edges: Vec<(usize, usize, f64)> = merged.into_iter().map(|((a, b), w)| (a, b, w)).collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in &edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        adjacency.iter_mut().for_each(|l| l.sort_by_key(|&(u, _)| u));
        Ok(Self {
            node_ids,
            edges,
            adjacency,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.node_ids.binary_search_by(|t| t.as_str().cmp(text)).ok().or_else(|| {
            // graphs from `from_edges` need not be sorted
            self.node_ids.iter().position(|t| t == text)
        })
    }
}

/// dot(a, b) / (|a| |b|), clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, GraphError> {
    if a.len() != b.len() {
        return Err(GraphError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(GraphError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Deduplicated (text, sentence embedding) pairs of a corpus.
pub fn text_embeddings(corpus: &Corpus) -> Result<Vec<(String, Vec<f64>)>, GraphError> {
    let mut map: BTreeMap<&str, &[f64]> = BTreeMap::new();
    let mut missing: Vec<String> = Vec::new();
    for u in &corpus.utterances {
        match &u.sent_embedding {
            Some(e) => {
                if let Some(prev) = map.insert(u.text.as_str(), e) {
                    if prev != e.as_slice() {
                        return Err(GraphError::ConflictingEmbedding(u.text.clone()));
                    }
                }
            }
            None => missing.push(u.text.clone()),
        }
    }
    missing.sort();
    missing.dedup();
    missing.retain(|t| !map.contains_key(t.as_str()));
    if !missing.is_empty() {
        return Err(GraphError::MissingEmbeddings(missing));
    }
    Ok(map.into_iter().map(|(t, e)| (t.to_string(), e.to_vec())).collect())
}

/// Links each text to its `k` most similar texts, keeping links with
/// cosine similarity ≥ `tau`. Nodes are ordered by text.
pub fn build_knn_graph(entries: &[(String, Vec<f64>)], cfg: &KnnConfig) -> Result<SimilarityGraph, GraphError> {
    if !(cfg.tau > 0.0 && cfg.tau <= 1.0) {
        return Err(GraphError::InvalidParameter(format!("tau must be in (0, 1], got {}", cfg.tau)));
    }
    let mut sorted: Vec<(&str, &[f64])> = entries.iter().map(|(t, e)| (t.as_str(), e.as_slice())).collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut nodes: Vec<(&str, &[f64])> = Vec::with_capacity(sorted.len());
    for (t, e) in sorted {
        match nodes.last() {
            Some((pt, pe)) if *pt == t => {
                if *pe != e {
                    return Err(GraphError::ConflictingEmbedding(t.to_string()));
                }
            }
            _ => nodes.push((t, e)),
        }
    }
    if let Some((_, e0)) = nodes.first() {
        if let Some((_, e)) = nodes.iter().find(|(_, e)| e.len() != e0.len()) {
            return Err(GraphError::DimensionMismatch {
                expected: e0.len(),
                got: e.len(),
            });
        }
    }

    // unit vectors, so the similarity is a plain dot product
    let unit: Vec<Vec<f64>> = nodes
        .iter()
        .map(|(_, e)| {
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(GraphError::ZeroVector)
            } else {
                Ok(e.iter().map(|v| v / norm).collect())
            }
        })
        .collect::<Result<_, _>>()?;

    let neighbor_lists: Vec<Vec<(usize, f64)>> = (0..unit.len())
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..unit.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    (j, s.clamp(-1.0, 1.0))
                })
                .filter(|&(_, s)| s >= cfg.tau)
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(cfg.k);
            cand
        })
        .collect();

    let mut pairs: HashMap<(usize, usize), f64> = HashMap::new();
    for (i, list) in neighbor_lists.iter().enumerate() {
        for &(j, s) in list {
            pairs.entry((i.min(j), i.max(j))).or_insert(s);
        }
    }
    let edges: Vec<(usize, usize, f64)> = pairs.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    let node_ids = nodes.into_iter().map(|(t, _)| t.to_string()).collect();
    SimilarityGraph::from_edges(node_ids, &edges)
}
