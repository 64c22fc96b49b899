//! Phrase groups: semantically equivalent utterance texts found by Leiden
//! clustering of a sentence-embedding similarity graph.

mod graph;
mod leiden;

pub use graph::{build_knn_graph, cosine_similarity, text_embeddings, KnnConfig, SimilarityGraph, DEFAULT_K, DEFAULT_TAU};
pub use leiden::{leiden_partition, leiden_partition_restarts, modularity, Partition, DEFAULT_RESTARTS};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing sentence embeddings for {} text(s): {}", .0.len(), preview(.0))]
    MissingEmbeddings(Vec<String>),
    #[error("text {0:?} has conflicting embeddings")]
    ConflictingEmbedding(String),
    #[error("graph has zero total edge weight")]
    ZeroWeight,
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("assignment covers {got} nodes, graph has {expected}")]
    AssignmentLength { expected: usize, got: usize },
    #[error("{0}")]
    InvalidParameter(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn preview(texts: &[String]) -> String {
    let mut s: Vec<String> = texts.iter().take(5).map(|t| format!("{t:?}")).collect();
    if texts.len() > 5 {
        s.push("...".into());
    }
    s.join(", ")
}

/// A cluster of semantically equivalent texts and the utterances using them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseGroup {
    pub group_id: usize,
    pub member_texts: BTreeSet<String>,
    /// `film_id/utt_id` keys in corpus order.
    pub utterance_ids: Vec<String>,
    /// Most frequent member text (ties: lexicographically smallest).
    pub representative: String,
    pub count: usize,
}

/// Turns a partition of the corpus texts into phrase groups with at least
/// `min_count` utterances, sorted by count descending. Utterances whose
/// text is not a graph node are ignored.
pub fn make_phrase_groups(corpus: &Corpus, graph: &SimilarityGraph, partition: &Partition, min_count: usize) -> Vec<PhraseGroup> {
    let index: HashMap<&str, usize> = graph.node_ids.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    // community -> text -> utterance keys
    let mut comms: BTreeMap<usize, BTreeMap<&str, Vec<String>>> = BTreeMap::new();
    for u in &corpus.utterances {
        if let Some(&node) = index.get(u.text.as_str()) {
            let c = partition.community_of[node];
            comms
                .entry(c)
                .or_default()
                .entry(u.text.as_str())
                .or_default()
                .push(format!("{}/{}", u.film_id, u.utt_id));
        }
    }
    let mut groups: Vec<PhraseGroup> = comms
        .into_values()
        .filter_map(|texts| {
            let count: usize = texts.values().map(Vec::len).sum();
            if count < min_count.max(1) {
                return None;
            }
            // BTreeMap iterates texts in order, so strict > keeps the smallest on ties
            let mut rep: (&str, usize) = ("", 0);
            for (t, ids) in &texts {
                if ids.len() > rep.1 {
                    rep = (t, ids.len());
                }
            }
            Some(PhraseGroup {
                group_id: 0,
                representative: rep.0.to_string(),
                member_texts: texts.keys().map(|t| t.to_string()).collect(),
                utterance_ids: Vec::new(),
                count,
            })
        })
        .collect();
    groups.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.representative.cmp(&b.representative)));

    let text_group: HashMap<String, usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.member_texts.iter().map(move |t| (t.clone(), gi)))
        .collect();
    for u in &corpus.utterances {
        if let Some(&gi) = text_group.get(&u.text) {
            groups[gi].utterance_ids.push(format!("{}/{}", u.film_id, u.utt_id));
        }
    }
    for (i, g) in groups.iter_mut().enumerate() {
        g.group_id = i;
    }
    groups
}

#[derive(Serialize, Deserialize)]
struct GroupLine {
    group_id: usize,
    representative: String,
    member_texts: Vec<String>,
    count: usize,
}

pub fn write_phrase_groups_jsonl<W: Write>(groups: &[PhraseGroup], mut w: W) -> Result<(), GraphError> {
    for g in groups {
        let line = GroupLine {
            group_id: g.group_id,
            representative: g.representative.clone(),
            member_texts: g.member_texts.iter().cloned().collect(),
            count: g.count,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `phrase_groups.jsonl` and re-attaches utterance ids from `corpus`
/// by text membership. `count` is recomputed against the corpus.
pub fn read_phrase_groups_jsonl<R: BufRead>(r: R, corpus: &Corpus) -> Result<Vec<PhraseGroup>, GraphError> {
    let mut groups = Vec::new();
    let mut owner: HashMap<String, usize> = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GroupLine = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for t in &g.member_texts {
            if owner.insert(t.clone(), groups.len()).is_some() {
                return Err(GraphError::Parse {
                    line: i + 1,
                    message: format!("text {t:?} belongs to more than one group"),
                });
            }
        }
        groups.push(PhraseGroup {
            group_id: g.group_id,
            member_texts: g.member_texts.into_iter().collect(),
            utterance_ids: Vec::new(),
            representative: g.representative,
            count: 0,
        });
    }
    for u in &corpus.utterances {
        if let Some(&gi) = owner.get(&u.text) {
            groups[gi].utterance_ids.push(format!("{}/{}", u.film_id, u.utt_id));
            groups[gi].count += 1;
        }
    }
    Ok(groups)
}
