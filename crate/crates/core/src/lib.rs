//! Corpus analytics for emotion in film dialogue: ingestion, phrase-group
//! clustering, Dirichlet emotional range, narrative trajectories,
//! diachronic regression and classifier evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod corpus;
pub mod diachronic;
pub mod emotion_stats;
pub mod evalkit;
pub mod manifest;
pub mod narrative;
pub mod phrase_graph;
pub mod special;
pub mod synthgen;
