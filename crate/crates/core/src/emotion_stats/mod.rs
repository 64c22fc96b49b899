//! Emotional range: Dirichlet fits over emotion vectors, their entropy, and
//! bootstrap uncertainty.

pub mod bootstrap;
pub mod dirichlet;
mod range;

pub use bootstrap::{bootstrap_ci, cluster_bootstrap_ci, BootstrapCI, BootstrapConfig};
pub use dirichlet::{
    dirichlet_entropy, dirichlet_log_likelihood, dirichlet_mle, dirichlet_mle_from_stats, smooth, DirichletParams,
    MleConfig, SuffStats, ALPHA0_CAP,
};
pub use range::{
    emotional_range, film_ranges, genre_emotional_range, phrase_ranges, range_with_ci, GenreAggregation,
    GenreRange, GenreRangeConfig, GenreRangeReport, RangeReport, SkippedSubject, SubjectRange,
    DEFAULT_MIN_FILMS, DEFAULT_MIN_N,
};

use thiserror::Error;

use crate::special::DomainError;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("insufficient data for `{subject}`: {n} samples, need at least {min}")]
    InsufficientData { subject: String, n: usize, min: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
}
