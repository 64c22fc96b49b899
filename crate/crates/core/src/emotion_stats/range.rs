use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::bootstrap::{bootstrap_statistic, BootstrapCI, BootstrapConfig};
use super::dirichlet::{dirichlet_entropy, dirichlet_mle_from_stats, DirichletParams, MleConfig, SuffStats};
use super::StatsError;
use crate::corpus::{Corpus, EmotionDistribution, N_LABELS};
use crate::phrase_graph::PhraseGroup;

/// Minimum utterances for a range estimate.
pub const DEFAULT_MIN_N: usize = 50;
/// Minimum films for a genre to be reported.
pub const DEFAULT_MIN_FILMS: usize = 30;

/// Emotional range of one subject: a fitted Dirichlet and its entropy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RangeReport {
    pub subject_id: String,
    pub n: usize,
    pub params: DirichletParams,
    /// Differential entropy in nats.
    pub entropy: f64,
    pub epsilon: f64,
}

/// Smooth, fit and score a set of emotion vectors.
pub fn emotional_range(
    dists: &[EmotionDistribution],
    subject_id: &str,
    min_n: usize,
    mle: &MleConfig,
) -> Result<RangeReport, StatsError> {
    let stats = SuffStats::from_samples(dists, mle.epsilon)?;
    range_from_stats(&stats, subject_id, min_n, mle)
}

fn range_from_stats(stats: &SuffStats, subject_id: &str, min_n: usize, mle: &MleConfig) -> Result<RangeReport, StatsError> {
    if stats.n < min_n.max(2) {
        return Err(StatsError::InsufficientData {
            subject: subject_id.to_string(),
            n: stats.n,
            min: min_n.max(2),
        });
    }
    let params = dirichlet_mle_from_stats(stats, mle)?;
    let entropy = dirichlet_entropy(&params.alpha)?;
    Ok(RangeReport {
        subject_id: subject_id.to_string(),
        n: stats.n,
        params,
        entropy,
        epsilon: mle.epsilon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubjectRange {
    pub report: RangeReport,
    pub ci: Option<BootstrapCI>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedSubject {
    pub subject_id: String,
    pub n: usize,
    pub reason: String,
}

/// Range over the union of `units`, with a CI from resampling whole units.
pub fn range_with_ci(
    units: &[SuffStats],
    subject_id: &str,
    min_n: usize,
    mle: &MleConfig,
    boot: Option<&BootstrapConfig>,
) -> Result<SubjectRange, StatsError> {
    let merged = merge_units(units, 0..units.len());
    let report = range_from_stats(&merged, subject_id, min_n, mle)?;
    let ci = match boot {
        None => None,
        Some(cfg) => Some(bootstrap_statistic(units.len(), report.entropy, cfg, |idx| {
            let st = merge_units(units, idx.iter().copied());
            dirichlet_mle_from_stats(&st, mle)
                .ok()
                .and_then(|p| dirichlet_entropy(&p.alpha).ok())
        })?),
    };
    Ok(SubjectRange { report, ci })
}

fn merge_units(units: &[SuffStats], idx: impl Iterator<Item = usize>) -> SuffStats {
    let mut st = SuffStats::zeros(N_LABELS);
    for i in idx {
        st.merge(&units[i]);
    }
    st
}

fn unit_stats(dist: &EmotionDistribution, eps: f64) -> SuffStats {
    let mut st = SuffStats::zeros(N_LABELS);
    st.push(dist.probs(), eps).expect("emotion vectors have seven entries");
    st
}

/// Range of every phrase group with at least `min_n` utterances; CIs
/// resample utterances. Sorted by entropy ascending.
pub fn phrase_ranges(
    corpus: &Corpus,
    groups: &[PhraseGroup],
    min_n: usize,
    mle: &MleConfig,
    boot: Option<&BootstrapConfig>,
) -> Result<(Vec<SubjectRange>, Vec<SkippedSubject>), StatsError> {
    let mut text_to_group: HashMap<&str, usize> = HashMap::new();
    for (gi, g) in groups.iter().enumerate() {
        for t in &g.member_texts {
            text_to_group.insert(t.as_str(), gi);
        }
    }
    let mut units: Vec<Vec<SuffStats>> = vec![Vec::new(); groups.len()];
    for u in &corpus.utterances {
        if let Some(&gi) = text_to_group.get(u.text.as_str()) {
            units[gi].push(unit_stats(&u.emotion, mle.epsilon));
        }
    }
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (g, u) in groups.iter().zip(&units) {
        if u.len() < min_n.max(2) {
            skipped.push(SkippedSubject {
                subject_id: g.representative.clone(),
                n: u.len(),
                reason: format!("fewer than {min_n} utterances"),
            });
            continue;
        }
        out.push(range_with_ci(u, &g.representative, min_n, mle, boot)?);
    }
    sort_by_entropy(&mut out);
    Ok((out, skipped))
}

/// Range of every film with at least `min_n` utterances; CIs resample
/// utterances. Sorted by entropy ascending.
pub fn film_ranges(
    corpus: &Corpus,
    min_n: usize,
    mle: &MleConfig,
    boot: Option<&BootstrapConfig>,
) -> Result<(Vec<SubjectRange>, Vec<SkippedSubject>), StatsError> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (film, utts) in corpus.utterances_by_film() {
        if utts.len() < min_n.max(2) {
            skipped.push(SkippedSubject {
                subject_id: film.film_id.clone(),
                n: utts.len(),
                reason: format!("fewer than {min_n} utterances"),
            });
            continue;
        }
        let units: Vec<SuffStats> = utts.iter().map(|u| unit_stats(&u.emotion, mle.epsilon)).collect();
        out.push(range_with_ci(&units, &film.film_id, min_n, mle, boot)?);
    }
    sort_by_entropy(&mut out);
    Ok((out, skipped))
}

fn sort_by_entropy(v: &mut [SubjectRange]) {
    v.sort_by(|a, b| {
        a.report
            .entropy
            .total_cmp(&b.report.entropy)
            .then_with(|| a.report.subject_id.cmp(&b.report.subject_id))
    });
}

/// How a genre's score is formed from its films.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenreAggregation {
    /// Fit each film separately and average the film entropies.
    #[default]
    FilmMean,
    /// Pool all utterances of the genre's films into one fit.
    Pooled,
}

impl FromStr for GenreAggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "film-mean" => Ok(Self::FilmMean),
            "pooled" => Ok(Self::Pooled),
            _ => Err(format!("unknown genre aggregation `{s}` (expected film-mean or pooled)")),
        }
    }
}

impl fmt::Display for GenreAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FilmMean => "film-mean",
            Self::Pooled => "pooled",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenreRangeConfig {
    pub min_films: usize,
    /// Minimum utterances per fit (per film for film-mean, per genre when pooled).
    pub min_n: usize,
    pub aggregation: GenreAggregation,
    pub mle: MleConfig,
}

impl Default for GenreRangeConfig {
    fn default() -> Self {
        Self {
            min_films: DEFAULT_MIN_FILMS,
            min_n: DEFAULT_MIN_N,
            aggregation: GenreAggregation::default(),
            mle: MleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenreRange {
    pub genre: String,
    /// Films contributing to the score.
    pub n_films: usize,
    pub n_utterances: usize,
    pub entropy: f64,
    pub ci: BootstrapCI,
    /// Every underlying fit converged.
    pub converged: bool,
    /// The single fit, when aggregation is pooled.
    pub pooled: Option<RangeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenreRangeReport {
    pub aggregation: GenreAggregation,
    pub entries: Vec<GenreRange>,
    pub skipped: Vec<SkippedSubject>,
}

/// Emotional range per genre, for genres with at least `min_films` films.
/// CIs come from a film-level cluster bootstrap; a film with several
/// genres contributes to each.
pub fn genre_emotional_range(
    corpus: &Corpus,
    cfg: &GenreRangeConfig,
    boot: &BootstrapConfig,
) -> Result<GenreRangeReport, StatsError> {
    // genre -> per-film sufficient statistics
    let mut by_genre: BTreeMap<&str, Vec<(&str, SuffStats)>> = BTreeMap::new();
    for (film, utts) in corpus.utterances_by_film() {
        let mut st = SuffStats::zeros(N_LABELS);
        for u in utts {
            st.push(u.emotion.probs(), cfg.mle.epsilon)?;
        }
        for g in &film.genres {
            by_genre.entry(g.as_str()).or_default().push((film.film_id.as_str(), st.clone()));
        }
    }

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (genre, films) in by_genre {
        if films.len() < cfg.min_films {
            skipped.push(SkippedSubject {
                subject_id: genre.to_string(),
                n: films.len(),
                reason: format!("fewer than {} films", cfg.min_films),
            });
            continue;
        }
        let n_utterances = films.iter().map(|(_, s)| s.n).sum();
        match cfg.aggregation {
            GenreAggregation::Pooled => {
                let units: Vec<SuffStats> = films.into_iter().map(|(_, s)| s).collect();
                let r = range_with_ci(&units, genre, cfg.min_n, &cfg.mle, Some(boot))?;
                entries.push(GenreRange {
                    genre: genre.to_string(),
                    n_films: units.len(),
                    n_utterances,
                    entropy: r.report.entropy,
                    ci: r.ci.expect("bootstrap requested"),
                    converged: r.report.params.converged,
                    pooled: Some(r.report),
                });
            }
            GenreAggregation::FilmMean => {
                let mut entropies = Vec::new();
                let mut converged = true;
                for (_, st) in &films {
                    if st.n < cfg.min_n.max(2) {
                        continue;
                    }
                    let p = dirichlet_mle_from_stats(st, &cfg.mle)?;
                    converged &= p.converged;
                    entropies.push(dirichlet_entropy(&p.alpha)?);
                }
                if entropies.is_empty() {
                    skipped.push(SkippedSubject {
                        subject_id: genre.to_string(),
                        n: films.len(),
                        reason: format!("no film with at least {} utterances", cfg.min_n),
                    });
                    continue;
                }
                let mean = |idx: &mut dyn Iterator<Item = usize>| {
                    let (mut s, mut n) = (0.0, 0usize);
                    for i in idx {
                        s += entropies[i];
                        n += 1;
                    }
                    s / n as f64
                };
                let point = mean(&mut (0..entropies.len()));
                let ci = bootstrap_statistic(entropies.len(), point, boot, |idx| Some(mean(&mut idx.iter().copied())))?;
                entries.push(GenreRange {
                    genre: genre.to_string(),
                    n_films: entropies.len(),
                    n_utterances,
                    entropy: point,
                    ci,
                    converged,
                    pooled: None,
                });
            }
        }
    }
    entries.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then_with(|| a.genre.cmp(&b.genre)));
    Ok(GenreRangeReport {
        aggregation: cfg.aggregation,
        entries,
        skipped,
    })
}
