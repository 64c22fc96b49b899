//! Emotionality across release years, and the within-phrase-group
//! fixed-effects regression of emotionality on year.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, EmotionalityMode};
use crate::emotion_stats::{cluster_bootstrap_ci, BootstrapCI, BootstrapConfig, StatsError};
use crate::phrase_graph::PhraseGroup;
use crate::special::{f_distribution_sf, DomainError};

#[derive(Debug, Error)]
pub enum DiachronicError {
    #[error("x has no within-group variation; slope is not identified")]
    DegenerateDesign,
    #[error("not enough observations: {n_obs} observations in {n_groups} groups leave no residual degrees of freedom")]
    InsufficientData { n_obs: usize, n_groups: usize },
    #[error("non-finite value in panel observation `{0}`")]
    NonFinite(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YearRow {
    pub year: i32,
    pub n_films: usize,
    pub n_utts: usize,
    pub ci: BootstrapCI,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YearlyReport {
    pub mode: EmotionalityMode,
    pub rows: Vec<YearRow>,
    /// Years that have films but no utterances.
    pub empty_years: Vec<i32>,
}

/// Mean utterance emotionality per release year, with a film-level
/// cluster bootstrap CI per year.
pub fn yearly_emotionality(corpus: &Corpus, mode: EmotionalityMode, boot: &BootstrapConfig) -> Result<YearlyReport, DiachronicError> {
    let mut by_year: BTreeMap<i32, Vec<Vec<f64>>> = BTreeMap::new();
    for (film, utts) in corpus.utterances_by_film() {
        by_year
            .entry(film.year)
            .or_default()
            .push(utts.iter().map(|u| u.emotionality(mode)).collect());
    }
    let film_years: BTreeSet<i32> = corpus.films.values().map(|f| f.year).collect();
    let empty_years = film_years.into_iter().filter(|y| !by_year.contains_key(y)).collect();
    let mut rows = Vec::new();
    for (year, films) in by_year {
        // each year's bootstrap gets its own stream family
        let cfg = BootstrapConfig {
            seed: boot.seed ^ (year as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..*boot
        };
        let mut ci = cluster_bootstrap_ci(&films, &cfg)?;
        ci.seed = boot.seed;
        rows.push(YearRow {
            year,
            n_films: films.len(),
            n_utts: films.iter().map(Vec::len).sum(),
            ci,
        });
    }
    Ok(YearlyReport { mode, rows, empty_years })
}

/// Phrase groups used at least once in every release year of the corpus
/// (years of films with at least one utterance).
pub fn select_ubiquitous_groups(corpus: &Corpus, groups: &[PhraseGroup]) -> Vec<PhraseGroup> {
    let years: BTreeSet<i32> = corpus.utterances_by_film().iter().map(|(f, _)| f.year).collect();
    let year_of: HashMap<String, i32> = corpus
        .utterances
        .iter()
        .map(|u| (format!("{}/{}", u.film_id, u.utt_id), corpus.films[&u.film_id].year))
        .collect();
    groups
        .iter()
        .filter(|g| {
            let used: BTreeSet<i32> = g.utterance_ids.iter().filter_map(|id| year_of.get(id).copied()).collect();
            !years.is_empty() && used == years
        })
        .cloned()
        .collect()
}

/// One utterance in the phrase-group panel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PanelObservation {
    pub group_id: usize,
    /// Release year, centered at the panel mean.
    pub x: f64,
    /// Emotionality of the utterance.
    pub y: f64,
    pub utt_id: String,
}

/// Builds the panel for `groups`: one observation per utterance, years
/// centered at the mean release year of the observations.
pub fn panel_observations(corpus: &Corpus, groups: &[PhraseGroup], mode: EmotionalityMode) -> (Vec<PanelObservation>, f64) {
    let by_key: HashMap<String, (i32, f64)> = corpus
        .utterances
        .iter()
        .map(|u| {
            (
                format!("{}/{}", u.film_id, u.utt_id),
                (corpus.films[&u.film_id].year, u.emotionality(mode)),
            )
        })
        .collect();
    let mut raw = Vec::new();
    for g in groups {
        for id in &g.utterance_ids {
            if let Some(&(year, y)) = by_key.get(id) {
                raw.push((g.group_id, year, y, id.clone()));
            }
        }
    }
    let center = if raw.is_empty() {
        0.0
    } else {
        raw.iter().map(|r| r.1 as f64).sum::<f64>() / raw.len() as f64
    };
    let obs = raw
        .into_iter()
        .map(|(group_id, year, y, utt_id)| PanelObservation {
            group_id,
            x: year as f64 - center,
            y,
            utt_id,
        })
        .collect();
    (obs, center)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionReport {
    /// Slope of y on x within groups.
    pub beta: f64,
    pub se: f64,
    /// Within R².
    pub r2: f64,
    pub f_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    pub n_obs: usize,
    pub n_groups: usize,
}

/// Within (fixed-effects) estimator for y = a_g + β x + e.
pub fn fixed_effects_ols(obs: &[PanelObservation]) -> Result<RegressionReport, DiachronicError> {
    if let Some(o) = obs.iter().find(|o| !(o.x.is_finite() && o.y.is_finite())) {
        return Err(DiachronicError::NonFinite(o.utt_id.clone()));
    }
    // group means, accumulated around the group's first observation
    let mut groups: BTreeMap<usize, (f64, f64, f64, f64, usize)> = BTreeMap::new();
    for o in obs {
        let e = groups.entry(o.group_id).or_insert((o.x, o.y, 0.0, 0.0, 0));
        e.2 += o.x - e.0;
        e.3 += o.y - e.1;
        e.4 += 1;
    }
    let means: HashMap<usize, (f64, f64)> = groups
        .iter()
        .map(|(&g, &(x0, y0, sx, sy, n))| (g, (x0 + sx / n as f64, y0 + sy / n as f64)))
        .collect();
    let n_obs = obs.len();
    let n_groups = groups.len();
    if n_obs < n_groups + 2 {
        return Err(DiachronicError::InsufficientData { n_obs, n_groups });
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for o in obs {
        let (mx, my) = means[&o.group_id];
        let (dx, dy) = (o.x - mx, o.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let x_scale: f64 = obs.iter().map(|o| o.x * o.x).sum::<f64>().max(f64::MIN_POSITIVE);
    if sxx <= 1e-12 * x_scale {
        return Err(DiachronicError::DegenerateDesign);
    }
    let beta = sxy / sxx;
    let df2 = n_obs - n_groups - 1;
    let rss = (syy - beta * sxy).max(0.0);
    let se = (rss / df2 as f64 / sxx).sqrt();
    let r2 = if syy > 0.0 { (beta * sxy / syy).clamp(0.0, 1.0) } else { 0.0 };
    let f_stat = if r2 >= 1.0 {
        f64::INFINITY
    } else {
        df2 as f64 * r2 / (1.0 - r2)
    };
    let p_value = f_distribution_sf(f_stat, 1.0, df2 as f64)?;
    Ok(RegressionReport {
        beta,
        se,
        r2,
        f_stat,
        df1: 1,
        df2,
        p_value,
        n_obs,
        n_groups,
    })
}
