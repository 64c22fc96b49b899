//! Emotion trajectories over narrative time: utterances binned by their
//! position in the (credits-trimmed) runtime.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, Emotion, EmotionalityMode, FilmRecord, UtteranceRecord};
use crate::emotion_stats::bootstrap::bootstrap_many;
use crate::emotion_stats::{BootstrapCI, BootstrapConfig, StatsError};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum NarrativeError {
    #[error("neutral is not a valid proportion label")]
    NeutralLabel,
    #[error("invalid measure `{0}` (expected emotionality or emotion:<label>)")]
    BadMeasure(String),
    #[error("n_bins must be positive")]
    ZeroBins,
    #[error("corpus has no utterances")]
    EmptyCorpus,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Bin of an utterance's midpoint, or `None` when the midpoint lies past
/// the film's effective runtime.
pub fn assign_bin(u: &UtteranceRecord, film: &FilmRecord, n_bins: usize) -> Option<usize> {
    let runtime = film.effective_runtime();
    let mid = u.midpoint();
    if !(0.0..=runtime).contains(&mid) {
        return None;
    }
    let bin = (n_bins as f64 * mid / runtime).floor() as usize;
    Some(bin.min(n_bins - 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Measure {
    Emotionality,
    Proportion(Emotion),
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Emotionality => f.write_str("emotionality"),
            Measure::Proportion(e) => write!(f, "emotion:{e}"),
        }
    }
}

impl FromStr for Measure {
    type Err = NarrativeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "emotionality" {
            return Ok(Measure::Emotionality);
        }
        let label = s
            .strip_prefix("emotion:")
            .and_then(|l| l.parse::<Emotion>().ok())
            .ok_or_else(|| NarrativeError::BadMeasure(s.to_string()))?;
        if label == Emotion::Neutral {
            return Err(NarrativeError::NeutralLabel);
        }
        Ok(Measure::Proportion(label))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinEstimate {
    pub bin_index: usize,
    pub lo_pct: f64,
    pub hi_pct: f64,
    /// `None` when no utterance contributes to the bin.
    pub point: Option<f64>,
    pub ci: Option<BootstrapCI>,
    pub n_utts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryReport {
    pub n_bins: usize,
    pub measure: Measure,
    pub mode: EmotionalityMode,
    pub series: Vec<BinEstimate>,
    /// Utterances whose midpoint fell past the effective runtime.
    pub excluded_out_of_range: usize,
    /// Utterances without a defined value for the measure.
    pub excluded_undefined: usize,
}

impl TrajectoryReport {
    pub fn points(&self) -> Vec<Option<f64>> {
        self.series.iter().map(|b| b.point).collect()
    }
}

/// Per-utterance value of a measure, `None` when undefined.
fn utterance_value(u: &UtteranceRecord, measure: Measure, mode: EmotionalityMode) -> Option<f64> {
    match measure {
        Measure::Emotionality => Some(u.emotionality(mode)),
        Measure::Proportion(label) => match mode {
            EmotionalityMode::Prob => {
                let emotional = 1.0 - u.emotion.neutral();
                (emotional > 1e-9).then(|| u.emotion.get(label) / emotional)
            }
            EmotionalityMode::Argmax => {
                let top = u.emotion.argmax();
                (top != Emotion::Neutral).then(|| if top == label { 1.0 } else { 0.0 })
            }
        },
    }
}

/// Binned trajectory of `measure` with film-level cluster bootstrap CIs.
pub fn trajectory(
    corpus: &Corpus,
    measure: Measure,
    mode: EmotionalityMode,
    n_bins: usize,
    boot: &BootstrapConfig,
) -> Result<TrajectoryReport, NarrativeError> {
    if n_bins == 0 {
        return Err(NarrativeError::ZeroBins);
    }
    if corpus.is_empty() {
        return Err(NarrativeError::EmptyCorpus);
    }
    if measure == Measure::Proportion(Emotion::Neutral) {
        return Err(NarrativeError::NeutralLabel);
    }
    // per film, per bin: (sum, count)
    let mut film_bins: Vec<Vec<(f64, usize)>> = Vec::new();
    let mut out_of_range = 0;
    let mut undefined = 0;
    for (film, utts) in corpus.utterances_by_film() {
        let mut bins = vec![(0.0, 0usize); n_bins];
        for u in utts {
            let Some(b) = assign_bin(u, film, n_bins) else {
                out_of_range += 1;
                continue;
            };
            match utterance_value(u, measure, mode) {
                Some(v) => {
                    bins[b].0 += v;
                    bins[b].1 += 1;
                }
                None => undefined += 1,
            }
        }
        film_bins.push(bins);
    }

    let bin_means = |films: &mut dyn Iterator<Item = usize>| -> Vec<Option<f64>> {
        let mut acc = vec![(0.0, 0usize); n_bins];
        for f in films {
            for (a, b) in acc.iter_mut().zip(&film_bins[f]) {
                a.0 += b.0;
                a.1 += b.1;
            }
        }
        acc.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()
    };
    let points = bin_means(&mut (0..film_bins.len()));
    let counts: Vec<usize> = (0..n_bins).map(|b| film_bins.iter().map(|f| f[b].1).sum()).collect();
    let intervals = bootstrap_many(film_bins.len(), n_bins, boot, |idx| bin_means(&mut idx.iter().copied()))?;

    let width = 100.0 / n_bins as f64;
    let series = (0..n_bins)
        .map(|b| BinEstimate {
            bin_index: b,
            lo_pct: b as f64 * width,
            hi_pct: (b + 1) as f64 * width,
            point: points[b],
            ci: match (points[b], intervals[b]) {
                (Some(point), Some((lo, hi))) => Some(BootstrapCI {
                    point,
                    lo,
                    hi,
                    level: boot.level,
                    n_boot: boot.n_boot,
                    seed: boot.seed,
                }),
                _ => None,
            },
            n_utts: counts[b],
        })
        .collect();
    Ok(TrajectoryReport {
        n_bins,
        measure,
        mode,
        series,
        excluded_out_of_range: out_of_range,
        excluded_undefined: undefined,
    })
}

/// Mean emotionality per narrative-time bin.
pub fn emotionality_trajectory(
    corpus: &Corpus,
    mode: EmotionalityMode,
    n_bins: usize,
    boot: &BootstrapConfig,
) -> Result<TrajectoryReport, NarrativeError> {
    trajectory(corpus, Measure::Emotionality, mode, n_bins, boot)
}

/// Share of emotional (non-neutral) mass carried by `label`, per bin.
pub fn emotion_proportion_trajectory(
    corpus: &Corpus,
    label: Emotion,
    mode: EmotionalityMode,
    n_bins: usize,
    boot: &BootstrapConfig,
) -> Result<TrajectoryReport, NarrativeError> {
    if label == Emotion::Neutral {
        return Err(NarrativeError::NeutralLabel);
    }
    trajectory(corpus, Measure::Proportion(label), mode, n_bins, boot)
}
