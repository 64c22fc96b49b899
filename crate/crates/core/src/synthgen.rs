//! Seeded generators for synthetic corpora, Dirichlet samples, planted
//! partition graphs and regression panels.
//!
//! Gamma variates use the Marsaglia–Tsang squeeze method (ACM TOMS 26(3),
//! 2000) for shape ≥ 1 and the boost `G(a) = G(a+1)·U^(1/a)` below 1,
//! carried out in log space so tiny shapes do not underflow.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, EmotionDistribution, Emotion, FilmRecord, UtteranceRecord, N_LABELS};
use crate::diachronic::PanelObservation;
use crate::phrase_graph::{GraphError, SimilarityGraph};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn open01<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Natural log of a Gamma(shape, 1) variate.
pub fn ln_gamma_variate<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u = open01(rng);
        return ln_gamma_variate(rng, shape + 1.0) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = open01(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// A Gamma(shape, 1) variate.
pub fn gamma_variate<R: Rng>(rng: &mut R, shape: f64) -> f64 {
    ln_gamma_variate(rng, shape).exp()
}

fn dirichlet_draw<R: Rng>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_gamma_variate(rng, a)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn check_alpha(alpha: &[f64]) -> Result<(), SynthError> {
    if alpha.is_empty() {
        return Err(SynthError::Invalid("alpha is empty".into()));
    }
    if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(SynthError::Invalid(format!("alpha entries must be positive and finite, got {a}")));
    }
    Ok(())
}

/// `n` draws from Dir(alpha) of any dimension. Panics on a non-positive α.
pub fn sample_dirichlet_raw(alpha: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    check_alpha(alpha).expect("invalid Dirichlet parameters");
    let mut rng = rng_for(seed, 0);
    (0..n).map(|_| dirichlet_draw(&mut rng, alpha)).collect()
}

/// `n` emotion distributions drawn from Dir(alpha) over the seven labels.
pub fn sample_dirichlet(alpha: &[f64], n: usize, seed: u64) -> Result<Vec<EmotionDistribution>, SynthError> {
    if alpha.len() != N_LABELS {
        return Err(SynthError::Invalid(format!("alpha must have {N_LABELS} entries, got {}", alpha.len())));
    }
    check_alpha(alpha)?;
    sample_dirichlet_raw(alpha, n, seed)
        .into_iter()
        .map(|p| EmotionDistribution::from_slice(&p).map_err(SynthError::Invalid))
        .collect()
}

/// Stochastic block model with unit weights. Nodes are named `n0000`,
/// `n0001`, ... and numbered block by block.
pub fn planted_partition(blocks: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<(SimilarityGraph, Vec<usize>), SynthError> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(SynthError::Invalid(format!("{name} must be in [0, 1], got {p}")));
        }
    }
    if blocks.len() > 1 && p_in <= p_out {
        return Err(SynthError::Invalid(format!("p_in ({p_in}) must exceed p_out ({p_out})")));
    }
    let labels: Vec<usize> = blocks.iter().enumerate().flat_map(|(b, &n)| std::iter::repeat(b).take(n)).collect();
    let n = labels.len();
    let mut rng = rng_for(seed, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    let names = (0..n).map(|i| format!("n{i:04}")).collect();
    Ok((SimilarityGraph::from_edges(names, &edges)?, labels))
}

/// Normalized mutual information `2 I(a; b) / (H(a) + H(b))`. Two
/// single-cluster labelings score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let mut joint = std::collections::HashMap::new();
    let mut ca = std::collections::HashMap::new();
    let mut cb = std::collections::HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *ca.entry(x).or_insert(0.0) += 1.0;
        *cb.entry(y).or_insert(0.0) += 1.0;
    }
    let h = |m: &std::collections::HashMap<usize, f64>| -> f64 { m.values().map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hb) = (h(&ca), h(&cb));
    if ha + hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let p = c / n;
            p * (p / ((ca[&x] / n) * (cb[&y] / n))).ln()
        })
        .sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

/// Panel with `sizes[g]` observations in group `g`, year-like x values and
/// `y = a_g + beta·x + noise·N(0,1)`.
pub fn synth_panel(sizes: &[usize], beta: f64, noise: f64, seed: u64) -> Vec<PanelObservation> {
    let mut rng = rng_for(seed, 0);
    let mut out = Vec::new();
    for (g, &size) in sizes.iter().enumerate() {
        let a: f64 = rng.random_range(-1.0..1.0);
        for i in 0..size {
            let x = rng.random_range(-20i32..=20) as f64;
            let e: f64 = rng.sample(StandardNormal);
            out.push(PanelObservation {
                group_id: g,
                x,
                y: a + beta * x + noise * e,
                utt_id: format!("g{g}/u{i}"),
            });
        }
    }
    out
}

/// Shape of a synthetic corpus. Probabilities are expectations of the
/// per-utterance Dirichlet draws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthSpec {
    pub n_films: usize,
    pub utterances_per_film: usize,
    /// Release years, assigned to films round-robin.
    pub years: Vec<i32>,
    /// Expected neutral probability per narrative-time bin.
    pub neutral_curve: Vec<f64>,
    /// Added to the expected emotional mass, per entry of `years`.
    pub year_emotionality_shift: Vec<f64>,
    /// Relative weights of the six emotional labels (anger, disgust, fear,
    /// joy, sadness, surprise).
    pub emotion_weights: [f64; 6],
    /// Bin whose anger weight is multiplied by `anger_peak_boost`.
    pub anger_peak_bin: Option<usize>,
    pub anger_peak_boost: f64,
    /// Dirichlet concentration α₀ per genre; films get genres round-robin.
    pub genres: Vec<(String, f64)>,
    pub n_phrase_families: usize,
    pub variants_per_family: usize,
    /// Sentence-embedding dimension; 0 emits no embeddings.
    pub embed_dim: usize,
    pub runtime_s: f64,
    /// Credits start as a fraction of runtime.
    pub credits_fraction: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_films: 24,
            utterances_per_film: 200,
            years: vec![2000, 2001, 2002, 2003],
            neutral_curve: vec![0.5; 20],
            year_emotionality_shift: vec![0.0; 4],
            emotion_weights: [1.0; 6],
            anger_peak_bin: None,
            anger_peak_boost: 1.0,
            genres: vec![("drama".into(), 8.0), ("comedy".into(), 20.0), ("thriller".into(), 4.0)],
            n_phrase_families: 12,
            variants_per_family: 3,
            embed_dim: 8,
            runtime_s: 6000.0,
            credits_fraction: Some(0.95),
            seed: 13,
        }
    }
}

impl SynthSpec {
    pub fn flat(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Neutral probability falling linearly from 0.8 to 0.3 across bins.
    pub fn neutral_decline(seed: u64) -> Self {
        let n = 20;
        Self {
            neutral_curve: (0..n).map(|b| 0.8 - 0.5 * b as f64 / (n - 1) as f64).collect(),
            seed,
            ..Self::default()
        }
    }

    /// Anger weight multiplied by 6 in bin 17.
    pub fn anger_peak(seed: u64) -> Self {
        Self {
            anger_peak_bin: Some(17),
            anger_peak_boost: 6.0,
            seed,
            ..Self::default()
        }
    }

    /// Emotional mass falling by 0.3 from the first year to the last.
    pub fn yearly_decline(seed: u64) -> Self {
        let years = vec![2000, 2001, 2002, 2003];
        let k = years.len();
        Self {
            year_emotionality_shift: (0..k).map(|i| 0.15 - 0.3 * i as f64 / (k - 1) as f64).collect(),
            years,
            seed,
            ..Self::default()
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "flat" => Some(Self::flat(seed)),
            "neutral-decline" => Some(Self::neutral_decline(seed)),
            "anger-peak" => Some(Self::anger_peak(seed)),
            "yearly-decline" => Some(Self::yearly_decline(seed)),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["flat", "neutral-decline", "anger-peak", "yearly-decline"];

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_films == 0 || self.utterances_per_film == 0 {
            return bad("n_films and utterances_per_film must be positive".into());
        }
        if self.years.is_empty() || self.year_emotionality_shift.len() != self.years.len() {
            return bad(format!(
                "year_emotionality_shift has {} entries for {} years",
                self.year_emotionality_shift.len(),
                self.years.len()
            ));
        }
        if self.neutral_curve.is_empty() {
            return bad("neutral_curve is empty".into());
        }
        if let Some(p) = self.neutral_curve.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("neutral probability {p} outside [0, 1]"));
        }
        if let Some(b) = self.anger_peak_bin {
            if b >= self.neutral_curve.len() {
                return bad(format!("anger_peak_bin {b} outside {} bins", self.neutral_curve.len()));
            }
        }
        if !(self.anger_peak_boost.is_finite() && self.anger_peak_boost > 0.0) {
            return bad("anger_peak_boost must be positive".into());
        }
        if self.emotion_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("emotion_weights must be positive".into());
        }
        if self.genres.is_empty() || self.genres.iter().any(|(_, c)| !(c.is_finite() && *c > 0.0)) {
            return bad("at least one genre with a positive concentration is required".into());
        }
        if self.n_phrase_families == 0 || self.variants_per_family == 0 {
            return bad("phrase families and variants must be positive".into());
        }
        if !(self.runtime_s.is_finite() && self.runtime_s > 0.0) {
            return bad("runtime_s must be positive".into());
        }
        if let Some(f) = self.credits_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("credits_fraction must be in (0, 1], got {f}"));
            }
        }
        Ok(())
    }

    fn mean_distribution(&self, bin: usize, year_idx: usize) -> [f64; N_LABELS] {
        let emotional = (1.0 - self.neutral_curve[bin] + self.year_emotionality_shift[year_idx]).clamp(0.01, 0.99);
        let mut w = self.emotion_weights;
        if self.anger_peak_bin == Some(bin) {
            w[0] *= self.anger_peak_boost;
        }
        let total: f64 = w.iter().sum();
        let mut mu = [0.0; N_LABELS];
        for (e, wi) in Emotion::EMOTIONAL.iter().zip(w) {
            mu[e.index()] = emotional * wi / total;
        }
        mu[Emotion::Neutral.index()] = 1.0 - emotional;
        mu
    }
}

fn phrase_embeddings(spec: &SynthSpec) -> Vec<Vec<Vec<f64>>> {
    let mut rng = rng_for(spec.seed, 1);
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    (0..spec.n_phrase_families)
        .map(|_| {
            let center = unit((0..spec.embed_dim).map(|_| rng.sample(StandardNormal)).collect());
            (0..spec.variants_per_family)
                .map(|_| {
                    let v = center.iter().map(|c| c + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                    unit(v)
                })
                .collect()
        })
        .collect()
}

/// Builds and validates a corpus following `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let embeddings = (spec.embed_dim > 0).then(|| phrase_embeddings(spec));
    let n_bins = spec.neutral_curve.len();
    let mut films = Vec::with_capacity(spec.n_films);
    let mut utts = Vec::with_capacity(spec.n_films * spec.utterances_per_film);
    for f in 0..spec.n_films {
        let mut rng = rng_for(spec.seed, 100 + f as u64);
        let year_idx = f % spec.years.len();
        let (genre, conc) = &spec.genres[f % spec.genres.len()];
        let credits = spec.credits_fraction.map(|c| c * spec.runtime_s);
        let film = FilmRecord {
            film_id: format!("film{f:03}"),
            title: format!("Synthetic Film {f}"),
            year: spec.years[year_idx],
            runtime_s: spec.runtime_s,
            credits_start_s: credits.filter(|c| *c < spec.runtime_s),
            genres: BTreeSet::from([genre.clone()]),
        };
        let span = film.effective_runtime();
        let slot = span / spec.utterances_per_film as f64;
        for i in 0..spec.utterances_per_film {
            let start = (i as f64 + rng.random_range(0.05..0.45)) * slot;
            let end = start + rng.random_range(0.1..0.5) * slot;
            let bin = (((0.5 * (start + end)) / span * n_bins as f64) as usize).min(n_bins - 1);
            let mu = spec.mean_distribution(bin, year_idx);
            let alpha: Vec<f64> = mu.iter().map(|m| (m * conc).max(1e-3)).collect();
            let probs = dirichlet_draw(&mut rng, &alpha);
            let fam = rng.random_range(0..spec.n_phrase_families);
            let var = rng.random_range(0..spec.variants_per_family);
            utts.push(UtteranceRecord {
                film_id: film.film_id.clone(),
                utt_id: format!("u{i:05}"),
                start_s: start,
                end_s: end,
                text: format!("phrase {fam:03} variant {var}"),
                emotion: EmotionDistribution::from_slice(&probs).map_err(SynthError::Invalid)?,
                sent_embedding: embeddings.as_ref().map(|e| e[fam][var].clone()),
                layer_embeddings_path: None,
                conversation_id: None,
            });
        }
        films.push(film);
    }
    Ok(Corpus::from_records(films, utts)?)
}
