//! Interchange data model: utterance and film records, JSONL ingestion,
//! credits trimming, conversation grouping and per-utterance emotionality.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of emotion labels.
pub const N_LABELS: usize = 7;

/// Layer-embedding sidecar shape: 25 transformer layers of 768 features.
pub const EMBED_LAYERS: usize = 25;
pub const EMBED_DIM: usize = 768;

/// Half-width of the band in which an emotion vector is silently renormalized.
pub const RENORM_BAND: f64 = 1e-3;

/// The seven emotion labels, in canonical (alphabetical) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Joy,
    Neutral,
    Sadness,
    Surprise,
}

impl Emotion {
    pub const ALL: [Emotion; N_LABELS] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Neutral,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    /// The six labels other than neutral.
    pub const EMOTIONAL: [Emotion; 6] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Sadness,
        Emotion::Surprise,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Neutral => "neutral",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Emotion::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown emotion label `{s}`"))
    }
}

/// A point on the probability simplex over the seven canonical labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmotionDistribution([f64; N_LABELS]);

impl EmotionDistribution {
    /// Validates and, when the sum is within [`RENORM_BAND`] of one,
    /// renormalizes. Returns a message describing the violation otherwise.
    pub fn new(probs: [f64; N_LABELS]) -> Result<Self, String> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(format!("emotion probability {p} is negative or not finite"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > RENORM_BAND {
            return Err(format!(
                "emotion probabilities sum to {sum}, outside [1-{RENORM_BAND}, 1+{RENORM_BAND}]"
            ));
        }
        // Vectors already normalized to float precision are kept bit-exact.
        if (sum - 1.0).abs() <= 1e-12 {
            return Ok(Self(probs));
        }
        let mut out = probs;
        out.iter_mut().for_each(|p| *p /= sum);
        Ok(Self(out))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self, String> {
        let arr: [f64; N_LABELS] = probs
            .try_into()
            .map_err(|_| format!("expected {N_LABELS} emotion probabilities, got {}", probs.len()))?;
        Self::new(arr)
    }

    pub fn uniform() -> Self {
        Self([1.0 / N_LABELS as f64; N_LABELS])
    }

    pub fn probs(&self) -> &[f64; N_LABELS] {
        &self.0
    }

    pub fn get(&self, label: Emotion) -> f64 {
        self.0[label.index()]
    }

    pub fn neutral(&self) -> f64 {
        self.get(Emotion::Neutral)
    }

    /// Most probable label; ties go to the earliest label in canonical order.
    pub fn argmax(&self) -> Emotion {
        let mut best = 0;
        for j in 1..N_LABELS {
            if self.0[j] > self.0[best] {
                best = j;
            }
        }
        Emotion::ALL[best]
    }
}

impl AsRef<[f64]> for EmotionDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// How utterance-level emotionality is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionalityMode {
    /// 1 - P(neutral)
    #[default]
    Prob,
    /// 1 if the argmax label is not neutral
    Argmax,
}

impl EmotionalityMode {
    pub fn name(self) -> &'static str {
        match self {
            EmotionalityMode::Prob => "prob",
            EmotionalityMode::Argmax => "argmax",
        }
    }
}

impl FromStr for EmotionalityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prob" => Ok(EmotionalityMode::Prob),
            "argmax" => Ok(EmotionalityMode::Argmax),
            _ => Err(format!("unknown mode `{s}` (expected prob or argmax)")),
        }
    }
}

impl fmt::Display for EmotionalityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Emotionality of a single emotion distribution.
pub fn emotionality(dist: &EmotionDistribution, mode: EmotionalityMode) -> f64 {
    match mode {
        EmotionalityMode::Prob => 1.0 - dist.neutral(),
        EmotionalityMode::Argmax => {
            if dist.argmax() == Emotion::Neutral {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// One spoken sentence of film dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub film_id: String,
    pub utt_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    pub emotion: EmotionDistribution,
    pub sent_embedding: Option<Vec<f64>>,
    /// Resolved path of the 25×768 little-endian f32 sidecar.
    pub layer_embeddings_path: Option<PathBuf>,
    pub conversation_id: Option<String>,
}

impl UtteranceRecord {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    pub fn emotionality(&self, mode: EmotionalityMode) -> f64 {
        emotionality(&self.emotion, mode)
    }

    /// Reads the layer-embedding sidecar, if any.
    pub fn load_layer_embeddings(&self) -> Result<Option<LayerEmbeddings>, CorpusError> {
        self.layer_embeddings_path
            .as_deref()
            .map(LayerEmbeddings::read)
            .transpose()
    }
}

/// A 25×768 matrix of per-layer utterance embeddings, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerEmbeddings {
    data: Vec<f32>,
}

impl LayerEmbeddings {
    pub const N_FLOATS: usize = EMBED_LAYERS * EMBED_DIM;
    pub const N_BYTES: usize = Self::N_FLOATS * 4;

    pub fn from_vec(data: Vec<f32>) -> Result<Self, CorpusError> {
        if data.len() != Self::N_FLOATS {
            return Err(CorpusError::Shape(format!(
                "layer embeddings must hold {EMBED_LAYERS}x{EMBED_DIM} = {} values, got {}",
                Self::N_FLOATS,
                data.len()
            )));
        }
        Ok(Self { data })
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        if bytes.len() != Self::N_BYTES {
            return Err(CorpusError::Shape(format!(
                "layer embedding sidecar must be {} bytes ({EMBED_LAYERS}x{EMBED_DIM} f32), got {}",
                Self::N_BYTES,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { data })
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let mut bytes = Vec::with_capacity(Self::N_BYTES);
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CorpusError::Io(path.to_path_buf(), e))?;
        Self::from_le_bytes(&bytes)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn row(&self, layer: usize) -> &[f32] {
        &self.data[layer * EMBED_DIM..(layer + 1) * EMBED_DIM]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Film-level metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilmRecord {
    pub film_id: String,
    pub title: String,
    pub year: i32,
    pub runtime_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credits_start_s: Option<f64>,
    pub genres: BTreeSet<String>,
}

impl FilmRecord {
    /// Runtime of the film proper: the credits boundary when known.
    pub fn effective_runtime(&self) -> f64 {
        self.credits_start_s.unwrap_or(self.runtime_s)
    }

    fn validate(&self) -> Result<(), String> {
        if self.film_id.is_empty() {
            return Err("film_id is empty".into());
        }
        if !(self.runtime_s.is_finite() && self.runtime_s > 0.0) {
            return Err(format!("runtime_s must be > 0, got {}", self.runtime_s));
        }
        if let Some(c) = self.credits_start_s {
            if !(c > 0.0 && c <= self.runtime_s) {
                return Err(format!(
                    "credits_start_s must satisfy 0 < credits_start_s <= runtime_s ({}), got {c}",
                    self.runtime_s
                ));
            }
        }
        Ok(())
    }
}

/// Where a diagnostic came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    Parse,
    Validation,
    Referential,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DiagnosticKind::Parse => "parse error",
            DiagnosticKind::Validation => "validation error",
            DiagnosticKind::Referential => "referential error",
        };
        write!(f, "{}:{}: {kind}: {}", self.file, self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{} invalid record(s):\n{}", .0.len(), join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

impl CorpusError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            CorpusError::Invalid(d) => d,
            _ => &[],
        }
    }
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

/// A validated corpus. Utterances are ordered by (film_id, start_s).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub films: BTreeMap<String, FilmRecord>,
    pub utterances: Vec<UtteranceRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceLine {
    film_id: String,
    utt_id: String,
    start_s: f64,
    end_s: f64,
    text: String,
    emotion_probs: Vec<f64>,
    #[serde(default)]
    sent_embedding: Option<Vec<f64>>,
    #[serde(default)]
    layer_embeddings_path: Option<String>,
    #[serde(default)]
    conversation_id: Option<String>,
}

#[derive(Serialize)]
struct UtteranceOut<'a> {
    film_id: &'a str,
    utt_id: &'a str,
    start_s: f64,
    end_s: f64,
    text: &'a str,
    emotion_probs: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    sent_embedding: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layer_embeddings_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conversation_id: Option<&'a str>,
}

/// Reads and validates a corpus from `utterances.jsonl` and `films.jsonl`.
pub fn parse_corpus(utterances_path: &Path, films_path: &Path) -> Result<Corpus, CorpusError> {
    let open = |p: &Path| {
        File::open(p)
            .map(BufReader::new)
            .map_err(|e| CorpusError::Io(p.to_path_buf(), e))
    };
    let base_dir = utterances_path.parent().unwrap_or_else(|| Path::new("."));
    parse_corpus_from_readers(
        open(utterances_path)?,
        &utterances_path.display().to_string(),
        open(films_path)?,
        &films_path.display().to_string(),
        base_dir,
    )
}

/// Reader-based variant of [`parse_corpus`]. Relative sidecar paths are
/// resolved against `base_dir`.
pub fn parse_corpus_from_readers<U: BufRead, F: BufRead>(
    utterances: U,
    utterances_name: &str,
    films: F,
    films_name: &str,
    base_dir: &Path,
) -> Result<Corpus, CorpusError> {
    let mut diags = Vec::new();
    let mut film_map: BTreeMap<String, FilmRecord> = BTreeMap::new();

    for (lineno, line) in films.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| CorpusError::Io(PathBuf::from(films_name), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let diag = |kind, message: String| Diagnostic {
            file: films_name.to_string(),
            line: lineno,
            kind,
            message,
        };
        let film: FilmRecord = match serde_json::from_str(&line) {
            Ok(f) => f,
            Err(e) => {
                diags.push(diag(DiagnosticKind::Parse, e.to_string()));
                continue;
            }
        };
        if let Err(m) = film.validate() {
            diags.push(diag(DiagnosticKind::Validation, m));
            continue;
        }
        if film_map.contains_key(&film.film_id) {
            diags.push(diag(
                DiagnosticKind::Validation,
                format!("duplicate film_id `{}`", film.film_id),
            ));
            continue;
        }
        film_map.insert(film.film_id.clone(), film);
    }

    let mut records: Vec<(usize, UtteranceRecord)> = Vec::new();
    for (lineno, line) in utterances.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| CorpusError::Io(PathBuf::from(utterances_name), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let diag = |kind, message: String| Diagnostic {
            file: utterances_name.to_string(),
            line: lineno,
            kind,
            message,
        };
        let raw: UtteranceLine = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                diags.push(diag(DiagnosticKind::Parse, e.to_string()));
                continue;
            }
        };
        match validate_utterance(raw, &film_map, base_dir) {
            Ok(u) => records.push((lineno, u)),
            Err((kind, m)) => diags.push(diag(kind, m)),
        }
    }

    // Stable order, then drop exact duplicates and reject ambiguous ones.
    records.sort_by(|(_, a), (_, b)| {
        a.film_id
            .cmp(&b.film_id)
            .then(a.start_s.total_cmp(&b.start_s))
            .then(a.utt_id.cmp(&b.utt_id))
    });
    let mut utterances: Vec<UtteranceRecord> = Vec::with_capacity(records.len());
    let mut seen_ids: HashSet<(String, String)> = HashSet::new();
    for (lineno, u) in records {
        if let Some(prev) = utterances.last() {
            if prev == &u {
                continue;
            }
            if prev.film_id == u.film_id && prev.start_s == u.start_s {
                diags.push(Diagnostic {
                    file: utterances_name.to_string(),
                    line: lineno,
                    kind: DiagnosticKind::Validation,
                    message: format!(
                        "utterances `{}` and `{}` of film `{}` share start_s {}",
                        prev.utt_id, u.utt_id, u.film_id, u.start_s
                    ),
                });
                continue;
            }
        }
        if !seen_ids.insert((u.film_id.clone(), u.utt_id.clone())) {
            diags.push(Diagnostic {
                file: utterances_name.to_string(),
                line: lineno,
                kind: DiagnosticKind::Validation,
                message: format!("duplicate utt_id `{}` in film `{}`", u.utt_id, u.film_id),
            });
            continue;
        }
        utterances.push(u);
    }

    let mut dims = utterances.iter().filter_map(|u| u.sent_embedding.as_ref().map(Vec::len));
    if let Some(d0) = dims.next() {
        if let Some(d) = dims.find(|d| *d != d0) {
            diags.push(Diagnostic {
                file: utterances_name.to_string(),
                line: 0,
                kind: DiagnosticKind::Validation,
                message: format!("sent_embedding dimension varies across corpus ({d0} vs {d})"),
            });
        }
    }

    if !diags.is_empty() {
        diags.sort_by(|a, b| a.file.cmp(&b.file).then(a.line.cmp(&b.line)));
        return Err(CorpusError::Invalid(diags));
    }
    Ok(Corpus {
        films: film_map,
        utterances,
    })
}

fn validate_utterance(
    raw: UtteranceLine,
    films: &BTreeMap<String, FilmRecord>,
    base_dir: &Path,
) -> Result<UtteranceRecord, (DiagnosticKind, String)> {
    use DiagnosticKind::*;
    let film = films
        .get(&raw.film_id)
        .ok_or_else(|| (Referential, format!("unknown film_id `{}`", raw.film_id)))?;
    if !(raw.start_s.is_finite() && raw.start_s >= 0.0) {
        return Err((Validation, format!("start_s must be >= 0, got {}", raw.start_s)));
    }
    if !(raw.end_s.is_finite() && raw.end_s > raw.start_s) {
        return Err((
            Validation,
            format!("end_s ({}) must exceed start_s ({})", raw.end_s, raw.start_s),
        ));
    }
    if raw.end_s > film.runtime_s {
        return Err((
            Validation,
            format!(
                "end_s ({}) exceeds runtime_s ({}) of film `{}`",
                raw.end_s, film.runtime_s, film.film_id
            ),
        ));
    }
    let emotion = EmotionDistribution::from_slice(&raw.emotion_probs).map_err(|m| (Validation, m))?;
    if let Some(e) = &raw.sent_embedding {
        if e.is_empty() || e.iter().any(|v| !v.is_finite()) {
            return Err((Validation, "sent_embedding must be a nonempty finite vector".into()));
        }
    }
    let layer_embeddings_path = match raw.layer_embeddings_path {
        None => None,
        Some(p) => {
            let joined = base_dir.join(&p);
            let resolved = joined
                .canonicalize()
                .map_err(|e| (Validation, format!("layer_embeddings_path `{p}`: {e}")))?;
            let len = std::fs::metadata(&resolved)
                .map_err(|e| (Validation, format!("layer_embeddings_path `{p}`: {e}")))?
                .len();
            if len != LayerEmbeddings::N_BYTES as u64 {
                return Err((
                    Validation,
                    format!(
                        "layer_embeddings_path `{p}` holds {len} bytes, expected {} ({EMBED_LAYERS}x{EMBED_DIM} f32)",
                        LayerEmbeddings::N_BYTES
                    ),
                ));
            }
            Some(resolved)
        }
    };
    Ok(UtteranceRecord {
        film_id: raw.film_id,
        utt_id: raw.utt_id,
        start_s: raw.start_s,
        end_s: raw.end_s,
        text: raw.text,
        emotion,
        sent_embedding: raw.sent_embedding,
        layer_embeddings_path,
        conversation_id: raw.conversation_id,
    })
}

impl Corpus {
    /// Builds a corpus from in-memory records, applying the same ordering
    /// and validation rules as ingestion.
    pub fn from_records(
        films: Vec<FilmRecord>,
        utterances: Vec<UtteranceRecord>,
    ) -> Result<Corpus, CorpusError> {
        let mut fbuf = Vec::new();
        let mut ubuf = Vec::new();
        let tmp = Corpus {
            films: BTreeMap::new(),
            utterances,
        };
        for f in &films {
            serde_json::to_writer(&mut fbuf, f).map_err(std::io::Error::from)?;
            fbuf.push(b'\n');
        }
        tmp.write_utterances_jsonl(&mut ubuf)?;
        parse_corpus_from_readers(&ubuf[..], "<utterances>", &fbuf[..], "<films>", Path::new("."))
    }

    pub fn film(&self, film_id: &str) -> Option<&FilmRecord> {
        self.films.get(film_id)
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterances grouped by film, in film_id order. Films without
    /// utterances are omitted.
    pub fn utterances_by_film(&self) -> Vec<(&FilmRecord, &[UtteranceRecord])> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.utterances.len() {
            let fid = &self.utterances[i].film_id;
            let j = i + self.utterances[i..]
                .iter()
                .take_while(|u| &u.film_id == fid)
                .count();
            out.push((&self.films[fid], &self.utterances[i..j]));
            i = j;
        }
        out
    }

    pub fn write_utterances_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for u in &self.utterances {
            let line = UtteranceOut {
                film_id: &u.film_id,
                utt_id: &u.utt_id,
                start_s: u.start_s,
                end_s: u.end_s,
                text: &u.text,
                emotion_probs: u.emotion.probs(),
                sent_embedding: u.sent_embedding.as_deref(),
                layer_embeddings_path: u
                    .layer_embeddings_path
                    .as_ref()
                    .map(|p| p.display().to_string()),
                conversation_id: u.conversation_id.as_deref(),
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_films_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for f in self.films.values() {
            serde_json::to_writer(&mut w, f).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Drops every utterance starting at or after its film's credits boundary.
pub fn trim_credits(corpus: &Corpus) -> Corpus {
    let utterances = corpus
        .utterances
        .iter()
        .filter(|u| match corpus.films[&u.film_id].credits_start_s {
            Some(c) => u.start_s < c,
            None => true,
        })
        .cloned()
        .collect();
    Corpus {
        films: corpus.films.clone(),
        utterances,
    }
}

/// Default end-to-start gap joining consecutive utterances into a conversation.
pub const DEFAULT_CONVERSATION_GAP_S: f64 = 3.0;

/// Assigns conversation ids: consecutive utterances of a film share an id
/// iff the next one starts within `gap_s` of the previous one's end.
pub fn group_conversations(corpus: &Corpus, gap_s: f64) -> Corpus {
    let mut out = corpus.clone();
    let mut counter = 0usize;
    let mut prev: Option<(String, f64)> = None;
    for u in out.utterances.iter_mut() {
        let joins = match &prev {
            Some((fid, end)) => *fid == u.film_id && u.start_s - end <= gap_s,
            None => false,
        };
        if !joins {
            counter = match &prev {
                Some((fid, _)) if *fid == u.film_id => counter + 1,
                _ => 0,
            };
        }
        u.conversation_id = Some(format!("{}#c{counter}", u.film_id));
        prev = Some((u.film_id.clone(), u.end_s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILMS: &str = r#"{"film_id":"f1","title":"One","year":1999,"runtime_s":200,"genres":["Drama"]}
{"film_id":"f2","title":"Two","year":2004,"runtime_s":300,"credits_start_s":250,"genres":["Comedy","Drama"]}
"#;

    fn utt_line(film: &str, id: &str, start: f64, end: f64, probs: &str) -> String {
        format!(
            r#"{{"film_id":"{film}","utt_id":"{id}","start_s":{start},"end_s":{end},"text":"hi","emotion_probs":{probs}}}"#
        )
    }

    fn parse(utts: &str) -> Result<Corpus, CorpusError> {
        parse_corpus_from_readers(utts.as_bytes(), "u.jsonl", FILMS.as_bytes(), "f.jsonl", Path::new("."))
    }

    #[test]
    fn renormalizes_near_unit_sums() {
        let line = utt_line("f1", "a", 1.0, 2.0, "[0.1,0.1,0.1,0.1,0.3999995,0.1,0.1]");
        let c = parse(&line).unwrap();
        let s: f64 = c.utterances[0].emotion.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_sum_outside_band_with_line_number() {
        let good = utt_line("f1", "a", 1.0, 2.0, "[0,0,0,0,1,0,0]");
        let bad = utt_line("f1", "b", 3.0, 4.0, "[0.1,0.1,0.1,0.1,0.3,0.1,0.1]");
        let err = parse(&format!("{good}\n{bad}\n")).unwrap_err();
        let d = err.diagnostics();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].line, 2);
        assert_eq!(d[0].kind, DiagnosticKind::Validation);
        assert!(err.to_string().contains("u.jsonl:2"));
    }

    #[test]
    fn malformed_json_and_unknown_film() {
        let bad_json = "{not json";
        let unknown = utt_line("zz", "b", 3.0, 4.0, "[0,0,0,0,1,0,0]");
        let err = parse(&format!("{bad_json}\n{unknown}\n")).unwrap_err();
        let kinds: Vec<_> = err.diagnostics().iter().map(|d| (d.line, d.kind)).collect();
        assert_eq!(
            kinds,
            vec![(1, DiagnosticKind::Parse), (2, DiagnosticKind::Referential)]
        );
    }

    #[test]
    fn rejects_bad_timing() {
        let l1 = utt_line("f1", "a", 5.0, 5.0, "[0,0,0,0,1,0,0]");
        let l2 = utt_line("f1", "b", 150.0, 201.0, "[0,0,0,0,1,0,0]");
        let err = parse(&format!("{l1}\n{l2}")).unwrap_err();
        assert_eq!(err.diagnostics().len(), 2);
    }

    #[test]
    fn ordering_and_exact_dedup() {
        let a = utt_line("f2", "x", 10.0, 11.0, "[0,0,0,0,1,0,0]");
        let b = utt_line("f1", "y", 20.0, 21.0, "[0,0,0,0,1,0,0]");
        let c = utt_line("f1", "z", 5.0, 6.0, "[0,0,0,0,1,0,0]");
        let corpus = parse(&format!("{a}\n{b}\n{c}\n{b}\n")).unwrap();
        let ids: Vec<_> = corpus.utterances.iter().map(|u| u.utt_id.as_str()).collect();
        assert_eq!(ids, ["z", "y", "x"]);
    }

    #[test]
    fn shared_start_time_is_rejected() {
        let a = utt_line("f1", "a", 5.0, 6.0, "[0,0,0,0,1,0,0]");
        let b = utt_line("f1", "b", 5.0, 7.0, "[0,0,0,0,1,0,0]");
        assert!(parse(&format!("{a}\n{b}")).is_err());
    }

    #[test]
    fn credits_boundary_is_inclusive() {
        let lines = [
            utt_line("f2", "a", 50.0, 51.0, "[0,0,0,0,1,0,0]"),
            utt_line("f2", "b", 249.9, 250.5, "[0,0,0,0,1,0,0]"),
            utt_line("f2", "c", 250.0 + 1e-9, 251.0, "[0,0,0,0,1,0,0]"),
            utt_line("f2", "d", 260.0, 261.0, "[0,0,0,0,1,0,0]"),
        ];
        let c = parse(&lines.join("\n")).unwrap();
        let t = trim_credits(&c);
        assert_eq!(t.utterances.len(), 2);
        assert_eq!(trim_credits(&t), t);
    }

    #[test]
    fn credits_exactly_at_boundary_removed() {
        let films = r#"{"film_id":"f","title":"F","year":2000,"runtime_s":200,"credits_start_s":100,"genres":[]}"#;
        let utts = [
            utt_line("f", "a", 50.0, 51.0, "[0,0,0,0,1,0,0]"),
            utt_line("f", "b", 99.9, 100.5, "[0,0,0,0,1,0,0]"),
            utt_line("f", "c", 100.0, 101.0, "[0,0,0,0,1,0,0]"),
            utt_line("f", "d", 150.0, 151.0, "[0,0,0,0,1,0,0]"),
        ]
        .join("\n");
        let c = parse_corpus_from_readers(utts.as_bytes(), "u", films.as_bytes(), "f", Path::new("."))
            .unwrap();
        let kept: Vec<_> = trim_credits(&c).utterances.into_iter().map(|u| u.utt_id).collect();
        assert_eq!(kept, ["a", "b"]);
    }

    #[test]
    fn film_without_credits_passes_through() {
        let lines: Vec<_> = (0..5)
            .map(|i| utt_line("f1", &format!("u{i}"), 10.0 * i as f64, 10.0 * i as f64 + 1.0, "[0,0,0,0,1,0,0]"))
            .collect();
        let c = parse(&lines.join("\n")).unwrap();
        assert_eq!(trim_credits(&c).utterances.len(), 5);
    }

    #[test]
    fn conversation_gaps() {
        // gaps 2.0 and 2.9 -> one conversation
        let lines = [
            utt_line("f1", "a", 0.0, 1.0, "[0,0,0,0,1,0,0]"),
            utt_line("f1", "b", 3.0, 4.0, "[0,0,0,0,1,0,0]"),
            utt_line("f1", "c", 6.9, 8.0, "[0,0,0,0,1,0,0]"),
            // gap 3.01 -> new conversation
            utt_line("f1", "d", 11.01, 12.0, "[0,0,0,0,1,0,0]"),
            utt_line("f2", "e", 12.5, 13.0, "[0,0,0,0,1,0,0]"),
        ];
        let c = group_conversations(&parse(&lines.join("\n")).unwrap(), DEFAULT_CONVERSATION_GAP_S);
        let ids: Vec<_> = c
            .utterances
            .iter()
            .map(|u| u.conversation_id.clone().unwrap())
            .collect();
        assert_eq!(ids, ["f1#c0", "f1#c0", "f1#c0", "f1#c1", "f2#c0"]);
        assert!(group_conversations(&Corpus::default(), 3.0).is_empty());
    }

    #[test]
    fn emotionality_modes() {
        let neutral = EmotionDistribution::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(emotionality(&neutral, EmotionalityMode::Prob), 0.0);
        assert_eq!(emotionality(&neutral, EmotionalityMode::Argmax), 0.0);

        let u = EmotionDistribution::uniform();
        assert!((emotionality(&u, EmotionalityMode::Prob) - 6.0 / 7.0).abs() < 1e-12);
        // seven-way tie resolves to anger, which is not neutral
        assert_eq!(u.argmax(), Emotion::Anger);
        assert_eq!(emotionality(&u, EmotionalityMode::Argmax), 1.0);

        let joy = EmotionDistribution::new([0.0, 0.0, 0.0, 0.6, 0.4, 0.0, 0.0]).unwrap();
        assert!((emotionality(&joy, EmotionalityMode::Prob) - 0.6).abs() < 1e-12);
        assert_eq!(emotionality(&joy, EmotionalityMode::Argmax), 1.0);
    }

    #[test]
    fn layer_sidecar_size_checked() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.bin"), [0u8; 16]).unwrap();
        let emb = LayerEmbeddings::from_vec(vec![0.5; LayerEmbeddings::N_FLOATS]).unwrap();
        std::fs::write(dir.path().join("good.bin"), emb.to_le_bytes()).unwrap();
        let line = |p: &str| {
            format!(
                r#"{{"film_id":"f1","utt_id":"{p}","start_s":1,"end_s":2,"text":"t","emotion_probs":[0,0,0,0,1,0,0],"layer_embeddings_path":"{p}"}}"#
            )
        };
        let c = parse_corpus_from_readers(
            line("good.bin").as_bytes(),
            "u",
            FILMS.as_bytes(),
            "f",
            dir.path(),
        )
        .unwrap();
        let loaded = c.utterances[0].load_layer_embeddings().unwrap().unwrap();
        assert_eq!(loaded, emb);
        assert!(parse_corpus_from_readers(
            line("bad.bin").as_bytes(),
            "u",
            FILMS.as_bytes(),
            "f",
            dir.path()
        )
        .is_err());
    }
}
