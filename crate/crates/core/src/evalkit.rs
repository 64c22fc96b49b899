//! Classification metrics, inter-annotator agreement and the forward pass
//! of the utterance-level emotion head.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Emotion, EmotionDistribution, LayerEmbeddings, EMBED_DIM, EMBED_LAYERS, N_LABELS};
use crate::emotion_stats::bootstrap::bootstrap_many;
use crate::emotion_stats::{BootstrapCI, BootstrapConfig, StatsError};

pub const WEIGHT_MAGIC: &[u8; 8] = b"SCRNHEAD";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gold has {gold} labels but predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no labels to evaluate")]
    Empty,
    #[error("agreement is undefined: {0}")]
    UndefinedAgreement(String),
    #[error("row {row} sums to {sum}, expected {expected} raters")]
    RowSum { row: usize, sum: usize, expected: usize },
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Header stored in front of the weight blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadHeader {
    pub version: String,
    pub n_layers: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub activation: String,
    pub labels: Vec<String>,
    /// Free-form training metadata carried through unchanged.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub training: BTreeMap<String, serde_json::Value>,
}

/// Weights of the layer-weighted MLP emotion head.
#[derive(Clone, Debug, PartialEq)]
pub struct SerHeadParams {
    pub header: HeadHeader,
    pub layer_logits: Vec<f32>,
    /// `hidden × input_dim`, row-major.
    pub hidden_w: Vec<f32>,
    pub hidden_b: Vec<f32>,
    /// `7 × hidden`, row-major.
    pub out_w: Vec<f32>,
    pub out_b: Vec<f32>,
}

impl SerHeadParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_layers: usize,
        input_dim: usize,
        hidden: usize,
        layer_logits: Vec<f32>,
        hidden_w: Vec<f32>,
        hidden_b: Vec<f32>,
        out_w: Vec<f32>,
        out_b: Vec<f32>,
    ) -> Result<Self, EvalError> {
        let p = Self {
            header: HeadHeader {
                version: WEIGHT_FORMAT_VERSION.to_string(),
                n_layers,
                input_dim,
                hidden,
                activation: "relu".into(),
                labels: Emotion::ALL.iter().map(|e| e.name().to_string()).collect(),
                training: BTreeMap::new(),
            },
            layer_logits,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let h = &self.header;
        if h.activation != "relu" {
            return Err(EvalError::Format(format!("unsupported activation {:?}", h.activation)));
        }
        let canonical: Vec<&str> = Emotion::ALL.iter().map(|e| e.name()).collect();
        if h.labels != canonical {
            return Err(EvalError::Format(format!("label order {:?} differs from {:?}", h.labels, canonical)));
        }
        if h.n_layers == 0 || h.input_dim == 0 || h.hidden == 0 {
            return Err(EvalError::Shape(format!(
                "n_layers={}, input_dim={}, hidden={} must all be positive",
                h.n_layers, h.input_dim, h.hidden
            )));
        }
        let expect = [
            ("layer_logits", self.layer_logits.len(), h.n_layers),
            ("hidden_w", self.hidden_w.len(), h.hidden * h.input_dim),
            ("hidden_b", self.hidden_b.len(), h.hidden),
            ("out_w", self.out_w.len(), N_LABELS * h.hidden),
            ("out_b", self.out_b.len(), N_LABELS),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(EvalError::Shape(format!("{name} has {got} values, expected {want}")));
            }
        }
        if self.blocks().any(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(EvalError::Format("non-finite weight".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> impl Iterator<Item = &Vec<f32>> {
        [&self.layer_logits, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b].into_iter()
    }

    /// Softmax of the layer logits.
    pub fn layer_weights(&self) -> Vec<f64> {
        softmax(&self.layer_logits.iter().map(|&x| x as f64).collect::<Vec<_>>())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EvalError> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header).map_err(|e| EvalError::Format(e.to_string()))?;
        w.write_all(WEIGHT_MAGIC)?;
        w.write_all(&WEIGHT_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for block in self.blocks() {
            for x in block {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, EvalError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_MAGIC {
            return Err(EvalError::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != WEIGHT_FORMAT_VERSION {
            return Err(EvalError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut header)?;
        let header: HeadHeader = serde_json::from_slice(&header).map_err(|e| EvalError::Format(format!("header: {e}")))?;
        let mut block = |n: usize| -> Result<Vec<f32>, EvalError> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)
                .map_err(|_| EvalError::Format("truncated weight blocks".into()))?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        };
        let h = header.hidden;
        let d = header.input_dim;
        let params = Self {
            layer_logits: block(header.n_layers)?,
            hidden_w: block(h * d)?,
            hidden_b: block(h)?,
            out_w: block(N_LABELS * h)?,
            out_b: block(N_LABELS)?,
            header,
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(EvalError::Format(format!("{} trailing bytes", rest.len())));
        }
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Forward pass over a row-major `n_layers × input_dim` matrix.
pub fn ser_head_forward_slice(layers: &[f32], params: &SerHeadParams) -> Result<EmotionDistribution, EvalError> {
    let h = &params.header;
    if layers.len() != h.n_layers * h.input_dim {
        return Err(EvalError::Shape(format!(
            "layer embeddings have {} values, head expects {} layers × {} dims",
            layers.len(),
            h.n_layers,
            h.input_dim
        )));
    }
    let weights = params.layer_weights();
    let mut v = vec![0.0f64; h.input_dim];
    for (row, w) in layers.chunks_exact(h.input_dim).zip(&weights) {
        for (acc, x) in v.iter_mut().zip(row) {
            *acc += w * *x as f64;
        }
    }
    let hidden: Vec<f64> = params
        .hidden_w
        .chunks_exact(h.input_dim)
        .zip(&params.hidden_b)
        .map(|(row, b)| {
            let z = row.iter().zip(&v).map(|(w, x)| *w as f64 * x).sum::<f64>() + *b as f64;
            z.max(0.0)
        })
        .collect();
    let logits: Vec<f64> = params
        .out_w
        .chunks_exact(h.hidden)
        .zip(&params.out_b)
        .map(|(row, b)| row.iter().zip(&hidden).map(|(w, x)| *w as f64 * x).sum::<f64>() + *b as f64)
        .collect();
    EmotionDistribution::from_slice(&softmax(&logits)).map_err(EvalError::Shape)
}

/// Forward pass over a 25×768 utterance embedding.
pub fn ser_head_forward(layers: &LayerEmbeddings, params: &SerHeadParams) -> Result<EmotionDistribution, EvalError> {
    if params.header.n_layers != EMBED_LAYERS || params.header.input_dim != EMBED_DIM {
        return Err(EvalError::Shape(format!(
            "head expects {} × {}, embeddings are {EMBED_LAYERS} × {EMBED_DIM}",
            params.header.n_layers, params.header.input_dim
        )));
    }
    ser_head_forward_slice(layers.as_slice(), params)
}

/// Parses a label name in the canonical set.
pub fn parse_label(s: &str) -> Result<Emotion, EvalError> {
    s.trim().parse().map_err(|_| EvalError::UnknownLabel(s.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: Emotion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy_ci: BootstrapCI,
    pub f1_ci: BootstrapCI,
    /// `confusion[gold][pred]` counts in canonical label order.
    pub confusion: [[usize; N_LABELS]; N_LABELS],
}

fn confusion_of(gold: &[Emotion], pred: &[Emotion], idx: impl Iterator<Item = usize>) -> [[usize; N_LABELS]; N_LABELS] {
    let mut m = [[0usize; N_LABELS]; N_LABELS];
    for i in idx {
        m[gold[i].index()][pred[i].index()] += 1;
    }
    m
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(m: &[[usize; N_LABELS]; N_LABELS]) -> Vec<ClassMetrics> {
    Emotion::ALL
        .iter()
        .map(|&label| {
            let c = label.index();
            let tp = m[c][c];
            let support: usize = m[c].iter().sum();
            let predicted: usize = m.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

fn summary(m: &[[usize; N_LABELS]; N_LABELS]) -> (f64, f64) {
    let n: usize = m.iter().flatten().sum();
    let correct: usize = (0..N_LABELS).map(|c| m[c][c]).sum();
    let wf1 = class_metrics(m).iter().map(|c| c.support as f64 * c.f1).sum::<f64>() / n as f64;
    (correct as f64 / n as f64, wf1)
}

/// Accuracy, per-class metrics and support-weighted F1 with utterance-level
/// bootstrap CIs.
pub fn classification_report(gold: &[Emotion], pred: &[Emotion], boot: &BootstrapConfig) -> Result<EvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let confusion = confusion_of(gold, pred, 0..gold.len());
    let (accuracy, weighted_f1) = summary(&confusion);
    let cis = bootstrap_many(gold.len(), 2, boot, |idx| {
        let (a, f) = summary(&confusion_of(gold, pred, idx.iter().copied()));
        vec![Some(a), Some(f)]
    })?;
    let ci = |point: f64, iv: Option<(f64, f64)>| {
        let (lo, hi) = iv.unwrap_or((point, point));
        BootstrapCI {
            point,
            lo,
            hi,
            level: boot.level,
            n_boot: boot.n_boot,
            seed: boot.seed,
        }
    };
    Ok(EvalReport {
        n: gold.len(),
        accuracy,
        weighted_f1,
        per_class: class_metrics(&confusion),
        accuracy_ci: ci(accuracy, cis[0]),
        f1_ci: ci(weighted_f1, cis[1]),
        confusion,
    })
}

/// As [`classification_report`], taking the argmax of each predicted
/// distribution.
pub fn classification_report_from_distributions(
    gold: &[Emotion],
    pred: &[EmotionDistribution],
    boot: &BootstrapConfig,
) -> Result<EvalReport, EvalError> {
    let labels: Vec<Emotion> = pred.iter().map(EmotionDistribution::argmax).collect();
    classification_report(gold, &labels, boot)
}

/// Krippendorff's α with the nominal metric. `units[u][c]` is coder `c`'s
/// value for unit `u`; units with fewer than two values are not pairable.
pub fn krippendorff_alpha<T: Ord + Clone>(units: &[Vec<Option<T>>]) -> Result<f64, EvalError> {
    let mut values: BTreeMap<T, usize> = BTreeMap::new();
    for row in units {
        for v in row.iter().flatten() {
            let next = values.len();
            values.entry(v.clone()).or_insert(next);
        }
    }
    let k = values.len();
    let mut o = vec![vec![0.0f64; k]; k];
    let mut pairable = 0;
    for row in units {
        let coded: Vec<usize> = row.iter().flatten().map(|v| values[v]).collect();
        let m = coded.len();
        if m < 2 {
            continue;
        }
        pairable += 1;
        let w = 1.0 / (m - 1) as f64;
        for (i, &a) in coded.iter().enumerate() {
            for (j, &b) in coded.iter().enumerate() {
                if i != j {
                    o[a][b] += w;
                }
            }
        }
    }
    if pairable == 0 {
        return Err(EvalError::UndefinedAgreement("no unit has two or more codings".into()));
    }
    let n_c: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                d_o += o[a][b];
                d_e += n_c[a] * n_c[b];
            }
        }
    }
    if d_e == 0.0 {
        return if d_o == 0.0 {
            Ok(1.0)
        } else {
            Err(EvalError::UndefinedAgreement("expected disagreement is zero".into()))
        };
    }
    Ok(1.0 - (n - 1.0) * d_o / d_e)
}

/// Fleiss' κ for `counts[unit][category]` with a fixed number of raters
/// per unit.
pub fn fleiss_kappa(counts: &[Vec<usize>], raters: usize) -> Result<f64, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::Empty);
    }
    if raters < 2 {
        return Err(EvalError::UndefinedAgreement("fewer than two raters per unit".into()));
    }
    let k = counts[0].len();
    for (row, c) in counts.iter().enumerate() {
        let sum: usize = c.iter().sum();
        if sum != raters || c.len() != k {
            return Err(EvalError::RowSum { row, sum, expected: raters });
        }
    }
    let n = raters as f64;
    let units = counts.len() as f64;
    let p_bar = counts
        .iter()
        .map(|c| (c.iter().map(|&x| (x * x) as f64).sum::<f64>() - n) / (n * (n - 1.0)))
        .sum::<f64>()
        / units;
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = counts.iter().map(|c| c[j] as f64).sum::<f64>() / (units * n);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Per-unit category counts from a sparse annotation table, for units
/// coded by exactly `raters` coders.
pub fn category_counts<T: Ord + Clone>(units: &[Vec<Option<T>>]) -> (Vec<Vec<usize>>, BTreeSet<T>) {
    let cats: BTreeSet<T> = units.iter().flatten().flatten().cloned().collect();
    let index: BTreeMap<&T, usize> = cats.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let counts = units
        .iter()
        .map(|row| {
            let mut c = vec![0; cats.len()];
            for v in row.iter().flatten() {
                c[index[v]] += 1;
            }
            c
        })
        .collect();
    (counts, cats)
}
