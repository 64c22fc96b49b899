//! The `screenlab` command line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{parse_corpus, trim_credits, group_conversations, Corpus, CorpusError, Emotion, EmotionalityMode};
use crate::diachronic::{fixed_effects_ols, panel_observations, select_ubiquitous_groups, yearly_emotionality};
use crate::emotion_stats::{
    film_ranges, genre_emotional_range, phrase_ranges, BootstrapConfig, GenreAggregation, GenreRangeConfig, MleConfig,
    SkippedSubject, SubjectRange,
};
use crate::evalkit::{
    category_counts, classification_report, fleiss_kappa, krippendorff_alpha, parse_label, ser_head_forward, EvalReport,
    SerHeadParams,
};
use crate::manifest::RunManifest;
use crate::narrative::{trajectory, Measure, TrajectoryReport};
use crate::phrase_graph::{
    build_knn_graph, leiden_partition, make_phrase_groups, read_phrase_groups_jsonl, text_embeddings,
    write_phrase_groups_jsonl, KnnConfig, PhraseGroup,
};
use crate::synthgen::{synth_corpus, SynthSpec};

pub const DEFAULT_SEED: u64 = 13;
pub const SEED_ENV: &str = "SCREENLAB_SEED";

const CONFIG_KEYS: &[&str] = &[
    "seed",
    "mode",
    "bins",
    "min_count",
    "min_films",
    "k",
    "tau",
    "resolution",
    "n_boot",
    "level",
    "epsilon",
    "genre_agg",
    "measure",
    "n_films",
    "utterances_per_film",
    "embed_dim",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Failed(e.to_string())
            }
        }
    )*};
}

failed_from!(
    crate::emotion_stats::StatsError,
    crate::phrase_graph::GraphError,
    crate::narrative::NarrativeError,
    crate::diachronic::DiachronicError,
    crate::evalkit::EvalError,
    crate::synthgen::SynthError,
    csv::Error,
    serde_json::Error
);

#[derive(Parser, Debug)]
#[command(name = "screenlab", version, about = "Corpus analytics for emotion in film dialogue")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate and normalize a corpus
    Ingest(IngestArgs),
    /// Build phrase groups from sentence embeddings
    Cluster(ClusterArgs),
    /// Emotional range per phrase group, genre or film
    Range(RangeArgs),
    /// Emotion over narrative time
    Trajectory(TrajectoryArgs),
    /// Emotionality by release year
    Diachronic(DiachronicArgs),
    /// Fixed-effects regression of emotionality on year within phrase groups
    Regress(RegressArgs),
    /// Classification metrics and annotator agreement
    Eval(EvalArgs),
    /// Run the emotion head over layer-embedding sidecars
    HeadPredict(HeadPredictArgs),
    /// Write a synthetic corpus
    Synthgen(SynthgenArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Flat key=value file overriding defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    #[arg(long)]
    pub utterances: PathBuf,
    #[arg(long)]
    pub films: PathBuf,
    /// Keep utterances starting after the credits boundary
    #[arg(long)]
    pub keep_credits: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ClusterParams {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Minimum utterances per phrase group (or per subject for `range`)
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Assign conversation ids with this end-to-start gap in seconds
    #[arg(long)]
    pub conversation_gap: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ClusterParams,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RangeBy {
    Phrase,
    Genre,
    Film,
}

#[derive(Args, Debug)]
pub struct RangeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub by: RangeBy,
    #[command(flatten)]
    pub params: ClusterParams,
    /// Existing phrase_groups.jsonl; clustered on the fly when absent
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub min_films: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub genre_agg: Option<GenreAggregation>,
}

#[derive(Args, Debug)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `emotionality` or `emotion:<label>`
    #[arg(long)]
    pub measure: Option<Measure>,
    #[arg(long)]
    pub mode: Option<EmotionalityMode>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DiachronicArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub mode: Option<EmotionalityMode>,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RegressArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub params: ClusterParams,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<EmotionalityMode>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with `gold` and `pred` label columns
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// CSV with `film_id`, `utt_id`, `label`, scored against the corpus argmax
    #[arg(long, requires_all = ["utterances", "films"])]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub utterances: Option<PathBuf>,
    #[arg(long)]
    pub films: Option<PathBuf>,
    /// CSV with `unit`, `coder`, `label` for agreement statistics
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub n_boot: Option<usize>,
}

#[derive(Args, Debug)]
pub struct HeadPredictArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthgenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value = "flat", value_parser = clap::builder::PossibleValuesParser::new(SynthSpec::PRESETS))]
    pub preset: String,
    #[arg(long)]
    pub n_films: Option<usize>,
    #[arg(long)]
    pub utterances_per_film: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

/// Resolves settings as flag > config file > default and records each
/// resolved value in the manifest.
struct Settings {
    file: BTreeMap<String, String>,
    manifest: RunManifest,
}

impl Settings {
    fn new(command: &str, args: &[String], common: &CommonArgs) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        let mut s = Self {
            file,
            manifest: RunManifest::new(command, args.to_vec()),
        };
        if let Some(p) = &common.config {
            s.manifest.add_input(p)?;
        }
        let seed = match common.seed {
            Some(v) => v,
            None => match s.file.get("seed") {
                Some(v) => v.parse().map_err(|_| CliError::Usage(format!("config: invalid seed `{v}`")))?,
                None => match std::env::var(SEED_ENV) {
                    Ok(v) => v
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("{SEED_ENV}: invalid seed `{v}`")))?,
                    Err(_) => DEFAULT_SEED,
                },
            },
        };
        s.manifest.seeds.insert("seed".into(), seed);
        s.manifest.set("seed", seed);
        Ok(s)
    }

    fn seed(&self) -> u64 {
        self.manifest.seeds["seed"]
    }

    fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw
                    .parse()
                    .map_err(|e| CliError::Usage(format!("config: invalid value for `{key}`: {e}")))?,
                None => default,
            },
        };
        self.manifest.set(key, &v);
        Ok(v)
    }

    fn boot(&mut self, n_boot: Option<usize>) -> Result<BootstrapConfig, CliError> {
        let d = BootstrapConfig::default();
        let n_boot = self.get("n_boot", n_boot, d.n_boot)?;
        let level = self.get("level", None, d.level)?;
        if n_boot == 0 || !(level > 0.0 && level < 1.0) {
            return Err(CliError::Usage("n_boot must be positive and level in (0, 1)".into()));
        }
        Ok(BootstrapConfig {
            n_boot,
            level,
            seed: self.seed(),
        })
    }

    fn finish(mut self, out: &Path, outputs: &[&str]) -> Result<(), CliError> {
        self.manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self.manifest.write(out)?;
        Ok(())
    }
}

/// Parses a flat `key=value` file. Blank lines and `#` comments are
/// skipped; keys may use `-` or `_`.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)));
        };
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("{}:{}: unknown key `{key}`", path.display(), i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn load_corpus(args: &CorpusArgs, s: &mut Settings) -> Result<Corpus, CliError> {
    let corpus = parse_corpus(&args.utterances, &args.films)?;
    s.manifest.add_input(&args.utterances)?;
    s.manifest.add_input(&args.films)?;
    s.manifest.set("trim_credits", !args.keep_credits);
    Ok(if args.keep_credits { corpus } else { trim_credits(&corpus) })
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &recorded) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Corpus(c) if !c.diagnostics().is_empty() => {
                    for d in c.diagnostics() {
                        eprintln!("{d}");
                    }
                    eprintln!("error: {} invalid record(s)", c.diagnostics().len());
                }
                CliError::Usage(m) => eprintln!("error: {m}\n\nFor more information, try '--help'."),
                other => eprintln!("error: {other}"),
            }
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, args: &[String]) -> Result<(), CliError> {
    match command {
        Command::Ingest(a) => ingest(a, args),
        Command::Cluster(a) => cluster(a, args),
        Command::Range(a) => range(a, args),
        Command::Trajectory(a) => run_trajectory(a, args),
        Command::Diachronic(a) => diachronic(a, args),
        Command::Regress(a) => regress(a, args),
        Command::Eval(a) => eval(a, args),
        Command::HeadPredict(a) => head_predict(a, args),
        Command::Synthgen(a) => synthgen(a, args),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    n_films: usize,
    n_films_with_utterances: usize,
    n_utterances: usize,
    n_with_sentence_embedding: usize,
    n_with_layer_embeddings: usize,
    n_conversations: Option<usize>,
    years: BTreeMap<i32, usize>,
    genres: BTreeMap<String, usize>,
}

fn ingest(a: IngestArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("ingest", args, &a.common)?;
    let mut corpus = load_corpus(&a.corpus, &mut s)?;
    let mut n_conversations = None;
    if let Some(gap) = a.conversation_gap {
        if !(gap.is_finite() && gap >= 0.0) {
            return Err(CliError::Usage(format!("--conversation-gap must be non-negative, got {gap}")));
        }
        s.manifest.set("conversation_gap", gap);
        corpus = group_conversations(&corpus, gap);
        let ids: BTreeSet<&str> = corpus.utterances.iter().filter_map(|u| u.conversation_id.as_deref()).collect();
        n_conversations = Some(ids.len());
    }
    prepare_out(&a.common.out)?;
    let mut w = create(&a.common.out, "utterances.jsonl")?;
    corpus.write_utterances_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(&a.common.out, "films.jsonl")?;
    corpus.write_films_jsonl(&mut w)?;
    w.flush()?;
    let mut years = BTreeMap::new();
    let mut genres = BTreeMap::new();
    for f in corpus.films.values() {
        *years.entry(f.year).or_insert(0) += 1;
        for g in &f.genres {
            *genres.entry(g.clone()).or_insert(0) += 1;
        }
    }
    let summary = IngestSummary {
        n_films: corpus.films.len(),
        n_films_with_utterances: corpus.utterances_by_film().len(),
        n_utterances: corpus.utterances.len(),
        n_with_sentence_embedding: corpus.utterances.iter().filter(|u| u.sent_embedding.is_some()).count(),
        n_with_layer_embeddings: corpus.utterances.iter().filter(|u| u.layer_embeddings_path.is_some()).count(),
        n_conversations,
        years,
        genres,
    };
    write_json(&a.common.out, "ingest_summary.json", &summary)?;
    s.finish(&a.common.out, &["utterances.jsonl", "films.jsonl", "ingest_summary.json"])
}

#[derive(Serialize)]
struct ClusterSummary {
    n_texts: usize,
    n_edges: usize,
    n_communities: usize,
    modularity: f64,
    iterations: usize,
    n_groups: usize,
    grouped_utterances: usize,
}

fn phrase_groups_for(corpus: &Corpus, p: &ClusterParams, s: &mut Settings) -> Result<(Vec<PhraseGroup>, ClusterSummary), CliError> {
    let d = KnnConfig::default();
    let k = s.get("k", p.k, d.k)?;
    let tau = s.get("tau", p.tau, d.tau)?;
    let resolution = s.get("resolution", p.resolution, 1.0)?;
    let min_count = s.get("min_count", p.min_count, 50usize)?;
    let graph = build_knn_graph(&text_embeddings(corpus)?, &KnnConfig { k, tau })?;
    let partition = leiden_partition(&graph, resolution, s.seed())?;
    let groups = make_phrase_groups(corpus, &graph, &partition, min_count);
    let summary = ClusterSummary {
        n_texts: graph.n_nodes(),
        n_edges: graph.n_edges(),
        n_communities: partition.n_communities,
        modularity: partition.quality,
        iterations: partition.iterations,
        n_groups: groups.len(),
        grouped_utterances: groups.iter().map(|g| g.count).sum(),
    };
    Ok((groups, summary))
}

fn groups_from(corpus: &Corpus, path: Option<&Path>, p: &ClusterParams, s: &mut Settings) -> Result<Vec<PhraseGroup>, CliError> {
    match path {
        Some(path) => {
            s.manifest.add_input(path)?;
            let r = BufReader::new(File::open(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?);
            let groups = read_phrase_groups_jsonl(r, corpus)?;
            let min_count = s.get("min_count", p.min_count, 50usize)?;
            Ok(groups.into_iter().filter(|g| g.count >= min_count).collect())
        }
        None => Ok(phrase_groups_for(corpus, p, s)?.0),
    }
}

fn cluster(a: ClusterArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("cluster", args, &a.common)?;
    let corpus = load_corpus(&a.corpus, &mut s)?;
    let (groups, summary) = phrase_groups_for(&corpus, &a.params, &mut s)?;
    prepare_out(&a.common.out)?;
    let mut w = create(&a.common.out, "phrase_groups.jsonl")?;
    write_phrase_groups_jsonl(&groups, &mut w)?;
    w.flush()?;
    write_json(&a.common.out, "cluster_summary.json", &summary)?;
    s.finish(&a.common.out, &["phrase_groups.jsonl", "cluster_summary.json"])
}

struct RangeRow {
    subject_id: String,
    n: usize,
    entropy: f64,
    converged: bool,
    alpha: Option<Vec<f64>>,
    ci: Option<(f64, f64)>,
}

impl From<&SubjectRange> for RangeRow {
    fn from(r: &SubjectRange) -> Self {
        Self {
            subject_id: r.report.subject_id.clone(),
            n: r.report.n,
            entropy: r.report.entropy,
            converged: r.report.params.converged,
            alpha: Some(r.report.params.alpha.clone()),
            ci: r.ci.map(|c| (c.lo, c.hi)),
        }
    }
}

fn write_range_csv(dir: &Path, rows: &[RangeRow], epsilon: f64, seed: u64) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, "range_report.csv")?);
    let mut header = vec!["subject_id".to_string(), "n".into(), "entropy".into(), "converged".into()];
    header.extend((1..=7).map(|j| format!("alpha_{j}")));
    header.extend(["ci_lo", "ci_hi", "epsilon", "seed"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.subject_id.clone(), r.n.to_string(), r.entropy.to_string(), r.converged.to_string()];
        match &r.alpha {
            Some(a) => rec.extend(a.iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat(String::new()).take(7)),
        }
        rec.push(fmt_opt(r.ci.map(|c| c.0)));
        rec.push(fmt_opt(r.ci.map(|c| c.1)));
        rec.push(epsilon.to_string());
        rec.push(seed.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_skipped_csv(dir: &Path, skipped: &[SkippedSubject]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, "range_skipped.csv")?);
    w.write_record(["subject_id", "n", "reason"])?;
    for s in skipped {
        w.write_record([s.subject_id.as_str(), &s.n.to_string(), s.reason.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn range(a: RangeArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("range", args, &a.common)?;
    let corpus = load_corpus(&a.corpus, &mut s)?;
    s.manifest.set("by", format!("{:?}", a.by).to_lowercase());
    let epsilon = s.get("epsilon", a.epsilon, MleConfig::default().epsilon)?;
    if !(epsilon > 0.0 && epsilon < 1.0 / 7.0) {
        return Err(CliError::Usage(format!("epsilon must be in (0, 1/7), got {epsilon}")));
    }
    let mle = MleConfig {
        epsilon,
        ..MleConfig::default()
    };
    let boot = s.boot(a.n_boot)?;
    let (rows, skipped): (Vec<RangeRow>, Vec<SkippedSubject>) = match a.by {
        RangeBy::Phrase => {
            let groups = groups_from(&corpus, a.groups.as_deref(), &a.params, &mut s)?;
            let min_n = s.get("min_count", a.params.min_count, 50usize)?;
            let (r, sk) = phrase_ranges(&corpus, &groups, min_n, &mle, Some(&boot))?;
            (r.iter().map(RangeRow::from).collect(), sk)
        }
        RangeBy::Film => {
            let min_n = s.get("min_count", a.params.min_count, 50usize)?;
            let (r, sk) = film_ranges(&corpus, min_n, &mle, Some(&boot))?;
            (r.iter().map(RangeRow::from).collect(), sk)
        }
        RangeBy::Genre => {
            let d = GenreRangeConfig::default();
            let cfg = GenreRangeConfig {
                min_films: s.get("min_films", a.min_films, d.min_films)?,
                min_n: s.get("min_count", a.params.min_count, d.min_n)?,
                aggregation: s.get("genre_agg", a.genre_agg, d.aggregation)?,
                mle,
            };
            let rep = genre_emotional_range(&corpus, &cfg, &boot)?;
            let mut rows: Vec<RangeRow> = rep
                .entries
                .iter()
                .map(|g| RangeRow {
                    subject_id: g.genre.clone(),
                    n: g.n_utterances,
                    entropy: g.entropy,
                    converged: g.converged,
                    alpha: g.pooled.as_ref().map(|p| p.params.alpha.clone()),
                    ci: Some((g.ci.lo, g.ci.hi)),
                })
                .collect();
            rows.sort_by(|x, y| x.entropy.total_cmp(&y.entropy).then_with(|| x.subject_id.cmp(&y.subject_id)));
            (rows, rep.skipped)
        }
    };
    prepare_out(&a.common.out)?;
    write_range_csv(&a.common.out, &rows, epsilon, s.seed())?;
    write_skipped_csv(&a.common.out, &skipped)?;
    s.finish(&a.common.out, &["range_report.csv", "range_skipped.csv"])
}

fn write_trajectory(dir: &Path, rep: &TrajectoryReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, "trajectory.csv")?);
    w.write_record(["bin_index", "bin_lo_pct", "bin_hi_pct", "point", "ci_lo", "ci_hi", "n_utts", "measure", "mode"])?;
    let measure = rep.measure.to_string();
    let mode = rep.mode.to_string();
    for b in &rep.series {
        w.write_record([
            b.bin_index.to_string(),
            b.lo_pct.to_string(),
            b.hi_pct.to_string(),
            fmt_opt(b.point),
            fmt_opt(b.ci.map(|c| c.lo)),
            fmt_opt(b.ci.map(|c| c.hi)),
            b.n_utts.to_string(),
            measure.clone(),
            mode.clone(),
        ])?;
    }
    w.flush()?;
    let mut d = create(dir, "trajectory.dat")?;
    writeln!(d, "# measure={measure} mode={mode}")?;
    writeln!(d, "# bin_mid_pct point ci_lo ci_hi n_utts")?;
    let nan = |v: Option<f64>| v.map_or("NaN".to_string(), |x| x.to_string());
    for b in &rep.series {
        writeln!(
            d,
            "{} {} {} {} {}",
            0.5 * (b.lo_pct + b.hi_pct),
            nan(b.point),
            nan(b.ci.map(|c| c.lo)),
            nan(b.ci.map(|c| c.hi)),
            b.n_utts
        )?;
    }
    d.flush()?;
    Ok(())
}

fn run_trajectory(a: TrajectoryArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("trajectory", args, &a.common)?;
    let corpus = load_corpus(&a.corpus, &mut s)?;
    let measure = s.get("measure", a.measure, Measure::Emotionality)?;
    let mode = s.get("mode", a.mode, EmotionalityMode::default())?;
    let bins = s.get("bins", a.bins, crate::narrative::DEFAULT_BINS)?;
    if bins == 0 {
        return Err(CliError::Usage("--bins must be positive".into()));
    }
    let boot = s.boot(a.n_boot)?;
    let rep = trajectory(&corpus, measure, mode, bins, &boot)?;
    s.manifest.set("excluded_out_of_range", rep.excluded_out_of_range);
    s.manifest.set("excluded_undefined", rep.excluded_undefined);
    prepare_out(&a.common.out)?;
    write_trajectory(&a.common.out, &rep)?;
    s.finish(&a.common.out, &["trajectory.csv", "trajectory.dat"])
}

fn diachronic(a: DiachronicArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("diachronic", args, &a.common)?;
    let corpus = load_corpus(&a.corpus, &mut s)?;
    let mode = s.get("mode", a.mode, EmotionalityMode::default())?;
    let boot = s.boot(a.n_boot)?;
    let rep = yearly_emotionality(&corpus, mode, &boot)?;
    for y in &rep.empty_years {
        eprintln!("warning: year {y} has films but no utterances; omitted");
    }
    s.manifest.set(
        "empty_years",
        rep.empty_years.iter().map(i32::to_string).collect::<Vec<_>>().join(","),
    );
    prepare_out(&a.common.out)?;
    let mut w = csv::Writer::from_writer(create(&a.common.out, "diachronic.csv")?);
    w.write_record(["year", "point", "ci_lo", "ci_hi", "n_utts", "n_films", "mode"])?;
    for r in &rep.rows {
        w.write_record([
            r.year.to_string(),
            r.ci.point.to_string(),
            r.ci.lo.to_string(),
            r.ci.hi.to_string(),
            r.n_utts.to_string(),
            r.n_films.to_string(),
            mode.to_string(),
        ])?;
    }
    w.flush()?;
    s.finish(&a.common.out, &["diachronic.csv"])
}

#[derive(Serialize)]
struct RegressionOutput {
    #[serde(flatten)]
    report: crate::diachronic::RegressionReport,
    mode: EmotionalityMode,
    selection: &'static str,
    n_candidate_groups: usize,
    years: Vec<i32>,
    center_year: f64,
    seed: u64,
}

fn regress(a: RegressArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("regress", args, &a.common)?;
    let corpus = load_corpus(&a.corpus, &mut s)?;
    let mode = s.get("mode", a.mode, EmotionalityMode::default())?;
    let groups = groups_from(&corpus, a.groups.as_deref(), &a.params, &mut s)?;
    let selected = select_ubiquitous_groups(&corpus, &groups);
    let (obs, center) = panel_observations(&corpus, &selected, mode);
    let report = fixed_effects_ols(&obs)?;
    let years: BTreeSet<i32> = corpus.utterances_by_film().iter().map(|(f, _)| f.year).collect();
    let out = RegressionOutput {
        report,
        mode,
        selection: "groups used in every release year",
        n_candidate_groups: groups.len(),
        years: years.into_iter().collect(),
        center_year: center,
        seed: s.seed(),
    };
    prepare_out(&a.common.out)?;
    write_json(&a.common.out, "fe_regression.json", &out)?;
    s.finish(&a.common.out, &["fe_regression.json"])
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Failed(format!("{}: missing column `{name}`", path.display())))
}

fn read_label_pairs(path: &Path) -> Result<(Vec<Emotion>, Vec<Emotion>), CliError> {
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let (gi, pi) = (column(&h, "gold", path)?, column(&h, "pred", path)?);
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |e: crate::evalkit::EvalError| CliError::Failed(format!("{}:{}: {e}", path.display(), line + 2));
        gold.push(parse_label(&rec[gi]).map_err(at)?);
        pred.push(parse_label(&rec[pi]).map_err(at)?);
    }
    Ok((gold, pred))
}

fn read_gold_against_corpus(path: &Path, corpus: &Corpus) -> Result<(Vec<Emotion>, Vec<Emotion>), CliError> {
    let pred_of: BTreeMap<(&str, &str), Emotion> = corpus
        .utterances
        .iter()
        .map(|u| ((u.film_id.as_str(), u.utt_id.as_str()), u.emotion.argmax()))
        .collect();
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let (fi, ui, li) = (column(&h, "film_id", path)?, column(&h, "utt_id", path)?, column(&h, "label", path)?);
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let loc = format!("{}:{}", path.display(), line + 2);
        let label = parse_label(&rec[li]).map_err(|e| CliError::Failed(format!("{loc}: {e}")))?;
        let p = pred_of
            .get(&(&rec[fi], &rec[ui]))
            .ok_or_else(|| CliError::Failed(format!("{loc}: utterance {}/{} not in corpus", &rec[fi], &rec[ui])))?;
        gold.push(label);
        pred.push(*p);
    }
    Ok((gold, pred))
}

#[derive(Serialize)]
struct AgreementOutput {
    n_units: usize,
    n_pairable_units: usize,
    n_coders: usize,
    krippendorff_alpha: f64,
    fleiss_kappa: Option<f64>,
    fleiss_units: usize,
    fleiss_raters: usize,
}

fn agreement(path: &Path) -> Result<AgreementOutput, CliError> {
    let mut r = csv_reader(path)?;
    let h = r.headers()?.clone();
    let (ui, ci, li) = (column(&h, "unit", path)?, column(&h, "coder", path)?, column(&h, "label", path)?);
    let mut table: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut coders = BTreeSet::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        coders.insert(rec[ci].to_string());
        let prev = table
            .entry(rec[ui].to_string())
            .or_default()
            .insert(rec[ci].to_string(), rec[li].to_string());
        if prev.is_some() {
            return Err(CliError::Failed(format!(
                "{}:{}: coder {} labels unit {} twice",
                path.display(),
                line + 2,
                &rec[ci],
                &rec[ui]
            )));
        }
    }
    let units: Vec<Vec<Option<String>>> = table
        .values()
        .map(|row| coders.iter().map(|c| row.get(c).cloned()).collect())
        .collect();
    let alpha = krippendorff_alpha(&units)?;
    let raters = table.values().map(BTreeMap::len).max().unwrap_or(0);
    let full: Vec<Vec<Option<String>>> = units
        .iter()
        .filter(|u| u.iter().flatten().count() == raters)
        .cloned()
        .collect();
    let kappa = if raters >= 2 {
        let (counts, _) = category_counts(&full);
        Some(fleiss_kappa(&counts, raters)?)
    } else {
        None
    };
    Ok(AgreementOutput {
        n_units: units.len(),
        n_pairable_units: units.iter().filter(|u| u.iter().flatten().count() >= 2).count(),
        n_coders: coders.len(),
        krippendorff_alpha: alpha,
        fleiss_kappa: kappa,
        fleiss_units: full.len(),
        fleiss_raters: raters,
    })
}

fn write_confusion(dir: &Path, rep: &EvalReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, "confusion.csv")?);
    let mut header = vec!["gold\\pred".to_string()];
    header.extend(Emotion::ALL.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    for e in Emotion::ALL {
        let mut rec = vec![e.name().to_string()];
        rec.extend(rep.confusion[e.index()].iter().map(usize::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn eval(a: EvalArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("eval", args, &a.common)?;
    if a.labels.is_none() && a.gold.is_none() && a.annotations.is_none() {
        return Err(CliError::Usage("eval needs --labels, --gold or --annotations".into()));
    }
    if a.labels.is_some() && a.gold.is_some() {
        return Err(CliError::Usage("--labels and --gold are mutually exclusive".into()));
    }
    let boot = s.boot(a.n_boot)?;
    let pairs = match (&a.labels, &a.gold) {
        (Some(p), _) => {
            s.manifest.add_input(p)?;
            Some(read_label_pairs(p)?)
        }
        (None, Some(g)) => {
            let (u, f) = (a.utterances.as_ref().expect("clap requires"), a.films.as_ref().expect("clap requires"));
            let corpus = parse_corpus(u, f)?;
            s.manifest.add_input(u)?;
            s.manifest.add_input(f)?;
            s.manifest.add_input(g)?;
            Some(read_gold_against_corpus(g, &corpus)?)
        }
        _ => None,
    };
    prepare_out(&a.common.out)?;
    let mut outputs = Vec::new();
    if let Some((gold, pred)) = pairs {
        let rep = classification_report(&gold, &pred, &boot)?;
        write_json(&a.common.out, "eval_report.json", &rep)?;
        write_confusion(&a.common.out, &rep)?;
        outputs.extend(["eval_report.json", "confusion.csv"]);
    }
    if let Some(p) = &a.annotations {
        s.manifest.add_input(p)?;
        write_json(&a.common.out, "agreement.json", &agreement(p)?)?;
        outputs.push("agreement.json");
    }
    s.finish(&a.common.out, &outputs)
}

#[derive(Serialize)]
struct Prediction<'a> {
    film_id: &'a str,
    utt_id: &'a str,
    emotion_probs: &'a [f64],
}

fn head_predict(a: HeadPredictArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("head-predict", args, &a.common)?;
    let corpus = parse_corpus(&a.corpus.utterances, &a.corpus.films)?;
    s.manifest.add_input(&a.corpus.utterances)?;
    s.manifest.add_input(&a.corpus.films)?;
    let params = SerHeadParams::load(&a.weights)?;
    s.manifest.add_input(&a.weights)?;
    s.manifest.set("hidden", params.header.hidden);
    prepare_out(&a.common.out)?;
    let mut w = create(&a.common.out, "predictions.jsonl")?;
    let mut skipped = 0usize;
    for u in &corpus.utterances {
        let Some(layers) = u.load_layer_embeddings()? else {
            skipped += 1;
            continue;
        };
        let dist = ser_head_forward(&layers, &params)?;
        serde_json::to_writer(
            &mut w,
            &Prediction {
                film_id: &u.film_id,
                utt_id: &u.utt_id,
                emotion_probs: dist.probs(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if skipped > 0 {
        eprintln!("warning: {skipped} utterance(s) without layer embeddings skipped");
    }
    s.manifest.set("skipped_without_embeddings", skipped);
    s.finish(&a.common.out, &["predictions.jsonl"])
}

fn synthgen(a: SynthgenArgs, args: &[String]) -> Result<(), CliError> {
    let mut s = Settings::new("synthgen", args, &a.common)?;
    let mut spec = SynthSpec::preset(&a.preset, s.seed()).expect("clap restricts presets");
    s.manifest.set("preset", &a.preset);
    spec.n_films = s.get("n_films", a.n_films, spec.n_films)?;
    spec.utterances_per_film = s.get("utterances_per_film", a.utterances_per_film, spec.utterances_per_film)?;
    spec.embed_dim = s.get("embed_dim", a.embed_dim, spec.embed_dim)?;
    let corpus = synth_corpus(&spec)?;
    prepare_out(&a.common.out)?;
    let mut w = create(&a.common.out, "utterances.jsonl")?;
    corpus.write_utterances_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(&a.common.out, "films.jsonl")?;
    corpus.write_films_jsonl(&mut w)?;
    w.flush()?;
    write_json(&a.common.out, "synth_spec.json", &spec)?;
    s.finish(&a.common.out, &["utterances.jsonl", "films.jsonl", "synth_spec.json"])
}

/// Reads newline-delimited JSON values, one per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CliError::Failed(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
