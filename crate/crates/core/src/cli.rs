//! The `cogscan` command line. Each subcommand is one stage: it reads files,
//! writes files, and leaves a `<file>.manifest.json` next to every output.
//!
//! Exit status: 0 on success, 2 on usage errors and missing inputs, 1 on any
//! other stage failure. Failures print one JSON error record on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

// Console summaries. A closed stdout (e.g. piped into `head`) is not an error;
// the stage's files are already written.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

use crate::annotation::{AnnotationStore, Clock, Event, LabeledSequence};
use crate::corpus::{default_lexicon, ingest_corpus, write_corpus, Label, Lexicon};
use crate::error::{Error, Result};
use crate::evaluation::{argmax, metric_report, render_metric_report, MetricReport};
use crate::extract::{
    dedupe_overlapping, extract_sequences, extraction_report, render_report, verify_sequence, Sequence,
    DEFAULT_WINDOW,
};
use crate::jsonl;
use crate::manifest::{config_hash, derive_seed, verify, Manifest};
use crate::patients::{
    aggregate_patients, compare_to_codes, render_comparison, render_tuning, tune_threshold, CountRule,
    PatientAssignment, SequenceCall,
};
use crate::pipeline::{gold_store, split_labeled};
use crate::protocol::{score_with_external, score_with_internal, Endpoint, ExternalConfig, ItemScore, ScoreRequest};
use crate::server::Service;
use crate::synth::{default_patterns, generate_synthetic_corpus, gold_labels, GoldFile, SynthConfig};
use crate::tfidf::{feature_report, render_feature_report, TokenizerConfig};
use crate::training::{
    default_lambda_grid, default_threshold_grid, render_cv_table, train, BinaryTarget, CvPlan, ModelArtifact,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "cogscan", version, about = "Cognitive-impairment phenotyping over clinical notes")]
pub struct Cli {
    /// Root seed; each stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for parallel stages (default: one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Read upstream artifacts even if they no longer match their manifests.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate patient and note files and report rejected records.
    Ingest(IngestArgs),
    /// Cut keyword-anchored windows out of the notes.
    Extract(ExtractArgs),
    /// Generate a synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Split annotations, cross-validate and fit the classifier.
    Train(TrainArgs),
    /// Score a held-out set and report metrics.
    Evaluate(EvaluateArgs),
    /// Score sequences with the model or an external scorer.
    Predict(PredictArgs),
    /// Roll sequence predictions up to patient assignments.
    Aggregate(AggregateArgs),
    /// Compare patient assignments with Med/ICD flags per APOE allele.
    Compare(CompareArgs),
    /// Show the feature correlations and CV table of a model.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub patients: PathBuf,
    #[arg(long)]
    pub notes: PathBuf,
    /// Where to write the ingestion report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub patients: PathBuf,
    #[arg(long)]
    pub notes: PathBuf,
    /// Keyword file overriding the built-in lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Sequences file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-keyword match counts (JSON).
    #[arg(long)]
    pub keyword_report: Option<PathBuf>,
    /// Ground truth from `synth`; with --annotations-out, labels every
    /// sequence with the built-in patterns plus gold manual labels.
    #[arg(long, requires = "annotations_out")]
    pub gold: Option<PathBuf>,
    #[arg(long, requires = "gold")]
    pub annotations_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Patients file to write.
    #[arg(long)]
    pub patients: PathBuf,
    /// Notes file to write.
    #[arg(long)]
    pub notes: PathBuf,
    /// Ground-truth file to write.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n_patients: usize,
    #[arg(long, default_value_t = 0.15)]
    pub confounder_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub ci_fraction: f64,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub sequences: PathBuf,
    /// Event log; replayed at start, appended on every change.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Predictions file; unlabeled sequences are then served by entropy.
    #[arg(long)]
    pub probabilities: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub serve_addr: String,
    /// Most example matches a pattern preview returns.
    #[arg(long, default_value_t = crate::server::DEFAULT_PREVIEW_LIMIT)]
    pub preview_limit: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Target {
    YesVsRest,
    YesVsNo,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub sequences: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Comma-separated penalties (default: 10 log-spaced from 1e1 to 1e-4).
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Comma-separated |r| thresholds (default: 0,0.05,0.1,0.15,0.2).
    #[arg(long, value_delimiter = ',')]
    pub corr_grid: Option<Vec<f64>>,
    /// Binary outcome used for AUC during CV.
    #[arg(long, value_enum, default_value = "yes-vs-rest")]
    pub target: Target,
    /// Model artifact to write.
    #[arg(long)]
    pub model: PathBuf,
    /// Training split export (labeled sequences).
    #[arg(long)]
    pub train_out: PathBuf,
    /// Held-out split export (labeled sequences).
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Args, Clone)]
pub struct ScorerArgs {
    /// Model artifact from `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// External scorer command speaking the NDJSON protocol on stdin/stdout.
    #[arg(long, alias = "external", conflicts_with_all = ["model", "external_url"])]
    pub external_cmd: Option<String>,
    /// Base URL of an external scorer in HTTP mode.
    #[arg(long, conflicts_with = "model")]
    pub external_url: Option<String>,
    /// Whole-batch timeout for external scorers, in seconds.
    #[arg(long, default_value_t = 600)]
    pub timeout: u64,
    /// P(Yes) cut-off; defaults to the model's tuned threshold, or 0.5 for
    /// external scorers.
    #[arg(long)]
    pub decision_threshold: Option<f64>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Held-out export from `train`.
    #[arg(long)]
    pub test: PathBuf,
    /// Metric report to write (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Row name in the report.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long)]
    pub sequences: PathBuf,
    /// Predictions file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub patients: PathBuf,
    /// Positive-sequence count needed for a Yes assignment.
    #[arg(long, default_value_t = 2, conflicts_with = "tune")]
    pub patient_threshold: usize,
    /// Pick the threshold from --threshold-range against Med/ICD flags.
    #[arg(long)]
    pub tune: bool,
    #[arg(long, default_value = "1..10", value_parser = parse_range)]
    pub threshold_range: (usize, usize),
    /// Require count > t instead of count ≥ t.
    #[arg(long)]
    pub strict: bool,
    /// Assignments file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-threshold tuning table (JSON), with --tune.
    #[arg(long, requires = "tune")]
    pub tuning_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub assignments: PathBuf,
    /// Comparison report to write (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    /// Feature report to write (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let lo: usize = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: usize = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if lo == 0 || lo > hi {
        return Err(format!("range must satisfy 1 ≤ A ≤ B, got {s:?}"));
    }
    Ok((lo, hi))
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sequence_id: String,
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<[f64; 3]>,
    /// Argmax class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    /// P(Yes) at or above the decision threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Ctx {
    seed: u64,
    force: bool,
}

impl Ctx {
    /// Checks that an input exists and still matches its manifest.
    fn input<'a>(&self, flag: &str, path: &'a Path) -> Result<&'a Path> {
        if !path.exists() {
            return Err(Error::MissingInput(format!("--{flag}: {} does not exist", path.display())));
        }
        if self.force {
            if let Err(e) = verify(path) {
                log::warn!("{e}; continuing because of --force");
            }
        } else {
            verify(path)?;
        }
        Ok(path)
    }
}

/// Parses arguments, runs the stage and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stage = stage_name(&cli.command);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let record = json!({ "stage": stage, "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            if matches!(e, Error::MissingInput(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Extract(_) => "extract",
        Command::Synth(_) => "synth",
        Command::Serve(_) => "serve",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Predict(_) => "predict",
        Command::Aggregate(_) => "aggregate",
        Command::Compare(_) => "compare",
        Command::Report(_) => "report",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::InvalidInput("--workers must be at least 1".into()));
        }
        // fails only if a pool already exists, as when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        seed: cli.seed,
        force: cli.force,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Extract(a) => extract(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Train(a) => train_stage(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Aggregate(a) => aggregate(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<()> {
    let patients = ctx.input("patients", &a.patients)?;
    let notes = ctx.input("notes", &a.notes)?;
    let (_, report) = ingest_corpus(patients, notes)?;
    say!(
        "patients accepted: {}\nnotes accepted: {}\nrecords rejected: {}",
        report.patients_accepted,
        report.notes_accepted,
        report.rejected.len()
    );
    for r in &report.rejected {
        say!("  {:?} line {}: {}", r.file, r.line, r.message);
    }
    if let Some(out) = &a.report {
        jsonl::write_json(out, &report)?;
        Manifest::new("ingest", None, config_hash(&json!({}))?)
            .input(patients)?
            .input(notes)?
            .write(&[out])?;
    }
    Ok(())
}

fn load_lexicon(ctx: &Ctx, path: Option<&PathBuf>) -> Result<Lexicon> {
    match path {
        Some(p) => Lexicon::load(ctx.input("lexicon", p)?),
        None => Ok(default_lexicon()),
    }
}

fn extract(ctx: &Ctx, a: ExtractArgs) -> Result<()> {
    if a.window == 0 {
        return Err(Error::InvalidInput("--window must be at least 1".into()));
    }
    let patients = ctx.input("patients", &a.patients)?;
    let notes = ctx.input("notes", &a.notes)?;
    let lexicon = load_lexicon(ctx, a.lexicon.as_ref())?;
    let (corpus, ingest) = ingest_corpus(patients, notes)?;
    if !ingest.rejected.is_empty() {
        log::warn!("{} records rejected during ingestion", ingest.rejected.len());
    }
    let sequences = dedupe_overlapping(extract_sequences(&corpus, &lexicon, a.window));
    let failures = sequences
        .iter()
        .filter(|s| {
            corpus
                .note(&s.note_id)
                .is_none_or(|n| verify_sequence(s, n, &lexicon, a.window).is_err())
        })
        .count();
    if failures > 0 {
        return Err(Error::InvalidInput(format!("{failures} sequences failed the offset round-trip check")));
    }
    let rows = extraction_report(&sequences);
    say_raw!("{}", render_report(&rows));
    say!("sequences: {}", sequences.len());

    let hash = config_hash(&json!({ "window": a.window, "lexicon": lexicon.entries() }))?;
    let mut manifest = Manifest::new("extract", None, hash).input(patients)?.input(notes)?;
    if let Some(l) = &a.lexicon {
        manifest = manifest.input(l)?;
    }
    jsonl::write(&a.out, &sequences)?;
    let mut outputs: Vec<&Path> = vec![&a.out];
    if let Some(r) = &a.keyword_report {
        jsonl::write_json(r, &rows)?;
        outputs.push(r);
    }
    if let (Some(gold_path), Some(ann)) = (&a.gold, &a.annotations_out) {
        let gold: GoldFile = jsonl::read_json(ctx.input("gold", gold_path)?)?;
        manifest = manifest.input(gold_path)?;
        let store = gold_store(sequences, &gold_labels(&corpus, &gold.planted, a.window), &default_patterns())?;
        jsonl::write(ann, store.events())?;
        let p = store.progress();
        say!("annotated: {} of {}", p.labeled, p.total);
        outputs.push(ann);
    }
    manifest.write(&outputs)
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        patients: a.n_patients,
        confounder_rate: a.confounder_rate,
        ci_fraction: a.ci_fraction,
        ..SynthConfig::default()
    };
    let seed = derive_seed(ctx.seed, "synth");
    let s = generate_synthetic_corpus(&config, seed)?;
    write_corpus(&s.corpus, &a.patients, &a.notes)?;
    jsonl::write_json(&a.gold, &s.gold_file())?;
    say!(
        "patients: {}\nnotes: {}\nplanted matches: {}",
        s.corpus.patients().len(),
        s.corpus.notes().len(),
        s.planted.len()
    );
    Manifest::new("synth", Some(ctx.seed), config_hash(&config)?).write(&[&a.patients, &a.notes, &a.gold])
}

fn read_events(path: &Path) -> Result<Vec<Event>> {
    if path.exists() {
        jsonl::read_strict(path)
    } else {
        Ok(Vec::new())
    }
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let sequences: Vec<Sequence> = jsonl::read_strict(ctx.input("sequences", &a.sequences)?)?;
    // the log is appended to while serving, so it has no manifest to check
    let events = read_events(&a.annotations)?;
    let store = AnnotationStore::replay(sequences, &events)?;
    let mut service = Service::new(store, Some(a.annotations.clone())).with_preview_limit(a.preview_limit);
    if let Some(p) = &a.probabilities {
        let preds: Vec<Prediction> = jsonl::read_strict(ctx.input("probabilities", p)?)?;
        let probs: BTreeMap<String, [f64; 3]> =
            preds.into_iter().filter_map(|p| p.probs.map(|q| (p.sequence_id, q))).collect();
        service = service.with_probabilities(probs)?;
    }
    let server = tiny_http::Server::http(&a.serve_addr)
        .map_err(|e| Error::InvalidInput(format!("cannot listen on {}: {e}", a.serve_addr)))?;
    eprintln!("annotation service listening on http://{}", a.serve_addr);
    crate::server::run(&server, &mut service);
    Ok(())
}

fn labeled_from(ctx: &Ctx, sequences: &Path, annotations: &Path) -> Result<Vec<LabeledSequence>> {
    let sequences: Vec<Sequence> = jsonl::read_strict(ctx.input("sequences", sequences)?)?;
    let events: Vec<Event> = jsonl::read_strict(ctx.input("annotations", annotations)?)?;
    let store = AnnotationStore::replay(sequences, &events)?.with_clock(Clock::epoch());
    Ok(store.labeled())
}

fn train_stage(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.train_fraction) {
        return Err(Error::InvalidInput(format!(
            "--train-fraction must be in [0, 1], got {}",
            a.train_fraction
        )));
    }
    let labeled = labeled_from(ctx, &a.sequences, &a.annotations)?;
    let (train_items, test_items, warnings) =
        split_labeled(&labeled, a.train_fraction, derive_seed(ctx.seed, "split"));
    for w in &warnings {
        log::warn!("{w}");
    }
    let config = TrainConfig {
        tokenizer: TokenizerConfig::default(),
        plan: CvPlan {
            folds: a.folds,
            lambda_grid: a.lambda_grid.clone().unwrap_or_else(default_lambda_grid),
            threshold_grid: a.corr_grid.clone().unwrap_or_else(default_threshold_grid),
            seed: derive_seed(ctx.seed, "cv"),
            target: match a.target {
                Target::YesVsRest => BinaryTarget::YesVsRest,
                Target::YesVsNo => BinaryTarget::YesVsNo,
            },
        },
        solver: Default::default(),
    };
    let hash = config_hash(&(&config, a.train_fraction, ctx.seed))?;
    let artifact = train(&train_items, &config, &hash)?;
    if let Some(cv) = &artifact.cv {
        say_raw!("{}", render_cv_table(cv));
        for w in &cv.warnings {
            log::warn!("{w}");
        }
    }
    say!(
        "train: {} sequences, test: {} sequences, selected features: {}, decision threshold: {:.4}",
        train_items.len(),
        test_items.len(),
        artifact.tfidf.selected.len(),
        artifact.model.decision_threshold
    );
    artifact.save(&a.model)?;
    jsonl::write(&a.train_out, &train_items)?;
    jsonl::write(&a.test_out, &test_items)?;
    Manifest::new("train", Some(ctx.seed), hash)
        .input(&a.sequences)?
        .input(&a.annotations)?
        .write(&[&a.model, &a.train_out, &a.test_out])
}

enum Scorer {
    Internal(Box<ModelArtifact>),
    External(ExternalConfig),
}

impl Scorer {
    fn from_args(ctx: &Ctx, a: &ScorerArgs) -> Result<Scorer> {
        let timeout = Duration::from_secs(a.timeout);
        if let Some(cmd) = &a.external_cmd {
            let argv = crate::protocol::split_command(cmd);
            if argv.is_empty() {
                return Err(Error::InvalidInput("--external-cmd is empty".into()));
            }
            return Ok(Scorer::External(ExternalConfig {
                endpoint: Endpoint::Process(argv),
                timeout,
            }));
        }
        if let Some(url) = &a.external_url {
            return Ok(Scorer::External(ExternalConfig {
                endpoint: Endpoint::Http(url.clone()),
                timeout,
            }));
        }
        let path = a.model.as_ref().ok_or_else(|| {
            Error::MissingInput("a model artifact (--model) or an external scorer (--external-cmd) is required".into())
        })?;
        Ok(Scorer::Internal(Box::new(ModelArtifact::load(ctx.input("model", path)?)?)))
    }

    fn threshold(&self, explicit: Option<f64>) -> f64 {
        match (explicit, self) {
            (Some(t), _) => t,
            (None, Scorer::Internal(m)) => m.model.decision_threshold,
            (None, Scorer::External(_)) => 0.5,
        }
    }

    fn score(&self, requests: &[ScoreRequest]) -> Result<Vec<ItemScore>> {
        match self {
            Scorer::Internal(m) => score_with_internal(m, requests),
            Scorer::External(c) => score_with_external(c, requests),
        }
    }
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let scorer = Scorer::from_args(ctx, &a.scorer)?;
    let test_path = ctx.input("test", &a.test)?;
    if let Scorer::Internal(m) = &scorer {
        if let Some(manifest) = Manifest::read(test_path)? {
            if manifest.config_hash != m.config_hash {
                let msg = format!(
                    "{} was produced by a different training run than the model (config hash {} vs {})",
                    test_path.display(),
                    manifest.config_hash,
                    m.config_hash
                );
                if !ctx.force {
                    return Err(Error::ArtifactMismatch(msg + "; pass --force to evaluate anyway"));
                }
                log::warn!("{msg}");
            }
        }
    }
    let items: Vec<LabeledSequence> = jsonl::read_strict(test_path)?;
    if items.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let requests: Vec<ScoreRequest> = items
        .iter()
        .map(|i| ScoreRequest {
            id: i.sequence_id.clone(),
            text: i.text.clone(),
        })
        .collect();
    let scores = scorer.score(&requests)?;
    let failed: Vec<&ItemScore> = scores.iter().filter(|s| s.probs().is_none()).collect();
    if let Some(first) = failed.first() {
        return Err(Error::Transport(format!(
            "{} of {} test items could not be scored (first: {} {:?})",
            failed.len(),
            scores.len(),
            first.id,
            first.outcome
        )));
    }
    let probs: Vec<[f64; 3]> = scores.iter().map(|s| *s.probs().expect("checked above")).collect();
    let truth: Vec<Label> = items.iter().map(|i| i.label).collect();
    let name = a.name.clone().unwrap_or_else(|| {
        match scorer {
            Scorer::Internal(_) => "TF-IDF",
            Scorer::External(_) => "external",
        }
        .to_string()
    });
    let report = metric_report(&name, &probs, &truth, scorer.threshold(a.scorer.decision_threshold))?;
    say_raw!("{}", render_metric_report(std::slice::from_ref(&report)));
    if let Some(out) = &a.report {
        write_report(ctx, out, &report, &a)?;
    }
    Ok(())
}

fn write_report(ctx: &Ctx, out: &Path, report: &MetricReport, a: &EvaluateArgs) -> Result<()> {
    jsonl::write_json(out, report)?;
    let hash = config_hash(&json!({ "decision_threshold": report.decision_threshold, "name": report.model }))?;
    let mut m = Manifest::new("evaluate", Some(ctx.seed), hash).input(&a.test)?;
    if let Some(p) = &a.scorer.model {
        m = m.input(p)?;
    }
    m.write(&[out])
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let scorer = Scorer::from_args(ctx, &a.scorer)?;
    let sequences: Vec<Sequence> = jsonl::read_strict(ctx.input("sequences", &a.sequences)?)?;
    let requests: Vec<ScoreRequest> = sequences
        .iter()
        .map(|s| ScoreRequest {
            id: s.sequence_id.clone(),
            text: s.text.clone(),
        })
        .collect();
    let threshold = scorer.threshold(a.scorer.decision_threshold);
    let scores = scorer.score(&requests)?;
    let predictions = predictions_from(&sequences, &scores, threshold);
    let errors = predictions.iter().filter(|p| p.error.is_some()).count();
    let yes = predictions.iter().filter(|p| p.yes == Some(true)).count();
    say!(
        "scored: {}, failed: {errors}, P(Yes) ≥ {threshold:.4}: {yes}",
        predictions.len() - errors
    );
    jsonl::write(&a.out, &predictions)?;
    let mut m = Manifest::new("predict", None, config_hash(&json!({ "decision_threshold": threshold }))?)
        .input(&a.sequences)?;
    if let Some(p) = &a.scorer.model {
        m = m.input(p)?;
    }
    m.write(&[&a.out])
}

/// Joins scores back to their sequences; scores are in sequence order.
pub fn predictions_from(sequences: &[Sequence], scores: &[ItemScore], threshold: f64) -> Vec<Prediction> {
    sequences
        .iter()
        .zip(scores)
        .map(|(s, score)| {
            let probs = score.probs().copied();
            Prediction {
                sequence_id: s.sequence_id.clone(),
                patient_id: s.patient_id.clone(),
                probs,
                label: probs.as_ref().map(argmax),
                yes: probs.map(|p| p[0] >= threshold),
                error: match &score.outcome {
                    crate::protocol::Outcome::Error(e) => Some(e.clone()),
                    crate::protocol::Outcome::Probs(_) => None,
                },
            }
        })
        .collect()
}

fn aggregate(ctx: &Ctx, a: AggregateArgs) -> Result<()> {
    let preds: Vec<Prediction> = jsonl::read_strict(ctx.input("predictions", &a.predictions)?)?;
    let (corpus_patients, rejected) = jsonl::read_lenient(ctx.input("patients", &a.patients)?)?;
    if !rejected.is_empty() {
        log::warn!("{} malformed patient records skipped", rejected.len());
    }
    let patients: Vec<crate::corpus::PatientRecord> = corpus_patients;
    let skipped = preds.iter().filter(|p| p.yes.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} predictions without a score are left out");
    }
    let calls: Vec<SequenceCall> = preds
        .iter()
        .filter_map(|p| {
            p.yes.map(|positive| SequenceCall {
                patient_id: p.patient_id.clone(),
                positive,
            })
        })
        .collect();
    let rule = if a.strict { CountRule::GreaterThan } else { CountRule::AtLeast };
    let t = if a.tune {
        let tuning = tune_threshold(&calls, &patients, a.threshold_range.0..=a.threshold_range.1, rule)?;
        say_raw!("{}", render_tuning(&tuning));
        for w in &tuning.warnings {
            log::warn!("{w}");
        }
        if let Some(p) = &a.tuning_out {
            jsonl::write_json(p, &tuning)?;
        }
        tuning.best_t
    } else {
        a.patient_threshold
    };
    if t == 0 {
        return Err(Error::InvalidInput("--patient-threshold must be at least 1".into()));
    }
    let assignments = aggregate_patients(&calls, &patients, t, rule)?;
    let yes = assignments.iter().filter(|x| x.cognitive_impairment).count();
    say!("threshold: {t}\npatients: {}\nassigned Yes: {yes}", assignments.len());
    jsonl::write(&a.out, &assignments)?;
    let hash = config_hash(&json!({
        "tune": a.tune,
        "threshold": t,
        "range": a.threshold_range,
        "rule": rule,
    }))?;
    let manifest = Manifest::new("aggregate", None, hash).input(&a.predictions)?.input(&a.patients)?;
    match &a.tuning_out {
        Some(p) => manifest.write(&[&a.out, p]),
        None => manifest.write(&[&a.out]),
    }
}

fn compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    let assignments: Vec<PatientAssignment> = jsonl::read_strict(ctx.input("assignments", &a.assignments)?)?;
    let report = compare_to_codes(&assignments);
    say_raw!("{}", render_comparison(&report));
    if let Some(out) = &a.out {
        jsonl::write_json(out, &report)?;
        Manifest::new("compare", None, config_hash(&json!({}))?)
            .input(&a.assignments)?
            .write(&[out])?;
    }
    Ok(())
}

fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    let model = ModelArtifact::load(ctx.input("model", &a.model)?)?;
    let rows = feature_report(&model.tfidf, a.top_k);
    say_raw!("{}", render_feature_report(&rows));
    if let Some(cv) = &model.cv {
        say!();
        say_raw!("{}", render_cv_table(cv));
    }
    let weights = model.model.params.nonzero_weights();
    say!(
        "\nlambda: {}\nnonzero weights: {weights}\ndecision threshold: {:.4}",
        model.model.lambda, model.model.decision_threshold
    );
    if let Some(out) = &a.out {
        jsonl::write_json(out, &rows)?;
        Manifest::new("report", None, config_hash(&json!({ "top_k": a.top_k }))?)
            .input(&a.model)?
            .write(&[out])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("1..10"), Ok((1, 10)));
        assert_eq!(parse_range("2..=4"), Ok((2, 4)));
        assert!(parse_range("0..3").is_err());
        assert!(parse_range("5..3").is_err());
        assert!(parse_range("5").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["cogscan", "frobnicate"]), 2);
        assert_eq!(main_with_args(["cogscan", "ingest", "--bogus"]), 2);
        assert_eq!(main_with_args(["cogscan", "evaluate", "--test", "/nonexistent/test.jsonl"]), 2);
    }
}
