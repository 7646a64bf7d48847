use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use valgauge::dataio::{split_users, synth_fixtures, Dataset, SplitSpec};
use valgauge::harness::wire::{self, RemoteBackend};
use valgauge::harness::{
    self, construct_memory, generate_then_select, parse_completion, reasoning_loop, render_completion, render_prompt,
    unigram_f1, BiasedScorer, GeneratorBackend, MockGenerator, PairOutcome, PairSource, Prediction, ScorerBackend,
    SimulationConfig, Task, VerifierScorer,
};
use valgauge::lexical::{self, StopWords};
use valgauge::metrics::{self, MetricReport};
use valgauge::text::LexiconTagger;
use valgauge::topology::{self, EmbeddingSet};
use valgauge::verifier::{self, HashedEncoder, TextEncoder, TrainConfig, TrainingExample, VerifierParams};
use valgauge::{seed, DomainKind, InteractionRecord, PreferencePair, ValueActivation, ValueDimension, ValueProfile};

const EXIT_INTERNAL: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Debug)]
enum CliError {
    Internal(anyhow::Error),
    Validation(String),
    Backend(String),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Internal(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Internal(e.into())
    }
}

type CliResult = Result<(), CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "valgauge", version, about = "Evaluate and simulate value-aware agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score predictions against a dataset.
    Metrics(MetricsArgs),
    /// Run an agent protocol over a dataset.
    Simulate(SimulateArgs),
    /// Project words onto value dimensions.
    Project(ProjectArgs),
    /// Circumplex analysis of value embeddings.
    Topology(TopologyArgs),
    /// Build preference pairs for DPO or verifier training.
    Prefs(PrefsArgs),
    /// Train the value verifier on preference pairs.
    TrainVerifier(TrainArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Hold out a fraction of users.
    Split(SplitArgs),
    /// Serve the bundled mock backend on stdin/stdout.
    MockBackend(MockBackendArgs),
}

#[derive(Args, Debug, Serialize)]
struct MetricsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
enum Protocol {
    Reasoning,
    Cva,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// exec:COMMAND, http:URL or mock:biased.
    #[arg(long, default_value = "mock:biased")]
    backend: String,
    /// Scorer: `backend` (the generator backend), verifier:PARAMS, or mock:biased.
    #[arg(long, default_value = "backend")]
    scorer: String,
    #[arg(long, value_enum, default_value = "reasoning")]
    protocol: Protocol,
    /// Reasoning rounds; a comma-separated list runs each value.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    rounds: Vec<usize>,
    /// Candidates per reasoning round (K).
    #[arg(long, default_value_t = 3)]
    candidates: usize,
    /// Candidates for generate-then-select (N).
    #[arg(long, default_value_t = 5)]
    cva_candidates: usize,
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulate only a held-out fraction of users.
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long, default_value_t = 5)]
    retrieval_limit: usize,
    /// Seed of the hashed text encoder used with a verifier scorer.
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum ActivationSource {
    Validation,
    Training,
}

#[derive(Args, Debug, Serialize)]
struct ProjectArgs {
    /// JSON lines of {"text": ..., "activation": [10 reals], "group": optional}.
    #[arg(long, conflicts_with_all = ["dataset", "params"])]
    activations: Option<PathBuf>,
    /// Compute activations from a dataset's contexts with a trained verifier.
    #[arg(long, requires = "params")]
    dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
    /// Which split the activations come from; recorded in the outputs.
    #[arg(long, value_enum)]
    source: ActivationSource,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    #[arg(long, default_value_t = lexical::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Stop-word file, one word per line; defaults to the bundled list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TopologyArgs {
    /// Tab-separated file: label, then the vector.
    #[arg(long, conflicts_with = "params")]
    embeddings: Option<PathBuf>,
    /// Use the value table of a verifier params file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma-separated dimensions to drop, or `none`.
    #[arg(long, default_value = "Power,Security")]
    exclude_dims: String,
    /// Also report the score against the reversed circumplex.
    #[arg(long)]
    reversed: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum PairKind {
    Dpo,
    Verifier,
}

#[derive(Args, Debug, Serialize)]
struct PrefsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "mock:biased")]
    backend: String,
    #[arg(long, value_enum)]
    kind: PairKind,
    /// Defaults to 10 for dpo and 5 for verifier.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long, default_value_t = harness::PAIR_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Build pairs from the training users only.
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long, default_value_t = 5)]
    retrieval_limit: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = verifier::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    encoder_seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    domain: DomainKind,
    #[arg(long, default_value_t = 10)]
    users: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MockBackendArgs {
    #[arg(long, default_value = "biased")]
    name: String,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    config: &'a C,
    seeds: BTreeMap<&'a str, u64>,
    inputs: Vec<InputDigest>,
    started_at_unix: u64,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Creates the output directory and writes `manifest.json` into it. Called
/// before any result file is produced.
fn write_manifest<C: Serialize>(
    out_dir: &Path,
    command: &str,
    config: &C,
    seeds: &[(&str, u64)],
    inputs: &[&Path],
) -> anyhow::Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let manifest = RunManifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        seeds: seeds.iter().copied().collect(),
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<anyhow::Result<_>>()?,
        started_at_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Metrics(a) => cmd_metrics(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Project(a) => cmd_project(a),
        Command::Topology(a) => cmd_topology(a),
        Command::Prefs(a) => cmd_prefs(a),
        Command::TrainVerifier(a) => cmd_train_verifier(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::MockBackend(a) => cmd_mock_backend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(CliError::Backend(m)) => {
            eprintln!("backend error: {m}");
            ExitCode::from(EXIT_BACKEND)
        }
        Err(CliError::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

// ---- metrics ----

fn read_predictions(path: &Path) -> Result<Vec<(usize, Prediction)>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Prediction>(line) {
            Ok(p) => out.push((i + 1, p)),
            Err(e) => errors.push(format!("{}:{}: {e}", path.display(), i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(invalid(errors.join("\n")))
    }
}

fn compute_metrics(dataset: &Dataset, preds: &[(usize, Prediction)], label: &str) -> Result<MetricReport, CliError> {
    let by_id: BTreeMap<&str, &InteractionRecord> = dataset.records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut errors = Vec::new();
    let mut seen = BTreeMap::new();
    let mut pairs: Vec<(&Prediction, &InteractionRecord)> = Vec::new();
    let domain = dataset.domain();
    for (line, p) in preds {
        let Some(rec) = by_id.get(p.record_id.as_str()) else {
            errors.push(format!("{label}:{line}: unknown record id {:?}", p.record_id));
            continue;
        };
        if let Some(prev) = seen.insert(p.record_id.clone(), *line) {
            errors.push(format!(
                "{label}:{line}: record id {:?} already predicted on line {prev}",
                p.record_id
            ));
            continue;
        }
        let need = |ok: bool, field: &str, errors: &mut Vec<String>| {
            if !ok {
                errors.push(format!("{label}:{line}: prediction lacks {field}"));
            }
        };
        match domain {
            DomainKind::MediaReview => need(p.rating.is_some(), "rating", &mut errors),
            DomainKind::Mobility => {
                need(p.poi_category.is_some(), "poi_category", &mut errors);
                need(p.stay_minutes.is_some(), "stay_minutes", &mut errors);
            }
            DomainKind::Conversation => {}
        }
        if let Some(v) = &p.value_scores {
            if valgauge::validate_profile(v).is_err() {
                errors.push(format!("{label}:{line}: value_scores must be 10 reals in [-1, 1]"));
            }
        }
        pairs.push((p, rec));
    }
    if pairs.is_empty() && errors.is_empty() {
        errors.push(format!("{label}: no predictions"));
    }
    if !errors.is_empty() {
        return Err(invalid(errors.join("\n")));
    }

    let mut report = MetricReport::new(domain, pairs.len());
    let m = |e: metrics::MetricsError| invalid(e.to_string());
    let categorical = |get: fn(&Prediction) -> Option<String>, truth: fn(&InteractionRecord) -> Option<String>| {
        let both: Vec<(String, String)> = pairs.iter().filter_map(|(p, r)| Some((get(p)?, truth(r)?))).collect();
        if both.is_empty() {
            return None;
        }
        let (pred, gt): (Vec<_>, Vec<_>) = both.into_iter().unzip();
        metrics::accuracy(&pred, &gt).ok()
    };
    if let Some(a) = categorical(|p| p.rating.map(|r| r.to_string()), |r| r.rating.map(|x| x.to_string())) {
        report.insert("acc.rating", a);
    }
    if let Some(a) = categorical(|p| p.sentiment.clone(), |r| r.sentiment.clone()) {
        report.insert("acc.sentiment", a);
    }
    if let Some(a) = categorical(|p| p.attitude.clone(), |r| r.attitude.clone()) {
        report.insert("acc.attitude", a);
    }
    if let Some(a) = categorical(|p| p.poi_category.clone(), |r| r.poi_category.clone()) {
        report.insert("acc.poi_category", a);
    }
    if domain == DomainKind::Mobility {
        let (pred, gt): (Vec<f64>, Vec<f64>) = pairs
            .iter()
            .map(|(p, r)| (p.stay_minutes.unwrap_or_default(), r.stay_minutes.unwrap_or_default()))
            .unzip();
        report.insert("mse.stay_minutes", metrics::mse(&pred, &gt).map_err(m)?);
    } else {
        let gen: Vec<&str> = pairs.iter().map(|(p, _)| p.action_text.as_str()).collect();
        let real: Vec<&str> = pairs.iter().map(|(_, r)| r.action_text.as_str()).collect();
        let suite = metrics::linguistic_suite(&gen, &real, &LexiconTagger::default(), domain).map_err(m)?;
        report.merge("", &suite);
    }

    // Value distribution: per-user mean of the measured scores against the
    // users' ground-truth profiles.
    let mut per_user: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (p, r) in &pairs {
        if let Some(v) = &p.value_scores {
            per_user.entry(r.user_id.as_str()).or_default().push(v);
        }
    }
    if per_user.len() >= 2 {
        let mut sim = vec![Vec::new(); valgauge::NUM_VALUES];
        let mut gt = vec![Vec::new(); valgauge::NUM_VALUES];
        for (user, rows) in &per_user {
            let prof = dataset
                .profile(user)
                .ok_or_else(|| invalid(format!("{label}: no profile for user {user:?}")))?;
            for k in 0..valgauge::NUM_VALUES {
                sim[k].push(rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64);
                gt[k].push(prof.scores.scores()[k]);
            }
        }
        let panel = metrics::panel_stats(&sim, &gt).map_err(m)?;
        let var: Vec<f64> = (0..valgauge::NUM_VALUES)
            .map(|k| metrics::var_pct(&sim[k], &gt[k]))
            .collect::<Result<_, _>>()
            .map_err(m)?;
        report.insert("val.var_pct", metrics::mean(&var));
        report.insert("val.std_rel_pct", panel.avg_std_rel_pct);
        report.insert("val.mean_abs_diff", panel.avg_mean_abs_diff);
        for (k, dim) in valgauge::canonical_order().iter().enumerate() {
            report.insert(format!("val.var_pct.{}", dim.name()), var[k]);
            report.insert(
                format!("val.std_rel_pct.{}", dim.name()),
                panel.per_dimension[k].std_rel_pct,
            );
            report.insert(
                format!("val.mean_abs_diff.{}", dim.name()),
                panel.per_dimension[k].mean_abs_diff,
            );
        }
    }
    Ok(report)
}

fn cmd_metrics(a: MetricsArgs) -> CliResult {
    let dataset = load_dataset(&a.dataset)?;
    let preds = read_predictions(&a.predictions)?;
    let label = a.predictions.display().to_string();
    write_manifest(&a.out_dir, "metrics", &a, &[], &[&a.dataset, &a.predictions])?;
    let report = compute_metrics(&dataset, &preds, &label)?;
    fs::write(a.out_dir.join("report.txt"), report.to_kv_text())?;
    fs::write(
        a.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)? + "\n",
    )?;
    Ok(())
}

// ---- backends ----

enum Backend {
    Mock(MockGenerator, BiasedScorer),
    Remote(RemoteBackend),
}

impl Backend {
    fn open(spec: &str) -> Result<Self, CliError> {
        if let Some(name) = spec.strip_prefix("mock:") {
            return match name {
                "biased" | "default" => Ok(Backend::Mock(MockGenerator::default(), BiasedScorer::default())),
                other => Err(invalid(format!("unknown mock backend {other:?}"))),
            };
        }
        let remote =
            RemoteBackend::from_spec(spec, wire::timeout_from_env()).map_err(|e| CliError::Backend(e.to_string()))?;
        Ok(Backend::Remote(remote))
    }

    fn generator(&self) -> &dyn GeneratorBackend {
        match self {
            Backend::Mock(g, _) => g,
            Backend::Remote(r) => r,
        }
    }

    fn scorer(&self) -> &dyn ScorerBackend {
        match self {
            Backend::Mock(_, s) => s,
            Backend::Remote(r) => r,
        }
    }

    /// Handshake and version check; the returned value caps concurrency.
    fn connect(&self) -> Result<harness::Handshake, CliError> {
        let h = self
            .generator()
            .handshake()
            .map_err(|e| CliError::Backend(format!("handshake failed: {e}")))?;
        wire::check_handshake(&h).map_err(|e| CliError::Backend(e.to_string()))?;
        if !h.deterministic {
            log::warn!("backend declares itself non-deterministic; runs will not be reproducible");
        }
        Ok(h)
    }
}

fn thread_pool(jobs: Option<usize>, max_inflight: u32) -> anyhow::Result<rayon::ThreadPool> {
    let wanted = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let n = wanted.clamp(1, max_inflight.max(1) as usize);
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

/// Records grouped by user, each user's records in time order (file order
/// breaks ties). Users come out sorted by id.
fn by_user(records: &[InteractionRecord]) -> Vec<(String, Vec<&InteractionRecord>)> {
    let mut map: BTreeMap<String, Vec<(usize, &InteractionRecord)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        map.entry(r.user_id.clone()).or_default().push((i, r));
    }
    map.into_iter()
        .map(|(u, mut v)| {
            v.sort_by_key(|(i, r)| (r.timestamp.unwrap_or(i64::MIN), *i));
            (u, v.into_iter().map(|(_, r)| r).collect())
        })
        .collect()
}

fn prompt_for(
    dataset: &Dataset,
    rec: &InteractionRecord,
    history: &[InteractionRecord],
    limit: usize,
) -> Result<(String, ValueProfile), String> {
    let profile = dataset
        .profile(&rec.user_id)
        .ok_or_else(|| format!("no profile for user {}", rec.user_id))?;
    let memory = construct_memory(history, &rec.context_text, limit);
    let prompt = render_prompt(rec, &memory, &profile.scores, profile.intro.as_deref()).map_err(|e| e.to_string())?;
    Ok((prompt, profile.scores))
}

// ---- simulate ----

#[derive(Serialize)]
struct TranscriptLine<'a> {
    record_id: &'a str,
    user_id: &'a str,
    run: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning: Option<harness::ReasoningOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<harness::Selection>,
    action: String,
}

#[derive(Serialize, Deserialize)]
struct Skipped {
    record_id: String,
    run: String,
    reason: String,
}

struct RecordResult<'a> {
    transcripts: Vec<TranscriptLine<'a>>,
    predictions: Vec<(String, Prediction)>,
    skipped: Vec<Skipped>,
}

fn run_label(protocol: Protocol, rounds: usize) -> String {
    match protocol {
        Protocol::Reasoning => format!("T{rounds}"),
        Protocol::Cva => "cva".to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_record<'a>(
    a: &SimulateArgs,
    dataset: &Dataset,
    gen: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
    rec: &'a InteractionRecord,
    history: &[InteractionRecord],
    runs: &[usize],
) -> RecordResult<'a> {
    let mut res = RecordResult {
        transcripts: Vec::new(),
        predictions: Vec::new(),
        skipped: Vec::new(),
    };
    let labels: Vec<String> = match a.protocol {
        Protocol::Reasoning => runs.iter().map(|&t| run_label(a.protocol, t)).collect(),
        Protocol::Cva => vec![run_label(a.protocol, 0)],
    };
    let skip_all = |res: &mut RecordResult, reason: String| {
        log::warn!("record {} skipped: {reason}", rec.record_id);
        for l in &labels {
            res.skipped.push(Skipped {
                record_id: rec.record_id.clone(),
                run: l.clone(),
                reason: reason.clone(),
            });
        }
    };
    let (prompt, profile) = match prompt_for(dataset, rec, history, a.retrieval_limit) {
        Ok(v) => v,
        Err(e) => {
            skip_all(&mut res, e);
            return res;
        }
    };
    let agent_seed = seed::derive(a.seed, &format!("user:{}", rec.user_id));
    let record_seed = seed::derive(agent_seed, &format!("record:{}", rec.record_id));
    let task = Task {
        prompt: &prompt,
        context: &rec.context_text,
        profile: &profile,
    };
    let mut finals: Vec<(
        String,
        String,
        Option<harness::ReasoningOutcome>,
        Option<harness::Selection>,
    )> = Vec::new();
    match a.protocol {
        Protocol::Reasoning => {
            let cfg = SimulationConfig {
                candidates: a.candidates,
                rounds: runs.iter().copied().max().unwrap_or(0),
                cva_candidates: a.cva_candidates,
                temperature: a.temperature,
                seed: record_seed,
                retrieval_limit: a.retrieval_limit,
            };
            match reasoning_loop(gen, scorer, &task, &cfg) {
                Ok(out) => {
                    // Round seeds depend only on the round index, so the
                    // state after round t is exactly a t-round run.
                    for &t in runs {
                        let mut o = out.clone();
                        o.rounds.truncate(t);
                        o.action = o
                            .rounds
                            .last()
                            .map(|r| r.pool[r.best_index].clone())
                            .unwrap_or_else(|| o.initial.clone());
                        finals.push((run_label(a.protocol, t), o.action.clone(), Some(o), None));
                    }
                }
                Err(e) => {
                    skip_all(&mut res, e.to_string());
                    return res;
                }
            }
        }
        Protocol::Cva => match generate_then_select(gen, scorer, &task, a.cva_candidates, a.temperature, record_seed) {
            Ok(sel) => finals.push((run_label(a.protocol, 0), sel.action.clone(), None, Some(sel))),
            Err(e) => {
                skip_all(&mut res, e.to_string());
                return res;
            }
        },
    }
    for (label, action, reasoning, selection) in finals {
        match parse_completion(rec.domain, &rec.record_id, &action) {
            Ok(p) => res.predictions.push((label.clone(), p)),
            Err(e) => res.skipped.push(Skipped {
                record_id: rec.record_id.clone(),
                run: label.clone(),
                reason: format!("unparseable completion: {e}"),
            }),
        }
        res.transcripts.push(TranscriptLine {
            record_id: &rec.record_id,
            user_id: &rec.user_id,
            run: label,
            reasoning,
            selection,
            action,
        });
    }
    res
}

fn cmd_simulate(a: SimulateArgs) -> CliResult {
    let dataset = load_dataset(&a.dataset)?;
    if a.candidates == 0 || a.cva_candidates == 0 {
        return Err(invalid("--candidates and --cva-candidates must be at least 1"));
    }
    if a.rounds.is_empty() {
        return Err(invalid("--rounds needs at least one value"));
    }
    let mut runs = a.rounds.clone();
    runs.sort_unstable();
    runs.dedup();

    let backend = Backend::open(&a.backend)?;
    let hs = backend.connect()?;
    let verifier_scorer;
    let separate_scorer;
    let scorer: &dyn ScorerBackend = if a.scorer == "backend" {
        backend.scorer()
    } else if let Some(path) = a.scorer.strip_prefix("verifier:") {
        let params =
            VerifierParams::from_text(&read_text(Path::new(path))?).map_err(|e| invalid(format!("{path}: {e}")))?;
        let encoder = HashedEncoder::new(params.width(), a.encoder_seed);
        verifier_scorer = VerifierScorer { params, encoder };
        &verifier_scorer
    } else {
        separate_scorer = Backend::open(&a.scorer)?;
        separate_scorer.connect()?;
        separate_scorer.scorer()
    };

    let mut inputs: Vec<&Path> = vec![&a.dataset];
    if let Some(path) = a.scorer.strip_prefix("verifier:") {
        inputs.push(Path::new(path));
    }
    write_manifest(
        &a.out_dir,
        "simulate",
        &a,
        &[("run", a.seed), ("encoder", a.encoder_seed)],
        &inputs,
    )?;

    let selected = match a.holdout {
        Some(f) => {
            let (_, eval) = split_users(
                &dataset,
                SplitSpec {
                    holdout_fraction: f,
                    seed: a.seed,
                },
            )
            .map_err(|e| invalid(e.to_string()))?;
            eval.records
        }
        None => dataset.records.clone(),
    };
    let groups = by_user(&selected);
    let all = by_user(&dataset.records);
    let histories: BTreeMap<&str, &Vec<&InteractionRecord>> = all.iter().map(|(u, v)| (u.as_str(), v)).collect();

    let pool = thread_pool(a.jobs, hs.max_inflight)?;
    let gen = backend.generator();
    let per_user: Vec<Vec<RecordResult>> = pool.install(|| {
        groups
            .par_iter()
            .map(|(user, recs)| {
                let full = histories[user.as_str()];
                recs.iter()
                    .map(|rec| {
                        let pos = full
                            .iter()
                            .position(|r| r.record_id == rec.record_id)
                            .expect("record belongs to its user");
                        let history: Vec<InteractionRecord> = full[..pos].iter().map(|r| (*r).clone()).collect();
                        simulate_record(&a, &dataset, gen, scorer, rec, &history, &runs)
                    })
                    .collect()
            })
            .collect()
    });

    let labels: Vec<String> = match a.protocol {
        Protocol::Reasoning => runs.iter().map(|&t| run_label(a.protocol, t)).collect(),
        Protocol::Cva => vec![run_label(a.protocol, 0)],
    };
    let results: Vec<&RecordResult> = per_user.iter().flatten().collect();
    let mut variance_rows = vec!["run\tn\tlatent_mean\tlatent_variance".to_string()];
    for label in &labels {
        let transcripts: Vec<&TranscriptLine> = results
            .iter()
            .flat_map(|r| r.transcripts.iter().filter(|t| &t.run == label))
            .collect();
        let preds: Vec<&Prediction> = results
            .iter()
            .flat_map(|r| r.predictions.iter().filter(|(l, _)| l == label).map(|(_, p)| p))
            .collect();
        write_jsonl(&a.out_dir.join(format!("transcript-{label}.jsonl")), &transcripts)?;
        write_jsonl(&a.out_dir.join(format!("predictions-{label}.jsonl")), &preds)?;
        let latents: Vec<f64> = preds.iter().filter_map(|p| p.latent).collect();
        if !latents.is_empty() {
            variance_rows.push(format!(
                "{label}\t{}\t{}\t{}",
                latents.len(),
                metrics::mean(&latents),
                metrics::population_variance(&latents)
            ));
        }
    }
    fs::write(a.out_dir.join("variance.tsv"), variance_rows.join("\n") + "\n")?;
    let skipped: Vec<&Skipped> = results.iter().flat_map(|r| r.skipped.iter()).collect();
    write_jsonl(&a.out_dir.join("skipped.jsonl"), &skipped)?;
    if !skipped.is_empty() {
        eprintln!("{} record runs skipped; see skipped.jsonl", skipped.len());
    }
    Ok(())
}

// ---- project ----

#[derive(Deserialize)]
struct ActivationLine {
    text: String,
    activation: ValueActivation,
    #[serde(default)]
    group: Option<String>,
}

fn cmd_project(a: ProjectArgs) -> CliResult {
    if a.top_k == 0 {
        return Err(invalid("--top-k must be at least 1"));
    }
    if a.epsilon.is_nan() || a.epsilon <= 0.0 {
        return Err(invalid("--epsilon must be positive"));
    }
    let mut rows: Vec<(String, ValueActivation, Option<String>)> = Vec::new();
    let mut inputs: Vec<&Path> = Vec::new();
    if let Some(path) = &a.activations {
        inputs.push(path);
        let text = read_text(path)?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: ActivationLine =
                serde_json::from_str(line).map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            rows.push((l.text, l.activation, l.group));
        }
    } else if let (Some(dpath), Some(ppath)) = (&a.dataset, &a.params) {
        inputs.push(dpath);
        inputs.push(ppath);
        let dataset = load_dataset(dpath)?;
        let params =
            VerifierParams::from_text(&read_text(ppath)?).map_err(|e| invalid(format!("{}: {e}", ppath.display())))?;
        let enc = HashedEncoder::new(params.width(), a.encoder_seed);
        for r in &dataset.records {
            let prof = dataset
                .profile(&r.user_id)
                .ok_or_else(|| invalid(format!("no profile for user {}", r.user_id)))?;
            let att = verifier::cross_attention(&params, &enc.encode(&r.context_text), &prof.scores)
                .map_err(|e| invalid(e.to_string()))?;
            rows.push((r.context_text.clone(), att.activation, r.group_key.clone()));
        }
    } else {
        return Err(invalid("give --activations, or --dataset with --params"));
    }
    if rows.is_empty() {
        return Err(invalid("no activation rows"));
    }
    if let Some(p) = &a.stopwords {
        inputs.push(p);
    }
    write_manifest(&a.out_dir, "project", &a, &[], &inputs)?;

    let stop = match &a.stopwords {
        Some(p) => StopWords::from_text(&read_text(p)?, &p.display().to_string()),
        None => StopWords::bundled(),
    };
    let docs: Vec<Vec<String>> = rows.iter().map(|(t, _, _)| valgauge::text::tokenize(t)).collect();
    let acts: Vec<ValueActivation> = rows.iter().map(|(_, act, _)| *act).collect();
    let weighted = lexical::tfidf_weights(&docs, &stop).map_err(|e| invalid(e.to_string()))?;
    let raw = lexical::relevance(&weighted, &acts, a.epsilon).map_err(|e| invalid(e.to_string()))?;
    let m = lexical::row_normalize(&raw);
    let source = match a.source {
        ActivationSource::Validation => "validation",
        ActivationSource::Training => "training",
    };
    let header = format!(
        "# source={source} tfidf={} stopwords={} epsilon={}\n",
        lexical::TFIDF_VARIANT,
        stop.version,
        a.epsilon
    );
    fs::write(
        a.out_dir.join("heatmap.tsv"),
        header.clone() + &lexical::heatmap_tsv(&m),
    )?;
    let cloud = lexical::wordcloud_tsv(&m, a.top_k).map_err(|e| invalid(e.to_string()))?;
    fs::write(a.out_dir.join("wordcloud.tsv"), header.clone() + &cloud)?;
    let grouped: Vec<(String, ValueActivation)> =
        rows.iter().filter_map(|(_, act, g)| Some((g.clone()?, *act))).collect();
    if !grouped.is_empty() {
        let groups = lexical::group_activation(&grouped).map_err(|e| invalid(e.to_string()))?;
        let mut out = header;
        out.push_str("group");
        for d in valgauge::canonical_order() {
            out.push('\t');
            out.push_str(d.name());
        }
        out.push('\n');
        for (g, act) in groups {
            out.push_str(&g);
            for w in act.weights() {
                out.push_str(&format!("\t{w}"));
            }
            out.push('\n');
        }
        fs::write(a.out_dir.join("groups.tsv"), out)?;
    }
    Ok(())
}

// ---- topology ----

fn parse_exclusions(spec: &str) -> Result<Vec<ValueDimension>, CliError> {
    if spec.trim().eq_ignore_ascii_case("none") || spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<ValueDimension>()
                .map_err(|e| invalid(format!("--exclude-dims: {e}")))
        })
        .collect()
}

fn cmd_topology(a: TopologyArgs) -> CliResult {
    let excluded = parse_exclusions(&a.exclude_dims)?;
    let (embeddings, input): (EmbeddingSet, &Path) = match (&a.embeddings, &a.params) {
        (Some(p), None) => (
            EmbeddingSet::from_tsv(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
            p,
        ),
        (None, Some(p)) => {
            let params =
                VerifierParams::from_text(&read_text(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            (verifier::export_value_embeddings(&params), p)
        }
        _ => return Err(invalid("give exactly one of --embeddings or --params")),
    };
    write_manifest(&a.out_dir, "topology", &a, &[], &[input])?;
    let analysis = topology::analyze(&embeddings, &excluded, a.reversed).map_err(|e| invalid(e.to_string()))?;
    let mut coords = String::from("label\tx\ty\tangle\trank\n");
    for r in &analysis.rows {
        coords.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.label.name(),
            r.x,
            r.y,
            r.angle,
            r.rank
        ));
    }
    fs::write(a.out_dir.join("coords.tsv"), coords)?;
    let s = &analysis.summary;
    let summary = json!({
        "n": s.n,
        "d_circ": s.d_circ,
        "cis": s.cis,
        "observed": s.observed.order().iter().map(|d| d.name()).collect::<Vec<_>>(),
        "excluded": excluded.iter().map(|d| d.name()).collect::<Vec<_>>(),
        "reversed_cis": s.reversed_cis,
    });
    fs::write(
        a.out_dir.join("cis.json"),
        serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n",
    )?;
    Ok(())
}

// ---- prefs ----

fn cmd_prefs(a: PrefsArgs) -> CliResult {
    let dataset = load_dataset(&a.dataset)?;
    let k = a.candidates.unwrap_or(match a.kind {
        PairKind::Dpo => harness::DPO_CANDIDATES,
        PairKind::Verifier => harness::VERIFIER_CANDIDATES,
    });
    if k == 0 {
        return Err(invalid("--candidates must be at least 1"));
    }
    let backend = Backend::open(&a.backend)?;
    backend.connect()?;
    write_manifest(&a.out_dir, "prefs", &a, &[("run", a.seed)], &[&a.dataset])?;

    let records = match a.holdout {
        Some(f) => {
            let (train, _) = split_users(
                &dataset,
                SplitSpec {
                    holdout_fraction: f,
                    seed: a.seed,
                },
            )
            .map_err(|e| invalid(e.to_string()))?;
            train.records
        }
        None => dataset.records.clone(),
    };
    let all = by_user(&dataset.records);
    let mut skipped = Vec::new();
    let mut sources = Vec::new();
    for (_, recs) in by_user(&records) {
        let full = &all.iter().find(|(u, _)| u == &recs[0].user_id).expect("user present").1;
        for rec in recs {
            let pos = full
                .iter()
                .position(|r| r.record_id == rec.record_id)
                .expect("record present");
            let history: Vec<InteractionRecord> = full[..pos].iter().map(|r| (*r).clone()).collect();
            let made = prompt_for(&dataset, rec, &history, a.retrieval_limit).and_then(|(prompt, _)| {
                let reference = render_completion(rec).map_err(|e| e.to_string())?;
                let profile = &dataset.profile(&rec.user_id).expect("checked by prompt_for").scores;
                Ok(PairSource {
                    record: rec,
                    profile,
                    prompt,
                    reference,
                })
            });
            match made {
                Ok(s) => sources.push(s),
                Err(reason) => skipped.push(Skipped {
                    record_id: rec.record_id.clone(),
                    run: "prefs".into(),
                    reason,
                }),
            }
        }
    }
    let outcomes =
        harness::build_preference_pairs(backend.generator(), &unigram_f1, &sources, k, a.temperature, a.seed)
            .map_err(|e| invalid(e.to_string()))?;
    let mut pairs = Vec::new();
    for o in outcomes {
        match o {
            PairOutcome::Pair(p) => pairs.push(p),
            PairOutcome::Skipped { record_id, reason } => skipped.push(Skipped {
                record_id,
                run: "prefs".into(),
                reason,
            }),
        }
    }
    write_jsonl(&a.out_dir.join("pairs.jsonl"), &pairs)?;
    let kind = match a.kind {
        PairKind::Dpo => "dpo",
        PairKind::Verifier => "verifier",
    };
    let meta = json!({
        "kind": kind,
        "candidates": k,
        "temperature": a.temperature,
        "similarity": "unigram-f1",
        "pairs": pairs.len(),
        "degenerate": pairs.iter().filter(|p| p.degenerate).count(),
        "loss_weights": {"dpo": 1.0, "bco": 0.2, "sft": 1.2},
    });
    fs::write(
        a.out_dir.join("pairs.meta.json"),
        serde_json::to_string_pretty(&meta).map_err(anyhow::Error::from)? + "\n",
    )?;
    write_jsonl(&a.out_dir.join("skipped.jsonl"), &skipped)?;
    Ok(())
}

// ---- train-verifier ----

fn cmd_train_verifier(a: TrainArgs) -> CliResult {
    if a.width < 2 {
        return Err(invalid("--width must be at least 2"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(invalid("--lr must be positive"));
    }
    let text = read_text(&a.pairs)?;
    let enc = HashedEncoder::new(a.width, a.encoder_seed);
    let mut examples = Vec::new();
    let mut degenerate = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: PreferencePair =
            serde_json::from_str(line).map_err(|e| invalid(format!("{}:{}: {e}", a.pairs.display(), i + 1)))?;
        if pair.degenerate || pair.chosen == pair.rejected {
            degenerate += 1;
            continue;
        }
        examples.push(TrainingExample::from_pair(&pair, &enc).map_err(|e| invalid(e.to_string()))?);
    }
    if examples.is_empty() {
        return Err(invalid("no usable (non-degenerate) pairs"));
    }
    if degenerate > 0 {
        log::info!("skipped {degenerate} degenerate pairs");
    }
    write_manifest(
        &a.out_dir,
        "train-verifier",
        &a,
        &[("init", a.seed), ("encoder", a.encoder_seed)],
        &[&a.pairs],
    )?;
    let init = VerifierParams::random(a.width, a.seed);
    let started = Instant::now();
    let out = verifier::train(
        init,
        &examples,
        TrainConfig {
            lr: a.lr,
            epochs: a.epochs,
        },
    )
    .map_err(|e| match e {
        verifier::VerifierError::NonFiniteLoss { .. } => invalid(format!("{e}; try a smaller --lr")),
        other => CliError::Internal(other.into()),
    })?;
    log::info!("trained in {:.2?}", started.elapsed());
    fs::write(a.out_dir.join("params.txt"), out.params.to_text())?;
    let mut trace = String::from("epoch\tloss\n");
    for (i, l) in out.losses.iter().enumerate() {
        trace.push_str(&format!("{i}\t{l}\n"));
    }
    fs::write(a.out_dir.join("loss.tsv"), trace)?;
    fs::write(
        a.out_dir.join("embeddings.tsv"),
        verifier::export_value_embeddings(&out.params).to_tsv(),
    )?;
    let acc = verifier::pairwise_accuracy(&out.params, &examples).map_err(|e| CliError::Internal(e.into()))?;
    let summary = json!({
        "pairs": examples.len(),
        "degenerate_skipped": degenerate,
        "final_loss": out.losses.last(),
        "train_pair_accuracy": acc,
    });
    fs::write(
        a.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)? + "\n",
    )?;
    Ok(())
}

// ---- synth / split / mock-backend ----

fn cmd_synth(a: SynthArgs) -> CliResult {
    if a.users == 0 {
        return Err(invalid("--users must be at least 1"));
    }
    let d = synth_fixtures(a.domain, a.users, a.seed);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    d.save(&a.out).map_err(|e| CliError::Internal(e.into()))?;
    Ok(())
}

fn cmd_split(a: SplitArgs) -> CliResult {
    let d = load_dataset(&a.dataset)?;
    let (train, eval) = split_users(
        &d,
        SplitSpec {
            holdout_fraction: a.holdout,
            seed: a.seed,
        },
    )
    .map_err(|e| invalid(e.to_string()))?;
    write_manifest(&a.out_dir, "split", &a, &[("split", a.seed)], &[&a.dataset])?;
    train
        .save(&a.out_dir.join("train.jsonl"))
        .map_err(|e| CliError::Internal(e.into()))?;
    eval.save(&a.out_dir.join("eval.jsonl"))
        .map_err(|e| CliError::Internal(e.into()))?;
    Ok(())
}

fn cmd_mock_backend(a: MockBackendArgs) -> CliResult {
    let gen = MockGenerator::default();
    let scorer = match a.name.as_str() {
        "biased" | "default" => BiasedScorer::default(),
        other => return Err(invalid(format!("unknown mock backend {other:?}"))),
    };
    let stdin = io::stdin();
    let stdout = io::stdout();
    wire::serve(stdin.lock(), stdout.lock(), &gen, &scorer)?;
    io::stdout().flush()?;
    Ok(())
}
