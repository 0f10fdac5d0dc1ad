use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nbest_core::backend::{BackendKind, DEFAULT_CONCURRENCY, DEFAULT_TEMPERATURE};
use nbest_core::corpus::{self, Corpus, ManifestOptions, Speaker, DEFAULT_MAX_DURATION_S};
use nbest_core::corrector::{self, CorrectorConfig};
use nbest_core::metrics::{self, Scored};
use nbest_core::promptgen::{self, ContextMode, PromptTemplate, TemplateKind};
use nbest_core::synthgen::{self, CharOps, CorruptionConfig, CorruptionModel, Lexicon, SyntheticCorpusConfig};
use nbest_core::textnorm::{Normalizer, NormalizerConfig};
use nbest_core::{jsonl, report, BucketScheme, EvalSummary, SCHEMA_VERSIONS};

#[derive(Parser)]
#[command(name = "nbest", about = "LLM error correction and WER scoring for conversational ASR", disable_version_flag = true)]
struct Cli {
    /// Print the tool version and the schema version of every file format.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest, drop over-long utterances and write it back out.
    Ingest(IngestArgs),
    /// Split sessions into two folds.
    Split(SplitArgs),
    /// Generate a synthetic child-adult conversation manifest.
    GenCorpus(GenCorpusArgs),
    /// Generate synthetic N-best lists by corrupting reference transcripts.
    Synth(SynthArgs),
    /// Render correction prompts.
    Prompts(PromptArgs),
    /// Emit a chat-format instruction-tuning dataset.
    Sft(PromptArgs),
    /// Run LLM correction over a corpus.
    Correct(CorrectArgs),
    /// Score hypotheses before and after correction.
    Score(ScoreArgs),
    /// WER by utterance length.
    Report(ReportArgs),
    /// Normalize stdin line by line, or dump the normalizer configuration.
    Norm(NormArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Utterances longer than this many seconds are dropped.
    #[arg(long, default_value_t = DEFAULT_MAX_DURATION_S)]
    max_duration: f64,
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Receives fold_a.txt, fold_b.txt, fold_a.jsonl and fold_b.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long, default_value_t = 20)]
    sessions: usize,
    #[arg(long, default_value_t = 10)]
    turns: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ctc,
    Lexical,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "ctc")]
    model: ModelArg,
    #[arg(long, default_value_t = 0.05)]
    base_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    rate_step: f64,
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON object mapping a word to its candidate replacements.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Character noise uses substitutions only.
    #[arg(long)]
    substitute_only: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two-speaker conversation.
    Conversation,
    /// Child in a tutoring session (no-context only).
    Tutoring,
}

#[derive(Args)]
struct TemplateArgs {
    /// Number of previous turns (0, 1 or 3).
    #[arg(long, default_value_t = 0)]
    context: usize,
    #[arg(long)]
    allow_any_k: bool,
    /// Template file; overrides --preset.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "conversation")]
    preset: Preset,
}

impl TemplateArgs {
    fn resolve(&self) -> Result<(ContextMode, PromptTemplate)> {
        let mode = ContextMode::from_k(self.context, self.allow_any_k)?;
        let tpl = match (&self.template, self.preset, mode.template_kind()) {
            (Some(path), _, _) => PromptTemplate::load(path)?,
            (None, Preset::Conversation, TemplateKind::NoContext) => PromptTemplate::default_no_context(),
            (None, Preset::Conversation, TemplateKind::Context) => PromptTemplate::default_context(),
            (None, Preset::Tutoring, TemplateKind::NoContext) => PromptTemplate::tutoring_no_context(),
            (None, Preset::Tutoring, TemplateKind::Context) => bail!("the tutoring preset has no context variant"),
        };
        if tpl.kind() != mode.template_kind() {
            bail!("{} template given for --context {}", tpl.kind().as_str(), self.context);
        }
        Ok((mode, tpl))
    }
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    template: TemplateArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Identity,
    Oracle,
    Scripted,
    Http,
}

#[derive(Args)]
struct CorrectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    template: TemplateArgs,
    #[arg(long, value_enum, default_value = "identity")]
    backend: BackendArg,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// JSONL of {"utt_id", "response"} for the scripted backend.
    #[arg(long)]
    scripted: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    model: String,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    concurrency: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long)]
    max_output_words: Option<usize>,
    /// Keep over-long replies instead of reverting to the best hypothesis.
    #[arg(long)]
    no_fallback: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// N-best or corrections file scored as the baseline.
    #[arg(long)]
    before: PathBuf,
    /// N-best or corrections file scored after correction.
    #[arg(long)]
    after: Option<PathBuf>,
    #[arg(long, default_value = "before")]
    before_label: String,
    #[arg(long, default_value = "after")]
    after_label: String,
    /// Normalizer configuration (JSON); defaults to the built-in one.
    #[arg(long)]
    normalizer: Option<PathBuf>,
    /// Per-utterance rows (CSV).
    #[arg(long)]
    rows_out: Option<PathBuf>,
    /// Comparison table (CSV).
    #[arg(long)]
    csv_out: Option<PathBuf>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `label=path` of an N-best or corrections file; repeatable.
    #[arg(long = "run", value_parser = parse_run, required = true)]
    runs: Vec<(String, PathBuf)>,
    /// `default` or a list such as `1,2-3,4+`.
    #[arg(long, default_value = "default")]
    buckets: BucketScheme,
    /// Restrict to one speaker role.
    #[arg(long, value_parser = parse_speaker)]
    speaker: Option<Speaker>,
    #[arg(long)]
    normalizer: Option<PathBuf>,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NormArgs {
    #[arg(long)]
    dump_config: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    let (label, path) = s.split_once('=').ok_or("expected label=path")?;
    Ok((label.to_string(), PathBuf::from(path)))
}

fn parse_speaker(s: &str) -> Result<Speaker, String> {
    s.parse().map_err(|e: nbest_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.version {
        println!("nbest {}", env!("CARGO_PKG_VERSION"));
        for (name, v) in SCHEMA_VERSIONS {
            println!("{name} v{v}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(2);
    };
    let name = command_name(&command);
    match run(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"command": name, "error": format!("{e:#}")});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Split(_) => "split",
        Command::GenCorpus(_) => "gen-corpus",
        Command::Synth(_) => "synth",
        Command::Prompts(_) => "prompts",
        Command::Sft(_) => "sft",
        Command::Correct(_) => "correct",
        Command::Score(_) => "score",
        Command::Report(_) => "report",
        Command::Norm(_) => "norm",
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Split(a) => cmd_split(a),
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Prompts(a) => cmd_prompts(a),
        Command::Sft(a) => cmd_sft(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
        Command::Norm(a) => cmd_norm(a),
    }
}

/// Manifests produced by `ingest` may have index gaps left by filtering.
fn load_corpus(path: &Path) -> Result<Corpus> {
    corpus::load_manifest_with(path, ManifestOptions { allow_index_gaps: true })
        .with_context(|| format!("loading manifest {}", path.display()))
}

fn load_normalizer(path: Option<&Path>) -> Result<Normalizer> {
    Ok(match path {
        Some(p) => Normalizer::new(NormalizerConfig::load(p)?)?,
        None => Normalizer::default(),
    })
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let corpus = corpus::load_manifest(&a.manifest)?;
    let corpus = if a.no_filter {
        corpus
    } else {
        let (filtered, r) = corpus::filter_max_duration(&corpus, a.max_duration);
        eprintln!(
            "removed {} utterance(s) longer than {}s; {} without duration kept",
            r.removed, r.max_s, r.no_duration
        );
        if !r.gapped_sessions.is_empty() {
            eprintln!("sessions with index gaps after filtering: {}", r.gapped_sessions.join(", "));
        }
        filtered
    };
    corpus::write_manifest(&a.out, &corpus)?;
    eprintln!("{} utterances in {} sessions", corpus.len(), corpus.session_ids().len());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let folds = corpus::split_two_fold(&corpus, a.seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (name, sessions) in [("fold_a", &folds.fold_a), ("fold_b", &folds.fold_b)] {
        let list: String = sessions.iter().map(|s| format!("{s}\n")).collect();
        fs::write(a.out_dir.join(format!("{name}.txt")), list)?;
        corpus::write_manifest(&a.out_dir.join(format!("{name}.jsonl")), &corpus.restrict_to(sessions))?;
    }
    eprintln!("fold_a: {} sessions, fold_b: {} sessions", folds.fold_a.len(), folds.fold_b.len());
    Ok(())
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let corpus = synthgen::synthetic_corpus(SyntheticCorpusConfig {
        sessions: a.sessions,
        turns_per_session: a.turns,
        seed: a.seed,
    });
    corpus::write_manifest(&a.out, &corpus)?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let lexicon = match &a.lexicon {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str::<Lexicon>(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let cfg = CorruptionConfig {
        model: match a.model {
            ModelArg::Ctc => CorruptionModel::CtcSpelling,
            ModelArg::Lexical => CorruptionModel::LexicalSubstitution,
        },
        base_rate: a.base_rate,
        rank_rate_step: a.rate_step,
        n: a.n,
        seed: a.seed,
        char_ops: if a.substitute_only { CharOps::SUBSTITUTE_ONLY } else { CharOps::default() },
        confusion_lexicon: lexicon,
    };
    let lists = synthgen::make_corpus_nbest(&corpus, &cfg)?;
    synthgen::write_nbest(&a.out, &lists)?;
    Ok(())
}

fn cmd_prompts(a: PromptArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let nbests = synthgen::load_nbest(&a.nbest)?;
    let (mode, tpl) = a.template.resolve()?;
    // Context is the reference text of earlier turns, as in training.
    let prompts = promptgen::reference_context_prompts(&corpus, &nbests, mode, &tpl)?;
    jsonl::write(&a.out, &prompts)?;
    Ok(())
}

fn cmd_sft(a: PromptArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let nbests = synthgen::load_nbest(&a.nbest)?;
    let (mode, tpl) = a.template.resolve()?;
    let records = promptgen::emit_sft_dataset(&corpus, &nbests, mode, &tpl)?;
    jsonl::write(&a.out, &records)?;
    Ok(())
}

fn cmd_correct(a: CorrectArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let nbests = synthgen::load_nbest(&a.nbest)?;
    let (mode, template) = a.template.resolve()?;
    let mut cfg = CorrectorConfig::new(mode);
    cfg.template = template;
    cfg.fallback_enabled = !a.no_fallback;
    cfg.concurrency = a.concurrency;
    cfg.params.temperature = a.temperature;
    cfg.params.model_name = a.model;
    cfg.params.max_retries = a.max_retries;
    cfg.params.max_output_words = a.max_output_words;
    cfg.params.request_timeout = Duration::try_from_secs_f64(a.timeout).context("--timeout")?;

    let kind = match a.backend {
        BackendArg::Identity => BackendKind::Identity,
        BackendArg::Oracle => BackendKind::Oracle,
        BackendArg::Http => BackendKind::Http {
            endpoint: a.endpoint.context("--endpoint is required for the http backend")?,
        },
        BackendArg::Scripted => {
            let path = a.scripted.context("--scripted is required for the scripted backend")?;
            let rows: Vec<(usize, nbest_core::backend::ScriptedResponse)> = jsonl::read(&path)?;
            BackendKind::Scripted {
                table: rows.into_iter().map(|(_, r)| (r.utt_id, r.response)).collect(),
            }
        }
    };
    let backend = kind.build(Some(&corpus), &cfg.params)?;
    let results = corrector::correct_corpus(&corpus, &nbests, &cfg, backend.as_ref())?;
    corrector::write_corrections(&a.out, &results)?;
    let fallbacks = results.iter().filter(|r| r.fallback_applied).count();
    eprintln!(
        "{} utterances corrected ({mode}); {fallbacks} fallback(s), {} backend error(s)",
        results.len(),
        corrector::degraded_count(&results)
    );
    Ok(())
}

/// Hypothesis per utterance from either an N-best file (rank 1) or a
/// corrections file (`corrected`).
fn load_hypotheses(path: &Path) -> Result<HashMap<String, String>> {
    let rows: Vec<(usize, serde_json::Value)> = jsonl::read(path)?;
    let mut out = HashMap::with_capacity(rows.len());
    let degraded = rows.iter().filter(|(_, v)| v["error"].is_string()).count();
    if degraded > 0 {
        eprintln!(
            "{}: {degraded} utterance(s) kept the best hypothesis after a backend error",
            path.display()
        );
    }
    for (line, v) in rows {
        let id = v["utt_id"]
            .as_str()
            .with_context(|| format!("{}:{line}: missing utt_id", path.display()))?;
        let hyp = v["corrected"]
            .as_str()
            .or_else(|| v.pointer("/hyps/0").and_then(|h| h.as_str()))
            .with_context(|| format!("{}:{line}: neither \"corrected\" nor \"hyps\"", path.display()))?;
        out.insert(id.to_string(), hyp.to_string());
    }
    Ok(out)
}

fn score_run(
    corpus: &Corpus,
    hyps: &HashMap<String, String>,
    label: &str,
    norm: &Normalizer,
    speaker: Option<Speaker>,
) -> Result<Vec<Scored<f64>>> {
    corpus
        .utterances()
        .iter()
        .filter(|u| speaker.is_none_or(|s| u.speaker == s))
        .map(|u| {
            let hyp = hyps
                .get(&u.utt_id)
                .with_context(|| format!("run {label:?} has no hypothesis for {:?}", u.utt_id))?;
            Ok(metrics::score_utterance(&u.utt_id, u.speaker, label, &u.text, hyp, norm))
        })
        .collect()
}

fn timestamp_line() -> String {
    format!("<!-- generated {} -->\n", chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let norm = load_normalizer(a.normalizer.as_deref())?;
    let scheme = BucketScheme::default();
    let mut runs = vec![(a.before_label.clone(), a.before.clone())];
    if let Some(after) = &a.after {
        runs.push((a.after_label.clone(), after.clone()));
    }
    let mut all_rows = Vec::new();
    let mut summaries: Vec<EvalSummary> = Vec::new();
    for (label, path) in &runs {
        let hyps = load_hypotheses(path)?;
        let rows = score_run(&corpus, &hyps, label, &norm, None)?;
        summaries.push(metrics::aggregate(&rows, &scheme)?);
        all_rows.extend(rows);
    }
    let table = report::render_comparison_table(&summaries);
    let mut stdout = io::stdout().lock();
    if !a.no_timestamp {
        stdout.write_all(timestamp_line().as_bytes())?;
    }
    stdout.write_all(table.markdown.as_bytes())?;
    if let Some(p) = &a.csv_out {
        fs::write(p, &table.csv).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = &a.rows_out {
        let mut f = io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
        metrics::write_rows_csv(&mut f, &all_rows)?;
        f.flush()?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let corpus = load_corpus(&a.manifest)?;
    let norm = load_normalizer(a.normalizer.as_deref())?;
    let mut seen = BTreeSet::new();
    let mut summaries: Vec<EvalSummary> = Vec::new();
    for (label, path) in &a.runs {
        if !seen.insert(label.clone()) {
            bail!("run label {label:?} given twice");
        }
        let hyps = load_hypotheses(path)?;
        let rows = score_run(&corpus, &hyps, label, &norm, a.speaker)?;
        summaries.push(metrics::aggregate(&rows, &a.buckets)?);
    }
    let csv = report::render_bucket_csv(&summaries);
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn cmd_norm(a: NormArgs) -> Result<()> {
    let norm = load_normalizer(a.config.as_deref())?;
    if a.dump_config {
        println!("{}", norm.config().to_json_pretty());
        return Ok(());
    }
    let stdin = io::stdin().lock();
    let mut stdout = io::stdout().lock();
    for line in stdin.lines() {
        writeln!(stdout, "{}", norm.normalize(&line?))?;
    }
    Ok(())
}
