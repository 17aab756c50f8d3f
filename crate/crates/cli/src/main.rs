mod config;
mod error;
mod eval;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdtm::concept::{expand, Method};
use qdtm::corpus::{Corpus, Stopwords};
use qdtm::embeddings::{load_embeddings, write_embeddings, EmbeddingTable};
use qdtm::pipeline::{fit_detailed, CheckpointPlan, FitResult};
use qdtm::retrieval::{retrieve, Mode, Query};
use qdtm::synth::generate;
use qdtm::Execution;
use serde::Serialize;

use config::{optional_file, require_file, CheckpointConfig, RunConfig};
use error::{CliError, CliResult};
use eval::{evaluate, Labels};
use output::{manifest_path, sha256_hex, Outputs};

/// Query-driven topic modeling.
///
/// Settings come from an optional TOML file (`--config`), overridden by
/// flags. Passing a run manifest as `--config` replays that run.
#[derive(Parser)]
#[command(name = "qdtm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a JSON-lines corpus and write a corpus cache.
    Ingest(IngestArgs),
    /// Rank documents by query likelihood.
    Retrieve(RetrieveArgs),
    /// Extract concept words for a query.
    Expand(ExpandArgs),
    /// Fit parent topics and subtopics for one or more queries.
    Fit(Box<FitArgs>),
    /// Score a fit result.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with ground truth and embeddings.
    Synth(SynthArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML config, or a manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines documents or a corpus cache.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long)]
    threads: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Stopword list: `english` or `none`.
    #[arg(long)]
    stopwords: Option<String>,
    #[arg(long)]
    min_df: Option<u32>,
    /// Keep case instead of lowercasing.
    #[arg(long)]
    keep_case: bool,
}

#[derive(Args, Clone, Default)]
struct QueryArgs {
    /// May be repeated.
    #[arg(long)]
    query: Vec<String>,
    /// File with one query per line.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args, Clone, Default)]
struct ExpansionArgs {
    #[arg(long)]
    method: Option<Method>,
    /// Concept words per query.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
    /// Documents retrieved for extraction.
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    exclude_query_terms: bool,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the vocabulary as TSV.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args)]
struct ExpandArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    expansion: ExpansionArgs,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    query: QueryArgs,
    #[command(flatten)]
    expansion: ExpansionArgs,
    #[arg(long)]
    iters1: Option<usize>,
    #[arg(long)]
    iters2: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Initial topic count, parents included.
    #[arg(long)]
    k: Option<usize>,
    /// Initial subtopic count per parent.
    #[arg(long)]
    k2: Option<usize>,
    /// Promotion amount.
    #[arg(long)]
    u: Option<f64>,
    /// Relatedness threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Representative words per topic for the word filter.
    #[arg(long)]
    m: Option<usize>,
    /// Minimum subtopic prevalence.
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    top_words: Option<usize>,
    #[arg(long)]
    no_gpu: bool,
    #[arg(long)]
    no_word_filter: bool,
    /// Include every topic-word and document-topic distribution.
    #[arg(long)]
    full_posterior: bool,
    #[arg(long)]
    check_invariants: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from the checkpoint file if it exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    result: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    /// Share of documents whose primary topic is the planted one.
    #[arg(long)]
    planted_share: Option<f64>,
    #[arg(long)]
    sub_blocks: bool,
    /// 0 writes no embeddings.
    #[arg(long)]
    embedding_dim: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn base_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.corpus.is_some() {
        cfg.corpus = c.corpus.clone();
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.threads.is_some() {
        cfg.threads = c.threads;
    }
    if c.sequential {
        cfg.fit.execution = Execution::Sequential;
    }
    if let Some(s) = &c.stopwords {
        cfg.preprocessing.stopwords = match s.as_str() {
            "english" => Stopwords::English,
            "none" => Stopwords::None,
            other => return Err(CliError::validation(format!("unknown stopword list `{other}`"))),
        };
    }
    set(&mut cfg.preprocessing.min_df, c.min_df);
    if c.keep_case {
        cfg.preprocessing.lowercase = false;
    }
    cfg.preprocessing.validate()?;
    Ok(cfg)
}

fn apply_queries(cfg: &mut RunConfig, q: &QueryArgs) -> CliResult<()> {
    let mut queries = q.query.clone();
    if let Some(p) = &q.queries {
        let text = fs::read_to_string(p)
            .map_err(|e| CliError::validation(format!("cannot read queries file {}: {e}", p.display())))?;
        queries.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    if !queries.is_empty() {
        cfg.fit.queries = queries;
    }
    set(&mut cfg.fit.mode, q.mode);
    Ok(())
}

fn apply_expansion(cfg: &mut RunConfig, e: &ExpansionArgs) {
    let x = &mut cfg.fit.expansion;
    set(&mut x.method, e.method);
    set(&mut x.n, e.n);
    set(&mut x.lambda, e.lambda);
    set(&mut x.topk, e.topk);
    set(&mut x.cutoff, e.cutoff);
    set(&mut x.mu, e.mu);
    if e.exclude_query_terms {
        x.exclude_query_terms = true;
    }
    if e.embeddings.is_some() {
        cfg.embeddings = e.embeddings.clone();
    }
}

fn init_threads(cfg: &RunConfig) -> CliResult<()> {
    if let Some(n) = cfg.threads {
        if n < 1 {
            return Err(CliError::validation("threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_corpus(cfg: &RunConfig, outputs: &mut Outputs) -> CliResult<Corpus> {
    let path = require_file(&cfg.corpus, "corpus")?;
    outputs.input("corpus", &path)?;
    let corpus = if path.extension().is_some_and(|e| e == "jsonl") {
        Corpus::load_jsonl(&path, &cfg.preprocessing)?
    } else {
        Corpus::load(&path)?
    };
    log::info!(
        "corpus: {} documents, {} word types, {} tokens",
        corpus.len(),
        corpus.vocabulary.len(),
        corpus.vocabulary.total_tokens()
    );
    Ok(corpus)
}

fn load_table(path: Option<&Path>, corpus: &Corpus, outputs: &mut Outputs) -> CliResult<Option<EmbeddingTable>> {
    match path {
        None => Ok(None),
        Some(p) => {
            outputs.input("embeddings", p)?;
            Ok(Some(load_embeddings(p, &corpus.vocabulary)?))
        }
    }
}

fn single_query(cfg: &RunConfig) -> CliResult<String> {
    match cfg.fit.queries.as_slice() {
        [q] if !q.trim().is_empty() => Ok(q.clone()),
        [] => Err(CliError::validation("a query is required")),
        _ => Err(CliError::validation("exactly one query is required")),
    }
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes `bytes` plus a manifest when an output path is configured,
/// otherwise prints to stdout.
fn emit(mut outputs: Outputs, cfg: &RunConfig, role: &str, bytes: &[u8], seed: Option<u64>) -> CliResult<()> {
    match &cfg.out {
        Some(out) => {
            outputs.write(role, out, bytes)?;
            outputs.commit(&manifest_path(out), cfg, seed)
        }
        None => {
            print!("{}", String::from_utf8_lossy(bytes));
            Ok(())
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> CliResult<()> {
    let cfg = base_config(&a.common)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::validation("ingest needs --out"))?;
    let mut outputs = Outputs::new("ingest");
    let corpus = load_corpus(&cfg, &mut outputs)?;
    if corpus.dropped > 0 {
        log::warn!("{} documents were empty after preprocessing and dropped", corpus.dropped);
    }
    outputs.write("corpus", &out, &serde_json::to_vec(&corpus)?)?;
    if let Some(v) = &a.vocab {
        let mut buf = Vec::new();
        corpus.vocabulary.write_tsv(&mut buf)?;
        outputs.write("vocabulary", v, &buf)?;
    }
    outputs.commit(&manifest_path(&out), &cfg, None)
}

#[derive(Serialize)]
struct RankedDoc<'a> {
    doc_id: &'a str,
    log_score: f64,
}

fn cmd_retrieve(a: RetrieveArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    apply_queries(&mut cfg, &a.query)?;
    set(&mut cfg.retrieve.top, a.top);
    set(&mut cfg.fit.expansion.mu, a.mu);
    let raw = single_query(&cfg)?;
    init_threads(&cfg)?;
    let mut outputs = Outputs::new("retrieve");
    let corpus = load_corpus(&cfg, &mut outputs)?;
    let query = Query::parse(&raw, cfg.fit.mode, &corpus)?;
    let set = retrieve(&corpus, &query, cfg.retrieve.top, cfg.fit.expansion.mu, cfg.fit.execution)?;
    let ranked: Vec<RankedDoc> = set
        .hits
        .iter()
        .map(|h| RankedDoc {
            doc_id: &corpus.documents[h.doc].id,
            log_score: h.log_score,
        })
        .collect();
    emit(outputs, &cfg, "ranking", &json_bytes(&ranked)?, None)
}

#[derive(Serialize)]
struct Expansion {
    query: String,
    method: Method,
    words: Vec<ScoredToken>,
}

#[derive(Serialize)]
struct ScoredToken {
    token: String,
    score: f64,
}

fn cmd_expand(a: ExpandArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    apply_queries(&mut cfg, &a.query)?;
    apply_expansion(&mut cfg, &a.expansion);
    let raw = single_query(&cfg)?;
    cfg.fit.expansion.validate()?;
    let emb_path = optional_file(&cfg.embeddings, "embeddings")?;
    if cfg.fit.expansion.method == Method::Rel && emb_path.is_none() {
        return Err(CliError::validation("method `rel` requires --embeddings"));
    }
    init_threads(&cfg)?;
    let mut outputs = Outputs::new("expand");
    let corpus = load_corpus(&cfg, &mut outputs)?;
    let table = load_table(emb_path.as_deref(), &corpus, &mut outputs)?;
    let query = Query::parse(&raw, cfg.fit.mode, &corpus)?;
    let set = expand(&corpus, &query, &cfg.fit.expansion, table.as_ref(), cfg.fit.execution)?;
    let words = set
        .words
        .iter()
        .map(|w| {
            Ok(ScoredToken {
                token: corpus.vocabulary.token(w.token)?.to_string(),
                score: w.score,
            })
        })
        .collect::<CliResult<_>>()?;
    let body = Expansion {
        query: raw,
        method: set.method,
        words,
    };
    emit(outputs, &cfg, "concepts", &json_bytes(&body)?, None)
}

/// Digest of everything that shapes phase one, so a checkpoint is only
/// resumed by an equivalent run. Iteration counts and output-only settings
/// are left out.
fn config_digest(cfg: &RunConfig, inputs: &[output::FileRecord]) -> CliResult<String> {
    let mut fit = cfg.fit.clone();
    fit.iters1 = 0;
    fit.iters2 = 0;
    fit.top_words = 0;
    fit.full_posterior = false;
    fit.check_invariants = false;
    fit.execution = Execution::default();
    let digests: Vec<&str> = inputs.iter().map(|r| r.sha256.as_str()).collect();
    let doc = serde_json::json!({ "fit": fit, "preprocessing": cfg.preprocessing, "inputs": digests });
    Ok(sha256_hex(serde_json::to_string(&doc)?.as_bytes()))
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    apply_queries(&mut cfg, &a.query)?;
    apply_expansion(&mut cfg, &a.expansion);
    let f = &mut cfg.fit;
    set(&mut f.iters1, a.iters1);
    set(&mut f.iters2, a.iters2);
    set(&mut f.seed, a.seed);
    set(&mut f.top_words, a.top_words);
    let h = &mut f.hyper;
    set(&mut h.alpha, a.alpha);
    set(&mut h.beta, a.beta);
    set(&mut h.gamma, a.gamma);
    set(&mut h.initial_topics, a.k);
    set(&mut h.initial_subtopics, a.k2);
    set(&mut h.u, a.u);
    set(&mut h.tau, a.tau);
    set(&mut h.representative_words, a.m);
    set(&mut h.prevalence_floor, a.floor);
    if a.no_gpu {
        f.gpu.enabled = false;
    }
    if a.no_word_filter {
        f.gpu.word_filtering = false;
    }
    if a.full_posterior {
        f.full_posterior = true;
    }
    if a.check_invariants {
        f.check_invariants = true;
    }
    if let Some(path) = &a.checkpoint {
        let prev = cfg.checkpoint.take();
        cfg.checkpoint = Some(CheckpointConfig {
            path: path.clone(),
            every: prev.as_ref().map_or(50, |c| c.every),
            resume: prev.is_some_and(|c| c.resume),
        });
    }
    if let Some(c) = cfg.checkpoint.as_mut() {
        set(&mut c.every, a.checkpoint_every);
        if a.resume {
            c.resume = true;
        }
    } else if a.resume || a.checkpoint_every.is_some() {
        return Err(CliError::validation("--resume and --checkpoint-every need --checkpoint"));
    }

    // Pre-flight: every check that needs no computation.
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::validation("fit needs --out"))?;
    let emb_path = optional_file(&cfg.embeddings, "embeddings")?;
    cfg.fit.validate(emb_path.is_some())?;
    require_file(&cfg.corpus, "corpus")?;
    init_threads(&cfg)?;

    let mut outputs = Outputs::new("fit");
    let corpus = load_corpus(&cfg, &mut outputs)?;
    let table = load_table(emb_path.as_deref(), &corpus, &mut outputs)?;
    let plan = match &cfg.checkpoint {
        Some(c) => Some(CheckpointPlan {
            path: c.path.clone(),
            every: c.every,
            config_digest: config_digest(&cfg, outputs.inputs())?,
            resume: c.resume,
        }),
        None => None,
    };
    let fitted = fit_detailed(&corpus, table.as_ref(), &cfg.fit, plan.as_ref(), |r| {
        if r.iteration % 100 == 0 {
            log::info!("phase one: iteration {}", r.iteration);
        }
        Ok(())
    })?;
    let mut text = fitted.result.to_json()?;
    text.push('\n');
    outputs.write("result", &out, text.as_bytes())?;
    outputs.commit(&manifest_path(&out), &cfg, Some(cfg.fit.seed))
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    if a.result.is_some() {
        cfg.eval.result = a.result.clone();
    }
    if a.labels.is_some() {
        cfg.eval.labels = a.labels.clone();
    }
    if a.embeddings.is_some() {
        cfg.embeddings = a.embeddings.clone();
    }
    set(&mut cfg.eval.k, a.k);
    if cfg.eval.k < 1 {
        return Err(CliError::validation("k must be >= 1"));
    }
    let result_path = require_file(&cfg.eval.result, "result")?;
    let labels_path = optional_file(&cfg.eval.labels, "labels")?;
    let emb_path = optional_file(&cfg.embeddings, "embeddings")?;
    init_threads(&cfg)?;

    let mut outputs = Outputs::new("eval");
    outputs.input("result", &result_path)?;
    let result = FitResult::from_json(&fs::read_to_string(&result_path)?).map_err(|e| match e {
        qdtm::Error::Json(j) => CliError::validation(format!("result file {}: {j}", result_path.display())),
        e => e.into(),
    })?;
    let labels = match &labels_path {
        Some(p) => {
            outputs.input("labels", p)?;
            Some(Labels::parse(&fs::read_to_string(p)?)?)
        }
        None => None,
    };
    let corpus = load_corpus(&cfg, &mut outputs)?;
    let table = load_table(emb_path.as_deref(), &corpus, &mut outputs)?;
    let report = evaluate(&result, &corpus, table.as_ref(), labels.as_ref(), cfg.eval.k)?;
    emit(outputs, &cfg, "report", &json_bytes(&report)?, None)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let mut cfg = base_config(&a.common)?;
    let s = &mut cfg.synth;
    set(&mut s.seed, a.seed);
    set(&mut s.topics, a.topics);
    set(&mut s.vocab, a.vocab);
    set(&mut s.docs, a.docs);
    set(&mut s.planted_share, a.planted_share);
    set(&mut s.embedding_dim, a.embedding_dim);
    if a.sub_blocks {
        s.sub_blocks = true;
    }
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::validation("synth needs --out <directory>"))?;
    cfg.synth.validate()?;

    let syn = generate(&cfg.synth)?;
    let mut outputs = Outputs::new("synth");
    let mut docs = Vec::new();
    qdtm::corpus::write_jsonl(&syn.documents, &mut docs)?;
    outputs.write("corpus", &dir.join("corpus.jsonl"), &docs)?;
    outputs.write("truth", &dir.join("truth.json"), &json_bytes(&syn.truth)?)?;
    if !syn.embeddings.is_empty() {
        let mut emb = Vec::new();
        write_embeddings(&syn.embeddings, &mut emb)?;
        outputs.write("embeddings", &dir.join("embeddings.txt"), &emb)?;
    }
    outputs.commit(&dir.join("manifest.json"), &cfg, Some(cfg.synth.seed))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Expand(a) => cmd_expand(a),
        Command::Fit(a) => cmd_fit(*a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::validation(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
