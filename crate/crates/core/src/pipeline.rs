//! End-to-end fitting: expansion, constrained sampling, subtopic discovery.

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept::{expand, ConceptWordSet, ExpansionOptions, Method};
use crate::corpus::Corpus;
use crate::embeddings::{build_promotion, build_relatedness, EmbeddingTable, PromotionMatrix};
use crate::error::{Error, Result};
use crate::exec::{map_owned, Execution};
use crate::retrieval::{Mode, Query};
use crate::sampler::{
    extract_parent_subcorpus, initialize, run_phase2, Chain, Checkpoint, GpuSettings, Hyperparameters,
    Phase2Context, Phase2Outcome, Posterior, Promotion, SamplerState, ScopeVectors,
};

pub const RESULT_FORMAT: &str = "qdtm-result/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub queries: Vec<String>,
    pub mode: Mode,
    pub expansion: ExpansionOptions,
    pub hyper: Hyperparameters,
    pub gpu: GpuSettings,
    pub iters1: usize,
    pub iters2: usize,
    pub seed: u64,
    /// Words reported per topic.
    pub top_words: usize,
    /// Include every topic-word and document-topic distribution.
    pub full_posterior: bool,
    pub execution: Execution,
    /// Verify the constraint and all count invariants after every sweep.
    pub check_invariants: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            queries: Vec::new(),
            mode: Mode::default(),
            expansion: ExpansionOptions::default(),
            hyper: Hyperparameters::default(),
            gpu: GpuSettings::default(),
            iters1: 1000,
            iters2: 500,
            seed: 42,
            top_words: 25,
            full_posterior: false,
            execution: Execution::default(),
            check_invariants: false,
        }
    }
}

impl FitOptions {
    /// Checks everything that can be checked before any sampling.
    pub fn validate(&self, embeddings_available: bool) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::param("query", "at least one query is required"));
        }
        if self.queries.iter().any(|q| q.trim().is_empty()) {
            return Err(Error::param("query", "queries must not be blank"));
        }
        self.hyper.validate(self.queries.len())?;
        self.expansion.validate()?;
        if self.iters1 < 1 || self.iters2 < 1 {
            return Err(Error::param("iterations", "both phases need at least one iteration"));
        }
        if self.top_words < 1 {
            return Err(Error::param("top_words", "must be >= 1"));
        }
        if self.expansion.method == Method::Rel && !embeddings_available {
            return Err(Error::param("embeddings", "method `rel` requires an embeddings file"));
        }
        Ok(())
    }
}

/// Where and how often phase one is checkpointed.
#[derive(Clone, Debug)]
pub struct CheckpointPlan {
    pub path: PathBuf,
    /// Save after every `every` iterations; 0 only saves at the end.
    pub every: usize,
    pub config_digest: String,
    /// Continue from the file at `path` if it exists.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: u32,
    pub tokens: u64,
    pub prevalence: f64,
    pub top_words: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub concept_words: Vec<(String, f64)>,
    pub parent: TopicSummary,
    pub subtopics: Vec<TopicSummary>,
    /// Subtopics dropped under the prevalence floor.
    pub pruned: usize,
    /// True when every subtopic was pruned and the parent is reported.
    pub fallback: bool,
    /// Share of each document's mass under the parent topic, by document
    /// index.
    pub document_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullPosterior {
    pub topics: Vec<u32>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub seed: u64,
    pub iters1: usize,
    pub iters2: usize,
    pub mode: Mode,
    pub expansion: ExpansionOptions,
    pub hyper: Hyperparameters,
    /// GPU settings actually applied; promotion is off without embeddings.
    pub gpu: GpuSettings,
    pub documents: usize,
    pub vocabulary: usize,
    pub tokens: u64,
    pub live_topics: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub format: String,
    pub metadata: RunMetadata,
    pub queries: Vec<QueryResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior: Option<FullPosterior>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<FitResult> {
        let r: FitResult = serde_json::from_str(s)?;
        if r.format != RESULT_FORMAT {
            return Err(Error::FormatTag {
                expected: RESULT_FORMAT,
                found: r.format,
            });
        }
        Ok(r)
    }
}

/// Per-sweep report passed to the phase-one observer.
pub struct SweepReport<'a> {
    pub iteration: usize,
    pub state: &'a SamplerState,
}

/// Everything produced by [`fit_detailed`]; the serializable summary plus
/// the raw phase-one state for inspection.
pub struct FitOutput {
    pub result: FitResult,
    pub concepts: Vec<ConceptWordSet>,
    pub phase1: SamplerState,
    pub phase1_posterior: Posterior,
    /// One outcome per query, in query order.
    pub phase2: Vec<Phase2Outcome>,
}

pub fn fit(corpus: &Corpus, embeddings: Option<&EmbeddingTable>, opts: &FitOptions) -> Result<FitResult> {
    fit_detailed(corpus, embeddings, opts, None, |_| Ok(())).map(|o| o.result)
}

fn words(corpus: &Corpus, ids: &[(u32, f64)]) -> Result<Vec<(String, f64)>> {
    ids.iter()
        .map(|&(w, p)| Ok((corpus.vocabulary.token(w)?.to_string(), p)))
        .collect()
}

/// Runs the full model. `observer` sees the phase-one state after every
/// sweep; an error from it aborts the run.
pub fn fit_detailed<F>(
    corpus: &Corpus,
    embeddings: Option<&EmbeddingTable>,
    opts: &FitOptions,
    checkpoint: Option<&CheckpointPlan>,
    mut observer: F,
) -> Result<FitOutput>
where
    F: FnMut(SweepReport) -> Result<()>,
{
    opts.validate(embeddings.is_some())?;
    let exec = opts.execution;
    let hyper = &opts.hyper;
    let vocab = corpus.vocabulary.len();

    let queries: Vec<Query> = opts
        .queries
        .iter()
        .map(|q| Query::parse(q, opts.mode, corpus))
        .collect::<Result<_>>()?;
    let concepts: Vec<ConceptWordSet> = queries
        .iter()
        .map(|q| expand(corpus, q, &opts.expansion, embeddings, exec))
        .collect::<Result<_>>()?;
    for c in &concepts {
        if c.is_empty() {
            log::warn!("query `{}` produced no concept words", c.query);
        }
    }
    let concept_ids: Vec<Vec<u32>> = concepts.iter().map(ConceptWordSet::tokens).collect();

    let gpu = match (opts.gpu.enabled, embeddings) {
        (true, None) => {
            log::warn!("no embeddings supplied; GPU promotion disabled");
            GpuSettings::disabled()
        }
        _ => opts.gpu,
    };
    let (matrix, vectors): (Option<PromotionMatrix>, Option<Arc<ScopeVectors>>) = match (gpu.enabled, embeddings) {
        (true, Some(table)) => {
            let mut all: Vec<u32> = concept_ids.iter().flatten().copied().collect();
            all.sort_unstable();
            all.dedup();
            let rel = build_relatedness(table, &all, hyper.tau, exec);
            let a = build_promotion(&rel, hyper.u, vocab)?;
            (Some(a), Some(Arc::new(ScopeVectors::new(table, None))))
        }
        _ => (None, None),
    };
    let promotion = matrix.as_ref().map(|a| Arc::new(Promotion::from_matrix(a, None)));

    let docs: Vec<Vec<u32>> = corpus.documents.iter().map(|d| d.tokens.clone()).collect();
    let density = 1.0 / vocab as f64;
    let hyper3 = (hyper.alpha, hyper.beta, hyper.gamma);

    let resume = checkpoint
        .filter(|p| p.resume && p.path.exists())
        .map(|p| -> Result<Checkpoint> {
            let c = Checkpoint::load(&p.path)?;
            c.verify(&p.config_digest)?;
            Ok(c)
        })
        .transpose()?;
    let mut chain = match resume {
        Some(cp) => {
            let blank = SamplerState::new(docs, vocab, density, hyper3, concept_ids, promotion);
            let mut c = Chain::new(
                cp.restore_state(&blank)?,
                cp.rng()?,
                vectors,
                gpu,
                hyper.representative_words,
                exec,
            );
            c.set_iterations(cp.iteration);
            log::info!("resumed phase one at iteration {}", cp.iteration);
            c
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let state = initialize(docs, vocab, density, hyper3, hyper.initial_topics, concept_ids, promotion, &mut rng)?;
            Chain::new(state, rng, vectors, gpu, hyper.representative_words, exec)
        }
    };

    while chain.iterations() < opts.iters1 {
        chain.iterate();
        let it = chain.iterations();
        if opts.check_invariants {
            let v = chain.state().constraint_violations();
            if v > 0 {
                return Err(Error::Invariant(format!("{v} pinned tokens off their parent after sweep {it}")));
            }
            chain
                .state()
                .check_invariants()
                .map_err(|m| Error::Invariant(format!("after sweep {it}: {m}")))?;
        }
        observer(SweepReport {
            iteration: it,
            state: chain.state(),
        })?;
        if let Some(p) = checkpoint {
            if (p.every > 0 && it % p.every == 0) || it == opts.iters1 {
                Checkpoint::capture(&chain, &p.config_digest).save(&p.path)?;
            }
        }
        if it % 100 == 0 {
            log::debug!("phase one iteration {it}, {} live topics", chain.state().live_topics().len());
        }
    }
    let state = chain.into_state();
    let post = Posterior::from_state(&state);
    let total_tokens = corpus.vocabulary.total_tokens();

    let ctx = Phase2Context {
        hyper,
        promotion: matrix.as_ref(),
        embeddings,
        gpu,
        iterations: opts.iters2,
        corpus_tokens: total_tokens,
        exec,
    };
    let parents: Vec<u32> = (0..queries.len() as u32).collect();
    let outcomes: Vec<Phase2Outcome> = map_owned(parents, exec, |q| {
        let sub = extract_parent_subcorpus(&state, q)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(q as u64 + 1);
        run_phase2(&sub, &ctx, rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(queries.len());
    for (q, outcome) in outcomes.iter().enumerate() {
        let parent = q as u32;
        let tokens = state.topic_tokens(parent);
        let mut subtopics = Vec::with_capacity(outcome.kept.len());
        for s in &outcome.kept {
            subtopics.push(TopicSummary {
                topic: s.topic,
                tokens: s.tokens,
                prevalence: s.prevalence,
                top_words: words(corpus, &s.top_words(opts.top_words))?,
            });
        }
        results.push(QueryResult {
            query: opts.queries[q].clone(),
            concept_words: concepts[q]
                .words
                .iter()
                .map(|s| Ok((corpus.vocabulary.token(s.token)?.to_string(), s.score)))
                .collect::<Result<_>>()?,
            parent: TopicSummary {
                topic: parent,
                tokens,
                prevalence: tokens as f64 / total_tokens.max(1) as f64,
                top_words: words(corpus, &post.top_words(parent, opts.top_words))?,
            },
            subtopics,
            pruned: outcome.pruned.len(),
            fallback: outcome.fallback,
            document_scores: post.theta_column(parent).unwrap_or_default(),
        });
    }

    let result = FitResult {
        format: RESULT_FORMAT.to_string(),
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: opts.seed,
            iters1: opts.iters1,
            iters2: opts.iters2,
            mode: opts.mode,
            expansion: opts.expansion.clone(),
            hyper: hyper.clone(),
            gpu,
            documents: corpus.len(),
            vocabulary: vocab,
            tokens: total_tokens,
            live_topics: post.topics.len(),
        },
        queries: results,
        posterior: opts.full_posterior.then(|| FullPosterior {
            topics: post.topics.clone(),
            phi: post.phi.clone(),
            theta: post.theta.clone(),
        }),
    };
    Ok(FitOutput {
        result,
        concepts,
        phase1: state,
        phase1_posterior: post,
        phase2: outcomes,
    })
}

/// Document indices ranked by descending score, ties by index.
pub fn rank_documents(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}
