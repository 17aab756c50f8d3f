//! Query expansion into concept words.
//!
//! Three scorers rank vocabulary words against the documents retrieved for a
//! query: raw frequency in the retrieved set (FRE), the pointwise KL term
//! between retrieved-set and corpus distributions (KLD), and a relevance
//! model mixed with embedding similarity to the query (REL).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::retrieval::{self, Query, RetrievedSet};

pub const DEFAULT_CONCEPTS: usize = 10;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_TOPK: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fre,
    #[default]
    Kld,
    Rel,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fre => "fre",
            Method::Kld => "kld",
            Method::Rel => "rel",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fre" => Ok(Method::Fre),
            "kld" => Ok(Method::Kld),
            "rel" => Ok(Method::Rel),
            _ => Err(Error::param("method", format!("expected fre, kld or rel, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredWord {
    pub token: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptWordSet {
    pub query: String,
    pub method: Method,
    /// Descending by score, ties by ascending token id.
    pub words: Vec<ScoredWord>,
}

impl ConceptWordSet {
    pub fn tokens(&self) -> Vec<u32> {
        self.words.iter().map(|w| w.token).collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionOptions {
    pub method: Method,
    pub n: usize,
    pub lambda: f64,
    pub topk: usize,
    pub exclude_query_terms: bool,
    pub cutoff: usize,
    pub mu: f64,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        ExpansionOptions {
            method: Method::Kld,
            n: DEFAULT_CONCEPTS,
            lambda: DEFAULT_LAMBDA,
            topk: DEFAULT_TOPK,
            exclude_query_terms: false,
            cutoff: retrieval::DEFAULT_CUTOFF,
            mu: retrieval::DEFAULT_MU,
        }
    }
}

impl ExpansionOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::param("n", "concept word count must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda", format!("must lie in [0,1], got {}", self.lambda)));
        }
        if self.topk < 1 {
            return Err(Error::param("topk", "must be >= 1"));
        }
        if self.cutoff < 1 {
            return Err(Error::param("top", "retrieval cutoff must be >= 1"));
        }
        if self.mu.is_nan() || self.mu < 0.0 {
            return Err(Error::param("mu", "must be >= 0"));
        }
        Ok(())
    }
}

/// Token statistics of the retrieved sub-corpus and the relevance model over
/// it.
#[derive(Clone, Debug)]
pub struct RetrievedStats {
    counts: Vec<u64>,
    total: u64,
    relevance: Vec<f64>,
}

impl RetrievedStats {
    pub fn new(corpus: &Corpus, retrieved: &RetrievedSet) -> Result<RetrievedStats> {
        if retrieved.is_empty() {
            return Err(Error::param("retrieved", "retrieved set is empty"));
        }
        let weights = doc_weights(retrieved)?;
        let mut counts = vec![0u64; corpus.vocabulary.len()];
        let mut relevance = vec![0.0; corpus.vocabulary.len()];
        let mut total = 0;
        for (hit, wd) in retrieved.hits.iter().zip(&weights) {
            let doc = &corpus.documents[hit.doc];
            let len = doc.len() as f64;
            total += doc.len() as u64;
            for (w, c) in doc.bag() {
                counts[w as usize] += c as u64;
                relevance[w as usize] += wd * c as f64 / len;
            }
        }
        Ok(RetrievedStats {
            counts,
            total,
            relevance,
        })
    }

    pub fn frequency(&self, w: u32) -> f64 {
        self.counts[w as usize] as f64
    }

    pub fn retrieved_prob(&self, w: u32) -> f64 {
        self.counts[w as usize] as f64 / self.total as f64
    }

    pub fn relevance(&self, w: u32) -> f64 {
        self.relevance[w as usize]
    }

    pub fn kld(&self, w: u32, corpus: &Corpus) -> f64 {
        let pr = self.retrieved_prob(w);
        if pr == 0.0 {
            return 0.0;
        }
        let pc = corpus.vocabulary.background_unchecked(w);
        debug_assert!(pc > 0.0, "retrieved word {w} has zero corpus probability");
        pr * (pr / pc).ln()
    }
}

/// Query likelihoods of the retrieved documents, renormalized to sum to one.
pub fn doc_weights(retrieved: &RetrievedSet) -> Result<Vec<f64>> {
    let max = retrieved
        .hits
        .iter()
        .map(|h| h.log_score)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let raw: Vec<f64> = retrieved.hits.iter().map(|h| (h.log_score - max).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / z).collect())
}

pub fn score_fre(w: u32, corpus: &Corpus, retrieved: &RetrievedSet) -> Result<f64> {
    corpus.vocabulary.check(w)?;
    Ok(RetrievedStats::new(corpus, retrieved)?.frequency(w))
}

pub fn score_kld(w: u32, corpus: &Corpus, retrieved: &RetrievedSet) -> Result<f64> {
    corpus.vocabulary.check(w)?;
    Ok(RetrievedStats::new(corpus, retrieved)?.kld(w, corpus))
}

pub fn relevance_model_prob(w: u32, corpus: &Corpus, retrieved: &RetrievedSet) -> Result<f64> {
    corpus.vocabulary.check(w)?;
    Ok(RetrievedStats::new(corpus, retrieved)?.relevance(w))
}

/// Embedding similarity of every vocabulary word to a query, kept for the
/// `k` most similar words and renormalized over them; zero elsewhere.
#[derive(Clone, Debug)]
pub struct QuerySimilarity {
    sim: Vec<f64>,
}

impl QuerySimilarity {
    /// `None` when no query term has an embedding. The query vector is the
    /// mean of the query terms' vectors.
    pub fn new(query: &Query, table: &EmbeddingTable, k: usize, exec: Execution) -> Option<Self> {
        let dim = table.dim();
        let mut qv = vec![0.0; dim];
        let mut n = 0usize;
        for &t in &query.terms {
            if let Some(v) = table.vector(t) {
                qv.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        qv.iter_mut().for_each(|a| *a /= n as f64);
        let qnorm = qv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if qnorm == 0.0 {
            return None;
        }
        let raw = map_range(table.vocab_len(), exec, |w| {
            table.unit(w as u32).map(|u| {
                u.iter().zip(&qv).map(|(a, b)| a * b).sum::<f64>() / qnorm
            })
        });
        let mut ranked: Vec<(u32, f64)> = raw
            .iter()
            .enumerate()
            .filter_map(|(w, s)| s.map(|s| (w as u32, s)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        // Negative similarities carry no weight.
        let z: f64 = ranked.iter().map(|(_, s)| s.max(0.0)).sum();
        let mut sim = vec![0.0; table.vocab_len()];
        if z > 0.0 {
            for (w, s) in ranked {
                sim[w as usize] = s.max(0.0) / z;
            }
        }
        Some(QuerySimilarity { sim })
    }

    pub fn get(&self, w: u32) -> f64 {
        self.sim[w as usize]
    }
}

/// `lambda * p(w|RM) + (1 - lambda) * sim(w, q)`.
pub fn score_rel(
    w: u32,
    query: &Query,
    corpus: &Corpus,
    retrieved: &RetrievedSet,
    table: Option<&EmbeddingTable>,
    lambda: f64,
    k: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("must lie in [0,1], got {lambda}")));
    }
    corpus.vocabulary.check(w)?;
    let stats = RetrievedStats::new(corpus, retrieved)?;
    let sim = table.and_then(|t| QuerySimilarity::new(query, t, k, Execution::Sequential));
    Ok(rel_mix(stats.relevance(w), sim.as_ref().map(|s| s.get(w)), lambda))
}

fn rel_mix(rm: f64, sim: Option<f64>, lambda: f64) -> f64 {
    match sim {
        Some(s) => lambda * rm + (1.0 - lambda) * s,
        None => rm,
    }
}

/// Ranks the whole vocabulary with the chosen scorer and keeps the top `n`
/// positively scored words.
pub fn extract_concept_words(
    corpus: &Corpus,
    query: &Query,
    retrieved: &RetrievedSet,
    opts: &ExpansionOptions,
    table: Option<&EmbeddingTable>,
    exec: Execution,
) -> Result<ConceptWordSet> {
    opts.validate()?;
    let stats = RetrievedStats::new(corpus, retrieved)?;
    let sim = match opts.method {
        Method::Rel => {
            let s = table.and_then(|t| QuerySimilarity::new(query, t, opts.topk, exec));
            if s.is_none() && opts.lambda < 1.0 {
                log::warn!(
                    "query `{}` has no embedding; REL falls back to the relevance model alone",
                    query.raw
                );
            }
            s
        }
        _ => None,
    };
    let scores = map_range(corpus.vocabulary.len(), exec, |w| {
        let w = w as u32;
        match opts.method {
            Method::Fre => stats.frequency(w),
            Method::Kld => stats.kld(w, corpus),
            Method::Rel => rel_mix(stats.relevance(w), sim.as_ref().map(|s| s.get(w)), opts.lambda),
        }
    });
    let mut ranked: Vec<ScoredWord> = scores
        .into_iter()
        .enumerate()
        .map(|(w, score)| ScoredWord {
            token: w as u32,
            score,
        })
        .filter(|s| s.score > 0.0)
        .filter(|s| !(opts.exclude_query_terms && query.terms.contains(&s.token)))
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.token.cmp(&b.token)));
    if ranked.len() < opts.n {
        log::warn!(
            "query `{}`: only {} words score positively under {}; requested {}",
            query.raw,
            ranked.len(),
            opts.method,
            opts.n
        );
    }
    ranked.truncate(opts.n);
    Ok(ConceptWordSet {
        query: query.raw.clone(),
        method: opts.method,
        words: ranked,
    })
}

/// Retrieval followed by extraction.
pub fn expand(
    corpus: &Corpus,
    query: &Query,
    opts: &ExpansionOptions,
    table: Option<&EmbeddingTable>,
    exec: Execution,
) -> Result<ConceptWordSet> {
    opts.validate()?;
    let retrieved = retrieval::retrieve(corpus, query, opts.cutoff, opts.mu, exec)?;
    extract_concept_words(corpus, query, &retrieved, opts, table, exec)
}
