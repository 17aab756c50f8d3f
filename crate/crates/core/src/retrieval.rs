//! Query-likelihood retrieval with AND/OR term constraints, and precision@K.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};

pub const DEFAULT_MU: f64 = 100.0;
pub const DEFAULT_CUTOFF: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every query term must occur in the document.
    And,
    /// At least one query term must occur.
    #[default]
    Or,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::And => "and",
            Mode::Or => "or",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Ok(Mode::And),
            "or" => Ok(Mode::Or),
            _ => Err(Error::param("mode", format!("expected `and` or `or`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub raw: String,
    /// In-vocabulary query tokens, in query order (repeats kept).
    pub terms: Vec<u32>,
    /// Query tokens that are not in the vocabulary; excluded from scoring.
    pub oov: Vec<String>,
    pub mode: Mode,
}

impl Query {
    /// Tokenizes `raw` with the corpus manifest. Stopwords never reach the
    /// vocabulary, so they end up in `oov`.
    pub fn parse(raw: &str, mode: Mode, corpus: &Corpus) -> Result<Query> {
        let mut terms = Vec::new();
        let mut oov = Vec::new();
        for tok in corpus.manifest.split(raw) {
            match corpus.vocabulary.id(&tok) {
                Some(id) => terms.push(id),
                None => oov.push(tok),
            }
        }
        if terms.is_empty() {
            return Err(Error::EmptyQuery(raw.to_string()));
        }
        if !oov.is_empty() {
            log::warn!("query `{raw}`: ignoring out-of-vocabulary terms {oov:?}");
        }
        Ok(Query {
            raw: raw.to_string(),
            terms,
            oov,
            mode,
        })
    }

    pub fn from_ids(terms: Vec<u32>, mode: Mode) -> Query {
        Query {
            raw: String::new(),
            terms,
            oov: Vec::new(),
            mode,
        }
    }

    fn distinct_terms(&self) -> Vec<u32> {
        let mut t = self.terms.clone();
        t.sort_unstable();
        t.dedup();
        t
    }

    fn admits(&self, doc: &Document, distinct: &[u32]) -> bool {
        let present = |w: &u32| doc.tokens.contains(w);
        match self.mode {
            Mode::And => distinct.iter().all(present),
            Mode::Or => distinct.iter().any(present),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc: usize,
    pub log_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub hits: Vec<Hit>,
    pub cutoff: usize,
    pub mode: Mode,
}

impl RetrievedSet {
    pub fn docs(&self) -> impl Iterator<Item = usize> + '_ {
        self.hits.iter().map(|h| h.doc)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Log query likelihood of `doc` under a Dirichlet-smoothed document language
/// model. `mu = 0` gives the maximum-likelihood estimate, and a missing term
/// then yields negative infinity.
pub fn query_likelihood(doc: &Document, query: &Query, mu: f64, vocab: &Vocabulary) -> Result<f64> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::param("mu", format!("smoothing mass must be finite and >= 0, got {mu}")));
    }
    if query.terms.is_empty() {
        return Err(Error::EmptyQuery(query.raw.clone()));
    }
    for &t in &query.terms {
        vocab.check(t)?;
    }
    Ok(log_likelihood_unchecked(doc, query, mu, vocab))
}

fn log_likelihood_unchecked(doc: &Document, query: &Query, mu: f64, vocab: &Vocabulary) -> f64 {
    let len = doc.len() as f64;
    query
        .terms
        .iter()
        .map(|&q| {
            let tf = doc.term_frequency(q) as f64;
            ((tf + mu * vocab.background_unchecked(q)) / (len + mu)).ln()
        })
        .sum()
}

/// Scores every document admitted by the query mode and returns the top
/// `cutoff` by descending score, ties broken by ascending document index.
pub fn retrieve(
    corpus: &Corpus,
    query: &Query,
    cutoff: usize,
    mu: f64,
    exec: Execution,
) -> Result<RetrievedSet> {
    if cutoff < 1 {
        return Err(Error::param("top", "retrieval cutoff must be >= 1"));
    }
    // Validates mu and term ids once.
    query_likelihood(&corpus.documents[0], query, mu, &corpus.vocabulary)?;
    let distinct = query.distinct_terms();
    let scored = map_slice(&corpus.documents, exec, |doc| {
        query
            .admits(doc, &distinct)
            .then(|| log_likelihood_unchecked(doc, query, mu, &corpus.vocabulary))
    });
    let mut hits: Vec<Hit> = scored
        .into_iter()
        .enumerate()
        .filter_map(|(doc, s)| s.map(|log_score| Hit { doc, log_score }))
        .collect();
    if hits.is_empty() {
        return Err(Error::EmptyRetrieval {
            mode: query.mode.to_string(),
        });
    }
    hits.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then(a.doc.cmp(&b.doc)));
    hits.truncate(cutoff);
    Ok(RetrievedSet {
        hits,
        cutoff,
        mode: query.mode,
    })
}

/// Fraction of the first `k` ranked documents that are relevant.
pub fn precision_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::param("k", "must be >= 1"));
    }
    if k > ranked.len() {
        return Err(Error::param(
            "k",
            format!("{k} exceeds ranking length {}", ranked.len()),
        ));
    }
    let hits = ranked[..k].iter().filter(|d| relevant.contains(d)).count();
    Ok(hits as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Preprocessing;

    fn corpus(docs: &[&[&str]]) -> Corpus {
        Corpus::from_tokenized(
            docs.iter()
                .enumerate()
                .map(|(i, d)| (format!("d{i}"), None, d.iter().map(|s| s.to_string()).collect()))
                .collect(),
            &Preprocessing::default(),
        )
        .unwrap()
    }

    fn q(c: &Corpus, words: &[&str], mode: Mode) -> Query {
        Query::from_ids(words.iter().map(|w| c.vocabulary.id(w).unwrap()).collect(), mode)
    }

    #[test]
    fn mle_single_term() {
        let c = corpus(&[&["aa", "bb", "aa"], &["cc"]]);
        let s = query_likelihood(&c.documents[0], &q(&c, &["aa"], Mode::Or), 0.0, &c.vocabulary).unwrap();
        assert!((s - (2.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn mle_product() {
        let c = corpus(&[&["aa", "bb", "aa"], &["cc"]]);
        let s = query_likelihood(&c.documents[0], &q(&c, &["aa", "bb"], Mode::Or), 0.0, &c.vocabulary)
            .unwrap();
        assert!((s - (2.0f64 / 9.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn absent_term_mle_and_smoothed() {
        // 10 corpus tokens, "cc" once: P_C(cc) = 0.1.
        let c = corpus(&[&["aa", "bb", "aa"], &["cc", "dd", "ee", "ff", "gg", "hh", "ii"]]);
        let query = q(&c, &["cc"], Mode::Or);
        let s0 = query_likelihood(&c.documents[0], &query, 0.0, &c.vocabulary).unwrap();
        assert_eq!(s0, f64::NEG_INFINITY);
        let s10 = query_likelihood(&c.documents[0], &query, 10.0, &c.vocabulary).unwrap();
        assert!((s10 - (1.0f64 / 13.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn negative_mu_rejected() {
        let c = corpus(&[&["aa"]]);
        let err = query_likelihood(&c.documents[0], &q(&c, &["aa"], Mode::Or), -1.0, &c.vocabulary);
        assert!(matches!(err, Err(Error::Parameter { name: "mu", .. })));
    }

    #[test]
    fn or_mode_returns_only_containing_docs() {
        let c = corpus(&[&["aa", "bb"], &["cc", "dd"], &["aa", "dd"]]);
        let r = retrieve(&c, &q(&c, &["aa"], Mode::Or), 10, DEFAULT_MU, Execution::Sequential).unwrap();
        let mut docs: Vec<_> = r.docs().collect();
        docs.sort();
        assert_eq!(docs, vec![0, 2]);
    }

    #[test]
    fn and_mode_requires_all_terms() {
        let c = corpus(&[&["aa", "cc"], &["aa", "bb"], &["bb", "dd"]]);
        let r = retrieve(&c, &q(&c, &["aa", "bb"], Mode::And), 10, DEFAULT_MU, Execution::Sequential)
            .unwrap();
        assert_eq!(r.docs().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn empty_filter_is_an_error() {
        let c = corpus(&[&["aa", "cc"], &["bb", "dd"]]);
        let err = retrieve(&c, &q(&c, &["aa", "bb"], Mode::And), 10, DEFAULT_MU, Execution::Sequential);
        assert!(matches!(err, Err(Error::EmptyRetrieval { mode }) if mode == "and"));
    }

    #[test]
    fn ties_break_by_index() {
        let c = corpus(&[&["aa", "bb"], &["aa", "bb"], &["aa", "bb"]]);
        let r = retrieve(&c, &q(&c, &["aa"], Mode::Or), 2, DEFAULT_MU, Execution::Sequential).unwrap();
        assert_eq!(r.docs().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn precision_examples() {
        let rel: HashSet<usize> = [1, 3].into_iter().collect();
        assert_eq!(precision_at_k(&[1, 2, 3, 4], &rel, 4).unwrap(), 0.5);
        let all: HashSet<usize> = [1, 2, 3, 4, 9].into_iter().collect();
        assert_eq!(precision_at_k(&[1, 2, 3, 4], &all, 3).unwrap(), 1.0);
        assert!(precision_at_k(&[1, 2], &rel, 3).is_err());
        assert!(precision_at_k(&[1, 2], &rel, 0).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("AND".parse::<Mode>().unwrap(), Mode::And);
        assert!("xor".parse::<Mode>().is_err());
    }
}
