//! Independent oracles and fixtures shared by the integration tests. Nothing
//! here calls the scoring or weight code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use qdtm::concept::Method;
use qdtm::corpus::{Corpus, Preprocessing, Stopwords};
use qdtm::embeddings::EmbeddingTable;
use qdtm::retrieval::{Query, RetrievedSet};
use qdtm::sampler::SamplerState;
use qdtm::synth::{generate, Synthetic, SyntheticSpec};
use rand::Rng;

pub fn plain_manifest() -> Preprocessing {
    Preprocessing {
        stopwords: Stopwords::None,
        ..Preprocessing::default()
    }
}

pub fn synthetic(spec: &SyntheticSpec) -> (Synthetic, Corpus, EmbeddingTable) {
    let s = generate(spec).unwrap();
    let corpus = Corpus::ingest(&s.documents, &plain_manifest()).unwrap();
    let table = EmbeddingTable::from_vectors(
        &corpus.vocabulary,
        s.embeddings.iter().map(|(w, v)| (w.as_str(), v.clone())),
    )
    .unwrap();
    (s, corpus, table)
}

pub fn tiny_corpus(docs: &[&[&str]]) -> Corpus {
    Corpus::from_tokenized(
        docs.iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), None, d.iter().map(|s| s.to_string()).collect()))
            .collect(),
        &plain_manifest(),
    )
    .unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------------------
// Concept scorers by direct scans over the token lists.

fn tf(doc: &[u32], w: u32) -> f64 {
    doc.iter().filter(|&&t| t == w).count() as f64
}

/// Score of every vocabulary id under `method`.
pub fn oracle_scores(
    method: Method,
    corpus: &Corpus,
    query: &Query,
    retrieved: &RetrievedSet,
    table: &EmbeddingTable,
    lambda: f64,
    topk: usize,
) -> Vec<f64> {
    let v = corpus.vocabulary.len();
    let docs: Vec<&[u32]> = corpus.documents.iter().map(|d| d.tokens.as_slice()).collect();
    let r_docs: Vec<usize> = retrieved.hits.iter().map(|h| h.doc).collect();
    let corpus_total: f64 = docs.iter().map(|d| d.len() as f64).sum();
    let r_total: f64 = r_docs.iter().map(|&j| docs[j].len() as f64).sum();
    let corpus_count = |w: u32| docs.iter().map(|d| tf(d, w)).sum::<f64>();
    match method {
        Method::Fre => (0..v as u32).map(|w| r_docs.iter().map(|&j| tf(docs[j], w)).sum()).collect(),
        Method::Kld => (0..v as u32)
            .map(|w| {
                let pr = r_docs.iter().map(|&j| tf(docs[j], w)).sum::<f64>() / r_total;
                if pr == 0.0 {
                    0.0
                } else {
                    pr * (pr / (corpus_count(w) / corpus_total)).ln()
                }
            })
            .collect(),
        Method::Rel => {
            let mu = 100.0;
            let loglik: Vec<f64> = r_docs
                .iter()
                .map(|&j| {
                    query
                        .terms
                        .iter()
                        .map(|&q| ((tf(docs[j], q) + mu * corpus_count(q) / corpus_total) / (docs[j].len() as f64 + mu)).ln())
                        .sum()
                })
                .collect();
            let top = loglik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = loglik.iter().map(|l| (l - top).exp()).sum();
            let weights: Vec<f64> = loglik.iter().map(|l| (l - top).exp() / z).collect();
            let rm: Vec<f64> = (0..v as u32)
                .map(|w| {
                    r_docs
                        .iter()
                        .zip(&weights)
                        .map(|(&j, p)| p * tf(docs[j], w) / docs[j].len() as f64)
                        .sum()
                })
                .collect();
            // Mean query vector, cosine to every embedded word, top-k kept,
            // positive part renormalized.
            let qvecs: Vec<&[f64]> = query.terms.iter().filter_map(|&t| table.vector(t)).collect();
            let mut sim = vec![0.0; v];
            if !qvecs.is_empty() {
                let dim = qvecs[0].len();
                let qv: Vec<f64> = (0..dim).map(|i| qvecs.iter().map(|x| x[i]).sum::<f64>() / qvecs.len() as f64).collect();
                let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let mut cos: Vec<(u32, f64)> = (0..v as u32)
                    .filter_map(|w| {
                        table.vector(w).map(|x| (w, x.iter().zip(&qv).map(|(a, b)| a * b).sum::<f64>() / (norm(x) * norm(&qv))))
                    })
                    .collect();
                cos.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                cos.truncate(topk);
                let z: f64 = cos.iter().map(|c| c.1.max(0.0)).sum();
                if z > 0.0 {
                    for (w, c) in cos {
                        sim[w as usize] = c.max(0.0) / z;
                    }
                }
                (0..v).map(|w| lambda * rm[w] + (1.0 - lambda) * sim[w]).collect()
            } else {
                rm
            }
        }
    }
}

/// Positive scores only, descending, ties by id.
pub fn oracle_ranking(scores: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).filter(|&w| scores[w as usize] > 0.0).collect();
    ids.sort_by(|&a, &b| scores[b as usize].partial_cmp(&scores[a as usize]).unwrap().then(a.cmp(&b)));
    ids
}

// ---------------------------------------------------------------------------
// Frozen sampler states and a straight-line weight calculator.

/// A sampler state given entirely by its seating, plus the token under
/// consideration (already removed).
#[derive(Clone, Debug)]
pub struct MicroState {
    pub vocab: usize,
    pub docs: Vec<Vec<u32>>,
    pub seating: Vec<Vec<u32>>,
    pub table_topics: Vec<Vec<Option<u32>>>,
    pub concepts: Vec<Vec<u32>>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub density: f64,
    pub doc: usize,
    pub word: u32,
}

impl MicroState {
    pub fn build(&self) -> SamplerState {
        SamplerState::from_assignments(
            self.docs.clone(),
            self.vocab,
            self.density,
            (self.alpha, self.beta, self.gamma),
            self.concepts.clone(),
            None,
            &self.seating,
            &self.table_topics,
            None,
        )
        .unwrap()
    }

    fn owner(&self, w: u32) -> Option<u32> {
        self.concepts.iter().position(|c| c.contains(&w)).map(|q| q as u32)
    }

    /// Customers per (doc, slot).
    fn customers(&self) -> Vec<BTreeMap<u32, usize>> {
        self.seating
            .iter()
            .map(|s| {
                let mut m = BTreeMap::new();
                for &t in s {
                    *m.entry(t).or_default() += 1;
                }
                m
            })
            .collect()
    }

    /// Topics with at least one occupied table, plus every parent.
    fn live(&self) -> BTreeSet<u32> {
        let mut set: BTreeSet<u32> = (0..self.concepts.len() as u32).collect();
        for (j, c) in self.customers().iter().enumerate() {
            for &t in c.keys() {
                set.insert(self.table_topics[j][t as usize].unwrap());
            }
        }
        set
    }

    fn tables_per_topic(&self) -> BTreeMap<u32, f64> {
        let mut m = BTreeMap::new();
        for (j, c) in self.customers().iter().enumerate() {
            for &t in c.keys() {
                *m.entry(self.table_topics[j][t as usize].unwrap()).or_insert(0.0) += 1.0;
            }
        }
        m
    }

    fn f(&self, k: u32, w: u32) -> f64 {
        let (mut nkw, mut nk) = (0.0, 0.0);
        for j in 0..self.docs.len() {
            for (i, &x) in self.docs[j].iter().enumerate() {
                if self.table_topics[j][self.seating[j][i] as usize] == Some(k) {
                    nk += 1.0;
                    if x == w {
                        nkw += 1.0;
                    }
                }
            }
        }
        (nkw + self.beta) / (nk + self.vocab as f64 * self.beta)
    }
}

/// `(slot, weight)` for occupied tables of `doc`, and the new-table weight.
pub fn oracle_table_weights(m: &MicroState, doc: usize, w: u32) -> (Vec<(u32, f64)>, f64) {
    let owner = m.owner(w);
    let cust = &m.customers()[doc];
    let existing = cust
        .iter()
        .map(|(&t, &n)| {
            let k = m.table_topics[doc][t as usize].unwrap();
            let ok = owner.is_none_or(|p| p == k);
            (t, if ok { n as f64 * m.f(k, w) } else { 0.0 })
        })
        .collect();
    let mk = m.tables_per_topic();
    let total_tables: f64 = mk.values().sum();
    let mix: f64 = m.live().iter().map(|&k| mk.get(&k).copied().unwrap_or(0.0) * m.f(k, w)).sum();
    (existing, m.alpha * (mix + m.gamma * m.density) / (total_tables + m.gamma))
}

/// `(topic, weight)` for live topics, and the new-topic weight.
pub fn oracle_topic_weights(m: &MicroState, w: u32) -> (Vec<(u32, f64)>, f64) {
    let owner = m.owner(w);
    let mk = m.tables_per_topic();
    let existing = m
        .live()
        .iter()
        .map(|&k| {
            let ok = owner.is_none_or(|p| p == k);
            (k, if ok { mk.get(&k).copied().unwrap_or(0.0) * m.f(k, w) } else { 0.0 })
        })
        .collect();
    (existing, if owner.is_some() { 0.0 } else { m.gamma * m.density })
}

/// Micro-states for the frequency checks: three under a concept constraint
/// and two unconstrained subtopic states with density `1/|W|`.
pub fn micro_states() -> Vec<MicroState> {
    let constrained = MicroState {
        vocab: 6,
        docs: vec![vec![0, 1, 2, 2], vec![3, 1, 0]],
        seating: vec![vec![0, 1, 1, 2], vec![0, 0, 1]],
        table_topics: vec![vec![Some(0), Some(1), Some(2)], vec![Some(1), Some(0)]],
        concepts: vec![vec![0, 4]],
        alpha: 1.0,
        beta: 0.5,
        gamma: 1.5,
        density: 1.0 / 6.0,
        doc: 0,
        word: 1,
    };
    let sub = MicroState {
        vocab: 4,
        docs: vec![vec![0, 1, 1], vec![2, 3, 0]],
        seating: vec![vec![0, 1, 1], vec![0, 0, 1]],
        table_topics: vec![vec![Some(0), Some(1)], vec![Some(2), Some(0)]],
        concepts: vec![],
        alpha: 1.0,
        beta: 0.5,
        gamma: 1.5,
        density: 0.25,
        doc: 0,
        word: 1,
    };
    vec![
        constrained.clone(),
        // A pinned word: only the parent's table and topic remain.
        MicroState { word: 0, ..constrained.clone() },
        // A pinned word in a document without a parent table.
        MicroState {
            doc: 1,
            word: 4,
            seating: vec![vec![0, 1, 1, 2], vec![0, 0, 0]],
            table_topics: vec![vec![Some(0), Some(1), Some(2)], vec![Some(1)]],
            ..constrained
        },
        sub.clone(),
        MicroState {
            doc: 1,
            word: 3,
            alpha: 2.0,
            gamma: 0.7,
            ..sub
        },
    ]
}

/// A random unconstrained state with at most three tables per document and
/// three topics.
pub fn random_plain_state<R: Rng>(rng: &mut R) -> MicroState {
    let vocab = rng.random_range(3..9);
    let n_docs = rng.random_range(2..5);
    let mut docs = Vec::new();
    let mut seating = Vec::new();
    let mut table_topics = Vec::new();
    for _ in 0..n_docs {
        let len = rng.random_range(1..7);
        let n_tables = rng.random_range(1..4u32);
        let topics: Vec<u32> = (0..n_tables).map(|_| rng.random_range(0..3)).collect();
        let d: Vec<u32> = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
        let s: Vec<u32> = (0..len).map(|_| rng.random_range(0..n_tables)).collect();
        let tt = (0..n_tables)
            .map(|t| s.contains(&t).then_some(topics[t as usize]))
            .collect();
        docs.push(d);
        seating.push(s);
        table_topics.push(tt);
    }
    MicroState {
        vocab,
        docs,
        seating,
        table_topics,
        concepts: vec![],
        alpha: rng.random_range(0.1..3.0),
        beta: rng.random_range(0.01..1.0),
        gamma: rng.random_range(0.1..3.0),
        density: 1.0 / vocab as f64,
        doc: 0,
        word: 0,
    }
}

/// Textbook Chinese restaurant franchise: table `t` weighs `n_jt f_k(w)`,
/// a new table `alpha (sum_k m_k f_k(w) + gamma / V) / (m + gamma)`.
pub fn plain_crf_table_weights(m: &MicroState, doc: usize, w: u32) -> (Vec<(u32, f64)>, f64) {
    let mut n_jt: BTreeMap<u32, f64> = BTreeMap::new();
    for &t in &m.seating[doc] {
        *n_jt.entry(t).or_insert(0.0) += 1.0;
    }
    let mut m_k: BTreeMap<u32, f64> = BTreeMap::new();
    for j in 0..m.docs.len() {
        let used: BTreeSet<u32> = m.seating[j].iter().copied().collect();
        for t in used {
            *m_k.entry(m.table_topics[j][t as usize].unwrap()).or_insert(0.0) += 1.0;
        }
    }
    let m_dot: f64 = m_k.values().sum();
    let existing = n_jt
        .iter()
        .map(|(&t, &n)| (t, n * m.f(m.table_topics[doc][t as usize].unwrap(), w)))
        .collect();
    let mix: f64 = m_k.iter().map(|(&k, &c)| c * m.f(k, w)).sum();
    (existing, m.alpha * (mix + m.gamma / m.vocab as f64) / (m_dot + m.gamma))
}

/// Topic `k` weighs `m_k f_k(w)`, a new topic `gamma / V`.
pub fn plain_crf_topic_weights(m: &MicroState, w: u32) -> (Vec<(u32, f64)>, f64) {
    let mut m_k: BTreeMap<u32, f64> = BTreeMap::new();
    for j in 0..m.docs.len() {
        let used: BTreeSet<u32> = m.seating[j].iter().copied().collect();
        for t in used {
            *m_k.entry(m.table_topics[j][t as usize].unwrap()).or_insert(0.0) += 1.0;
        }
    }
    (
        m_k.iter().map(|(&k, &c)| (k, c * m.f(k, w))).collect(),
        m.gamma / m.vocab as f64,
    )
}

// ---------------------------------------------------------------------------
// Sweep-level checks recomputed from the seating.

/// Pinned tokens sitting at a table of another topic.
pub fn oracle_violations(s: &SamplerState) -> usize {
    let mut owner = BTreeMap::new();
    for q in 0..s.num_parents() as u32 {
        for &w in s.concepts(q) {
            owner.entry(w).or_insert(q);
        }
    }
    let mut n = 0;
    for j in 0..s.num_docs() {
        for (i, w) in s.doc(j).iter().enumerate() {
            if let Some(&q) = owner.get(w) {
                if s.topic_of(j, i) != Some(q) {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Largest `|sum_w n_kw - n_k|` over live topics, and whether every topic's
/// table count and the total agree with a recount of occupied tables.
pub fn oracle_conservation(s: &SamplerState) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    for k in s.live_topics() {
        let sum: f64 = s.topic_words(k).iter().map(|m| m.to_f64()).sum();
        worst = worst.max((sum - s.topic_mass(k).to_f64()).abs());
    }
    let mut recount: BTreeMap<u32, u32> = BTreeMap::new();
    for j in 0..s.num_docs() {
        for t in s.tables(j).iter().filter(|t| t.customers > 0) {
            *recount.entry(t.topic).or_default() += 1;
        }
    }
    let per_topic = s.live_topics().iter().all(|&k| recount.get(&k).copied().unwrap_or(0) == s.topic_tables(k));
    let total: u64 = recount.values().map(|&c| c as u64).sum();
    let sum_m: u64 = s.live_topics().iter().map(|&k| s.topic_tables(k) as u64).sum();
    (worst, per_topic && total == s.total_tables() && sum_m == s.total_tables())
}
