//! Subtopic quality measures and an NPMI coherence diagnostic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::{cosine, EmbeddingTable};
use crate::error::{Error, Result};

/// Words per subtopic considered by [`topic_diversity`].
pub const DIVERSITY_TOP: usize = 25;
/// Words per topic folded into a [`TopicEmbedding`].
pub const EMBEDDING_TOP: usize = 10;
/// Words per topic scored by [`npmi_coherence`].
pub const NPMI_TOP: usize = 10;

/// Published diversity, cohesion and overall values of six runs, used to
/// sanity-check the product definition of overall quality.
pub const PUBLISHED_QUALITY: [(&str, &str, f64, f64, f64); 6] = [
    ("HTM", "20news", 0.94, 0.54, 0.51),
    ("HTM", "TagMyNews", 0.93, 0.53, 0.49),
    ("HTM", "SearchSnippets", 0.86, 0.49, 0.42),
    ("query-driven", "20news", 0.71, 0.79, 0.56),
    ("query-driven", "TagMyNews", 0.68, 0.79, 0.54),
    ("query-driven", "SearchSnippets", 0.74, 0.76, 0.56),
];

/// Distinct words over all lists divided by the total list length.
pub fn topic_diversity(lists: &[Vec<u32>]) -> Result<f64> {
    let total: usize = lists.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("diversity of no words"));
    }
    let distinct: BTreeSet<u32> = lists.iter().flatten().copied().collect();
    Ok(distinct.len() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicEmbedding {
    pub topic: u32,
    pub vector: Vec<f64>,
}

impl TopicEmbedding {
    /// Weighted sum of the vectors of `top_words`, weights renormalized over
    /// the words that have a vector. `None` when no word has one.
    pub fn new(topic: u32, top_words: &[(u32, f64)], table: &EmbeddingTable) -> Option<TopicEmbedding> {
        let with_vec: Vec<(&[f64], f64)> = top_words
            .iter()
            .filter_map(|&(w, p)| table.vector(w).map(|v| (v, p)))
            .collect();
        let mass: f64 = with_vec.iter().map(|(_, p)| p).sum();
        if with_vec.is_empty() || mass.is_nan() || mass <= 0.0 {
            return None;
        }
        let mut vector = vec![0.0; table.dim()];
        for (v, p) in with_vec {
            vector.iter_mut().zip(v).for_each(|(a, b)| *a += p / mass * b);
        }
        Some(TopicEmbedding { topic, vector })
    }
}

/// Cosine of two topic embeddings.
pub fn topic_cohesion(a: &TopicEmbedding, b: &TopicEmbedding) -> Result<f64> {
    cosine(&a.vector, &b.vector)
}

pub fn overall_quality(diversity: f64, cohesion: f64) -> f64 {
    diversity * cohesion
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtopicScore {
    pub topic: u32,
    pub prevalence: f64,
    /// `None` when either embedding is undefined.
    pub cohesion: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtopicReport {
    pub parent: u32,
    pub subtopics: Vec<SubtopicScore>,
    pub diversity: f64,
    /// Mean over subtopics with a defined cohesion.
    pub cohesion: Option<f64>,
    pub overall: Option<f64>,
}

/// Input for [`subtopic_report`]: one subtopic's ranked words and prevalence.
#[derive(Clone, Debug)]
pub struct RankedTopic {
    pub topic: u32,
    pub prevalence: f64,
    /// Words by descending probability.
    pub words: Vec<(u32, f64)>,
}

/// Diversity over the top-25 words of every subtopic, mean cohesion against
/// the parent, and their product.
pub fn subtopic_report(
    parent: u32,
    parent_words: &[(u32, f64)],
    subtopics: &[RankedTopic],
    table: Option<&EmbeddingTable>,
) -> Result<SubtopicReport> {
    let lists: Vec<Vec<u32>> = subtopics
        .iter()
        .map(|s| s.words.iter().take(DIVERSITY_TOP).map(|&(w, _)| w).collect())
        .collect();
    let diversity = topic_diversity(&lists)?;
    let parent_emb = table.and_then(|t| TopicEmbedding::new(parent, &parent_words[..parent_words.len().min(EMBEDDING_TOP)], t));
    let mut scores = Vec::with_capacity(subtopics.len());
    for s in subtopics {
        let cohesion = match (table, &parent_emb) {
            (Some(t), Some(pe)) => {
                let top = &s.words[..s.words.len().min(EMBEDDING_TOP)];
                TopicEmbedding::new(s.topic, top, t).and_then(|se| topic_cohesion(pe, &se).ok())
            }
            _ => None,
        };
        if cohesion.is_none() {
            log::warn!("cohesion of subtopic {} undefined; skipped", s.topic);
        }
        scores.push(SubtopicScore {
            topic: s.topic,
            prevalence: s.prevalence,
            cohesion,
        });
    }
    let defined: Vec<f64> = scores.iter().filter_map(|s| s.cohesion).collect();
    let cohesion = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(SubtopicReport {
        parent,
        subtopics: scores,
        diversity,
        cohesion,
        overall: cohesion.map(|c| overall_quality(diversity, c)),
    })
}

/// Mean pairwise NPMI of `words` from whole-document co-occurrence, with
/// one added to every document count and to the document total. Pairs
/// containing a word that occurs in no document are skipped.
pub fn npmi_coherence(words: &[u32], corpus: &Corpus) -> Result<f64> {
    for &w in words {
        corpus.vocabulary.check(w)?;
    }
    let n_docs = corpus.len() as f64 + 1.0;
    let postings: Vec<Vec<usize>> = words
        .iter()
        .map(|&w| {
            (0..corpus.len())
                .filter(|&j| corpus.documents[j].tokens.contains(&w))
                .collect()
        })
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..words.len() {
        for b in a + 1..words.len() {
            let (pa, pb) = (&postings[a], &postings[b]);
            if pa.is_empty() || pb.is_empty() {
                continue;
            }
            let joint = intersection_len(pa, pb) as f64;
            let p_a = (pa.len() as f64 + 1.0) / n_docs;
            let p_b = (pb.len() as f64 + 1.0) / n_docs;
            let p_ab = (joint + 1.0) / n_docs;
            let denom = -p_ab.ln();
            let npmi = if denom <= 0.0 { 1.0 } else { (p_ab / (p_a * p_b)).ln() / denom };
            sum += npmi;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::UndefinedMetric("npmi without any scorable word pair"));
    }
    Ok(sum / pairs as f64)
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
