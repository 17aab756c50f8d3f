use std::collections::{BTreeMap, HashSet};

use qdtm::corpus::Corpus;
use qdtm::embeddings::EmbeddingTable;
use qdtm::metrics::{npmi_coherence, subtopic_report, RankedTopic, SubtopicScore, NPMI_TOP};
use qdtm::pipeline::{rank_documents, FitResult, TopicSummary};
use qdtm::retrieval::precision_at_k;
use qdtm::synth::{GroundTruth, TRUTH_FORMAT};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const REPORT_FORMAT: &str = "qdtm-eval/1";

/// Which documents count as relevant to which query.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Labels {
    /// Every query targets the planted topic.
    Truth(GroundTruth),
    PerQuery(BTreeMap<String, Relevant>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Relevant {
    /// Documents whose `label` equals this value.
    Label(String),
    Ids(Vec<String>),
}

impl Labels {
    pub fn parse(text: &str) -> CliResult<Labels> {
        let labels: Labels =
            serde_json::from_str(text).map_err(|e| CliError::validation(format!("labels file: {e}")))?;
        if let Labels::Truth(t) = &labels {
            if t.format != TRUTH_FORMAT {
                return Err(CliError::validation(format!(
                    "unsupported ground-truth format `{}` (expected `{TRUTH_FORMAT}`)",
                    t.format
                )));
            }
        }
        Ok(labels)
    }

    fn relevant(&self, query: &str, corpus: &Corpus) -> CliResult<Option<HashSet<usize>>> {
        let by_label = |label: &str| -> HashSet<usize> {
            (0..corpus.len())
                .filter(|&j| corpus.documents[j].label.as_deref() == Some(label))
                .collect()
        };
        match self {
            Labels::Truth(t) => {
                let p = t
                    .planted()
                    .ok_or_else(|| CliError::validation("ground truth has no planted topic"))?;
                Ok(Some(by_label(&p.name)))
            }
            Labels::PerQuery(m) => match m.get(query) {
                None => Ok(None),
                Some(Relevant::Label(l)) => Ok(Some(by_label(l))),
                Some(Relevant::Ids(ids)) => ids
                    .iter()
                    .map(|id| {
                        corpus
                            .doc_index(id)
                            .ok_or_else(|| CliError::validation(format!("labels name unknown document `{id}`")))
                    })
                    .collect::<CliResult<_>>()
                    .map(Some),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query: String,
    pub parent: u32,
    /// Absent when no relevance judgement covers the query.
    pub precision_at_k: Option<f64>,
    pub diversity: f64,
    pub cohesion: Option<f64>,
    pub overall: Option<f64>,
    /// Mean NPMI of the subtopics' top words.
    pub npmi: Option<f64>,
    pub subtopics: Vec<SubtopicScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub k: usize,
    pub queries: Vec<QueryEval>,
    pub diversity: f64,
    pub cohesion: Option<f64>,
    pub overall: Option<f64>,
    pub npmi: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn ids(corpus: &Corpus, t: &TopicSummary) -> CliResult<Vec<(u32, f64)>> {
    t.top_words
        .iter()
        .map(|(w, p)| {
            corpus
                .vocabulary
                .id(w)
                .map(|id| (id, *p))
                .ok_or_else(|| CliError::validation(format!("result word `{w}` is not in the corpus vocabulary")))
        })
        .collect()
}

pub fn evaluate(
    result: &FitResult,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    labels: Option<&Labels>,
    k: usize,
) -> CliResult<EvalReport> {
    if k < 1 {
        return Err(CliError::validation("k must be >= 1"));
    }
    let mut queries = Vec::with_capacity(result.queries.len());
    for q in &result.queries {
        if q.document_scores.len() != corpus.len() {
            return Err(CliError::validation(format!(
                "result scores {} documents but the corpus has {}",
                q.document_scores.len(),
                corpus.len()
            )));
        }
        let precision = match labels.map(|l| l.relevant(&q.query, corpus)).transpose()?.flatten() {
            Some(rel) => Some(precision_at_k(&rank_documents(&q.document_scores), &rel, k)?),
            None => None,
        };
        let parent_words = ids(corpus, &q.parent)?;
        let subs: Vec<RankedTopic> = q
            .subtopics
            .iter()
            .map(|s| {
                Ok(RankedTopic {
                    topic: s.topic,
                    prevalence: s.prevalence,
                    words: ids(corpus, s)?,
                })
            })
            .collect::<CliResult<_>>()?;
        let report = subtopic_report(q.parent.topic, &parent_words, &subs, table)?;
        let npmi = mean(subs.iter().filter_map(|s| {
            let top: Vec<u32> = s.words.iter().take(NPMI_TOP).map(|&(w, _)| w).collect();
            npmi_coherence(&top, corpus).ok()
        }));
        queries.push(QueryEval {
            query: q.query.clone(),
            parent: q.parent.topic,
            precision_at_k: precision,
            diversity: report.diversity,
            cohesion: report.cohesion,
            overall: report.overall,
            npmi,
            subtopics: report.subtopics,
        });
    }
    let diversity = mean(queries.iter().map(|q| q.diversity)).unwrap_or(0.0);
    let cohesion = mean(queries.iter().filter_map(|q| q.cohesion));
    Ok(EvalReport {
        format: REPORT_FORMAT.to_string(),
        k,
        diversity,
        cohesion,
        overall: cohesion.map(|c| qdtm::metrics::overall_quality(diversity, c)),
        npmi: mean(queries.iter().filter_map(|q| q.npmi)),
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_query_labels_parse() {
        let l = Labels::parse(r#"{"space": "sci.space", "cars": ["d1", "d2"]}"#).unwrap();
        let Labels::PerQuery(m) = l else { panic!() };
        assert!(matches!(m["space"], Relevant::Label(_)));
        assert!(matches!(&m["cars"], Relevant::Ids(v) if v.len() == 2));
    }

    #[test]
    fn garbage_labels_rejected() {
        assert!(Labels::parse("[1, 2]").is_err());
    }
}
