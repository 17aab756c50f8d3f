//! Synthetic corpora with known topics, for recovery tests.
//!
//! Each topic owns a contiguous block of the vocabulary with Zipf-shaped
//! word probabilities. Every document has one primary topic; a fraction of
//! its tokens is drawn from other, non-planted topics. One topic may be
//! planted at a small token share, optionally as two disjoint 20-word
//! sub-blocks that never share a document.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::RawDocument;
use crate::error::{Error, Result};

pub const TRUTH_FORMAT: &str = "qdtm-truth/1";
const SUB_BLOCK: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub topics: usize,
    pub vocab: usize,
    pub docs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf exponent of the within-block word distribution.
    pub zipf: f64,
    /// Share of each document's tokens drawn from other topics.
    pub noise: f64,
    /// Index of the planted topic and its share of documents.
    pub planted: Option<usize>,
    pub planted_share: f64,
    /// Build the planted topic from two disjoint sub-blocks.
    pub sub_blocks: bool,
    /// Dimension of the generated embeddings; 0 disables them.
    pub embedding_dim: usize,
    /// Per-coordinate noise of a word vector around its topic centre.
    pub embedding_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            topics: 6,
            vocab: 1000,
            docs: 500,
            min_len: 40,
            max_len: 80,
            zipf: 1.0,
            noise: 0.1,
            planted: Some(5),
            planted_share: 0.02,
            sub_blocks: false,
            embedding_dim: 32,
            embedding_noise: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.topics < 2 {
            return Err(Error::param("topics", "need at least two topics"));
        }
        if self.vocab < self.topics * 2 * SUB_BLOCK {
            return Err(Error::param(
                "vocab",
                format!("need at least {} words for {} topics", self.topics * 2 * SUB_BLOCK, self.topics),
            ));
        }
        if self.docs < 1 || self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::param("docs", "document count and length range must be positive"));
        }
        if self.zipf.is_nan() || self.zipf < 0.0 || !(0.0..1.0).contains(&self.noise) {
            return Err(Error::param("noise", "zipf must be >= 0 and noise in [0,1)"));
        }
        if let Some(p) = self.planted {
            if p >= self.topics {
                return Err(Error::param("planted", "planted topic index out of range"));
            }
            if !(self.planted_share > 0.0 && self.planted_share < 1.0) {
                return Err(Error::param("planted_share", "must lie in (0,1)"));
            }
            if self.planted_share * 50.0 < 1.0 {
                return Err(Error::param(
                    "planted_share",
                    "the planted topic needs at least one expected document per 50",
                ));
            }
        } else if self.sub_blocks {
            return Err(Error::param("sub_blocks", "requires a planted topic"));
        }
        Ok(())
    }

    fn block(&self, k: usize) -> std::ops::Range<usize> {
        let size = self.vocab / self.topics;
        k * size..(k + 1) * size
    }
}

pub fn word_name(id: usize) -> String {
    format!("w{id:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicTruth {
    pub id: usize,
    pub name: String,
    pub planted: bool,
    /// Most probable words, descending, ties by id.
    pub top_words: Vec<String>,
    /// Token share of the topic in the generated corpus.
    pub prevalence: f64,
    /// Present for a planted topic built from sub-blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_blocks: Option<Vec<Vec<String>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub spec: SyntheticSpec,
    pub topics: Vec<TopicTruth>,
    /// Primary topic of every document.
    pub doc_topics: Vec<usize>,
    /// Suggested query: the planted topic's two most probable words, one
    /// from each sub-block when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

impl GroundTruth {
    pub fn planted(&self) -> Option<&TopicTruth> {
        self.topics.iter().find(|t| t.planted)
    }

    /// Indices of the documents whose primary topic is `topic`.
    pub fn docs_of(&self, topic: usize) -> Vec<usize> {
        (0..self.doc_topics.len()).filter(|&j| self.doc_topics[j] == topic).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub documents: Vec<RawDocument>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub truth: GroundTruth,
}

/// A discrete distribution over explicit word ids.
struct WordDist {
    words: Vec<usize>,
    cumulative: Vec<f64>,
}

impl WordDist {
    fn zipf(words: Vec<usize>, s: f64) -> WordDist {
        let mut acc = 0.0;
        let cumulative = (0..words.len())
            .map(|r| {
                acc += 1.0 / ((r + 1) as f64).powf(s);
                acc
            })
            .collect();
        WordDist { words, cumulative }
    }

    fn prob(&self, r: usize) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let prev = if r == 0 { 0.0 } else { self.cumulative[r - 1] };
        (self.cumulative[r] - prev) / total
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.cumulative.last().unwrap();
        let r = self.cumulative.partition_point(|&c| c <= u).min(self.words.len() - 1);
        self.words[r]
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted = spec.planted;

    // Word distributions; a sub-block topic has one distribution per block.
    let mut dists: Vec<Vec<WordDist>> = Vec::with_capacity(spec.topics);
    for k in 0..spec.topics {
        let block: Vec<usize> = spec.block(k).collect();
        if spec.sub_blocks && planted == Some(k) {
            dists.push(vec![
                WordDist::zipf(block[..SUB_BLOCK].to_vec(), spec.zipf),
                WordDist::zipf(block[SUB_BLOCK..2 * SUB_BLOCK].to_vec(), spec.zipf),
            ]);
        } else {
            dists.push(vec![WordDist::zipf(block, spec.zipf)]);
        }
    }

    // Primary topics: the planted topic gets its share of documents, the
    // rest are spread evenly over the other topics.
    let n_planted = planted.map_or(0, |_| ((spec.planted_share * spec.docs as f64).round() as usize).max(1));
    let others: Vec<usize> = (0..spec.topics).filter(|&k| Some(k) != planted).collect();
    let mut doc_topics: Vec<usize> = (0..spec.docs - n_planted).map(|j| others[j % others.len()]).collect();
    doc_topics.extend(std::iter::repeat_n(planted.unwrap_or(0), n_planted));
    for j in (1..doc_topics.len()).rev() {
        doc_topics.swap(j, rng.random_range(0..=j));
    }

    let mut token_counts = vec![0u64; spec.topics];
    let mut planted_seen = 0usize;
    let mut documents = Vec::with_capacity(spec.docs);
    for (j, &k) in doc_topics.iter().enumerate() {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let own = if dists[k].len() > 1 {
            planted_seen += 1;
            &dists[k][planted_seen % 2]
        } else {
            &dists[k][0]
        };
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let topic = if rng.random::<f64>() < spec.noise {
                others[rng.random_range(0..others.len())]
            } else {
                k
            };
            let w = if topic == k { own.sample(&mut rng) } else { dists[topic][0].sample(&mut rng) };
            token_counts[topic] += 1;
            words.push(word_name(w));
        }
        documents.push(RawDocument {
            id: format!("doc{j:05}"),
            text: words.join(" "),
            label: Some(format!("topic{k}")),
        });
    }
    let total_tokens: u64 = token_counts.iter().sum();

    let topics = (0..spec.topics)
        .map(|k| {
            let mut scored: Vec<(usize, f64)> = Vec::new();
            let parts = dists[k].len() as f64;
            for d in &dists[k] {
                scored.extend(d.words.iter().enumerate().map(|(r, &w)| (w, d.prob(r) / parts)));
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            TopicTruth {
                id: k,
                name: format!("topic{k}"),
                planted: planted == Some(k),
                top_words: scored.iter().take(SUB_BLOCK).map(|&(w, _)| word_name(w)).collect(),
                prevalence: token_counts[k] as f64 / total_tokens as f64,
                sub_blocks: (dists[k].len() > 1)
                    .then(|| dists[k].iter().map(|d| d.words.iter().map(|&w| word_name(w)).collect()).collect()),
            }
        })
        .collect::<Vec<_>>();

    let query = planted.map(|p| match &topics[p].sub_blocks {
        Some(blocks) => format!("{} {}", blocks[0][0], blocks[1][0]),
        None => format!("{} {}", topics[p].top_words[0], topics[p].top_words[1]),
    });

    let embeddings = if spec.embedding_dim == 0 {
        Vec::new()
    } else {
        synth_embeddings(spec, &dists, &mut rng)
    };

    Ok(Synthetic {
        documents,
        embeddings,
        truth: GroundTruth {
            format: TRUTH_FORMAT.to_string(),
            spec: spec.clone(),
            topics,
            doc_topics,
            query,
        },
    })
}

/// One random centre per word group (a topic block or a sub-block); every
/// word is its group's centre plus isotropic noise. Words outside every
/// block get pure noise.
fn synth_embeddings(spec: &SyntheticSpec, dists: &[Vec<WordDist>], rng: &mut ChaCha8Rng) -> Vec<(String, Vec<f64>)> {
    let dim = spec.embedding_dim;
    let mut gauss = |n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut *rng); scale * z }).collect::<Vec<f64>>()
    };
    let mut group = vec![None; spec.vocab];
    let mut centres = Vec::new();
    for ds in dists {
        for d in ds {
            let c = centres.len();
            centres.push(gauss(dim, 1.0));
            for &w in &d.words {
                group[w] = Some(c);
            }
        }
    }
    (0..spec.vocab)
        .map(|w| {
            let noise = gauss(dim, spec.embedding_noise);
            let v = match group[w] {
                Some(c) => centres[c].iter().zip(&noise).map(|(a, b)| a + b).collect(),
                None => noise,
            };
            (word_name(w), v)
        })
        .collect()
}
