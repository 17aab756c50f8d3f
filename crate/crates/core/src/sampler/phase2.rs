//! Subtopic discovery over the tokens a parent topic claimed.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{initialize, Chain, GpuSettings};
use super::cohesion::ScopeVectors;
use super::state::{Promotion, SamplerState};
use super::Hyperparameters;
use crate::embeddings::{EmbeddingTable, PromotionMatrix};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// The tokens of one parent topic, re-indexed over the parent's own word
/// set.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCorpus {
    pub parent: u32,
    /// Local word id to vocabulary id, ascending.
    pub words: Vec<u32>,
    /// `(document index, local word ids in original order)` for every
    /// document with at least one claimed token.
    pub docs: Vec<(usize, Vec<u32>)>,
}

impl SubCorpus {
    pub fn num_tokens(&self) -> u64 {
        self.docs.iter().map(|(_, d)| d.len() as u64).sum()
    }

    pub fn local(&self, global: u32) -> Option<u32> {
        self.words.binary_search(&global).ok().map(|i| i as u32)
    }
}

/// Collects, per document, the token occurrences whose table serves
/// `parent`.
pub fn extract_parent_subcorpus(state: &SamplerState, parent: u32) -> Result<SubCorpus> {
    let mut raw: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut seen = vec![false; state.vocab_size()];
    for j in 0..state.num_docs() {
        let claimed: Vec<u32> = state
            .doc(j)
            .iter()
            .enumerate()
            .filter(|&(i, _)| state.topic_of(j, i) == Some(parent))
            .map(|(_, &w)| w)
            .collect();
        if !claimed.is_empty() {
            claimed.iter().for_each(|&w| seen[w as usize] = true);
            raw.push((j, claimed));
        }
    }
    if raw.is_empty() {
        return Err(Error::ParentTopicNotFound { topic: parent });
    }
    let words: Vec<u32> = (0..seen.len() as u32).filter(|&w| seen[w as usize]).collect();
    let mut local = vec![u32::MAX; seen.len()];
    for (l, &g) in words.iter().enumerate() {
        local[g as usize] = l as u32;
    }
    let docs = raw
        .into_iter()
        .map(|(j, d)| (j, d.into_iter().map(|w| local[w as usize]).collect()))
        .collect();
    Ok(SubCorpus { parent, words, docs })
}

/// A topic found in phase two. `phi` is aligned with `words`; every other
/// vocabulary entry has probability 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subtopic {
    pub topic: u32,
    pub tokens: u64,
    pub prevalence: f64,
    pub words: Vec<u32>,
    pub phi: Vec<f64>,
}

impl Subtopic {
    /// Highest-probability vocabulary ids, ties by id.
    pub fn top_words(&self, n: usize) -> Vec<(u32, f64)> {
        let mut order: Vec<usize> = (0..self.words.len()).collect();
        order.sort_by(|&a, &b| self.phi[b].total_cmp(&self.phi[a]).then(self.words[a].cmp(&self.words[b])));
        order.into_iter().take(n).map(|i| (self.words[i], self.phi[i])).collect()
    }

    /// Vocabulary ids with non-zero probability.
    pub fn support(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().zip(&self.phi).filter(|(_, &p)| p > 0.0).map(|(&w, _)| w)
    }
}

#[derive(Clone, Debug)]
pub struct Phase2Outcome {
    pub parent: u32,
    pub kept: Vec<Subtopic>,
    pub pruned: Vec<Subtopic>,
    /// Set when every subtopic fell under the floor and the parent itself
    /// is reported.
    pub fallback: bool,
    pub state: SamplerState,
}

/// Inputs shared by every phase-two chain.
#[derive(Clone, Copy)]
pub struct Phase2Context<'a> {
    pub hyper: &'a Hyperparameters,
    pub promotion: Option<&'a PromotionMatrix>,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub gpu: GpuSettings,
    pub iterations: usize,
    /// Token count of the whole corpus; prevalence is relative to it.
    pub corpus_tokens: u64,
    pub exec: Execution,
}

fn smoothed(counts: &[f64], beta: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + counts.len() as f64 * beta;
    counts.iter().map(|c| (c + beta) / total).collect()
}

/// Runs a fresh HDP over `sub` with new-topic density `1/|W|`, then prunes
/// subtopics whose token share of the corpus is under the floor.
pub fn run_phase2(sub: &SubCorpus, ctx: &Phase2Context, mut rng: ChaCha8Rng) -> Result<Phase2Outcome> {
    let n_words = sub.words.len();
    let hyper = ctx.hyper;
    let gpu_on = ctx.gpu.enabled && ctx.promotion.is_some();
    let promotion = if gpu_on {
        ctx.promotion
            .map(|a| Arc::new(Promotion::from_matrix(a, Some(&sub.words))))
    } else {
        None
    };
    let vectors = match (gpu_on, ctx.embeddings) {
        (true, Some(t)) => Some(Arc::new(ScopeVectors::new(t, Some(&sub.words)))),
        _ => None,
    };
    let docs: Vec<Vec<u32>> = sub.docs.iter().map(|(_, d)| d.clone()).collect();
    let state = initialize(
        docs,
        n_words,
        1.0 / n_words as f64,
        (hyper.alpha, hyper.beta, hyper.gamma),
        hyper.initial_subtopics,
        Vec::new(),
        promotion,
        &mut rng,
    )?;
    let mut chain = Chain::new(state, rng, vectors, ctx.gpu, hyper.representative_words, ctx.exec);
    chain.run(ctx.iterations, |_| {})?;
    let state = chain.into_state();

    let total = ctx.corpus_tokens.max(1) as f64;
    let mut kept = Vec::new();
    let mut pruned = Vec::new();
    for k in state.live_topics() {
        let tokens = state.topic_tokens(k);
        if tokens == 0 {
            continue;
        }
        let counts: Vec<f64> = state.topic_words(k).iter().map(|m| m.to_f64()).collect();
        let s = Subtopic {
            topic: k,
            tokens,
            prevalence: tokens as f64 / total,
            words: sub.words.clone(),
            phi: smoothed(&counts, hyper.beta),
        };
        if s.prevalence < hyper.prevalence_floor {
            pruned.push(s);
        } else {
            kept.push(s);
        }
    }
    let fallback = kept.is_empty();
    if fallback {
        log::warn!(
            "every subtopic of parent {} fell under the prevalence floor; reporting the parent itself",
            sub.parent
        );
        let mut counts = vec![0.0; n_words];
        sub.docs.iter().flat_map(|(_, d)| d).for_each(|&w| counts[w as usize] += 1.0);
        let tokens = sub.num_tokens();
        kept.push(Subtopic {
            topic: 0,
            tokens,
            prevalence: tokens as f64 / total,
            words: sub.words.clone(),
            phi: smoothed(&counts, hyper.beta),
        });
    }
    Ok(Phase2Outcome {
        parent: sub.parent,
        kept,
        pruned,
        fallback,
        state,
    })
}
