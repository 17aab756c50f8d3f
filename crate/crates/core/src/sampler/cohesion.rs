//! Semantic cohesion between words and topics, and the word filter that
//! decides per token whether GPU promotion applies.

use rand::Rng;

use super::state::SamplerState;
use crate::embeddings::EmbeddingTable;
use crate::exec::{map_range, map_slice, Execution};

/// Unit-length embeddings indexed by the sampler's local word ids.
#[derive(Clone, Debug)]
pub struct ScopeVectors {
    dim: usize,
    unit: Vec<f64>,
    present: Vec<bool>,
}

impl ScopeVectors {
    /// `scope` maps local ids to vocabulary ids; `None` is the identity.
    pub fn new(table: &EmbeddingTable, scope: Option<&[u32]>) -> ScopeVectors {
        let n = scope.map_or(table.vocab_len(), <[u32]>::len);
        let dim = table.dim();
        let mut unit = vec![0.0; n * dim];
        let mut present = vec![false; n];
        for l in 0..n {
            let g = scope.map_or(l as u32, |s| s[l]);
            if let Some(u) = table.unit(g) {
                unit[l * dim..(l + 1) * dim].copy_from_slice(&u);
                present[l] = true;
            }
        }
        ScopeVectors { dim, unit, present }
    }

    pub fn unit(&self, w: u32) -> Option<&[f64]> {
        let l = w as usize;
        (*self.present.get(l)?).then(|| &self.unit[l * self.dim..(l + 1) * self.dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Cohesion of selected words with every live topic, refreshed once per
/// iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct CohesionCache {
    topics: Vec<u32>,
    column: Vec<Option<usize>>,
    words: Vec<u32>,
    row: Vec<Option<usize>>,
    cv: Vec<f64>,
    ranked: Vec<f64>,
    representatives: Vec<Vec<(u32, f64)>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Representative words of topic `k` with their topic-word probabilities: a
/// parent topic's concept words, otherwise the top `m` words by count (ties
/// by id).
fn representatives(state: &SamplerState, k: u32, m: usize) -> Vec<(u32, f64)> {
    if (k as usize) < state.num_parents() && !state.concepts(k).is_empty() {
        return state
            .concepts(k)
            .iter()
            .map(|&w| (w, state.predictive_prob(k, w)))
            .collect();
    }
    let counts = state.topic_words(k);
    let mut ids: Vec<u32> = (0..counts.len() as u32).collect();
    let by_count = |a: &u32, b: &u32| counts[*b as usize].cmp(&counts[*a as usize]).then(a.cmp(b));
    let m = m.min(ids.len());
    if m < ids.len() && m > 0 {
        ids.select_nth_unstable_by(m - 1, by_count);
        ids.truncate(m);
    }
    ids.sort_by(by_count);
    ids.into_iter().map(|w| (w, state.predictive_prob(k, w))).collect()
}

/// Maps one word's cohesion values over `T` topics onto the evenly spaced
/// values `0, 1/(T-1), .., 1` by ascending rank (ties by topic id). A single
/// topic maps to 1.
pub fn rank_to_progression(cv: &[f64], topic_ids: &[u32]) -> Vec<f64> {
    let t = cv.len();
    if t == 1 {
        return vec![1.0];
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| cv[a].total_cmp(&cv[b]).then(topic_ids[a].cmp(&topic_ids[b])));
    let mut out = vec![0.0; t];
    for (rank, &c) in order.iter().enumerate() {
        out[c] = rank as f64 / (t - 1) as f64;
    }
    out
}

/// Computes `CV[k, w] = sum_m p(k, m) cos(w, RW(k, m))` for every live topic
/// and every word in `words`, and its rank-normalized form. Words or
/// representatives without a vector contribute cosine 0.
pub fn update_cohesion(
    state: &SamplerState,
    vectors: &ScopeVectors,
    words: &[u32],
    m: usize,
    exec: Execution,
) -> CohesionCache {
    let topics = state.live_topics();
    let dim = vectors.dim();
    let reps = map_slice(&topics, exec, |&k| representatives(state, k, m));
    let centroids: Vec<Vec<f64>> = reps
        .iter()
        .map(|rw| {
            let mut c = vec![0.0; dim];
            for &(w, p) in rw {
                if let Some(u) = vectors.unit(w) {
                    c.iter_mut().zip(u).for_each(|(a, b)| *a += p * b);
                }
            }
            c
        })
        .collect();
    let cols = topics.len();
    let per_word = map_range(words.len(), exec, |r| {
        let cv: Vec<f64> = match vectors.unit(words[r]) {
            Some(u) => centroids.iter().map(|c| dot(u, c)).collect(),
            None => vec![0.0; cols],
        };
        let ranked = rank_to_progression(&cv, &topics);
        (cv, ranked)
    });
    let mut cv = Vec::with_capacity(words.len() * cols);
    let mut ranked = Vec::with_capacity(words.len() * cols);
    for (c, r) in per_word {
        cv.extend(c);
        ranked.extend(r);
    }
    let mut column = vec![None; state.topic_slots()];
    for (c, &k) in topics.iter().enumerate() {
        column[k as usize] = Some(c);
    }
    let mut row = vec![None; state.vocab_size()];
    for (r, &w) in words.iter().enumerate() {
        row[w as usize] = Some(r);
    }
    CohesionCache {
        topics,
        column,
        words: words.to_vec(),
        row,
        cv,
        ranked,
        representatives: reps,
    }
}

impl CohesionCache {
    pub fn topics(&self) -> &[u32] {
        &self.topics
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    fn cell(&self, k: u32, w: u32) -> Option<usize> {
        let c = (*self.column.get(k as usize)?)?;
        let r = (*self.row.get(w as usize)?)?;
        Some(r * self.topics.len() + c)
    }

    pub fn representatives(&self, k: u32) -> Option<&[(u32, f64)]> {
        let c = (*self.column.get(k as usize)?)?;
        Some(&self.representatives[c])
    }

    pub fn cv(&self, k: u32, w: u32) -> Option<f64> {
        self.cell(k, w).map(|i| self.cv[i])
    }

    pub fn ranked(&self, k: u32, w: u32) -> Option<f64> {
        self.cell(k, w).map(|i| self.ranked[i])
    }

    /// Bernoulli parameter of the GPU flag: the word's ranked cohesion with
    /// `k` over its maximum across topics. Topics created after the refresh
    /// have no cohesion evidence and get 0.
    pub fn lambda(&self, k: u32, w: u32) -> f64 {
        let Some(v) = self.ranked(k, w) else { return 0.0 };
        let r = self.row[w as usize].unwrap_or(0);
        let cols = self.topics.len();
        let max = self.ranked[r * cols..(r + 1) * cols]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        if max > 0.0 {
            v / max
        } else {
            0.0
        }
    }
}

/// Draws the GPU flag for word `w` sampled under topic `k`.
pub fn gpu_flag_update<R: Rng + ?Sized>(cache: &CohesionCache, w: u32, k: u32, rng: &mut R) -> bool {
    rng.random::<f64>() < cache.lambda(k, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progression_mapping() {
        assert_eq!(rank_to_progression(&[0.2, 0.8, 0.5], &[0, 1, 2]), vec![0.0, 1.0, 0.5]);
        assert_eq!(rank_to_progression(&[0.3], &[4]), vec![1.0]);
        // Ties fall back to topic id.
        assert_eq!(rank_to_progression(&[0.5, 0.5], &[7, 3]), vec![1.0, 0.0]);
    }
}
