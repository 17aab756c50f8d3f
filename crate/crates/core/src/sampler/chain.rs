//! Initialization and the Gibbs sweep loop shared by both phases.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cohesion::{gpu_flag_update, update_cohesion, CohesionCache, ScopeVectors};
use super::state::{Promotion, SamplerState};
use super::weights::{Scratch, TableChoice, TopicChoice};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpuSettings {
    /// Apply Generalized Pólya Urn promotion.
    pub enabled: bool,
    /// Gate promotion per token by ranked cohesion; when off every
    /// promotable token is promoted.
    pub word_filtering: bool,
}

impl Default for GpuSettings {
    fn default() -> Self {
        GpuSettings {
            enabled: true,
            word_filtering: true,
        }
    }
}

impl GpuSettings {
    pub fn disabled() -> Self {
        GpuSettings {
            enabled: false,
            word_filtering: false,
        }
    }
}

/// Seats every token at its own table. Each document draws one non-parent
/// topic uniformly from `k - Q` candidates; tokens of pinned words take their
/// parent topic instead, every other token the document's topic. All GPU
/// flags start at 0.
#[allow(clippy::too_many_arguments)]
pub fn initialize<R: Rng + ?Sized>(
    docs: Vec<Vec<u32>>,
    vocab_size: usize,
    new_topic_density: f64,
    hyper: (f64, f64, f64),
    k: usize,
    concepts: Vec<Vec<u32>>,
    promotion: Option<Arc<Promotion>>,
    rng: &mut R,
) -> Result<SamplerState> {
    let parents = concepts.len();
    if k < parents + 1 {
        return Err(Error::param(
            "k",
            format!("initial topic count {k} must exceed the {parents} parent topics"),
        ));
    }
    let mut state = SamplerState::new(docs, vocab_size, new_topic_density, hyper, concepts, promotion);
    for j in 0..state.num_docs() {
        let doc_topic = (parents + rng.random_range(0..k - parents)) as u32;
        for i in 0..state.doc(j).len() {
            let w = state.doc(j)[i];
            let topic = state.owner(w).unwrap_or(doc_topic);
            state.ensure_topic(topic);
            let t = state.open_table(j, topic);
            state.add_token(j, i, t, false);
        }
    }
    Ok(state)
}

/// One Gibbs chain: a state, its random stream and its GPU context.
pub struct Chain {
    state: SamplerState,
    rng: ChaCha8Rng,
    vectors: Option<Arc<ScopeVectors>>,
    gpu: GpuSettings,
    representative_words: usize,
    exec: Execution,
    promotable: Vec<u32>,
    cache: Option<CohesionCache>,
    iterations: usize,
    scratch: Scratch,
}

impl Chain {
    pub fn new(
        state: SamplerState,
        rng: ChaCha8Rng,
        vectors: Option<Arc<ScopeVectors>>,
        gpu: GpuSettings,
        representative_words: usize,
        exec: Execution,
    ) -> Chain {
        let promotable = state
            .promotion()
            .map(Promotion::promotable_words)
            .unwrap_or_default();
        Chain {
            state,
            rng,
            vectors,
            gpu,
            representative_words,
            exec,
            promotable,
            cache: None,
            iterations: 0,
            scratch: Scratch::default(),
        }
    }

    pub(crate) fn set_iterations(&mut self, n: usize) {
        self.iterations = n;
    }

    fn gpu_active(&self) -> bool {
        self.gpu.enabled && !self.promotable.is_empty()
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn into_state(self) -> SamplerState {
        self.state
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn cohesion(&self) -> Option<&CohesionCache> {
        self.cache.as_ref()
    }

    /// Recomputes the cohesion cache from the current counts.
    pub fn refresh_cohesion(&mut self) {
        self.cache = match (&self.vectors, self.gpu_active() && self.gpu.word_filtering) {
            (Some(v), true) => Some(update_cohesion(
                &self.state,
                v,
                &self.promotable,
                self.representative_words,
                self.exec,
            )),
            _ => None,
        };
    }

    fn draw_flag(&mut self, w: u32, k: u32) -> bool {
        if !self.gpu_active() || !self.state.promotion().is_some_and(|p| p.is_promotable(w)) {
            return false;
        }
        if !self.gpu.word_filtering {
            return true;
        }
        match &self.cache {
            Some(c) => gpu_flag_update(c, w, k, &mut self.rng),
            None => false,
        }
    }

    /// Removes token `(j, i)`, redraws its table (and the topic of a new
    /// table), redraws its GPU flag and seats it again.
    pub fn resample_token(&mut self, j: usize, i: usize) {
        let w = self.state.doc(j)[i];
        self.state.remove_token(j, i);
        let t = match self.state.draw_table(j, w, &mut self.rng, &mut self.scratch) {
            TableChoice::Existing(t) => t,
            TableChoice::New => {
                let k = match self.state.draw_topic(w, &mut self.rng, &mut self.scratch) {
                    TopicChoice::Existing(k) => k,
                    TopicChoice::New => self.state.open_topic(),
                };
                self.state.open_table(j, k)
            }
        };
        let k = self.state.tables(j)[t as usize].topic;
        let flag = self.draw_flag(w, k);
        self.state.add_token(j, i, t, flag);
    }

    /// One full iteration: cohesion refresh, then every token in document
    /// and position order.
    pub fn iterate(&mut self) {
        self.refresh_cohesion();
        for j in 0..self.state.num_docs() {
            for i in 0..self.state.doc(j).len() {
                self.resample_token(j, i);
            }
        }
        self.iterations += 1;
    }

    /// Runs `iterations` sweeps, calling `observer` after each.
    pub fn run<F>(&mut self, iterations: usize, mut observer: F) -> Result<()>
    where
        F: FnMut(&Chain),
    {
        if iterations < 1 {
            return Err(Error::param("iterations", "must be >= 1"));
        }
        for _ in 0..iterations {
            self.iterate();
            observer(self);
        }
        Ok(())
    }
}
