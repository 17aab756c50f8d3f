//! Two-phase constrained HDP Gibbs sampler.
//!
//! Phase one runs a Chinese-restaurant-franchise sampler over the whole
//! corpus in which concept-word tokens are pinned to their query's parent
//! topic. Phase two runs an unconstrained sampler over the tokens the parent
//! topic claimed and reports the resulting subtopics. Both phases can apply
//! Generalized Pólya Urn promotion gated by a per-token word filter.

mod chain;
mod checkpoint;
mod cohesion;
mod mass;
mod phase2;
mod posterior;
mod state;
mod weights;

pub use chain::{initialize, Chain, GpuSettings};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use cohesion::{gpu_flag_update, rank_to_progression, update_cohesion, CohesionCache, ScopeVectors};
pub use mass::{Mass, SCALE as MASS_SCALE};
pub use phase2::{extract_parent_subcorpus, run_phase2, Phase2Context, Phase2Outcome, SubCorpus, Subtopic};
pub use posterior::Posterior;
pub use state::{Op, Promotion, SamplerState, Table};
pub use weights::{TableChoice, TableWeights, TopicChoice, TopicWeights};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampler hyperparameters. Defaults: alpha 1.0, beta 0.5, gamma 1.5, tau 0.5,
/// u 0.3, 10 representative words, 0.5% prevalence floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Initial topic count for phase one, parent topics included.
    pub initial_topics: usize,
    /// Initial subtopic count for each phase-two chain.
    pub initial_subtopics: usize,
    pub tau: f64,
    pub u: f64,
    pub representative_words: usize,
    pub prevalence_floor: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            alpha: 1.0,
            beta: 0.5,
            gamma: 1.5,
            initial_topics: 20,
            initial_subtopics: 10,
            tau: crate::embeddings::DEFAULT_TAU,
            u: crate::embeddings::DEFAULT_PROMOTION,
            representative_words: 10,
            prevalence_floor: 0.005,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self, queries: usize) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(name, format!("concentration must be > 0, got {v}")));
            }
        }
        if self.initial_topics < queries + 1 {
            return Err(Error::param(
                "k",
                format!(
                    "initial topic count {} must be at least queries + 1 = {}",
                    self.initial_topics,
                    queries + 1
                ),
            ));
        }
        if self.initial_subtopics < 1 {
            return Err(Error::param("k2", "initial subtopic count must be >= 1"));
        }
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(Error::param("u", format!("must lie in (0,1), got {}", self.u)));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::param("tau", format!("must lie in [-1,1], got {}", self.tau)));
        }
        if self.representative_words < 1 {
            return Err(Error::param("m", "representative word count must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.prevalence_floor) {
            return Err(Error::param(
                "floor",
                format!("must lie in [0,1), got {}", self.prevalence_floor),
            ));
        }
        Ok(())
    }
}
