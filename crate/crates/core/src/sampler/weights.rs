//! Unnormalized transition weights of the table and topic draws.
//!
//! All functions assume the current token has already been removed from the
//! state. Existing-table weights are `1[w ok at k] * n_jt * f_k(w)`; the new
//! table weighs `alpha * (sum_k m_k f_k(w) + gamma f_new) / (m + gamma)`.
//! Given a new table, an existing topic weighs `1[w ok at k] * m_k * f_k(w)`
//! and a new topic `gamma * f_new`, except that pinned words may not open a
//! new topic.

use rand::Rng;

use super::state::SamplerState;

#[derive(Clone, Debug, PartialEq)]
pub struct TableWeights {
    /// `(table slot, weight)` for every live table of the document.
    pub existing: Vec<(u32, f64)>,
    pub new_table: f64,
}

impl TableWeights {
    pub fn total(&self) -> f64 {
        self.existing.iter().map(|(_, w)| w).sum::<f64>() + self.new_table
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicWeights {
    /// `(topic, weight)` for every live topic.
    pub existing: Vec<(u32, f64)>,
    pub new_topic: f64,
}

impl TopicWeights {
    pub fn total(&self) -> f64 {
        self.existing.iter().map(|(_, w)| w).sum::<f64>() + self.new_topic
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableChoice {
    Existing(u32),
    New,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopicChoice {
    Existing(u32),
    New,
}

/// Reusable buffers for one chain.
#[derive(Clone, Debug, Default)]
pub(crate) struct Scratch {
    /// Predictive density per topic slot (valid for live topics).
    pub f: Vec<f64>,
    pub weights: Vec<f64>,
    pub ids: Vec<u32>,
}

impl SamplerState {
    /// Dirichlet-multinomial predictive density of `w` under existing topic
    /// `k`: `(n_kw + beta) / (n_k + V beta)`.
    pub fn predictive_prob(&self, k: u32, w: u32) -> f64 {
        let nkw = self.topic_word(k, w).to_f64();
        let nk = self.topic_mass(k).to_f64();
        (nkw + self.beta) / (nk + self.vocab_size as f64 * self.beta)
    }

    /// Whether word `w` may sit at a table serving topic `k`.
    pub fn admits(&self, w: u32, k: u32) -> bool {
        match self.owner(w) {
            Some(p) => p == k,
            None => true,
        }
    }

    /// Fills `scratch.f` and returns `sum_k m_k f_k(w)`.
    pub(crate) fn fill_predictive(&self, w: u32, scratch: &mut Scratch) -> f64 {
        scratch.f.clear();
        scratch.f.resize(self.live.len(), 0.0);
        let mut acc = 0.0;
        for k in 0..self.live.len() {
            if self.live[k] {
                let f = self.predictive_prob(k as u32, w);
                scratch.f[k] = f;
                acc += self.topic_tables[k] as f64 * f;
            }
        }
        acc
    }

    pub(crate) fn new_table_weight(&self, sum_mf: f64) -> f64 {
        let m = self.total_tables as f64;
        self.alpha * (sum_mf + self.gamma * self.new_topic_density) / (m + self.gamma)
    }

    /// Existing-table weights into `scratch.ids`/`scratch.weights`; returns
    /// the new-table weight. Requires `fill_predictive` for `w`.
    pub(crate) fn fill_table_weights(&self, j: usize, w: u32, sum_mf: f64, scratch: &mut Scratch) -> f64 {
        scratch.ids.clear();
        scratch.weights.clear();
        for (t, tab) in self.tables[j].iter().enumerate() {
            if tab.customers == 0 {
                continue;
            }
            let weight = if self.admits(w, tab.topic) {
                tab.mass.to_f64() * scratch.f[tab.topic as usize]
            } else {
                0.0
            };
            scratch.ids.push(t as u32);
            scratch.weights.push(weight);
        }
        self.new_table_weight(sum_mf)
    }

    /// Existing-topic weights into `scratch.ids`/`scratch.weights`; returns
    /// the new-topic weight. Requires `fill_predictive` for `w`.
    pub(crate) fn fill_topic_weights(&self, w: u32, scratch: &mut Scratch) -> f64 {
        scratch.ids.clear();
        scratch.weights.clear();
        for k in 0..self.live.len() {
            if !self.live[k] {
                continue;
            }
            let weight = if self.admits(w, k as u32) {
                self.topic_tables[k] as f64 * scratch.f[k]
            } else {
                0.0
            };
            scratch.ids.push(k as u32);
            scratch.weights.push(weight);
        }
        if self.owner(w).is_some() {
            0.0
        } else {
            self.gamma * self.new_topic_density
        }
    }

    pub fn table_weights(&self, j: usize, w: u32) -> TableWeights {
        let mut s = Scratch::default();
        let sum = self.fill_predictive(w, &mut s);
        let new_table = self.fill_table_weights(j, w, sum, &mut s);
        TableWeights {
            existing: s.ids.iter().copied().zip(s.weights.iter().copied()).collect(),
            new_table,
        }
    }

    pub fn topic_weights(&self, w: u32) -> TopicWeights {
        let mut s = Scratch::default();
        self.fill_predictive(w, &mut s);
        let new_topic = self.fill_topic_weights(w, &mut s);
        TopicWeights {
            existing: s.ids.iter().copied().zip(s.weights.iter().copied()).collect(),
            new_topic,
        }
    }

    /// Draws a table for word `w` in document `j`. When every weight
    /// vanishes a new table is forced.
    pub fn sample_table<R: Rng + ?Sized>(&self, j: usize, w: u32, rng: &mut R) -> TableChoice {
        let mut s = Scratch::default();
        self.draw_table(j, w, rng, &mut s)
    }

    /// Draws the topic of a new table for `w`. With all weights zero a pinned
    /// word goes to its parent and any other word to a new topic.
    pub fn sample_topic_for_new_table<R: Rng + ?Sized>(&self, w: u32, rng: &mut R) -> TopicChoice {
        let mut s = Scratch::default();
        self.fill_predictive(w, &mut s);
        self.draw_topic(w, rng, &mut s)
    }

    pub(crate) fn draw_table<R: Rng + ?Sized>(
        &self,
        j: usize,
        w: u32,
        rng: &mut R,
        s: &mut Scratch,
    ) -> TableChoice {
        let sum = self.fill_predictive(w, s);
        let new_w = self.fill_table_weights(j, w, sum, s);
        match draw(&s.weights, new_w, rng) {
            Some(i) => TableChoice::Existing(s.ids[i]),
            None => TableChoice::New,
        }
    }

    /// Requires `fill_predictive` for `w`.
    pub(crate) fn draw_topic<R: Rng + ?Sized>(&self, w: u32, rng: &mut R, s: &mut Scratch) -> TopicChoice {
        let new_w = self.fill_topic_weights(w, s);
        let existing: f64 = s.weights.iter().sum();
        if !(existing + new_w).is_finite() || existing + new_w <= 0.0 {
            return match self.owner(w) {
                Some(p) => TopicChoice::Existing(p),
                None => TopicChoice::New,
            };
        }
        match draw(&s.weights, new_w, rng) {
            Some(i) => TopicChoice::Existing(s.ids[i]),
            None => TopicChoice::New,
        }
    }
}

/// Index into `weights`, or `None` for the trailing `extra` outcome. A
/// degenerate total selects `extra`.
fn draw<R: Rng + ?Sized>(weights: &[f64], extra: f64, rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum::<f64>() + extra;
    if !total.is_finite() || total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last = Some(i);
        }
    }
    if extra > 0.0 {
        None
    } else {
        // Rounding pushed u past the final positive weight.
        last
    }
}
