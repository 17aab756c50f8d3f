//! Point estimates of the topic-word and document-topic distributions.

use super::state::SamplerState;

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    /// Live topic ids; row `r` of `phi` and column `r` of `theta` belong to
    /// `topics[r]`.
    pub topics: Vec<u32>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl Posterior {
    /// `phi[k][w] = (n_kw + beta) / (n_k + V beta)`. `theta[j][k]` is the
    /// document's table mass under `k` plus `alpha / K`, normalized, with `K`
    /// the number of live topics.
    pub fn from_state(state: &SamplerState) -> Posterior {
        let topics = state.live_topics();
        let phi = topics
            .iter()
            .map(|&k| (0..state.vocab_size() as u32).map(|w| state.predictive_prob(k, w)).collect())
            .collect();
        let mut column = vec![usize::MAX; state.topic_slots()];
        for (c, &k) in topics.iter().enumerate() {
            column[k as usize] = c;
        }
        let (alpha, _, _) = state.hyper();
        let prior = alpha / topics.len().max(1) as f64;
        let theta = (0..state.num_docs())
            .map(|j| {
                let mut row = vec![prior; topics.len()];
                for tab in state.tables(j).iter().filter(|t| t.customers > 0) {
                    row[column[tab.topic as usize]] += tab.mass.to_f64();
                }
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|x| *x /= total);
                }
                row
            })
            .collect();
        Posterior { topics, phi, theta }
    }

    pub fn row_of(&self, k: u32) -> Option<usize> {
        self.topics.iter().position(|&t| t == k)
    }

    pub fn phi(&self, k: u32) -> Option<&[f64]> {
        self.row_of(k).map(|r| self.phi[r].as_slice())
    }

    /// `theta[j][k]` for every document, or `None` if `k` is not live.
    pub fn theta_column(&self, k: u32) -> Option<Vec<f64>> {
        let r = self.row_of(k)?;
        Some(self.theta.iter().map(|row| row[r]).collect())
    }

    /// The `n` most probable words of `k`, ties by id.
    pub fn top_words(&self, k: u32, n: usize) -> Vec<(u32, f64)> {
        let Some(phi) = self.phi(k) else { return Vec::new() };
        top_n(phi, n)
    }
}

/// Indices of the `n` largest values, descending, ties by index.
pub(crate) fn top_n(values: &[f64], n: usize) -> Vec<(u32, f64)> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_by(|&a, &b| values[b as usize].total_cmp(&values[a as usize]).then(a.cmp(&b)));
    order.into_iter().take(n).map(|w| (w, values[w as usize])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_normalize() {
        let mut s = SamplerState::new(vec![vec![0, 1, 1], vec![2]], 3, 1.0 / 3.0, (1.0, 0.5, 1.5), vec![], None);
        let k = s.open_topic();
        let t = s.open_table(0, k);
        for i in 0..3 {
            s.add_token(0, i, t, false);
        }
        let t = s.open_table(1, k);
        s.add_token(1, 0, t, false);
        let p = Posterior::from_state(&s);
        assert_eq!(p.topics, vec![k]);
        assert!((p.phi[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // One live topic: every document is a point mass on it.
        assert!(p.theta.iter().all(|r| (r[0] - 1.0).abs() < 1e-12));
        assert_eq!(p.top_words(k, 1)[0].0, 1);
    }
}
