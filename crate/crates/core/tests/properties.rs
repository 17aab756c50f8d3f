mod common;

use std::sync::Arc;

use common::{oracle_conservation, oracle_violations, random_plain_state, synthetic, MicroState};
use proptest::prelude::*;
use qdtm::embeddings::{build_promotion, build_relatedness, cosine};
use qdtm::metrics::{topic_cohesion, topic_diversity, TopicEmbedding};
use qdtm::sampler::{
    extract_parent_subcorpus, initialize, rank_to_progression, run_phase2, Chain, GpuSettings, Hyperparameters,
    Phase2Context, Promotion, SamplerState, ScopeVectors,
};
use qdtm::synth::SyntheticSpec;
use qdtm::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        seed,
        topics: 3,
        vocab: 150,
        docs: 30,
        min_len: 10,
        max_len: 20,
        planted: Some(2),
        planted_share: 0.1,
        embedding_dim: 8,
        ..SyntheticSpec::default()
    }
}

/// A GPU chain over a small synthetic corpus with the planted topic's top
/// five words as the single concept set.
fn gpu_chain(seed: u64, exec: Execution) -> Chain {
    let (syn, corpus, table) = synthetic(&small_spec(seed));
    let planted = syn.truth.planted().unwrap();
    let concepts: Vec<u32> = planted
        .top_words
        .iter()
        .take(5)
        .filter_map(|w| corpus.vocabulary.id(w))
        .collect();
    let v = corpus.vocabulary.len();
    let rel = build_relatedness(&table, &concepts, 0.5, exec);
    let promo = Arc::new(Promotion::from_matrix(&build_promotion(&rel, 0.3, v).unwrap(), None));
    let docs: Vec<Vec<u32>> = corpus.documents.iter().map(|d| d.tokens.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = initialize(docs, v, 1.0 / v as f64, (1.0, 0.5, 1.5), 5, vec![concepts], Some(promo), &mut rng).unwrap();
    Chain::new(
        state,
        rng,
        Some(Arc::new(ScopeVectors::new(&table, None))),
        GpuSettings::default(),
        10,
        exec,
    )
}

fn with_concepts(mut m: MicroState, concept_words: Vec<u32>) -> MicroState {
    // Pin the words to parent 0 by moving each of their tokens onto a fresh
    // table of topic 0; keep every other topic id clear of 0.
    let mut concept_words = concept_words;
    concept_words.retain(|&w| (w as usize) < m.vocab);
    concept_words.sort_unstable();
    concept_words.dedup();
    for tt in m.table_topics.iter_mut() {
        for k in tt.iter_mut().flatten() {
            *k += 1;
        }
    }
    for j in 0..m.docs.len() {
        let slot = m.table_topics[j].len() as u32;
        let mut used = false;
        for i in 0..m.docs[j].len() {
            if concept_words.contains(&m.docs[j][i]) {
                m.seating[j][i] = slot;
                used = true;
            }
        }
        m.table_topics[j].push(used.then_some(0));
        let table_topics = &mut m.table_topics[j];
        for (t, topic) in table_topics.iter_mut().enumerate() {
            if !m.seating[j].contains(&(t as u32)) {
                *topic = None;
            }
        }
    }
    m.concepts = vec![concept_words];
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn remove_then_reseat_restores_state(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_plain_state(&mut rng);
        let original = m.build();
        let positions: Vec<(usize, usize)> = (0..m.docs.len())
            .flat_map(|j| (0..m.docs[j].len()).map(move |i| (j, i)))
            .collect();
        let (j, i) = positions[pick.index(positions.len())];
        let mut s = original.clone();
        let (t, k) = s.remove_token(j, i);
        s.seat_token(j, i, t, k, false);
        prop_assert!(s.check_invariants().is_ok());
        prop_assert_eq!(s, original);
    }

    #[test]
    fn rebuild_from_seating_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_plain_state(&mut rng).build();
        let rebuilt = SamplerState::from_assignments(
            s.docs().to_vec(),
            s.vocab_size(),
            s.new_topic_density(),
            s.hyper(),
            vec![],
            None,
            s.seating(),
            &s.table_topics(),
            Some(s.flags()),
        )
        .unwrap();
        prop_assert_eq!(rebuilt, s);
    }

    #[test]
    fn plain_sweeps_conserve_counts(seed in any::<u64>(), sweeps in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_plain_state(&mut rng).build();
        let mut chain = Chain::new(s, rng, None, GpuSettings::disabled(), 10, Execution::Sequential);
        for _ in 0..sweeps {
            chain.iterate();
            let (err, tables_ok) = oracle_conservation(chain.state());
            prop_assert!(err < 1e-9);
            prop_assert!(tables_ok);
            prop_assert!(chain.state().check_invariants().is_ok());
        }
    }

    #[test]
    fn pinned_words_never_leave_their_parent(
        seed in any::<u64>(),
        words in prop::collection::vec(0u32..8, 1..3),
        sweeps in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = with_concepts(random_plain_state(&mut rng), words);
        prop_assume!(!m.concepts[0].is_empty());
        let s = m.build();
        prop_assert_eq!(oracle_violations(&s), 0);
        let mut chain = Chain::new(s, rng, None, GpuSettings::disabled(), 10, Execution::Sequential);
        for _ in 0..sweeps {
            chain.iterate();
            prop_assert_eq!(oracle_violations(chain.state()), 0);
            prop_assert!(chain.state().is_live(0));
        }
    }

    #[test]
    fn diversity_is_order_free_and_duplicates_never_help(
        lists in prop::collection::vec(prop::collection::vec(0u32..40, 1..8), 1..6),
        rot in 0usize..6,
        dup in any::<prop::sample::Index>(),
    ) {
        let d = topic_diversity(&lists).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0);
        let mut rotated = lists.clone();
        let n = rotated.len();
        rotated.rotate_left(rot % n);
        prop_assert_eq!(topic_diversity(&rotated).unwrap(), d);
        let mut shuffled: Vec<Vec<u32>> = lists.iter().map(|l| l.iter().rev().copied().collect()).collect();
        shuffled.reverse();
        prop_assert_eq!(topic_diversity(&shuffled).unwrap(), d);
        let mut doubled = lists.clone();
        doubled.push(lists[dup.index(n)].clone());
        prop_assert!(topic_diversity(&doubled).unwrap() <= d + 1e-12);
    }

    #[test]
    fn cohesion_is_symmetric(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        wa in prop::collection::vec(0.01f64..1.0, 3),
        wb in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
        prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());

        let corpus = common::tiny_corpus(&[&["p", "q", "r", "s", "t", "u"]]);
        let rows: Vec<(String, Vec<f64>)> = ["p", "q", "r", "s", "t", "u"]
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let base = if i < 3 { &a } else { &b };
                (w.to_string(), base.iter().map(|x| x + i as f64 * 0.1).collect())
            })
            .collect();
        let table = qdtm::embeddings::EmbeddingTable::from_vectors(
            &corpus.vocabulary,
            rows.iter().map(|(w, v)| (w.as_str(), v.clone())),
        )
        .unwrap();
        let id = |w: &str| corpus.vocabulary.id(w).unwrap();
        let ta: Vec<(u32, f64)> = ["p", "q", "r"].iter().map(|w| id(w)).zip(wa).collect();
        let tb: Vec<(u32, f64)> = ["s", "t", "u"].iter().map(|w| id(w)).zip(wb).collect();
        let ea = TopicEmbedding::new(0, &ta, &table).unwrap();
        let eb = TopicEmbedding::new(1, &tb, &table).unwrap();
        let ab = topic_cohesion(&ea, &eb).unwrap();
        let ba = topic_cohesion(&eb, &ea).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn progression_is_an_even_rank_grid(cv in prop::collection::vec(-1.0f64..1.0, 1..10)) {
        let t = cv.len();
        let ids: Vec<u32> = (0..t as u32).map(|i| i * 3 + 1).collect();
        let p = rank_to_progression(&cv, &ids);
        prop_assert_eq!(p.len(), t);
        if t == 1 {
            prop_assert_eq!(p[0], 1.0);
        } else {
            let mut sorted = p.clone();
            sorted.sort_by(f64::total_cmp);
            for (r, x) in sorted.iter().enumerate() {
                prop_assert_eq!(*x, r as f64 / (t - 1) as f64);
            }
            for a in 0..t {
                for b in 0..t {
                    if cv[a] < cv[b] || (cv[a] == cv[b] && ids[a] < ids[b]) {
                        prop_assert!(p[a] < p[b]);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gpu_sweeps_conserve_and_respect_pins(seed in 0u64..1000) {
        let mut chain = gpu_chain(seed, Execution::Sequential);
        let mut worst = 0.0f64;
        let mut bad = 0;
        chain
            .run(4, |c| {
                let (err, ok) = oracle_conservation(c.state());
                worst = worst.max(err);
                bad += oracle_violations(c.state()) + usize::from(!ok) + usize::from(c.state().check_invariants().is_err());
            })
            .unwrap();
        prop_assert!(worst < 1e-9);
        prop_assert_eq!(bad, 0);
    }

    #[test]
    fn same_seed_same_chain(seed in 0u64..1000) {
        let mut a = gpu_chain(seed, Execution::Sequential);
        let mut b = gpu_chain(seed, Execution::Parallel);
        a.run(3, |_| {}).unwrap();
        b.run(3, |_| {}).unwrap();
        prop_assert_eq!(a.state(), b.state());
        prop_assert_eq!(a.rng(), b.rng());
    }

    #[test]
    fn subtopics_stay_inside_the_parent(seed in 0u64..1000, floor in 0.0f64..0.05) {
        let mut chain = gpu_chain(seed, Execution::Sequential);
        chain.run(5, |_| {}).unwrap();
        let state = chain.into_state();
        let sub = extract_parent_subcorpus(&state, 0).unwrap();
        let (_, corpus, table) = synthetic(&small_spec(seed));
        let rel = build_relatedness(&table, state.concepts(0), 0.5, Execution::Sequential);
        let promo = build_promotion(&rel, 0.3, corpus.vocabulary.len()).unwrap();
        let hyper = Hyperparameters { initial_subtopics: 3, prevalence_floor: floor, ..Hyperparameters::default() };
        let ctx = Phase2Context {
            hyper: &hyper,
            promotion: Some(&promo),
            embeddings: Some(&table),
            gpu: GpuSettings::default(),
            iterations: 5,
            corpus_tokens: corpus.vocabulary.total_tokens(),
            exec: Execution::Sequential,
        };
        let out = run_phase2(&sub, &ctx, ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(!out.kept.is_empty());
        for st in out.kept.iter().chain(&out.pruned) {
            for w in st.support() {
                prop_assert!(sub.words.binary_search(&w).is_ok());
            }
            prop_assert!((st.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for st in &out.kept {
            prop_assert!(out.fallback || st.prevalence >= floor);
        }
        for st in &out.pruned {
            prop_assert!(st.prevalence < floor);
        }
        let sub_tokens: u64 = out.kept.iter().chain(&out.pruned).map(|s| s.tokens).sum();
        prop_assert!(out.fallback || sub_tokens == sub.num_tokens());
        prop_assert_eq!(out.state.num_parents(), 0);
        prop_assert_eq!(oracle_violations(&out.state), 0);
    }
}
