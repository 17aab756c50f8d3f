//! Chinese-restaurant-franchise state and its count bookkeeping.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mass::Mass;
use crate::embeddings::PromotionMatrix;
use crate::error::{Error, Result};

pub(crate) const UNASSIGNED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Add,
    Remove,
}

/// A table in one document. A slot with zero customers is dead and may be
/// reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub topic: u32,
    pub customers: u32,
    pub mass: Mass,
}

type Row = Box<[(u32, Mass)]>;

/// Promotion rows over the sampler's word scope. Only words related to at
/// least one other word in scope have a row; each row carries the word's own
/// unit count plus the promotion amounts of its related concept words.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Promotion {
    rows: Vec<Option<Row>>,
}

impl Promotion {
    /// `scope` maps local word ids to the matrix's (global) ids and must be
    /// sorted ascending; `None` means the identity over the whole matrix.
    pub fn from_matrix(a: &PromotionMatrix, scope: Option<&[u32]>) -> Promotion {
        let n = scope.map_or(a.vocab_len(), <[u32]>::len);
        let local = |g: u32| -> Option<u32> {
            match scope {
                None => Some(g),
                Some(s) => s.binary_search(&g).ok().map(|i| i as u32),
            }
        };
        let rows = (0..n)
            .map(|l| {
                let g = scope.map_or(l as u32, |s| s[l]);
                let mut row: Vec<(u32, Mass)> = a
                    .row(g)
                    .iter()
                    .filter_map(|&(c, amount)| local(c).map(|lc| (lc, Mass::from_f64(amount))))
                    .collect();
                if !row.iter().any(|&(c, _)| c != l as u32) {
                    return None;
                }
                if !row.iter().any(|&(c, _)| c == l as u32) {
                    // A non-concept word still counts once for itself.
                    row.push((l as u32, Mass::ONE));
                }
                row.sort_by_key(|&(c, _)| c);
                Some(row.into_boxed_slice())
            })
            .collect();
        Promotion { rows }
    }

    pub fn row(&self, w: u32) -> Option<&[(u32, Mass)]> {
        self.rows.get(w as usize).and_then(|r| r.as_deref())
    }

    pub fn is_promotable(&self, w: u32) -> bool {
        self.row(w).is_some()
    }

    pub fn row_mass(&self, w: u32) -> Mass {
        self.row(w).map_or(Mass::ONE, |r| r.iter().map(|&(_, a)| a).sum())
    }

    pub fn promotable_words(&self) -> Vec<u32> {
        (0..self.rows.len() as u32).filter(|&w| self.is_promotable(w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerState {
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
    pub(crate) gamma: f64,
    pub(crate) vocab_size: usize,
    pub(crate) new_topic_density: f64,
    pub(crate) docs: Vec<Vec<u32>>,
    pub(crate) assignment: Vec<Vec<u32>>,
    pub(crate) flags: Vec<Vec<bool>>,
    pub(crate) tables: Vec<Vec<Table>>,
    pub(crate) topic_word: Vec<Vec<Mass>>,
    pub(crate) topic_mass: Vec<Mass>,
    pub(crate) topic_tables: Vec<u32>,
    pub(crate) live: Vec<bool>,
    pub(crate) total_tables: u64,
    pub(crate) owner: Vec<Option<u32>>,
    pub(crate) concepts: Vec<Vec<u32>>,
    pub(crate) promotion: Option<Arc<Promotion>>,
}

impl SamplerState {
    /// An empty state: no token seated, parent topics `0..concepts.len()`
    /// live with zero counts. `concepts[q]` lists the words pinned to parent
    /// topic `q`; a word listed under several parents belongs to the first.
    pub fn new(
        docs: Vec<Vec<u32>>,
        vocab_size: usize,
        new_topic_density: f64,
        (alpha, beta, gamma): (f64, f64, f64),
        concepts: Vec<Vec<u32>>,
        promotion: Option<Arc<Promotion>>,
    ) -> SamplerState {
        let mut owner = vec![None; vocab_size];
        let mut cleaned = Vec::with_capacity(concepts.len());
        for (q, words) in concepts.into_iter().enumerate() {
            let mut kept = Vec::new();
            for w in words {
                match owner.get(w as usize) {
                    None => log::warn!("concept word id {w} is outside the vocabulary; skipped"),
                    Some(Some(p)) => {
                        if *p != q as u32 {
                            log::warn!("concept word id {w} already pinned to parent {p}; skipped for parent {q}");
                        }
                    }
                    Some(None) => {
                        owner[w as usize] = Some(q as u32);
                        kept.push(w);
                    }
                }
            }
            cleaned.push(kept);
        }
        let parents = cleaned.len();
        let assignment = docs.iter().map(|d| vec![UNASSIGNED; d.len()]).collect();
        let flags = docs.iter().map(|d| vec![false; d.len()]).collect();
        let tables = vec![Vec::new(); docs.len()];
        SamplerState {
            alpha,
            beta,
            gamma,
            vocab_size,
            new_topic_density,
            docs,
            assignment,
            flags,
            tables,
            topic_word: vec![vec![Mass::ZERO; vocab_size]; parents],
            topic_mass: vec![Mass::ZERO; parents],
            topic_tables: vec![0; parents],
            live: vec![true; parents],
            total_tables: 0,
            owner,
            concepts: cleaned,
            promotion,
        }
    }

    /// Rebuilds a state from explicit seating: `seating[j][i]` is the table
    /// slot of token `(j, i)` and `table_topics[j][t]` the topic of slot `t`
    /// (`None` for a dead slot).
    #[allow(clippy::too_many_arguments)]
    pub fn from_assignments(
        docs: Vec<Vec<u32>>,
        vocab_size: usize,
        new_topic_density: f64,
        hyper: (f64, f64, f64),
        concepts: Vec<Vec<u32>>,
        promotion: Option<Arc<Promotion>>,
        seating: &[Vec<u32>],
        table_topics: &[Vec<Option<u32>>],
        flags: Option<&[Vec<bool>]>,
    ) -> Result<SamplerState> {
        let bad = |m: String| Error::param("seating", m);
        if seating.len() != docs.len() || table_topics.len() != docs.len() {
            return Err(bad("seating does not cover every document".into()));
        }
        let mut s = SamplerState::new(docs, vocab_size, new_topic_density, hyper, concepts, promotion);
        for (j, slots) in table_topics.iter().enumerate() {
            s.tables[j] = slots
                .iter()
                .map(|k| Table {
                    topic: k.unwrap_or(UNASSIGNED),
                    customers: 0,
                    mass: Mass::ZERO,
                })
                .collect();
            for k in slots.iter().flatten() {
                s.ensure_topic(*k);
            }
        }
        for j in 0..s.docs.len() {
            if seating[j].len() != s.docs[j].len() {
                return Err(bad(format!("document {j}: seating length mismatch")));
            }
            for i in 0..s.docs[j].len() {
                let t = seating[j][i];
                match s.tables[j].get(t as usize) {
                    Some(tab) if tab.topic != UNASSIGNED => {}
                    _ => return Err(bad(format!("token ({j},{i}) sits at unknown table {t}"))),
                }
                let f = flags.is_some_and(|f| f[j][i]);
                s.add_token(j, i, t, f);
            }
        }
        for j in 0..s.docs.len() {
            for tab in &mut s.tables[j] {
                if tab.customers == 0 {
                    tab.topic = UNASSIGNED;
                }
            }
        }
        let parents = s.num_parents();
        for k in parents..s.live.len() {
            if s.live[k] && s.topic_tables[k] == 0 {
                s.live[k] = false;
            }
        }
        Ok(s)
    }

    pub(crate) fn ensure_topic(&mut self, k: u32) {
        let k = k as usize;
        while self.live.len() <= k {
            self.topic_word.push(vec![Mass::ZERO; self.vocab_size]);
            self.topic_mass.push(Mass::ZERO);
            self.topic_tables.push(0);
            self.live.push(false);
        }
        self.live[k] = true;
    }

    /// Allocates a fresh topic id: the smallest retired non-parent slot, or a
    /// new one.
    pub(crate) fn open_topic(&mut self) -> u32 {
        let first = self.num_parents();
        let k = (first..self.live.len())
            .find(|&k| !self.live[k])
            .unwrap_or(self.live.len().max(first));
        self.ensure_topic(k as u32);
        k as u32
    }

    /// Opens an empty table with `topic` in document `j`, reusing the first
    /// dead slot.
    pub(crate) fn open_table(&mut self, j: usize, topic: u32) -> u32 {
        let fresh = Table {
            topic,
            customers: 0,
            mass: Mass::ZERO,
        };
        let tables = &mut self.tables[j];
        match tables.iter().position(|t| t.customers == 0) {
            Some(t) => {
                tables[t] = fresh;
                t as u32
            }
            None => {
                tables.push(fresh);
                (tables.len() - 1) as u32
            }
        }
    }

    /// Applies or reverses one token's contribution at table `t` of document
    /// `j`. With `gpu` set and a promotion row for `w`, every row entry moves
    /// the table mass and the topic-word count of its target word; otherwise
    /// the token counts once for itself.
    pub fn update_counter(&mut self, op: Op, j: usize, t: u32, w: u32, gpu: bool) {
        let k = self.tables[j][t as usize].topic;
        let promo = self.promotion.clone();
        let row = if gpu {
            promo.as_deref().and_then(|p| p.row(w))
        } else {
            None
        };
        match row {
            Some(r) => {
                for &(target, a) in r {
                    self.apply(op, j, t, k, target, a);
                }
            }
            None => self.apply(op, j, t, k, w, Mass::ONE),
        }

        let ku = k as usize;
        let table = &mut self.tables[j][t as usize];
        match op {
            Op::Add => {
                table.customers += 1;
                if table.customers == 1 {
                    self.topic_tables[ku] += 1;
                    self.total_tables += 1;
                }
            }
            Op::Remove => {
                assert!(table.customers > 0, "removing from an empty table ({j},{t})");
                table.customers -= 1;
                if table.customers == 0 {
                    assert!(table.mass.is_zero(), "table ({j},{t}) empty but carries mass {:?}", table.mass);
                    table.topic = UNASSIGNED;
                    self.topic_tables[ku] -= 1;
                    self.total_tables -= 1;
                    if self.topic_tables[ku] == 0 && ku >= self.num_parents() {
                        assert!(self.topic_mass[ku].is_zero(), "retiring topic {k} with mass left");
                        self.live[ku] = false;
                        // Trailing retired slots are dropped so a state rebuilt
                        // from its seating compares equal.
                        while self.live.len() > self.num_parents() && self.live.last() == Some(&false) {
                            self.live.pop();
                            self.topic_word.pop();
                            self.topic_mass.pop();
                            self.topic_tables.pop();
                        }
                    }
                }
            }
        }
    }

    fn apply(&mut self, op: Op, j: usize, t: u32, k: u32, target: u32, a: Mass) {
        let (ku, tu, wu) = (k as usize, t as usize, target as usize);
        match op {
            Op::Add => {
                self.tables[j][tu].mass += a;
                self.topic_word[ku][wu] += a;
                self.topic_mass[ku] += a;
            }
            Op::Remove => {
                self.tables[j][tu].mass -= a;
                self.topic_word[ku][wu] -= a;
                self.topic_mass[ku] -= a;
                assert!(
                    !self.tables[j][tu].mass.is_negative()
                        && !self.topic_word[ku][wu].is_negative()
                        && !self.topic_mass[ku].is_negative(),
                    "negative count after removing word {target} from topic {k}"
                );
            }
        }
    }

    /// Seats token `(j, i)` at table `t` with GPU flag `gpu`.
    pub fn add_token(&mut self, j: usize, i: usize, t: u32, gpu: bool) {
        debug_assert_eq!(self.assignment[j][i], UNASSIGNED);
        let w = self.docs[j][i];
        self.assignment[j][i] = t;
        self.flags[j][i] = gpu;
        self.update_counter(Op::Add, j, t, w, gpu);
    }

    /// Seats token `(j, i)` at slot `t` serving topic `k`, reviving the slot
    /// and the topic if they died. Undoes [`remove_token`](Self::remove_token)
    /// exactly when given the table, topic and flag the token had.
    pub fn seat_token(&mut self, j: usize, i: usize, t: u32, k: u32, gpu: bool) {
        let tu = t as usize;
        while self.tables[j].len() <= tu {
            self.tables[j].push(Table {
                topic: UNASSIGNED,
                customers: 0,
                mass: Mass::ZERO,
            });
        }
        if self.tables[j][tu].customers == 0 {
            self.ensure_topic(k);
            self.tables[j][tu].topic = k;
        }
        assert_eq!(self.tables[j][tu].topic, k, "table ({j},{t}) serves another topic");
        self.add_token(j, i, t, gpu);
    }

    /// Unseats token `(j, i)` using the flag it was added with. Returns the
    /// table it left and that table's topic.
    pub fn remove_token(&mut self, j: usize, i: usize) -> (u32, u32) {
        let t = self.assignment[j][i];
        debug_assert_ne!(t, UNASSIGNED);
        let k = self.tables[j][t as usize].topic;
        let w = self.docs[j][i];
        self.update_counter(Op::Remove, j, t, w, self.flags[j][i]);
        self.assignment[j][i] = UNASSIGNED;
        (t, k)
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, j: usize) -> &[u32] {
        &self.docs[j]
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hyper(&self) -> (f64, f64, f64) {
        (self.alpha, self.beta, self.gamma)
    }

    pub fn new_topic_density(&self) -> f64 {
        self.new_topic_density
    }

    pub fn num_parents(&self) -> usize {
        self.concepts.len()
    }

    pub fn concepts(&self, parent: u32) -> &[u32] {
        &self.concepts[parent as usize]
    }

    pub fn owner(&self, w: u32) -> Option<u32> {
        self.owner.get(w as usize).copied().flatten()
    }

    pub fn promotion(&self) -> Option<&Promotion> {
        self.promotion.as_deref()
    }

    pub fn tables(&self, j: usize) -> &[Table] {
        &self.tables[j]
    }

    pub fn table_of(&self, j: usize, i: usize) -> Option<u32> {
        let t = self.assignment[j][i];
        (t != UNASSIGNED).then_some(t)
    }

    pub fn seating(&self) -> &[Vec<u32>] {
        &self.assignment
    }

    pub fn flags(&self) -> &[Vec<bool>] {
        &self.flags
    }

    pub fn flag(&self, j: usize, i: usize) -> bool {
        self.flags[j][i]
    }

    pub fn topic_of(&self, j: usize, i: usize) -> Option<u32> {
        self.table_of(j, i).map(|t| self.tables[j][t as usize].topic)
    }

    /// Per-document table topics with `None` for dead slots.
    pub fn table_topics(&self) -> Vec<Vec<Option<u32>>> {
        self.tables
            .iter()
            .map(|ts| ts.iter().map(|t| (t.customers > 0).then_some(t.topic)).collect())
            .collect()
    }

    pub fn is_live(&self, k: u32) -> bool {
        self.live.get(k as usize).copied().unwrap_or(false)
    }

    pub fn live_topics(&self) -> Vec<u32> {
        (0..self.live.len() as u32).filter(|&k| self.live[k as usize]).collect()
    }

    pub fn topic_slots(&self) -> usize {
        self.live.len()
    }

    pub fn topic_tables(&self, k: u32) -> u32 {
        self.topic_tables.get(k as usize).copied().unwrap_or(0)
    }

    pub fn total_tables(&self) -> u64 {
        self.total_tables
    }

    pub fn topic_word(&self, k: u32, w: u32) -> Mass {
        self.topic_word[k as usize][w as usize]
    }

    pub fn topic_words(&self, k: u32) -> &[Mass] {
        &self.topic_word[k as usize]
    }

    pub fn topic_mass(&self, k: u32) -> Mass {
        self.topic_mass[k as usize]
    }

    pub fn total_mass(&self) -> Mass {
        self.topic_mass.iter().copied().sum()
    }

    /// Number of tokens seated at tables of topic `k`.
    pub fn topic_tokens(&self, k: u32) -> u64 {
        self.tables
            .iter()
            .flatten()
            .filter(|t| t.customers > 0 && t.topic == k)
            .map(|t| t.customers as u64)
            .sum()
    }

    /// Tokens whose word is pinned to a parent topic but sit elsewhere.
    pub fn constraint_violations(&self) -> usize {
        let mut n = 0;
        for j in 0..self.docs.len() {
            for (i, &w) in self.docs[j].iter().enumerate() {
                if let (Some(p), Some(k)) = (self.owner(w), self.topic_of(j, i)) {
                    if p != k {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    /// Recomputes every counter from the seating and flags and compares.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let slots = self.live.len();
        let mut tw = vec![vec![Mass::ZERO; self.vocab_size]; slots];
        let mut tm = vec![Mass::ZERO; slots];
        let mut tt = vec![0u32; slots];
        let mut total_tables = 0u64;
        for j in 0..self.docs.len() {
            let mut cust = vec![0u32; self.tables[j].len()];
            let mut mass = vec![Mass::ZERO; self.tables[j].len()];
            for (i, &w) in self.docs[j].iter().enumerate() {
                let t = self.assignment[j][i];
                if t == UNASSIGNED {
                    return Err(format!("token ({j},{i}) unseated"));
                }
                let k = self.tables[j][t as usize].topic as usize;
                if k >= slots || !self.live[k] {
                    return Err(format!("token ({j},{i}) at table of dead topic {k}"));
                }
                cust[t as usize] += 1;
                let row = if self.flags[j][i] {
                    self.promotion.as_deref().and_then(|p| p.row(w))
                } else {
                    None
                };
                let one = [(w, Mass::ONE)];
                for &(target, a) in row.unwrap_or(&one) {
                    mass[t as usize] += a;
                    tw[k][target as usize] += a;
                    tm[k] += a;
                }
            }
            for (t, tab) in self.tables[j].iter().enumerate() {
                if tab.customers != cust[t] || tab.mass != mass[t] {
                    return Err(format!("table ({j},{t}) counters disagree with seating"));
                }
                if tab.customers > 0 {
                    if tab.mass <= Mass::ZERO {
                        return Err(format!("live table ({j},{t}) has no mass"));
                    }
                    tt[tab.topic as usize] += 1;
                    total_tables += 1;
                }
            }
        }
        for k in 0..slots {
            if tw[k] != self.topic_word[k] || tm[k] != self.topic_mass[k] {
                return Err(format!("topic {k} word counts disagree with seating"));
            }
            let row_sum: Mass = self.topic_word[k].iter().copied().sum();
            if row_sum != self.topic_mass[k] {
                return Err(format!("topic {k}: sum of word counts != topic total"));
            }
            if tt[k] != self.topic_tables[k] {
                return Err(format!("topic {k}: table count disagrees"));
            }
            let parent = k < self.num_parents();
            if self.live[k] && !parent && tt[k] == 0 {
                return Err(format!("live topic {k} has no tables"));
            }
            if !self.live[k] && (tt[k] > 0 || !tm[k].is_zero()) {
                return Err(format!("retired topic {k} still has counts"));
            }
        }
        let sum_m: u64 = self.topic_tables.iter().map(|&m| m as u64).sum();
        if sum_m != self.total_tables || total_tables != self.total_tables {
            return Err("total table count disagrees".into());
        }
        Ok(())
    }
}
