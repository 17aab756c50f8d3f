//! Pre-trained word vectors, the semantic relatedness matrix between
//! vocabulary words and concept words, and the promotion matrix derived
//! from it.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_PROMOTION: f64 = 0.3;

/// Word vectors for the words of one vocabulary. Words without a vector in
/// the source file have none here.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    flat: Vec<f64>,
    present: Vec<bool>,
    norms: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` pairs, keeping in-vocabulary
    /// tokens only. A repeated token keeps its first vector.
    pub fn from_vectors<'a, I>(vocab: &Vocabulary, vectors: I) -> Result<EmbeddingTable>
    where
        I: IntoIterator<Item = (&'a str, Vec<f64>)>,
    {
        let mut table: Option<EmbeddingTable> = None;
        for (i, (tok, v)) in vectors.into_iter().enumerate() {
            let t = table.get_or_insert_with(|| EmbeddingTable::empty(vocab.len(), v.len()));
            if v.len() != t.dim || v.is_empty() {
                return Err(Error::EmbeddingFormat {
                    line: i + 1,
                    message: format!("expected {} components, found {}", t.dim, v.len()),
                });
            }
            if let Some(id) = vocab.id(tok) {
                t.insert(id, &v);
            }
        }
        let table = table.ok_or(Error::ZeroCoverage)?;
        if table.covered() == 0 {
            return Err(Error::ZeroCoverage);
        }
        Ok(table)
    }

    fn empty(n: usize, dim: usize) -> EmbeddingTable {
        EmbeddingTable {
            dim,
            flat: vec![0.0; n * dim],
            present: vec![false; n],
            norms: vec![0.0; n],
        }
    }

    fn insert(&mut self, id: u32, v: &[f64]) {
        let i = id as usize;
        if self.present[i] {
            return;
        }
        self.flat[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        self.present[i] = true;
        self.norms[i] = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> usize {
        self.present.len()
    }

    pub fn vector(&self, id: u32) -> Option<&[f64]> {
        let i = id as usize;
        (*self.present.get(i)?).then(|| &self.flat[i * self.dim..(i + 1) * self.dim])
    }

    /// The vector scaled to unit length; `None` when absent or zero.
    pub fn unit(&self, id: u32) -> Option<Vec<f64>> {
        let v = self.vector(id)?;
        let n = self.norms[id as usize];
        (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
    }

    pub fn covered(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn coverage(&self) -> f64 {
        self.covered() as f64 / self.present.len().max(1) as f64
    }

    /// Cosine between two vocabulary words, `None` if either has no usable
    /// vector.
    pub fn similarity(&self, a: u32, b: u32) -> Option<f64> {
        let (va, vb) = (self.vector(a)?, self.vector(b)?);
        let (na, nb) = (self.norms[a as usize], self.norms[b as usize]);
        (na > 0.0 && nb > 0.0).then(|| dot(va, vb) / (na * nb))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::param(
            "vector",
            format!("dimension mismatch {} vs {}", a.len(), b.len()),
        ));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Loads whitespace-separated text vectors: an optional `count dim` header,
/// then `token x1 .. xd` per line. Lines for out-of-vocabulary tokens are
/// validated and skipped.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    parse_embeddings(BufReader::new(File::open(path)?), vocab)
}

pub fn parse_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let mut header_dim: Option<usize> = None;
    let mut table: Option<EmbeddingTable> = None;
    let mut seen_content = false;
    let mut buf = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::EmbeddingFormat {
            line: lineno,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(tok) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();

        if !seen_content {
            seen_content = true;
            if rest.len() == 1 {
                if let (Ok(_), Ok(d)) = (tok.parse::<usize>(), rest[0].parse::<usize>()) {
                    if d == 0 {
                        return Err(Error::EmbeddingFormat {
                            line: lineno,
                            message: "header declares dimension 0".into(),
                        });
                    }
                    header_dim = Some(d);
                    continue;
                }
            }
        }

        buf.clear();
        for (c, f) in rest.iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| Error::EmbeddingFormat {
                line: lineno,
                message: format!("component {} `{f}` is not a number", c + 1),
            })?;
            buf.push(x);
        }
        let expected = table.as_ref().map(|t| t.dim).or(header_dim);
        match expected {
            Some(d) if d != buf.len() => {
                return Err(Error::EmbeddingFormat {
                    line: lineno,
                    message: format!("expected {d} components, found {}", buf.len()),
                })
            }
            None if buf.is_empty() => {
                return Err(Error::EmbeddingFormat {
                    line: lineno,
                    message: "vector has no components".into(),
                })
            }
            _ => {}
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::empty(vocab.len(), buf.len()));
        if let Some(id) = vocab.id(tok) {
            t.insert(id, &buf);
        }
    }
    let table = table.ok_or(Error::ZeroCoverage)?;
    if table.covered() == 0 {
        return Err(Error::ZeroCoverage);
    }
    log::info!(
        "loaded {} embeddings of dimension {} (coverage {:.3})",
        table.covered(),
        table.dim,
        table.coverage()
    );
    Ok(table)
}

/// Writes vectors in the text format read by [`load_embeddings`], with a
/// header line.
pub fn write_embeddings<W: Write>(rows: &[(String, Vec<f64>)], mut out: W) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    writeln!(out, "{} {}", rows.len(), dim)?;
    for (tok, v) in rows {
        write!(out, "{tok}")?;
        for x in v {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelatedPair {
    pub word: u32,
    pub concept: u32,
    pub cosine: f64,
}

/// Sparse set of `(vocabulary word, concept word)` pairs whose cosine
/// similarity reaches the threshold, plus a self-pair for every embedded
/// concept word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelatednessMatrix {
    pub tau: f64,
    /// Sorted by `(word, concept)`.
    pub pairs: Vec<RelatedPair>,
    pub concepts: Vec<u32>,
}

/// Scans vocabulary × concepts. Concept words without a usable vector are
/// excluded with a warning.
pub fn build_relatedness(
    table: &EmbeddingTable,
    concepts: &[u32],
    tau: f64,
    exec: Execution,
) -> RelatednessMatrix {
    let mut usable: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for &c in concepts {
        if !seen.insert(c) {
            continue;
        }
        match table.unit(c) {
            Some(u) => usable.push((c, u)),
            None => log::warn!("concept word id {c} has no embedding; excluded from relatedness"),
        }
    }
    usable.sort_by_key(|(c, _)| *c);

    let rows = map_range(table.vocab_len(), exec, |w| {
        let w = w as u32;
        let Some(uw) = table.unit(w) else {
            return Vec::new();
        };
        usable
            .iter()
            .filter_map(|(c, uc)| {
                let cos = dot(&uw, uc);
                (*c == w || cos >= tau).then_some(RelatedPair {
                    word: w,
                    concept: *c,
                    cosine: if *c == w { 1.0 } else { cos },
                })
            })
            .collect::<Vec<_>>()
    });
    RelatednessMatrix {
        tau,
        pairs: rows.into_iter().flatten().collect(),
        concepts: usable.into_iter().map(|(c, _)| c).collect(),
    }
}

/// Sparse promotion amounts: 1 on self-pairs, `u` on cross-pairs, implicit 0
/// elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromotionMatrix {
    pub u: f64,
    rows: Vec<Vec<(u32, f64)>>,
}

pub fn build_promotion(m: &RelatednessMatrix, u: f64, vocab_len: usize) -> Result<PromotionMatrix> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::param("u", format!("promotion weight must lie in (0,1), got {u}")));
    }
    let mut rows = vec![Vec::new(); vocab_len];
    for p in &m.pairs {
        let amount = if p.word == p.concept { 1.0 } else { u };
        rows[p.word as usize].push((p.concept, amount));
    }
    Ok(PromotionMatrix { u, rows })
}

impl PromotionMatrix {
    pub fn get(&self, word: u32, concept: u32) -> f64 {
        self.row(word)
            .iter()
            .find(|(c, _)| *c == concept)
            .map_or(0.0, |(_, a)| *a)
    }

    /// `(concept, amount)` entries for `word`, sorted by concept.
    pub fn row(&self, word: u32) -> &[(u32, f64)] {
        self.rows.get(word as usize).map_or(&[], Vec::as_slice)
    }

    pub fn row_sum(&self, word: u32) -> f64 {
        self.row(word).iter().map(|(_, a)| a).sum()
    }

    pub fn vocab_len(&self) -> usize {
        self.rows.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}
