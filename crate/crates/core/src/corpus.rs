//! Text ingestion: tokenization, vocabulary construction and corpus statistics.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FORMAT: &str = "qdtm-corpus/1";

/// A small English stopword list. Kept short on purpose: it removes function
/// words only.
const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she",
    "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stopwords {
    None,
    English,
    Custom(Vec<String>),
}

impl Stopwords {
    pub fn id(&self) -> String {
        match self {
            Stopwords::None => "none".to_string(),
            Stopwords::English => "english".to_string(),
            Stopwords::Custom(words) => format!("custom:{}", words.len()),
        }
    }

    fn to_set(&self, lowercase: bool) -> HashSet<String> {
        let fold = |s: &str| {
            if lowercase {
                s.to_lowercase()
            } else {
                s.to_string()
            }
        };
        match self {
            Stopwords::None => HashSet::new(),
            Stopwords::English => ENGLISH_STOPWORDS.iter().map(|s| fold(s)).collect(),
            Stopwords::Custom(words) => words.iter().map(|s| fold(s)).collect(),
        }
    }
}

/// Preprocessing manifest. Together with the raw input it fully determines
/// the vocabulary and every document's token ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocessing {
    pub lowercase: bool,
    pub stopwords: Stopwords,
    pub min_df: u32,
    pub min_token_chars: usize,
    pub drop_numeric: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            lowercase: true,
            stopwords: Stopwords::English,
            min_df: 1,
            min_token_chars: 2,
            drop_numeric: true,
        }
    }
}

impl Preprocessing {
    pub fn validate(&self) -> Result<()> {
        if self.min_df < 1 {
            return Err(Error::param("min_df", "must be at least 1"));
        }
        Ok(())
    }

    /// Splits `text` into tokens: case folding, non-alphanumeric runs as
    /// separators, pure numbers and short tokens dropped. Stopwords are not
    /// removed here.
    pub fn split<'a>(&'a self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|s| !s.is_empty())
            .filter(move |s| s.chars().count() >= self.min_token_chars)
            .filter(move |s| !(self.drop_numeric && s.chars().all(char::is_numeric)))
            .map(move |s| {
                if self.lowercase {
                    s.to_lowercase()
                } else {
                    s.to_string()
                }
            })
    }

    /// Full tokenization, including stopword removal.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let stop = self.stopwords.to_set(self.lowercase);
        self.split(text).filter(|t| !stop.contains(t)).collect()
    }
}

/// One line of the JSON-lines corpus input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
    corpus_freq: Vec<u64>,
    total: u64,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::UnknownToken(id))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, id: u32) -> Result<u32> {
        self.doc_freq
            .get(id as usize)
            .copied()
            .ok_or(Error::UnknownToken(id))
    }

    pub fn corpus_freq(&self, id: u32) -> Result<u64> {
        self.corpus_freq
            .get(id as usize)
            .copied()
            .ok_or(Error::UnknownToken(id))
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    /// Background probability of a token over the whole corpus.
    pub fn background_prob(&self, id: u32) -> Result<f64> {
        Ok(self.corpus_freq(id)? as f64 / self.total as f64)
    }

    pub(crate) fn background_unchecked(&self, id: u32) -> f64 {
        self.corpus_freq[id as usize] as f64 / self.total as f64
    }

    pub fn check(&self, id: u32) -> Result<()> {
        if (id as usize) < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::UnknownToken(id))
        }
    }

    /// Writes `token<TAB>df<TAB>cf` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", t, self.doc_freq[i], self.corpus_freq[i])?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn term_frequency(&self, w: u32) -> usize {
        self.tokens.iter().filter(|&&t| t == w).count()
    }

    /// Sorted `(token, count)` bag.
    pub fn bag(&self) -> Vec<(u32, u32)> {
        let mut sorted = self.tokens.clone();
        sorted.sort_unstable();
        let mut bag: Vec<(u32, u32)> = Vec::new();
        for t in sorted {
            match bag.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => bag.push((t, 1)),
            }
        }
        bag
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    format: String,
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    pub manifest: Preprocessing,
    /// Documents dropped because preprocessing left them empty.
    pub dropped: usize,
}

impl Corpus {
    pub fn ingest(raw: &[RawDocument], manifest: &Preprocessing) -> Result<Corpus> {
        manifest.validate()?;
        if raw.is_empty() {
            return Err(Error::Ingest {
                record: 0,
                message: "no input documents".into(),
            });
        }
        let stop = manifest.stopwords.to_set(manifest.lowercase);
        let tokenized = raw
            .iter()
            .map(|r| {
                let toks = manifest.split(&r.text).filter(|t| !stop.contains(t)).collect();
                (r.id.clone(), r.label.clone(), toks)
            })
            .collect();
        Self::build(tokenized, manifest)
    }

    /// Builds a corpus from documents that are already split into tokens.
    /// Stopword and min-df filters from the manifest still apply.
    pub fn from_tokenized(
        docs: Vec<(String, Option<String>, Vec<String>)>,
        manifest: &Preprocessing,
    ) -> Result<Corpus> {
        manifest.validate()?;
        let stop = manifest.stopwords.to_set(manifest.lowercase);
        let docs = docs
            .into_iter()
            .map(|(id, label, toks)| (id, label, toks.into_iter().filter(|t| !stop.contains(t)).collect()))
            .collect();
        Self::build(docs, manifest)
    }

    fn build(
        docs: Vec<(String, Option<String>, Vec<String>)>,
        manifest: &Preprocessing,
    ) -> Result<Corpus> {
        let mut df: HashMap<&str, u32> = HashMap::new();
        for (_, _, toks) in &docs {
            let distinct: HashSet<&str> = toks.iter().map(String::as_str).collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }

        let mut vocab = Vocabulary::default();
        let mut documents = Vec::with_capacity(docs.len());
        let mut dropped = 0;
        for (id, label, toks) in &docs {
            let mut ids = Vec::with_capacity(toks.len());
            for t in toks {
                if df[t.as_str()] < manifest.min_df {
                    continue;
                }
                let next = vocab.tokens.len() as u32;
                let tid = *vocab.index.entry(t.clone()).or_insert(next);
                if tid == next {
                    vocab.tokens.push(t.clone());
                    vocab.doc_freq.push(df[t.as_str()]);
                    vocab.corpus_freq.push(0);
                }
                vocab.corpus_freq[tid as usize] += 1;
                ids.push(tid);
            }
            if ids.is_empty() {
                dropped += 1;
                continue;
            }
            vocab.total += ids.len() as u64;
            documents.push(Document {
                id: id.clone(),
                tokens: ids,
                label: label.clone(),
            });
        }
        if documents.is_empty() {
            return Err(Error::EmptyCorpus { dropped });
        }
        if dropped > 0 {
            warn!("dropped {dropped} documents left empty by preprocessing");
        }
        Ok(Corpus {
            format: CORPUS_FORMAT.to_string(),
            documents,
            vocabulary: vocab,
            manifest: manifest.clone(),
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn term_frequency(&self, w: u32, doc: usize) -> Result<usize> {
        self.vocabulary.check(w)?;
        Ok(self.documents[doc].term_frequency(w))
    }

    pub fn background_prob(&self, w: u32) -> Result<f64> {
        self.vocabulary.background_prob(w)
    }

    pub fn doc_index(&self, id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.id == id)
    }

    pub fn load_jsonl(path: &Path, manifest: &Preprocessing) -> Result<Corpus> {
        let raw = read_jsonl(path)?;
        Self::ingest(&raw, manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        let mut corpus: Corpus = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if corpus.format != CORPUS_FORMAT {
            return Err(Error::FormatTag {
                expected: CORPUS_FORMAT,
                found: corpus.format,
            });
        }
        corpus.vocabulary.rebuild_index();
        Ok(corpus)
    }
}

/// Reads a JSON-lines corpus. Blank lines are skipped; records are numbered
/// from 1 by line.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawDocument>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Ingest {
            record: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            record: i + 1,
            message: e.to_string(),
        })?;
        out.push(doc);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(docs: &[RawDocument], mut out: W) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(texts: &[&str]) -> Vec<RawDocument> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| RawDocument {
                id: format!("d{i}"),
                text: t.to_string(),
                label: None,
            })
            .collect()
    }

    fn manifest(stop: &[&str], min_df: u32) -> Preprocessing {
        Preprocessing {
            stopwords: Stopwords::Custom(stop.iter().map(|s| s.to_string()).collect()),
            min_df,
            ..Preprocessing::default()
        }
    }

    fn words(c: &Corpus, d: usize) -> Vec<&str> {
        c.documents[d]
            .tokens
            .iter()
            .map(|&t| c.vocabulary.token(t).unwrap())
            .collect()
    }

    #[test]
    fn stopword_filter() {
        let c = Corpus::ingest(&raw(&["the cat sat", "the dog sat"]), &manifest(&["the"], 1)).unwrap();
        assert_eq!(c.vocabulary.tokens(), &["cat", "sat", "dog"]);
        assert_eq!(words(&c, 0), vec!["cat", "sat"]);
        assert_eq!(words(&c, 1), vec!["dog", "sat"]);
    }

    #[test]
    fn min_df_filter() {
        let c = Corpus::ingest(&raw(&["the cat sat", "the dog sat"]), &manifest(&["the"], 2)).unwrap();
        assert_eq!(c.vocabulary.tokens(), &["sat"]);
        assert_eq!(words(&c, 0), vec!["sat"]);
        assert_eq!(words(&c, 1), vec!["sat"]);
    }

    #[test]
    fn tokenizer_rules() {
        let p = Preprocessing::default();
        assert_eq!(
            p.split("Hello, WORLD! 2024 x y2k it's a-b").collect::<Vec<_>>(),
            vec!["hello", "world", "y2k", "it"]
        );
        assert_eq!(p.tokenize("The quick brown fox"), vec!["quick", "brown", "fox"]);
    }

    #[test]
    fn empty_documents_dropped_and_counted() {
        let c = Corpus::ingest(&raw(&["the the", "cat sat", "12 34"]), &manifest(&["the"], 1)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.dropped, 2);
    }

    #[test]
    fn all_dropped_is_fatal() {
        let err = Corpus::ingest(&raw(&["the", "of the"]), &Preprocessing::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus { dropped: 2 }));
    }

    #[test]
    fn term_frequency_and_errors() {
        let c = Corpus::from_tokenized(
            vec![
                ("x".into(), None, vec!["aa".into(), "bb".into(), "aa".into()]),
                ("y".into(), None, vec!["cc".into()]),
            ],
            &Preprocessing::default(),
        )
        .unwrap();
        let a = c.vocabulary.id("aa").unwrap();
        let cc = c.vocabulary.id("cc").unwrap();
        assert_eq!(c.term_frequency(a, 0).unwrap(), 2);
        assert_eq!(c.term_frequency(cc, 0).unwrap(), 0);
        assert!(matches!(c.term_frequency(99, 0), Err(Error::UnknownToken(99))));
        assert!(matches!(c.background_prob(99), Err(Error::UnknownToken(99))));
    }

    #[test]
    fn background_prob_simple() {
        // 10 tokens, "aa" twice.
        let toks = ["aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh", "aa", "ii"];
        let c = Corpus::from_tokenized(
            vec![("x".into(), None, toks.iter().map(|s| s.to_string()).collect())],
            &Preprocessing::default(),
        )
        .unwrap();
        let a = c.vocabulary.id("aa").unwrap();
        assert_eq!(c.background_prob(a).unwrap(), 0.2);
        let sum: f64 = (0..c.vocabulary.len() as u32)
            .map(|w| c.background_prob(w).unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreadable_record_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"text\":\"cat\"}\n{\"id\":3}\n").unwrap();
        let err = read_jsonl(&path).unwrap_err();
        assert!(matches!(err, Error::Ingest { record: 2, .. }));
    }

    #[test]
    fn cache_roundtrip() {
        let c = Corpus::ingest(&raw(&["alpha beta", "beta gamma"]), &Preprocessing::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        c.save(&path).unwrap();
        let back = Corpus::load(&path).unwrap();
        assert_eq!(back.documents, c.documents);
        assert_eq!(back.vocabulary.id("gamma"), c.vocabulary.id("gamma"));
    }
}
