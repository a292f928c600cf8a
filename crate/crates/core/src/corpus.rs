//! Sparse bag-of-words corpora: loading, validation and held-out splitting.
//!
//! Documents are stored one per line as `N idx:count idx:count ...`, with
//! zero-based term indices into a vocabulary file holding one term per line.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Validation("vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary term `{t}`"
                )));
            }
        }
        Ok(Self { terms, index })
    }

    /// Placeholder vocabulary `w0, w1, ...` for synthetic data.
    pub fn synthetic(size: usize) -> Self {
        Self::new((0..size).map(|i| format!("w{i}")).collect()).expect("size >= 1")
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, idx: usize) -> &str {
        &self.terms[idx]
    }

    pub fn lookup(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// A document as sparse term counts. Term indices are unique; counts are positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    entries: Vec<(usize, u32)>,
    total: u32,
}

impl Document {
    pub fn new(entries: Vec<(usize, u32)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut total = 0u32;
        for &(idx, count) in &entries {
            if count == 0 {
                return Err(Error::Validation(format!("zero count for term {idx}")));
            }
            if !seen.insert(idx) {
                return Err(Error::Validation(format!("duplicate term index {idx}")));
            }
            total += count;
        }
        if total == 0 {
            return Err(Error::Validation("document has no tokens".into()));
        }
        Ok(Self { entries, total })
    }

    /// Builds a document from a token multiset, aggregating repeats in
    /// first-occurrence order. `None` when `tokens` is empty.
    pub fn from_tokens(tokens: &[usize]) -> Option<Self> {
        if tokens.is_empty() {
            return None;
        }
        let mut pos: HashMap<usize, usize> = HashMap::new();
        let mut entries: Vec<(usize, u32)> = Vec::new();
        for &t in tokens {
            match pos.get(&t) {
                Some(&i) => entries[i].1 += 1,
                None => {
                    pos.insert(t, entries.len());
                    entries.push((t, 1));
                }
            }
        }
        Some(Self {
            total: tokens.len() as u32,
            entries,
        })
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    /// Number of unique terms.
    pub fn n_unique(&self) -> usize {
        self.entries.len()
    }

    /// Total token count N_m.
    pub fn n_tokens(&self) -> u32 {
        self.total
    }

    pub fn to_line(&self) -> String {
        let mut s = self.total.to_string();
        for (idx, count) in &self.entries {
            let _ = write!(s, " {idx}:{count}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vocabulary,
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(vocab: Vocabulary, docs: Vec<Document>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Validation("corpus has no documents".into()));
        }
        let v = vocab.len();
        for (m, doc) in docs.iter().enumerate() {
            if let Some(&(idx, _)) = doc.entries.iter().find(|(i, _)| *i >= v) {
                return Err(Error::Validation(format!(
                    "document {m}: term index {idx} >= vocabulary size {v}"
                )));
            }
        }
        Ok(Self { vocab, docs })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn n_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.n_tokens() as u64).sum()
    }

    /// Subset corpus sharing this vocabulary.
    pub fn select(&self, indices: &[usize]) -> Result<Corpus> {
        Corpus::new(
            self.vocab.clone(),
            indices.iter().map(|&i| self.docs[i].clone()).collect(),
        )
    }

    pub fn docs_to_string(&self) -> String {
        let mut out = String::new();
        for d in &self.docs {
            out.push_str(&d.to_line());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, docs_path: &Path, vocab_path: &Path) -> Result<()> {
        fs::write(docs_path, self.docs_to_string()).map_err(Error::file(docs_path))?;
        let mut v = self.vocab.terms.join("\n");
        v.push('\n');
        fs::write(vocab_path, v).map_err(Error::file(vocab_path))?;
        Ok(())
    }
}

pub fn parse_vocabulary(text: &str) -> Result<Vocabulary> {
    let terms: Vec<String> = text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.is_empty())
        .collect();
    Vocabulary::new(terms)
}

pub fn parse_document_line(line: &str, line_no: usize) -> Result<Document> {
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let mut fields = line.split_whitespace();
    let declared: u32 = fields
        .next()
        .ok_or_else(|| err("empty line".into()))?
        .parse()
        .map_err(|e| err(format!("bad token count: {e}")))?;
    let mut entries = Vec::new();
    for f in fields {
        let (i, c) = f
            .split_once(':')
            .ok_or_else(|| err(format!("expected idx:count, got `{f}`")))?;
        let idx: usize = i
            .parse()
            .map_err(|e| err(format!("bad index `{i}`: {e}")))?;
        let count: u32 = c
            .parse()
            .map_err(|e| err(format!("bad count `{c}`: {e}")))?;
        entries.push((idx, count));
    }
    let doc = Document::new(entries).map_err(|e| err(e.to_string()))?;
    if doc.n_tokens() != declared {
        return Err(err(format!(
            "declared N={declared} but counts sum to {}",
            doc.n_tokens()
        )));
    }
    Ok(doc)
}

pub fn parse_corpus(docs_text: &str, vocab: Vocabulary) -> Result<Corpus> {
    let v = vocab.len();
    let mut docs = Vec::new();
    for (i, line) in docs_text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document_line(line, i + 1)?;
        if let Some(&(idx, _)) = doc.entries().iter().find(|(t, _)| *t >= v) {
            return Err(Error::Validation(format!(
                "line {}: term index {idx} >= vocabulary size {v}",
                i + 1
            )));
        }
        docs.push(doc);
    }
    Corpus::new(vocab, docs)
}

pub fn load_corpus(docs_path: &Path, vocab_path: &Path) -> Result<Corpus> {
    let vocab =
        parse_vocabulary(&fs::read_to_string(vocab_path).map_err(Error::file(vocab_path))?)?;
    parse_corpus(
        &fs::read_to_string(docs_path).map_err(Error::file(docs_path))?,
        vocab,
    )
}

/// Random disjoint train/test partition; both sides keep corpus order.
pub fn split_heldout(corpus: &Corpus, n_test: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    let m = corpus.n_docs();
    if n_test == 0 || n_test >= m {
        return Err(Error::Validation(format!(
            "n_test must be in 1..{m}, got {n_test}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((corpus.select(&train)?, corpus.select(&test)?))
}

/// Token-level random halving. `None` when the document has fewer than two
/// tokens; the first half receives ⌈N/2⌉ tokens.
pub fn split_document_halves(doc: &Document, seed: u64) -> Option<(Document, Document)> {
    if doc.n_tokens() < 2 {
        log::warn!(
            "document with {} token(s) cannot be halved; skipped",
            doc.n_tokens()
        );
        return None;
    }
    let mut tokens: Vec<usize> = doc
        .entries()
        .iter()
        .flat_map(|&(idx, c)| std::iter::repeat_n(idx, c as usize))
        .collect();
    tokens.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = tokens.len().div_ceil(2);
    let first = Document::from_tokens(&tokens[..cut])?;
    let second = Document::from_tokens(&tokens[cut..])?;
    Some((first, second))
}
