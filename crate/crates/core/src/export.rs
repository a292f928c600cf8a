//! Plain-text views of a trained model: topic word lists, topic location
//! correlations and document similarity rankings.

use std::cmp::Ordering;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::mat::{dot, norm, Mat};
use crate::model::{GlobalState, Mode};

pub const DEFAULT_TOP_WORDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TopicWords {
    pub topic: usize,
    pub usage: f64,
    /// `(term index, γ)` in descending order of γ.
    pub words: Vec<(usize, f64)>,
}

/// Indices sorted by descending value; equal values keep ascending index.
fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Top `n_words` terms of every topic (clipped to the vocabulary size),
/// topics ordered by usage.
pub fn top_words(global: &GlobalState, usage: &[f64], n_words: usize) -> Result<Vec<TopicWords>> {
    if usage.len() != global.n_topics() {
        return Err(Error::Validation(
            "usage length does not match the number of topics".into(),
        ));
    }
    let n = n_words.min(global.vocab_size());
    Ok(rank_desc(usage)
        .into_iter()
        .map(|k| {
            let row = global.gamma.row(k);
            TopicWords {
                topic: k,
                usage: usage[k],
                words: rank_desc(row)
                    .into_iter()
                    .take(n)
                    .map(|w| (w, row[w]))
                    .collect(),
            }
        })
        .collect())
}

/// `topic<TAB>usage<TAB>term...` per line.
pub fn topics_to_tsv(topics: &[TopicWords], vocab: &Vocabulary) -> String {
    let mut out = String::from("topic\tusage\twords\n");
    for t in topics {
        let words: Vec<&str> = t.words.iter().map(|&(w, _)| vocab.term(w)).collect();
        out.push_str(&format!(
            "{}\t{:.3}\t{}\n",
            t.topic,
            t.usage,
            words.join(" ")
        ));
    }
    out
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// T × T cosine matrix of topic locations. Entries involving a zero-norm
/// location are 0; the diagonal is exactly 1 otherwise.
pub fn correlations(global: &GlobalState) -> Result<Mat> {
    if global.mode == Mode::Hdp {
        return Err(Error::Mode(
            "HDP checkpoints have no topic locations".into(),
        ));
    }
    let t = global.n_topics();
    let mut out = Mat::zeros(t, t);
    let mut zero = Vec::new();
    for i in 0..t {
        for j in i..t {
            let v = match cosine(global.ell.row(i), global.ell.row(j)) {
                Some(_) if i == j => 1.0,
                Some(c) => c,
                None => {
                    if i == j {
                        zero.push(i);
                    }
                    0.0
                }
            };
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    if !zero.is_empty() {
        log::warn!("topics with zero-norm locations reported as uncorrelated: {zero:?}");
    }
    Ok(out)
}

/// Header row of column ids, then one labelled row per topic.
pub fn matrix_to_tsv(m: &Mat) -> String {
    let mut out = String::from("topic");
    for j in 0..m.cols() {
        out.push_str(&format!("\t{j}"));
    }
    out.push('\n');
    for (i, row) in m.iter_rows().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    out
}

/// Documents ranked by cosine similarity of their locations to `query`'s,
/// excluding the query. Zero-norm documents rank at similarity 0.
pub fn doc_similarity(
    locations: &Mat,
    mode: Mode,
    query: usize,
    top_n: usize,
) -> Result<Vec<(usize, f64)>> {
    if mode == Mode::Hdp {
        return Err(Error::Mode(
            "HDP checkpoints have no document locations".into(),
        ));
    }
    if query >= locations.rows() {
        return Err(Error::Validation(format!(
            "query document {query} out of range (have {})",
            locations.rows()
        )));
    }
    let q = locations.row(query);
    let mut sims: Vec<f64> = (0..locations.rows())
        .map(|j| cosine(q, locations.row(j)).unwrap_or(0.0))
        .collect();
    sims[query] = f64::NEG_INFINITY;
    Ok(rank_desc(&sims)
        .into_iter()
        .filter(|&j| j != query)
        .take(top_n)
        .map(|j| (j, sims[j]))
        .collect())
}

pub fn similarity_to_tsv(query: usize, ranked: &[(usize, f64)]) -> String {
    let mut out = format!("# query\t{query}\ndoc\tcosine\n");
    for (j, s) in ranked {
        out.push_str(&format!("{j}\t{s}\n"));
    }
    out
}
