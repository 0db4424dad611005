//! Classical text features: first/last truncation of token streams and
//! L2-normalized tf-idf over word unigrams and adjacent bigrams.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::matrix::Matrix;

/// Keeps the first `m` and last `m` tokens. Streams of length `≤ 2m` are
/// returned unchanged so no token is counted twice.
pub fn truncate_first_last(tokens: &[String], m: usize) -> Vec<String> {
    assert!(m >= 1, "truncation length must be at least 1");
    if tokens.len() <= 2 * m {
        return tokens.to_vec();
    }
    let mut out = Vec::with_capacity(2 * m);
    out.extend_from_slice(&tokens[..m]);
    out.extend_from_slice(&tokens[tokens.len() - m..]);
    out
}

/// A unigram (`len 1`) or adjacent bigram (`len 2`).
pub type Ngram = Vec<String>;

fn doc_ngrams(doc: &[String]) -> impl Iterator<Item = &[String]> {
    doc.chunks(1).chain(doc.windows(2))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub ngram: Ngram,
    pub df: usize,
}

/// Document frequencies of the retained n-grams, sorted lexicographically by
/// token sequence so column indices are stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramVocabulary {
    entries: Vec<VocabEntry>,
    num_docs: usize,
    min_df: usize,
}

impl NgramVocabulary {
    pub fn build(corpus: &[Vec<String>], min_df: usize) -> Result<Self> {
        ensure!(min_df >= 1, Validation, "min_df must be at least 1, got {min_df}");
        ensure!(!corpus.is_empty(), Validation, "cannot build a vocabulary from an empty corpus");
        let mut df: BTreeMap<&[String], usize> = BTreeMap::new();
        for doc in corpus {
            let unique: BTreeSet<&[String]> = doc_ngrams(doc).collect();
            for g in unique {
                *df.entry(g).or_default() += 1;
            }
        }
        let entries = df
            .into_iter()
            .filter(|&(_, c)| c >= min_df)
            .map(|(g, c)| VocabEntry { ngram: g.to_vec(), df: c })
            .collect();
        Ok(NgramVocabulary {
            entries,
            num_docs: corpus.len(),
            min_df,
        })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn index_of(&self, ngram: &[String]) -> Option<usize> {
        self.entries
            .binary_search_by(|e| cmp_ngram(&e.ngram, ngram))
            .ok()
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        smoothed_idf(self.num_docs, self.entries[index].df)
    }

    pub fn transform(&self, doc: &[String]) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in doc_ngrams(doc) {
            if let Some(i) = self.index_of(g) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut pairs: Vec<(usize, f64)> = counts.into_iter().map(|(i, tf)| (i, tf * self.idf(i))).collect();
        let norm = pairs.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            pairs.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        SparseVector {
            dim: self.entries.len(),
            pairs,
        }
    }
}

fn cmp_ngram(a: &[String], b: &[String]) -> Ordering {
    a.cmp(b)
}

pub fn smoothed_idf(num_docs: usize, df: usize) -> f64 {
    ((1.0 + num_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    /// `(index, weight)` with strictly increasing indices.
    pub pairs: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, w) in &self.pairs {
            v[i] = w;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.pairs.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn weight(&self, index: usize) -> f64 {
        self.pairs
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |p| self.pairs[p].1)
    }
}

pub fn tfidf_transform(doc: &[String], vocab: &NgramVocabulary) -> SparseVector {
    vocab.transform(doc)
}

/// Densified tf-idf rows, one per document, for use as a feature modality.
pub fn tfidf_matrix(corpus: &[Vec<String>], vocab: &NgramVocabulary) -> Matrix {
    let mut m = Matrix::zeros(corpus.len(), vocab.len());
    for (i, doc) in corpus.iter().enumerate() {
        let row = m.row_mut(i);
        for (j, w) in vocab.transform(doc).pairs {
            row[j] = w;
        }
    }
    m
}
