//! IDF-scaled, L2-normalized bag-of-n-grams features.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// A sparse vector with strictly increasing column ids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from `(column, value)` pairs; pairs are sorted and
    /// duplicate columns summed.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices: Vec<usize> = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        SparseVector { indices, values }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn get(&self, column: usize) -> f64 {
        self.indices
            .binary_search(&column)
            .map_or(0.0, |pos| self.values[pos])
    }

    /// Largest column id plus one (0 for the empty vector).
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    /// Inner product with a dense vector. Columns beyond `dense` are ignored.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter()
            .filter(|&(i, _)| i < dense.len())
            .map(|(i, v)| v * dense[i])
            .sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b, mut sum) = (0, 0, 0.0);
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    sum += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        sum
    }

    pub fn scaled(&self, factor: f64) -> SparseVector {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Divides by the L2 norm; the zero vector stays zero.
    pub fn normalized(mut self) -> SparseVector {
        let norm = self.norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }
}

/// N-gram vocabulary with document frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    n: usize,
    min_df: usize,
    num_docs: usize,
    terms: Vec<Vec<String>>,
    doc_freq: Vec<usize>,
    term_index: HashMap<Vec<String>, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    n: usize,
    min_df: usize,
    num_docs: usize,
    terms: Vec<TermEntry>,
}

#[derive(Serialize, Deserialize)]
struct TermEntry {
    term: Vec<String>,
    index: usize,
    df: usize,
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> impl Iterator<Item = &[S]> {
    tokens.windows(n)
}

impl Vocabulary {
    /// Counts document frequencies over `docs` and keeps n-grams with
    /// `df >= min_df`, indexed in lexicographic order.
    pub fn fit<'a, I>(docs: I, n: usize, min_df: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if n == 0 {
            return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
        }
        let mut df: HashMap<&'a [String], usize> = HashMap::new();
        let mut num_docs = 0;
        let mut seen = Vec::new();
        for tokens in docs {
            num_docs += 1;
            seen.clear();
            seen.extend(ngrams(tokens, n));
            seen.sort_unstable();
            seen.dedup();
            for &gram in &seen {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        if num_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut kept: Vec<(&[String], usize)> =
            df.into_iter().filter(|&(_, c)| c >= min_df).collect();
        kept.sort_unstable();
        let terms: Vec<Vec<String>> = kept.iter().map(|(g, _)| g.to_vec()).collect();
        let doc_freq = kept.iter().map(|&(_, c)| c).collect();
        Ok(Self::assemble(n, min_df, num_docs, terms, doc_freq))
    }

    fn assemble(
        n: usize,
        min_df: usize,
        num_docs: usize,
        terms: Vec<Vec<String>>,
        doc_freq: Vec<usize>,
    ) -> Self {
        let term_index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            n,
            min_df,
            num_docs,
            terms,
            doc_freq,
            term_index,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    /// Number of columns.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of<S: AsRef<str>>(&self, gram: &[S]) -> Option<usize> {
        let key: Vec<String> = gram.iter().map(|s| s.as_ref().to_string()).collect();
        self.term_index.get(&key).copied()
    }

    pub fn term(&self, index: usize) -> &[String] {
        &self.terms[index]
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    /// Smoothed inverse document frequency `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, index: usize) -> f64 {
        ((1 + self.num_docs) as f64 / (1 + self.doc_freq[index]) as f64).ln() + 1.0
    }

    /// Raw term counts times IDF, scaled to unit L2 norm. Out-of-vocabulary
    /// n-grams are ignored.
    pub fn featurize(&self, tokens: &[String]) -> SparseVector {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for gram in ngrams(tokens, self.n) {
            if let Some(&i) = self.term_index.get(gram) {
                *counts.entry(i).or_insert(0) += 1;
            }
        }
        let pairs = counts
            .into_iter()
            .map(|(i, tf)| (i, tf as f64 * self.idf(i)))
            .collect();
        SparseVector::from_pairs(pairs).normalized()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabularyFile {
            n: self.n,
            min_df: self.min_df,
            num_docs: self.num_docs,
            terms: self
                .terms
                .iter()
                .zip(&self.doc_freq)
                .enumerate()
                .map(|(index, (term, &df))| TermEntry {
                    term: term.clone(),
                    index,
                    df,
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: VocabularyFile = serde_json::from_str(text)?;
        if file.n == 0 || file.num_docs == 0 {
            return Err(Error::InvalidConfig("vocabulary needs n >= 1 and num_docs >= 1".into()));
        }
        file.terms.sort_by_key(|t| t.index);
        for (i, t) in file.terms.iter().enumerate() {
            if t.index != i || t.term.len() != file.n {
                return Err(Error::InvalidConfig(format!("bad vocabulary entry at index {i}")));
            }
        }
        let doc_freq = file.terms.iter().map(|t| t.df).collect();
        let terms = file.terms.into_iter().map(|t| t.term).collect();
        Ok(Self::assemble(file.n, file.min_df, file.num_docs, terms, doc_freq))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Fits a vocabulary on one stream of a corpus. Documents lacking the
/// stream count as empty.
pub fn build_vocab(corpus: &Corpus, stream_id: &str, n: usize, min_df: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Vocabulary::fit(corpus.docs().iter().map(|d| d.tokens(stream_id)), n, min_df)
}

/// Featurizes one stream of every document, in corpus order.
pub fn featurize_corpus(corpus: &Corpus, stream_id: &str, vocab: &Vocabulary) -> Vec<SparseVector> {
    use rayon::prelude::*;
    corpus
        .docs()
        .par_iter()
        .map(|d| vocab.featurize(d.tokens(stream_id)))
        .collect()
}
