use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{passage_text, tokenize, Passage};
use crate::error::{GplError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    /// Elasticsearch defaults.
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 inverted index over `tokenize(passage_text(p))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    /// term -> [(document index, term frequency)], sorted by document index.
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    ids: Vec<String>,
    id_index: HashMap<String, usize>,
    avgdl: f64,
    pub params: Bm25Params,
}

pub fn build_bm25_index(passages: &[Passage]) -> Result<Bm25Index> {
    Bm25Index::build(passages, Bm25Params::default())
}

impl Bm25Index {
    pub fn build(passages: &[Passage], params: Bm25Params) -> Result<Self> {
        if passages.is_empty() {
            return Err(GplError::Range("cannot index an empty corpus".into()));
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(passages.len());
        let mut ids = Vec::with_capacity(passages.len());
        let mut id_index = HashMap::with_capacity(passages.len());
        for (d, p) in passages.iter().enumerate() {
            if id_index.insert(p.id.clone(), d).is_some() {
                return Err(GplError::DuplicateKey { what: "bm25 index", id: p.id.clone() });
            }
            ids.push(p.id.clone());
            let tokens = tokenize(&passage_text(p));
            doc_len.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, c) in tf {
                postings.entry(t).or_default().push((d, c));
            }
        }
        let avgdl = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
        Ok(Bm25Index { postings, doc_len, ids, id_index, avgdl, params })
    }

    pub fn n_docs(&self) -> usize {
        self.ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn postings(&self, term: &str) -> &[(usize, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_len(&self, passage_id: &str) -> Option<usize> {
        self.id_index.get(passage_id).map(|&d| self.doc_len[d])
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, term: &str, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_len[doc] as f64 / self.avgdl;
        self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Sum over query token occurrences; terms absent from the passage add 0.
    pub fn score(&self, query_tokens: &[String], passage_id: &str) -> Result<f64> {
        let doc = *self
            .id_index
            .get(passage_id)
            .ok_or_else(|| GplError::UnknownId { what: "bm25 index", id: passage_id.to_string() })?;
        let mut total = 0.0;
        for t in query_tokens {
            let plist = self.postings(t);
            if let Ok(pos) = plist.binary_search_by_key(&doc, |&(d, _)| d) {
                total += self.term_weight(t, plist[pos].1, doc);
            }
        }
        Ok(total)
    }

    /// Scores of every passage sharing at least one term with the query.
    pub fn score_matching(&self, query_tokens: &[String]) -> Vec<(usize, f64)> {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for t in query_tokens {
            for &(d, tf) in self.postings(t) {
                *acc.entry(d).or_insert(0.0) += self.term_weight(t, tf, d);
            }
        }
        acc.into_iter().collect()
    }
}

pub fn bm25_score(index: &Bm25Index, query_tokens: &[String], passage_id: &str) -> Result<f64> {
    index.score(query_tokens, passage_id)
}
