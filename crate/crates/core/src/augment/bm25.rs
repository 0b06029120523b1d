//! Okapi BM25 over lowercased title+body tokens.

use std::collections::HashMap;

use serde::Serialize;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
    lengths: Vec<u32>,
    avgdl: f64,
    /// term → (doc index, term frequency), one entry per document, ascending doc index.
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, params: Bm25Params) -> Result<Self> {
        let mut index = Bm25Index {
            params,
            ids: Vec::new(),
            lookup: HashMap::new(),
            lengths: Vec::new(),
            avgdl: 0.0,
            postings: HashMap::new(),
        };
        for doc in docs {
            if index.lookup.contains_key(&doc.id) {
                continue;
            }
            let idx = index.ids.len() as u32;
            let tokens = text::tokenize_lower(&doc.full_text());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                index.postings.entry(term).or_default().push((idx, count));
            }
            index.lengths.push(tokens.len() as u32);
            index.lookup.insert(doc.id.clone(), idx);
            index.ids.push(doc.id.clone());
        }
        if index.ids.is_empty() {
            return Err(Error::Empty("bm25 corpus"));
        }
        index.avgdl = index.lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / index.ids.len() as f64;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_len(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).map(|&i| self.lengths[i as usize])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub(crate) fn index_of(&self, id: &str) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let len = f64::from(self.lengths[doc as usize]);
        let ratio = if self.avgdl > 0.0 { len / self.avgdl } else { 1.0 };
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * ratio))
    }

    /// Sum over query terms (repeats included) of `idf * tf-saturation`.
    pub fn score(&self, query: &[String], doc_id: &str) -> Result<f64> {
        let doc = self.index_of(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.to_owned()))?;
        let mut total = 0.0;
        for term in query {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&doc, |(d, _)| *d) {
                total += self.idf(term) * self.term_weight(postings[pos].1, doc);
            }
        }
        Ok(total)
    }

    /// Scores of every indexed document, by index position.
    pub fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.ids.len()];
        for term in query {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for &(doc, tf) in postings {
                scores[doc as usize] += idf * self.term_weight(tf, doc);
            }
        }
        scores
    }
}
