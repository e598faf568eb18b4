use std::cmp::Ordering;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::index;

use super::bm25::Bm25Index;
use crate::corpus::{passage_text, tokenize, Passage};
use crate::error::{GplError, Result};
use crate::model::{EncoderModel, Similarity};
use crate::seed::rng_for;

pub type Ranked = Vec<(String, f64)>;

/// Descending score, then ascending passage id.
pub fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Exact top-`k` of `(doc index, score)` candidates.
pub fn top_k(candidates: Vec<(usize, f64)>, ids: &[String], k: usize) -> Ranked {
    let mut scored: Ranked = candidates.into_iter().map(|(d, s)| (ids[d].clone(), s)).collect();
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

/// Anything that can return a ranked candidate list for a query text.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;
    fn retrieve(&self, query: &str, k: usize) -> Result<Ranked>;
}

/// Lexical retriever. Only passages sharing a term with the query are returned.
pub struct Bm25Retriever {
    name: String,
    index: Arc<Bm25Index>,
}

impl Bm25Retriever {
    pub fn new(index: Arc<Bm25Index>) -> Self {
        Bm25Retriever { name: "bm25".into(), index }
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }
}

impl Retriever for Bm25Retriever {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<Ranked> {
        if k == 0 {
            return Err(GplError::Range("k must be >= 1".into()));
        }
        let toks = tokenize(query);
        Ok(top_k(self.index.score_matching(&toks), self.index.ids(), k))
    }
}

/// Pre-computed passage embeddings for exact brute-force search.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    pub ids: Vec<String>,
    pub embeddings: Array2<f64>,
}

impl DenseIndex {
    pub fn build(model: &EncoderModel, passages: &[Passage]) -> Self {
        let texts: Vec<String> = passages.iter().map(passage_text).collect();
        DenseIndex {
            ids: passages.iter().map(|p| p.id.clone()).collect(),
            embeddings: model.encode_batch(&texts),
        }
    }

    pub fn search(&self, similarity: Similarity, query: &Array1<f64>, k: usize) -> Result<Ranked> {
        let mut scored = Vec::with_capacity(self.ids.len());
        for (d, row) in self.embeddings.rows().into_iter().enumerate() {
            scored.push((d, similarity.score(query.view(), row)?));
        }
        Ok(top_k(scored, &self.ids, k))
    }
}

/// Dense retriever scoring with the model's own similarity function.
pub struct DenseRetriever {
    name: String,
    model: Arc<EncoderModel>,
    index: DenseIndex,
}

impl DenseRetriever {
    pub fn new(name: impl Into<String>, model: Arc<EncoderModel>, passages: &[Passage]) -> Self {
        let index = DenseIndex::build(&model, passages);
        DenseRetriever { name: name.into(), model, index }
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn index(&self) -> &DenseIndex {
        &self.index
    }
}

impl Retriever for DenseRetriever {
    fn name(&self) -> &str {
        &self.name
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<Ranked> {
        if k == 0 {
            return Err(GplError::Range("k must be >= 1".into()));
        }
        let q = self.model.encode(query);
        self.index.search(self.model.similarity, &q, k)
    }
}

/// Uniformly random passages, deterministic per `(seed, query text)`. Stands
/// in for "no hard negatives".
pub struct RandomRetriever {
    ids: Vec<String>,
    seed: u64,
}

impl RandomRetriever {
    pub fn new(passages: &[Passage], seed: u64) -> Self {
        RandomRetriever { ids: passages.iter().map(|p| p.id.clone()).collect(), seed }
    }
}

impl Retriever for RandomRetriever {
    fn name(&self) -> &str {
        "random"
    }

    fn retrieve(&self, query: &str, k: usize) -> Result<Ranked> {
        if k == 0 {
            return Err(GplError::Range("k must be >= 1".into()));
        }
        let mut rng = rng_for(self.seed, &["random-miner".into(), query.into()]);
        let n = k.min(self.ids.len());
        Ok(index::sample(&mut rng, self.ids.len(), n)
            .into_iter()
            .map(|i| (self.ids[i].clone(), 0.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Pooling, Vocab};
    use ndarray::array;

    #[test]
    fn top_k_tie_rule_and_truncation() {
        let ids: Vec<String> = ["c", "a", "b"].iter().map(|s| s.to_string()).collect();
        let r = top_k(vec![(0, 1.0), (1, 1.0), (2, 2.0)], &ids, 2);
        assert_eq!(r, vec![("b".to_string(), 2.0), ("a".to_string(), 1.0)]);
        assert_eq!(top_k(vec![(0, 1.0)], &ids, 5).len(), 1);
        assert_eq!(top_k(vec![(0, 1.0), (2, 3.0)], &ids, 1)[0].0, "b");
    }

    #[test]
    fn bm25_retrieval_k1_is_argmax() {
        let ps = vec![
            Passage::new("d1", "", "alpha beta"),
            Passage::new("d2", "", "alpha alpha beta gamma"),
            Passage::new("d3", "", "gamma delta"),
        ];
        let r = Bm25Retriever::new(Arc::new(Bm25Index::build(&ps, Default::default()).unwrap()));
        let top = r.retrieve("alpha", 1).unwrap();
        assert_eq!(top.len(), 1);
        let all = r.retrieve("alpha", 10).unwrap();
        assert_eq!(all.len(), 2, "non-matching passages are not returned");
        assert_eq!(top[0], all[0]);
        assert!(r.retrieve("alpha", 0).is_err());
    }

    #[test]
    fn dense_self_match_ranks_first() {
        let vocab = Vocab::new(["x", "y", "z"]);
        let mut m = EncoderModel::new(vocab, 2, Pooling::Mean, Similarity::Dot, 0).unwrap();
        m.embeddings = array![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
        let ps = vec![Passage::new("p1", "", "x"), Passage::new("p2", "", "y"), Passage::new("p3", "", "z")];
        let r = DenseRetriever::new("dense", Arc::new(m), &ps);
        assert_eq!(r.retrieve("z", 3).unwrap()[0].0, "p3");
        assert_eq!(r.retrieve("x", 1).unwrap()[0].0, "p1");
    }

    #[test]
    fn random_retriever_is_deterministic() {
        let ps: Vec<Passage> = (0..20).map(|i| Passage::new(format!("d{i}"), "", "t")).collect();
        let r = RandomRetriever::new(&ps, 4);
        assert_eq!(r.retrieve("q", 5).unwrap(), r.retrieve("q", 5).unwrap());
        assert_eq!(r.retrieve("q", 50).unwrap().len(), 20);
    }
}
