//! Hard-negative mining with BM25 and exact dense retrieval.

mod bm25;
mod retrieve;

pub use bm25::{bm25_score, build_bm25_index, Bm25Index, Bm25Params};
pub use retrieve::{
    rank_order, top_k, Bm25Retriever, DenseIndex, DenseRetriever, RandomRetriever, Ranked,
    Retriever,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{GplError, Result};

pub const DEFAULT_NEGATIVES_PER_RETRIEVER: usize = 50;

/// Mined negatives of one generated query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativePool {
    pub query_id: String,
    pub positive: String,
    /// Retriever name -> its results in rank order, positive removed.
    pub by_retriever: BTreeMap<String, Vec<String>>,
}

impl NegativePool {
    /// Deduplicated union over retrievers (retriever-name order, then rank).
    pub fn candidates(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ids in self.by_retriever.values() {
            for id in ids {
                if seen.insert(id.as_str()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Passage id -> names of the retrievers that returned it.
    pub fn provenance(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (name, ids) in &self.by_retriever {
            for id in ids {
                let names = out.entry(id.clone()).or_default();
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        out
    }

    /// A query with no negatives left after excluding the positive is unusable.
    pub fn is_usable(&self) -> bool {
        self.by_retriever.values().any(|ids| !ids.is_empty())
    }
}

/// Top `n_per_retriever` from every retriever, minus the source passage.
pub fn mine_negatives(query: &Query, retrievers: &[&dyn Retriever], n_per_retriever: usize) -> Result<NegativePool> {
    let positive = query.source_passage_id.clone().ok_or_else(|| {
        GplError::Config(format!("query {} has no source passage to exclude", query.id))
    })?;
    let mut by_retriever = BTreeMap::new();
    for r in retrievers {
        let mut ids: Vec<String> = Vec::new();
        for (id, _) in r.retrieve(&query.text, n_per_retriever)? {
            if id != positive && !ids.contains(&id) {
                ids.push(id);
            }
        }
        if by_retriever.insert(r.name().to_string(), ids).is_some() {
            return Err(GplError::Config(format!("retriever name `{}` used twice", r.name())));
        }
    }
    let pool = NegativePool { query_id: query.id.clone(), positive, by_retriever };
    if !pool.is_usable() {
        log::warn!("query {} has an empty negative pool; it will be skipped", query.id);
    }
    Ok(pool)
}

/// Mine every query in parallel; output order follows `queries`.
pub fn mine_all(queries: &[Query], retrievers: &[&dyn Retriever], n_per_retriever: usize) -> Result<Vec<NegativePool>> {
    queries
        .par_iter()
        .map(|q| mine_negatives(q, retrievers, n_per_retriever))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PoolRecord {
    qid: String,
    pos: Vec<String>,
    neg: BTreeMap<String, Vec<String>>,
}

/// `hard-negatives.jsonl`: `{qid, pos: [id], neg: {retriever: [ids]}}` per line.
pub fn write_negatives(path: impl AsRef<Path>, pools: &[NegativePool]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GplError::io(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| GplError::io(path, e))?);
    for p in pools {
        let rec = PoolRecord { qid: p.query_id.clone(), pos: vec![p.positive.clone()], neg: p.by_retriever.clone() };
        let line = serde_json::to_string(&rec).map_err(|e| GplError::Serde(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| GplError::io(path, e))?;
    }
    w.flush().map_err(|e| GplError::io(path, e))
}

pub fn read_negatives(path: impl AsRef<Path>) -> Result<Vec<NegativePool>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| GplError::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GplError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoolRecord =
            serde_json::from_str(&line).map_err(|e| GplError::parse(path, i + 1, e.to_string()))?;
        let [positive] = <[String; 1]>::try_from(rec.pos)
            .map_err(|_| GplError::parse(path, i + 1, "expected exactly one positive"))?;
        out.push(NegativePool { query_id: rec.qid, positive, by_retriever: rec.neg });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(&'static str, Vec<&'static str>);

    impl Retriever for Fixed {
        fn name(&self) -> &str {
            self.0
        }
        fn retrieve(&self, _: &str, k: usize) -> Result<Ranked> {
            Ok(self.1.iter().take(k).map(|s| (s.to_string(), 1.0)).collect())
        }
    }

    fn q() -> Query {
        Query::generated("genQ-p-1", "text", "p")
    }

    #[test]
    fn positive_is_excluded_and_union_deduplicated() {
        let a = Fixed("a", vec!["p", "x", "y"]);
        let b = Fixed("b", vec!["y", "z", "p"]);
        let pool = mine_negatives(&q(), &[&a, &b], 50).unwrap();
        assert_eq!(pool.candidates(), vec!["x", "y", "z"]);
        assert_eq!(pool.provenance()["y"], vec!["a", "b"]);
        assert!(!pool.candidates().contains(&"p".to_string()));
    }

    #[test]
    fn identical_retrievers_do_not_double_the_pool() {
        let ids: Vec<&'static str> = vec!["a", "b", "c"];
        let r1 = Fixed("r1", ids.clone());
        let r2 = Fixed("r2", ids);
        assert_eq!(mine_negatives(&q(), &[&r1, &r2], 2).unwrap().candidates().len(), 2);
    }

    #[test]
    fn only_positive_is_unusable() {
        let r = Fixed("r", vec!["p"]);
        assert!(!mine_negatives(&q(), &[&r], 50).unwrap().is_usable());
        assert!(mine_negatives(&Query::new("q", "t"), &[&r], 50).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let a = Fixed("bm25", vec!["p", "x"]);
        let b = Fixed("dense", vec!["z"]);
        let pools = vec![mine_negatives(&q(), &[&a, &b], 50).unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hard-negatives.jsonl");
        write_negatives(&path, &pools).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"qid\":\"genQ-p-1\",\"pos\":[\"p\"],\"neg\":{\"bm25\":[\"x\"],\"dense\":[\"z\"]}}\n");
        assert_eq!(read_negatives(&path).unwrap(), pools);
    }
}
