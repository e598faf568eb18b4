//! Full-corpus ranking, nDCG/MRR evaluation, cross-encoder re-ranking and
//! trec run files.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{passage_text, Passage, Qrels, Query};
use crate::error::{GplError, Result};
use crate::mining::{rank_order, DenseIndex, Ranked, Retriever};
use crate::model::{CrossEncoderScorer, EncoderModel};

pub const DEFAULT_CUTOFF: usize = 1000;
pub const DEFAULT_RERANK_TOP_N: usize = 100;

/// Per-query ranked passages, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRanking {
    pub runs: BTreeMap<String, Ranked>,
}

impl RunRanking {
    pub fn get(&self, query_id: &str) -> Option<&Ranked> {
        self.runs.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Scores non-increasing and no passage listed twice for a query.
    pub fn validate(&self) -> Result<()> {
        for (qid, ranked) in &self.runs {
            if ranked.windows(2).any(|w| w[1].1 > w[0].1) {
                return Err(GplError::Range(format!("scores of query {qid} are not sorted")));
            }
            let mut seen = HashSet::new();
            if let Some((pid, _)) = ranked.iter().find(|(pid, _)| !seen.insert(pid)) {
                return Err(GplError::DuplicateKey { what: "ranked passage", id: format!("{qid}/{pid}") });
            }
        }
        Ok(())
    }

    /// `qid Q0 docid rank score tag`, ranks from 1.
    pub fn write_trec(&self, path: impl AsRef<Path>, tag: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| GplError::io(path, e))?);
        for (qid, ranked) in &self.runs {
            for (rank, (pid, score)) in ranked.iter().enumerate() {
                writeln!(w, "{qid} Q0 {pid} {} {score:.17e} {tag}", rank + 1).map_err(|e| GplError::io(path, e))?;
            }
        }
        w.flush().map_err(|e| GplError::io(path, e))
    }

    pub fn read_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|e| GplError::io(path, e))?);
        let mut runs: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| GplError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(GplError::parse(path, i + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let rank: usize = f[3].parse().map_err(|_| GplError::parse(path, i + 1, "bad rank"))?;
            let score: f64 = f[4].parse().map_err(|_| GplError::parse(path, i + 1, "bad score"))?;
            runs.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
        }
        let runs = runs
            .into_iter()
            .map(|(q, mut v)| {
                v.sort_by_key(|e| e.0);
                (q, v.into_iter().map(|(_, p, s)| (p, s)).collect())
            })
            .collect();
        let run = RunRanking { runs };
        run.validate()?;
        Ok(run)
    }
}

/// Exact brute-force top-`cutoff` under the model's similarity.
pub fn full_rank(model: &EncoderModel, queries: &[Query], corpus: &[Passage], cutoff: usize) -> Result<RunRanking> {
    full_rank_with_index(model, &DenseIndex::build(model, corpus), queries, cutoff)
}

pub fn full_rank_with_index(model: &EncoderModel, index: &DenseIndex, queries: &[Query], cutoff: usize) -> Result<RunRanking> {
    let runs = queries
        .par_iter()
        .map(|q| Ok((q.id.clone(), index.search(model.similarity, &model.encode(&q.text), cutoff)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(RunRanking { runs })
}

/// Rank with any [`Retriever`], e.g. BM25.
pub fn rank_with(retriever: &dyn Retriever, queries: &[Query], cutoff: usize) -> Result<RunRanking> {
    let runs = queries
        .par_iter()
        .map(|q| Ok((q.id.clone(), retriever.retrieve(&q.text, cutoff)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(RunRanking { runs })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `rel`
    #[default]
    Linear,
    /// `2^rel - 1`
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(GplError::Range("metric cutoff k must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// `DCG@k / IDCG@k` with discount `log2(i + 1)`; 0 when nothing is relevant.
pub fn ndcg_at_k(ranking: &[(String, f64)], judged: &BTreeMap<String, u32>, k: usize, gain: Gain) -> Result<f64> {
    check_k(k)?;
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (pid, _))| gain.apply(judged.get(pid).copied().unwrap_or(0)) / discount(i))
        .sum();
    let mut grades: Vec<u32> = judged.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades.iter().take(k).enumerate().map(|(i, &g)| gain.apply(g) / discount(i)).sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Reciprocal rank of the first passage with grade >= 1 in the top `k`.
pub fn mrr_at_k(ranking: &[(String, f64)], judged: &BTreeMap<String, u32>, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(ranking
        .iter()
        .take(k)
        .position(|(pid, _)| judged.get(pid).is_some_and(|&g| g >= 1))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ndcg(usize),
    Mrr(usize),
}

impl Metric {
    pub fn compute(self, ranking: &[(String, f64)], judged: &BTreeMap<String, u32>, gain: Gain) -> Result<f64> {
        match self {
            Metric::Ndcg(k) => ndcg_at_k(ranking, judged, k, gain),
            Metric::Mrr(k) => mrr_at_k(ranking, judged, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg(k) => write!(f, "ndcg@{k}"),
            Metric::Mrr(k) => write!(f, "mrr@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = GplError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GplError::Config(format!("unknown metric `{s}` (expected ndcg@k or mrr@k)"));
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        check_k(k)?;
        match name.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg(k)),
            "mrr" => Ok(Metric::Mrr(k)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Vec<Metric>,
    pub gain: Gain,
    pub n_queries: usize,
    /// Metric name -> query id -> value.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    /// Metric name -> mean over evaluated queries.
    pub averages: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn average(&self, metric: Metric) -> Option<f64> {
        self.averages.get(&metric.to_string()).copied()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| GplError::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| GplError::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GplError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GplError::parse(path, 1, e.to_string()))
    }
}

/// Score every query of `run` that has a non-empty qrels entry. Judged
/// queries missing from the run are skipped, as are run queries without
/// judgments.
pub fn evaluate(run: &RunRanking, qrels: &Qrels, metrics: &[Metric], gain: Gain) -> Result<EvalReport> {
    if metrics.is_empty() {
        return Err(GplError::Config("no metrics requested".into()));
    }
    let judged: Vec<(&String, &BTreeMap<String, u32>)> = qrels
        .judgments
        .iter()
        .filter(|(qid, j)| {
            let keep = !j.is_empty() && run.runs.contains_key(*qid);
            if !keep {
                log::debug!("query {qid} skipped from evaluation");
            }
            keep
        })
        .collect();
    if judged.is_empty() {
        return Err(GplError::Config("no judged queries in the run".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut averages = BTreeMap::new();
    for &m in metrics {
        let values = judged
            .par_iter()
            .map(|(qid, j)| Ok(((*qid).clone(), m.compute(&run.runs[*qid], j, gain)?)))
            .collect::<Result<BTreeMap<String, f64>>>()?;
        averages.insert(m.to_string(), values.values().sum::<f64>() / values.len() as f64);
        per_query.insert(m.to_string(), values);
    }
    Ok(EvalReport { metrics: metrics.to_vec(), gain, n_queries: judged.len(), per_query, averages })
}

/// Re-score the first `top_n` candidates of each query with `ce` and sort
/// by that score (ties by passage id). Later candidates are dropped.
pub fn ce_rerank(
    first_stage: &RunRanking,
    ce: &dyn CrossEncoderScorer,
    queries: &[Query],
    corpus: &[Passage],
    top_n: usize,
) -> Result<RunRanking> {
    let query_text: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let passages: HashMap<&str, &Passage> = corpus.iter().map(|p| (p.id.as_str(), p)).collect();
    let runs = first_stage
        .runs
        .par_iter()
        .map(|(qid, ranked)| {
            let q = query_text
                .get(qid.as_str())
                .ok_or_else(|| GplError::UnknownId { what: "query", id: qid.clone() })?;
            let mut rescored = ranked
                .iter()
                .take(top_n)
                .map(|(pid, _)| {
                    let p = passages
                        .get(pid.as_str())
                        .ok_or_else(|| GplError::UnknownId { what: "passage", id: pid.clone() })?;
                    let s = ce.score(q, &passage_text(p));
                    if !s.is_finite() {
                        return Err(GplError::NonFinite(format!("cross-encoder score for ({qid}, {pid})")));
                    }
                    Ok((pid.clone(), s))
                })
                .collect::<Result<Ranked>>()?;
            rescored.sort_by(rank_order);
            Ok((qid.clone(), rescored))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(RunRanking { runs })
}
