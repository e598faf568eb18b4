//! Cross-encoder pseudo labels.
//!
//! Every usable generated query contributes one `(query, positive, negative,
//! margin)` tuple, where the margin is the cross-encoder's score difference
//! between the source passage and one uniformly sampled mined negative.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{passage_text, Passage, Query};
use crate::error::{GplError, Result};
use crate::mining::NegativePool;
use crate::model::CrossEncoderScorer;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub query_id: String,
    pub pos_id: String,
    pub neg_id: String,
    /// `CE(q, pos) - CE(q, neg)`, unbounded.
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub cross_encoder: String,
    pub miners: Vec<String>,
    pub tuples_per_query: usize,
    pub n_tuples: usize,
    pub n_skipped_queries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GplDataset {
    pub tuples: Vec<TrainingTuple>,
    pub manifest: DatasetManifest,
}

/// `CE(q, pos) - CE(q, neg)`. A negative value means the cross-encoder prefers
/// the mined negative, i.e. it is likely a false negative.
pub fn ce_margin(ce: &dyn CrossEncoderScorer, query: &str, pos: &str, neg: &str) -> Result<f64> {
    let (sp, sn) = (ce.score(query, pos), ce.score(query, neg));
    if !sp.is_finite() || !sn.is_finite() {
        return Err(GplError::NonFinite(format!("cross-encoder scores {sp}, {sn}")));
    }
    Ok(sp - sn)
}

fn draw_negative(pool: &NegativePool, seed: u64, draw: usize) -> Option<String> {
    let candidates = pool.candidates();
    if candidates.is_empty() {
        return None;
    }
    let mut rng = if draw == 0 {
        rng_for(seed, &["sample-negative".into(), pool.query_id.as_str().into()])
    } else {
        rng_for(seed, &["sample-negative".into(), pool.query_id.as_str().into(), draw.into()])
    };
    Some(candidates[rng.random_range(0..candidates.len())].clone())
}

/// `(source passage, uniformly drawn negative)`; `None` for an unusable pool.
pub fn sample_tuple(query: &Query, pool: &NegativePool, seed: u64) -> Option<(String, String)> {
    let pos = query.source_passage_id.clone()?;
    draw_negative(pool, seed, 0).map(|neg| (pos, neg))
}

pub fn build_dataset(
    queries: &[Query],
    pools: &[NegativePool],
    corpus: &[Passage],
    ce: &dyn CrossEncoderScorer,
    seed: u64,
) -> Result<GplDataset> {
    build_dataset_with(queries, pools, corpus, ce, seed, 1)
}

/// As [`build_dataset`], drawing `tuples_per_query` independent negatives
/// (with replacement) for every query.
pub fn build_dataset_with(
    queries: &[Query],
    pools: &[NegativePool],
    corpus: &[Passage],
    ce: &dyn CrossEncoderScorer,
    seed: u64,
    tuples_per_query: usize,
) -> Result<GplDataset> {
    if tuples_per_query == 0 {
        return Err(GplError::Config("tuples_per_query must be >= 1".into()));
    }
    let texts: HashMap<&str, String> = corpus.iter().map(|p| (p.id.as_str(), passage_text(p))).collect();
    let by_query: HashMap<&str, &NegativePool> = pools.iter().map(|p| (p.query_id.as_str(), p)).collect();

    let mut sorted: Vec<&Query> = queries.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let text_of = |id: &str| -> Result<&String> {
        texts.get(id).ok_or_else(|| GplError::UnknownId { what: "corpus", id: id.to_string() })
    };

    let per_query: Vec<Result<Vec<TrainingTuple>>> = sorted
        .par_iter()
        .map(|q| {
            let Some(pool) = by_query.get(q.id.as_str()) else {
                return Ok(Vec::new());
            };
            let Some(pos) = q.source_passage_id.as_deref() else {
                return Ok(Vec::new());
            };
            let mut out = Vec::with_capacity(tuples_per_query);
            for draw in 0..tuples_per_query {
                let Some(neg) = draw_negative(pool, seed, draw) else {
                    break;
                };
                let margin = ce_margin(ce, &q.text, text_of(pos)?, text_of(&neg)?)?;
                out.push(TrainingTuple { query_id: q.id.clone(), pos_id: pos.to_string(), neg_id: neg, margin });
            }
            Ok(out)
        })
        .collect();

    let mut tuples = Vec::new();
    let mut skipped = 0;
    for r in per_query {
        let t = r?;
        if t.is_empty() {
            skipped += 1;
        }
        tuples.extend(t);
    }
    if skipped > 0 {
        log::info!("{skipped} queries without usable negatives were skipped");
    }
    let mut miners: Vec<String> = pools.iter().flat_map(|p| p.by_retriever.keys().cloned()).collect();
    miners.sort();
    miners.dedup();
    Ok(GplDataset {
        manifest: DatasetManifest {
            seed,
            cross_encoder: ce.id(),
            miners,
            tuples_per_query,
            n_tuples: tuples.len(),
            n_skipped_queries: skipped,
        },
        tuples,
    })
}

/// Binary labels for the same tuples: 1 for the positive, 0 for the negative.
pub fn qgen_labels(dataset: &GplDataset) -> Vec<(f64, f64)> {
    dataset.tuples.iter().map(|_| (1.0, 0.0)).collect()
}

/// `qid<TAB>pos_id<TAB>neg_id<TAB>margin`, margin with 17 significant digits.
pub fn write_dataset(path: impl AsRef<Path>, dataset: &GplDataset) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GplError::io(parent, e))?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(|e| GplError::io(path, e))?);
    for t in &dataset.tuples {
        writeln!(w, "{}\t{}\t{}\t{:.16e}", t.query_id, t.pos_id, t.neg_id, t.margin)
            .map_err(|e| GplError::io(path, e))?;
    }
    w.flush().map_err(|e| GplError::io(path, e))?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest).map_err(|e| GplError::Serde(e.to_string()))?;
    let sidecar = manifest_path(path);
    std::fs::write(&sidecar, manifest + "\n").map_err(|e| GplError::io(sidecar, e))
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<GplDataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(|e| GplError::io(path, e))?);
    let mut tuples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GplError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [q, p, n, m] = cols[..] else {
            return Err(GplError::parse(path, i + 1, format!("expected 4 columns, found {}", cols.len())));
        };
        let margin: f64 = m
            .parse()
            .map_err(|_| GplError::parse(path, i + 1, format!("bad margin `{m}`")))?;
        if !margin.is_finite() {
            return Err(GplError::parse(path, i + 1, "non-finite margin"));
        }
        if p == n {
            return Err(GplError::parse(path, i + 1, "positive equals negative"));
        }
        tuples.push(TrainingTuple { query_id: q.into(), pos_id: p.into(), neg_id: n.into(), margin });
    }
    let sidecar = manifest_path(path);
    let manifest = match std::fs::read_to_string(&sidecar) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| GplError::parse(&sidecar, 1, e.to_string()))?,
        Err(_) => DatasetManifest {
            seed: 0,
            cross_encoder: "unknown".into(),
            miners: Vec::new(),
            tuples_per_query: 1,
            n_tuples: tuples.len(),
            n_skipped_queries: 0,
        },
    };
    Ok(GplDataset { tuples, manifest })
}
