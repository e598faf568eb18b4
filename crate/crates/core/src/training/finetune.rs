use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::losses::{margin_mse_loss, mnrl_loss_masked, LossConfig};
use super::{BatchSchedule, LossTrace, TrainHooks, TrainRunConfig};
use crate::corpus::{passage_text, Passage, Query};
use crate::error::{GplError, Result};
use crate::labeling::GplDataset;
use crate::mining::NegativePool;
use crate::model::{apply_gradients, EncodeCache, EncoderModel, Gradients, OptimizerState, Similarity, Trainable};
use crate::seed::rng_for;

/// A training tuple with its texts resolved to token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleIds {
    pub query: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
    pub margin: f64,
}

/// MarginMSE over a batch, with `δ̂ = σ(q, p) - σ(q, n)` under the model's
/// similarity.
pub fn margin_mse_batch(model: &EncoderModel, batch: &[&TupleIds]) -> Result<(f64, Gradients)> {
    let caches: Vec<[EncodeCache; 3]> = batch
        .par_iter()
        .map(|t| {
            [
                model.forward_ids(&t.query, None),
                model.forward_ids(&t.pos, None),
                model.forward_ids(&t.neg, None),
            ]
        })
        .collect();
    let mut predicted = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(batch.len());
    for [q, p, n] in &caches {
        let (sp, dq_p, dp) = model.similarity.score_with_grad(q.output.view(), p.output.view())?;
        let (sn, dq_n, dn) = model.similarity.score_with_grad(q.output.view(), n.output.view())?;
        predicted.push(sp - sn);
        parts.push((dq_p - dq_n, dp, dn));
    }
    let target: Vec<f64> = batch.iter().map(|t| t.margin).collect();
    let (loss, d_margin) = margin_mse_loss(&predicted, &target)?;
    let mut grads = model.zero_grads();
    for (([q, p, n], (dq, dp, dn)), g) in caches.iter().zip(parts).zip(d_margin) {
        model.backward(q, (dq * g).view(), &mut grads);
        model.backward(p, (dp * g).view(), &mut grads);
        model.backward(n, (dn * -g).view(), &mut grads);
    }
    Ok((loss, grads))
}

fn stack(caches: &[EncodeCache], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((caches.len(), dim));
    for (mut row, c) in m.axis_iter_mut(Axis(0)).zip(caches) {
        row.assign(&c.output);
    }
    m
}

/// MNRL over already-encoded queries and candidates, returning gradients for
/// the query-side and candidate-side encoders separately.
pub(crate) fn mnrl_from_caches(
    q_model: &EncoderModel,
    q_caches: &[EncodeCache],
    p_model: &EncoderModel,
    p_caches: &[EncodeCache],
    cfg: &LossConfig,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Gradients, Gradients)> {
    let q = stack(q_caches, q_model.dim());
    let p = stack(p_caches, p_model.dim());
    let out = mnrl_loss_masked(&q, &p, cfg, mask)?;
    let mut gq = q_model.zero_grads();
    for (c, d) in q_caches.iter().zip(out.d_queries.rows()) {
        q_model.backward(c, d, &mut gq);
    }
    let mut gp = p_model.zero_grads();
    for (c, d) in p_caches.iter().zip(out.d_candidates.rows()) {
        p_model.backward(c, d, &mut gp);
    }
    Ok((out.loss, gq, gp))
}

/// MNRL of one encoder over token-id batches. `candidates` starts with the
/// positives of each query and may carry extra hard-negative rows.
pub fn mnrl_batch(
    model: &EncoderModel,
    queries: &[&[usize]],
    candidates: &[&[usize]],
    cfg: &LossConfig,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Gradients)> {
    let qc: Vec<EncodeCache> = queries.par_iter().map(|ids| model.forward_ids(ids, None)).collect();
    let pc: Vec<EncodeCache> = candidates.par_iter().map(|ids| model.forward_ids(ids, None)).collect();
    let (loss, mut gq, gp) = mnrl_from_caches(model, &qc, model, &pc, cfg, mask)?;
    gq.add_scaled(&gp, 1.0)?;
    Ok((loss, gq))
}

fn passage_lookup(corpus: &[Passage]) -> HashMap<&str, &Passage> {
    corpus.iter().map(|p| (p.id.as_str(), p)).collect()
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(GplError::NonFinite(format!("training loss at step {step}")))
    }
}

/// Resolve every tuple's query and passage ids to token ids.
pub fn resolve_tuples(
    model: &EncoderModel,
    dataset: &GplDataset,
    corpus: &[Passage],
    queries: &[Query],
) -> Result<Vec<TupleIds>> {
    let passages = passage_lookup(corpus);
    let query_text: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    dataset
        .tuples
        .par_iter()
        .map(|t| {
            let q = query_text
                .get(t.query_id.as_str())
                .ok_or_else(|| GplError::UnknownId { what: "query", id: t.query_id.clone() })?;
            let text_of = |id: &str| {
                passages
                    .get(id)
                    .map(|p| passage_text(p))
                    .ok_or_else(|| GplError::UnknownId { what: "passage", id: id.to_string() })
            };
            Ok(TupleIds {
                query: model.token_ids(q),
                pos: model.token_ids(&text_of(&t.pos_id)?),
                neg: model.token_ids(&text_of(&t.neg_id)?),
                margin: t.margin,
            })
        })
        .collect()

}

pub fn gpl_train(
    model: EncoderModel,
    dataset: &GplDataset,
    corpus: &[Passage],
    queries: &[Query],
    cfg: &TrainRunConfig,
) -> Result<(EncoderModel, LossTrace)> {
    gpl_train_with(model, dataset, corpus, queries, cfg, &TrainHooks::default())
}

/// MarginMSE distillation of the labelled tuples into a dot-product encoder.
pub fn gpl_train_with(
    mut model: EncoderModel,
    dataset: &GplDataset,
    corpus: &[Passage],
    queries: &[Query],
    cfg: &TrainRunConfig,
    hooks: &TrainHooks,
) -> Result<(EncoderModel, LossTrace)> {
    cfg.validate()?;
    if dataset.tuples.is_empty() {
        return Err(GplError::Config("training dataset is empty".into()));
    }
    if model.similarity != Similarity::Dot {
        return Err(GplError::Config("MarginMSE training expects a dot-product model".into()));
    }
    let tuples = resolve_tuples(&model, dataset, corpus, queries)?;

    let steps = cfg.total_steps(tuples.len());
    let mut schedule = BatchSchedule::new(tuples.len(), cfg.batch_size, cfg.seed, "gpl");
    let mut opt = OptimizerState::with_momentum(cfg.learning_rate, cfg.momentum)?;
    let mut trace = LossTrace::new(cfg.log_every);
    for step in 1..=steps {
        let batch: Vec<&TupleIds> = schedule.next_batch().into_iter().map(|i| &tuples[i]).collect();
        let (loss, grads) = margin_mse_batch(&model, &batch)?;
        check_finite(loss, step)?;
        apply_gradients(&mut model, &grads, &mut opt)?;
        trace.record(step, loss);
        hooks.after_step(step, &model)?;
    }
    trace.finish(steps);
    Ok((model, trace))
}

/// Negatives used by [`qgen_train`].
#[derive(Debug, Clone, Copy)]
pub enum QgenNegatives<'a> {
    /// Only the other positives of the batch.
    InBatch,
    /// Additionally one mined negative per query, sampled from its pool.
    Pool(&'a [NegativePool]),
}

pub fn qgen_train(
    model: EncoderModel,
    queries: &[Query],
    corpus: &[Passage],
    cfg: &TrainRunConfig,
    negatives: QgenNegatives<'_>,
    loss_cfg: &LossConfig,
) -> Result<(EncoderModel, LossTrace)> {
    qgen_train_with(model, queries, corpus, cfg, negatives, loss_cfg, &TrainHooks::default())
}

/// In-batch MNRL on (generated query, source passage) pairs. An epoch
/// iterates over queries. A passage repeated within a batch is masked out of
/// the rows for which it is the positive, so it is never its own negative.
#[allow(clippy::too_many_arguments)]
pub fn qgen_train_with(
    mut model: EncoderModel,
    queries: &[Query],
    corpus: &[Passage],
    cfg: &TrainRunConfig,
    negatives: QgenNegatives<'_>,
    loss_cfg: &LossConfig,
    hooks: &TrainHooks,
) -> Result<(EncoderModel, LossTrace)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if model.similarity != Similarity::Cosine || loss_cfg.similarity != Similarity::Cosine {
        return Err(GplError::Config("QGen training expects cosine similarity".into()));
    }
    if cfg.batch_size < 2 {
        return Err(GplError::Config("in-batch training needs batch_size >= 2".into()));
    }
    if queries.is_empty() {
        return Err(GplError::Config("no training queries".into()));
    }
    let passages = passage_lookup(corpus);
    let resolve = |id: &str| -> Result<Vec<usize>> {
        passages
            .get(id)
            .map(|p| model.token_ids(&passage_text(p)))
            .ok_or_else(|| GplError::UnknownId { what: "passage", id: id.to_string() })
    };
    let pairs: Vec<(Vec<usize>, &str, Vec<usize>)> = queries
        .par_iter()
        .map(|q| {
            let pid = q.source_passage_id.as_deref().ok_or_else(|| {
                GplError::Config(format!("query {} has no source passage", q.id))
            })?;
            Ok((model.token_ids(&q.text), pid, resolve(pid)?))
        })
        .collect::<Result<_>>()?;
    // query id -> (candidate ids, candidate token ids)
    let pools: HashMap<&str, Vec<(&str, Vec<usize>)>> = match negatives {
        QgenNegatives::InBatch => HashMap::new(),
        QgenNegatives::Pool(pools) => {
            let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
            let mut out = HashMap::new();
            for pool in pools {
                let mut cands = Vec::new();
                for id in pool.by_retriever.values().flatten() {
                    if cands.iter().any(|(c, _)| *c == id.as_str()) {
                        continue;
                    }
                    let ids = match cache.get(id.as_str()) {
                        Some(ids) => ids.clone(),
                        None => {
                            let ids = resolve(id)?;
                            cache.insert(id.as_str(), ids.clone());
                            ids
                        }
                    };
                    cands.push((id.as_str(), ids));
                }
                out.insert(pool.query_id.as_str(), cands);
            }
            out
        }
    };

    let steps = cfg.total_steps(pairs.len());
    let mut schedule = BatchSchedule::new(pairs.len(), cfg.batch_size, cfg.seed, "qgen");
    let mut opt = OptimizerState::with_momentum(cfg.learning_rate, cfg.momentum)?;
    let mut trace = LossTrace::new(cfg.log_every);
    for step in 1..=steps {
        let batch = schedule.next_batch();
        let epoch = schedule.epoch();
        let q_ids: Vec<&[usize]> = batch.iter().map(|&i| pairs[i].0.as_slice()).collect();
        let mut cand_ids: Vec<&[usize]> = batch.iter().map(|&i| pairs[i].2.as_slice()).collect();
        let mut cand_pids: Vec<&str> = batch.iter().map(|&i| pairs[i].1).collect();
        for &i in &batch {
            let qid = queries[i].id.as_str();
            if let Some(cands) = pools.get(qid).filter(|c| !c.is_empty()) {
                let mut rng = rng_for(cfg.seed, &["qgen-negative".into(), qid.into(), epoch.into()]);
                let (pid, ids) = &cands[rng.random_range(0..cands.len())];
                cand_pids.push(pid);
                cand_ids.push(ids.as_slice());
            }
        }
        let mask = Array2::from_shape_fn((batch.len(), cand_ids.len()), |(r, c)| {
            r != c && cand_pids[c] == cand_pids[r]
        });
        let (loss, grads) = mnrl_batch(&model, &q_ids, &cand_ids, loss_cfg, Some(&mask))?;
        check_finite(loss, step)?;
        apply_gradients(&mut model, &grads, &mut opt)?;
        trace.record(step, loss);
        hooks.after_step(step, &model)?;
    }
    trace.finish(steps);
    Ok((model, trace))
}
