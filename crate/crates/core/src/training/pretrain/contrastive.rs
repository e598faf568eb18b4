use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{GplError, Result};
use crate::model::{EncodeCache, EncoderModel, Gradients, Trainable};
use crate::seed::{derive_seed, rng_for};
use crate::training::finetune::mnrl_from_caches;
use crate::training::LossConfig;

fn dropout_caches(model: &EncoderModel, texts: &[&[usize]], rate: f64, seed: u64, view: u64) -> Result<Vec<EncodeCache>> {
    texts
        .par_iter()
        .enumerate()
        .map(|(i, ids)| {
            let mut rng = rng_for(seed, &["simcse".into(), i.into(), view.into()]);
            let mask = model.dropout_mask(rate, &mut rng)?;
            Ok(model.forward_ids(ids, Some(mask)))
        })
        .collect()
}

/// Two dropout-perturbed encodings of every text, as `(queries, passages)`.
pub fn simcse_pairs(model: &EncoderModel, texts: &[&[usize]], rate: f64, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let stack = |caches: Vec<EncodeCache>| {
        let mut m = Array2::zeros((caches.len(), model.dim()));
        for (i, c) in caches.into_iter().enumerate() {
            m.row_mut(i).assign(&c.output);
        }
        m
    };
    Ok((
        stack(dropout_caches(model, texts, rate, seed, 0)?),
        stack(dropout_caches(model, texts, rate, seed, 1)?),
    ))
}

/// MNRL between the two dropout views of each text.
pub fn simcse_loss(model: &EncoderModel, texts: &[&[usize]], rate: f64, seed: u64, cfg: &LossConfig) -> Result<(f64, Gradients)> {
    let q = dropout_caches(model, texts, rate, seed, 0)?;
    let p = dropout_caches(model, texts, rate, seed, 1)?;
    let (loss, mut gq, gp) = mnrl_from_caches(model, &q, model, &p, cfg, None)?;
    gq.add_scaled(&gp, 1.0)?;
    Ok((loss, gq))
}

/// Two independently initialised encoders; `a` is kept after training.
#[derive(Debug, Clone, PartialEq)]
pub struct CtPair {
    pub a: EncoderModel,
    pub b: EncoderModel,
}

impl CtPair {
    /// `b` copies the architecture of `a` with a fresh initialisation.
    pub fn new(a: EncoderModel, seed: u64) -> Result<Self> {
        let mut b = EncoderModel::new(
            a.vocab().clone(),
            a.dim(),
            a.pooling,
            a.similarity,
            derive_seed(seed, &["ct-second-encoder".into()]),
        )?;
        b.max_seq_len = a.max_seq_len;
        Ok(CtPair { a, b })
    }
}

impl Trainable for CtPair {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.a.tensors();
        t.extend(self.b.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.a.tensors_mut();
        t.extend(self.b.tensors_mut());
        t
    }
}

/// MNRL with queries encoded by `a` and passages by `b`. Gradients cover
/// both encoders, `a` first.
pub fn ct_step(pair: &CtPair, queries: &[&[usize]], passages: &[&[usize]], cfg: &LossConfig) -> Result<(f64, Gradients)> {
    if queries.len() != passages.len() {
        return Err(GplError::Shape(format!("{} queries vs {} passages", queries.len(), passages.len())));
    }
    let q: Vec<EncodeCache> = queries.par_iter().map(|ids| pair.a.forward_ids(ids, None)).collect();
    let p: Vec<EncodeCache> = passages.par_iter().map(|ids| pair.b.forward_ids(ids, None)).collect();
    let (loss, ga, gb) = mnrl_from_caches(&pair.a, &q, &pair.b, &p, cfg, None)?;
    Ok((loss, Gradients::concat(vec![ga, gb])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_diff_gradcheck, Pooling, Similarity, Vocab};
    use crate::training::mnrl_batch;

    fn encoder(seed: u64) -> EncoderModel {
        let vocab = Vocab::new((0..12).map(|i| format!("w{i}")));
        EncoderModel::new(vocab, 6, Pooling::Mean, Similarity::Cosine, seed).unwrap()
    }

    fn texts() -> Vec<Vec<usize>> {
        (0..8).map(|i| vec![3 + i, 4 + (i * 3) % 11, 3 + (i * 5) % 12]).collect()
    }

    #[test]
    fn zero_dropout_views_are_identical() {
        let t = texts();
        let refs: Vec<&[usize]> = t.iter().map(|v| v.as_slice()).collect();
        let (q, p) = simcse_pairs(&encoder(0), &refs, 0.0, 4).unwrap();
        assert_eq!(q, p);
        let (q2, p2) = simcse_pairs(&encoder(0), &refs, 0.1, 4).unwrap();
        assert_eq!(simcse_pairs(&encoder(0), &refs, 0.1, 4).unwrap(), (q2.clone(), p2.clone()));
        assert_ne!(q2, p2);
        assert!(simcse_pairs(&encoder(0), &refs, 1.0, 4).is_err());
    }

    #[test]
    fn simcse_regression_anchor() {
        let t = texts();
        let refs: Vec<&[usize]> = t.iter().map(|v| v.as_slice()).collect();
        let (loss, _) = simcse_loss(&encoder(0), &refs, 0.1, 7, &LossConfig::default()).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        let (again, _) = simcse_loss(&encoder(0), &refs, 0.1, 7, &LossConfig::default()).unwrap();
        assert_eq!(loss, again);
    }

    #[test]
    fn simcse_gradcheck() {
        let t = texts();
        let refs: Vec<&[usize]> = t.iter().map(|v| v.as_slice()).collect();
        let cfg = LossConfig { tau: 5.0, ..LossConfig::default() };
        let r = finite_diff_gradcheck(|m: &EncoderModel| simcse_loss(m, &refs, 0.1, 3, &cfg), &encoder(2), 1e-5, 1e-4, 0)
            .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn ct_with_equal_encoders_matches_simcse_without_dropout() {
        let t = texts();
        let refs: Vec<&[usize]> = t.iter().map(|v| v.as_slice()).collect();
        let cfg = LossConfig::default();
        let pair = CtPair { a: encoder(1), b: encoder(1) };
        let (ct, _) = ct_step(&pair, &refs, &refs, &cfg).unwrap();
        let (sim, _) = simcse_loss(&encoder(1), &refs, 0.0, 0, &cfg).unwrap();
        let (plain, _) = mnrl_batch(&encoder(1), &refs, &refs, &cfg, None).unwrap();
        assert_eq!(ct, sim);
        assert_eq!(ct, plain);
    }

    #[test]
    fn ct_gradients_reach_both_encoders() {
        let t = texts();
        let refs: Vec<&[usize]> = t.iter().map(|v| v.as_slice()).collect();
        let pair = CtPair::new(encoder(3), 9).unwrap();
        assert_ne!(pair.a, pair.b);
        let cfg = LossConfig { tau: 5.0, ..LossConfig::default() };
        let (_, g) = ct_step(&pair, &refs, &refs, &cfg).unwrap();
        let (ga, gb) = g.clone().split_at(2);
        assert!(ga.max_abs() > 0.0 && gb.max_abs() > 0.0);
        let r = finite_diff_gradcheck(|p: &CtPair| ct_step(p, &refs, &refs, &cfg), &pair, 1e-5, 1e-4, 1).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
