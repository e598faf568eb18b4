use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};

use super::corrupt::MlmCorruption;
use crate::error::{GplError, Result};
use crate::model::{EncoderModel, Gradients, Pooling, Trainable};
use crate::seed::rng_for;
use crate::training::losses::token_cross_entropy;

/// `acc += a ⊗ b`
fn add_outer(acc: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    general_mat_mul(1.0, &a.insert_axis(Axis(1)), &b.insert_axis(Axis(0)), 1.0, acc);
}

fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64, tag: &str) -> Result<Array2<f64>> {
    let normal = Normal::new(0.0, scale).map_err(|e| GplError::Config(e.to_string()))?;
    let mut rng = rng_for(seed, &[tag.into()]);
    Ok(Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng)))
}

/// Encoder plus a bottleneck decoder with tied embeddings: at step `t` the
/// logits are `E · (A z + B E[x_{t-1}])`, with `z` the pooled encoding of the
/// corrupted text and `x_{-1}` the BOS token.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdaeModel {
    pub encoder: EncoderModel,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl TsdaeModel {
    pub fn new(encoder: EncoderModel) -> Self {
        let d = encoder.dim();
        TsdaeModel { encoder, a: Array2::eye(d), b: Array2::zeros((d, d)) }
    }
}

impl Trainable for TsdaeModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.encoder.embeddings, &self.encoder.projection, &self.a, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.encoder.embeddings, &mut self.encoder.projection, &mut self.a, &mut self.b]
    }
}

/// Teacher-forced reconstruction cross-entropy of `original` from the
/// encoding of `corrupted`.
pub fn tsdae_loss(model: &TsdaeModel, original: &[usize], corrupted: &[usize]) -> Result<(f64, Gradients)> {
    if original.is_empty() {
        return Err(GplError::Shape("cannot reconstruct an empty sequence".into()));
    }
    let enc = &model.encoder;
    let emb = &enc.embeddings;
    let cache = enc.forward_ids(corrupted, None);
    let az = model.a.dot(&cache.output);
    let bos = enc.vocab().bos_id();
    let prev: Vec<usize> = std::iter::once(bos).chain(original[..original.len() - 1].iter().copied()).collect();
    let hidden: Vec<Array1<f64>> = prev.iter().map(|&p| &az + &model.b.dot(&emb.row(p))).collect();
    let logits: Vec<Array1<f64>> = hidden.iter().map(|h| emb.dot(h)).collect();
    let (loss, d_logits) = token_cross_entropy(&logits, original)?;

    let mut grads = model.zero_grads();
    let mut dz = Array1::zeros(enc.dim());
    for ((dl, h), &p) in d_logits.iter().zip(&hidden).zip(&prev) {
        add_outer(&mut grads.0[0], dl.view(), h.view());
        let dh = emb.t().dot(dl);
        add_outer(&mut grads.0[2], dh.view(), cache.output.view());
        dz += &model.a.t().dot(&dh);
        add_outer(&mut grads.0[3], dh.view(), emb.row(p));
        let d_prev = model.b.t().dot(&dh);
        grads.0[0].row_mut(p).scaled_add(1.0, &d_prev);
    }
    enc.backward(&cache, dz.view(), &mut grads);
    Ok((loss, grads))
}

/// Encoder plus a token-prediction head over per-position states
/// `s_i = W (E[c_i] + mean_j E[c_j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmModel {
    pub encoder: EncoderModel,
    /// `vocab x d`
    pub head: Array2<f64>,
    /// `1 x vocab`
    pub bias: Array2<f64>,
}

impl MlmModel {
    pub fn new(encoder: EncoderModel, seed: u64) -> Result<Self> {
        let (v, d) = encoder.embeddings.dim();
        let head = random_matrix(v, d, 1.0 / (d as f64).sqrt(), seed, "mlm-head")?;
        Ok(MlmModel { encoder, head, bias: Array2::zeros((1, v)) })
    }
}

impl Trainable for MlmModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.encoder.embeddings, &self.encoder.projection, &self.head, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.encoder.embeddings, &mut self.encoder.projection, &mut self.head, &mut self.bias]
    }
}

fn check_corruption(original: &[usize], corruption: &MlmCorruption) -> Result<()> {
    if original.is_empty() || corruption.positions.is_empty() {
        return Err(GplError::Shape("no positions to predict".into()));
    }
    if corruption.input.len() != original.len() {
        return Err(GplError::Shape(format!(
            "corrupted length {} vs original {}",
            corruption.input.len(),
            original.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of the original tokens at the selected positions.
pub fn mlm_loss(model: &MlmModel, original: &[usize], corruption: &MlmCorruption) -> Result<(f64, Gradients)> {
    check_corruption(original, corruption)?;
    let enc = &model.encoder;
    let emb = &enc.embeddings;
    let input = &corruption.input;
    let n = input.len() as f64;
    let mut mean = Array1::zeros(enc.dim());
    for &c in input {
        mean += &emb.row(c);
    }
    mean /= n;
    let xs: Vec<Array1<f64>> = corruption.positions.iter().map(|&i| &emb.row(input[i]) + &mean).collect();
    let states: Vec<Array1<f64>> = xs.iter().map(|x| enc.projection.dot(x)).collect();
    let logits: Vec<Array1<f64>> = states.iter().map(|s| model.head.dot(s) + model.bias.row(0)).collect();
    let targets: Vec<usize> = corruption.positions.iter().map(|&i| original[i]).collect();
    let (loss, d_logits) = token_cross_entropy(&logits, &targets)?;

    let mut grads = model.zero_grads();
    let mut d_mean = Array1::zeros(enc.dim());
    for (((dl, s), x), &i) in d_logits.iter().zip(&states).zip(&xs).zip(&corruption.positions) {
        add_outer(&mut grads.0[2], dl.view(), s.view());
        grads.0[3].row_mut(0).scaled_add(1.0, dl);
        let ds = model.head.t().dot(dl);
        add_outer(&mut grads.0[1], ds.view(), x.view());
        let dx = enc.projection.t().dot(&ds);
        grads.0[0].row_mut(input[i]).scaled_add(1.0, &dx);
        d_mean += &dx;
    }
    for &c in input {
        grads.0[0].row_mut(c).scaled_add(1.0 / n, &d_mean);
    }
    Ok((loss, grads))
}

/// CLS-pooled encoder plus a head predicting masked token `i` from the
/// final pooled state concatenated with the layer-0 state `E[c_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondenserModel {
    pub encoder: EncoderModel,
    /// `vocab x 2d`
    pub head: Array2<f64>,
    /// `1 x vocab`
    pub bias: Array2<f64>,
}

impl CondenserModel {
    pub fn new(encoder: EncoderModel, seed: u64) -> Result<Self> {
        if encoder.pooling != Pooling::Cls {
            return Err(GplError::Config("the condenser objective requires CLS pooling".into()));
        }
        let (v, d) = encoder.embeddings.dim();
        let head = random_matrix(v, 2 * d, 1.0 / (2.0 * d as f64).sqrt(), seed, "condenser-head")?;
        Ok(CondenserModel { encoder, head, bias: Array2::zeros((1, v)) })
    }
}

impl Trainable for CondenserModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.encoder.embeddings, &self.encoder.projection, &self.head, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.encoder.embeddings, &mut self.encoder.projection, &mut self.head, &mut self.bias]
    }
}

pub fn condensor_loss(model: &CondenserModel, original: &[usize], corruption: &MlmCorruption) -> Result<(f64, Gradients)> {
    let enc = &model.encoder;
    if enc.pooling != Pooling::Cls {
        return Err(GplError::Config("the condenser objective requires CLS pooling".into()));
    }
    check_corruption(original, corruption)?;
    let d = enc.dim();
    let input = &corruption.input;
    let cache = enc.forward_ids(input, None);
    let xs: Vec<Array1<f64>> = corruption
        .positions
        .iter()
        .map(|&i| {
            let mut x = Array1::zeros(2 * d);
            x.slice_mut(s![..d]).assign(&cache.output);
            x.slice_mut(s![d..]).assign(&enc.embeddings.row(input[i]));
            x
        })
        .collect();
    let logits: Vec<Array1<f64>> = xs.iter().map(|x| model.head.dot(x) + model.bias.row(0)).collect();
    let targets: Vec<usize> = corruption.positions.iter().map(|&i| original[i]).collect();
    let (loss, d_logits) = token_cross_entropy(&logits, &targets)?;

    let mut grads = model.zero_grads();
    let mut d_cls = Array1::zeros(d);
    for ((dl, x), &i) in d_logits.iter().zip(&xs).zip(&corruption.positions) {
        add_outer(&mut grads.0[2], dl.view(), x.view());
        grads.0[3].row_mut(0).scaled_add(1.0, dl);
        let dx = model.head.t().dot(dl);
        d_cls += &dx.slice(s![..d]);
        grads.0[0].row_mut(input[i]).scaled_add(1.0, &dx.slice(s![d..]));
    }
    enc.backward(&cache, d_cls.view(), &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_diff_gradcheck, Similarity, Vocab};
    use crate::training::pretrain::corrupt::{condenser_corrupt, mlm_corrupt, tsdae_corrupt};

    fn encoder(pooling: Pooling, seed: u64) -> EncoderModel {
        let vocab = Vocab::new((0..9).map(|i| format!("w{i}")));
        EncoderModel::new(vocab, 5, pooling, Similarity::Dot, seed).unwrap()
    }

    const TEXT: [usize; 7] = [3, 7, 4, 4, 9, 11, 5];

    #[test]
    fn tsdae_gradcheck() {
        for seed in 0..3 {
            let mut m = TsdaeModel::new(encoder(Pooling::Mean, seed));
            m.b = random_matrix(5, 5, 0.3, seed, "b").unwrap();
            m.a = random_matrix(5, 5, 0.5, seed, "a").unwrap();
            let corrupted = tsdae_corrupt(&TEXT, 0.6, seed).unwrap();
            let r = finite_diff_gradcheck(|m: &TsdaeModel| tsdae_loss(m, &TEXT, &corrupted), &m, 1e-5, 1e-4, seed)
                .unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn tsdae_uniform_logits_give_log_vocab() {
        let mut m = TsdaeModel::new(encoder(Pooling::Mean, 0));
        m.encoder.embeddings.fill(0.0);
        let (loss, _) = tsdae_loss(&m, &TEXT, &TEXT[..2]).unwrap();
        assert!((loss - (m.encoder.vocab().len() as f64).ln()).abs() < 1e-12);
        assert!(tsdae_loss(&m, &[], &TEXT).is_err());
    }

    #[test]
    fn mlm_gradcheck() {
        for seed in 0..3 {
            let m = MlmModel::new(encoder(Pooling::Mean, seed), seed).unwrap();
            let c = mlm_corrupt(&TEXT, 0.4, m.encoder.vocab(), seed).unwrap();
            let r = finite_diff_gradcheck(|m: &MlmModel| mlm_loss(m, &TEXT, &c), &m, 1e-5, 1e-4, seed).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn mlm_zero_head_gives_log_vocab() {
        let mut m = MlmModel::new(encoder(Pooling::Mean, 0), 0).unwrap();
        m.head.fill(0.0);
        let c = mlm_corrupt(&TEXT, 0.15, m.encoder.vocab(), 0).unwrap();
        let (loss, _) = mlm_loss(&m, &TEXT, &c).unwrap();
        assert!((loss - (m.encoder.vocab().len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn condenser_gradcheck_and_pooling_check() {
        assert!(matches!(CondenserModel::new(encoder(Pooling::Mean, 0), 0), Err(GplError::Config(_))));
        for seed in 0..3 {
            let m = CondenserModel::new(encoder(Pooling::Cls, seed), seed).unwrap();
            let c = condenser_corrupt(&TEXT, 0.4, m.encoder.vocab(), seed).unwrap();
            let r = finite_diff_gradcheck(|m: &CondenserModel| condensor_loss(m, &TEXT, &c), &m, 1e-5, 1e-4, seed)
                .unwrap();
            assert!(r.pass, "{r:?}");
        }
    }
}
