use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Gradients, Trainable};
use crate::corpus::{tokenize, MAX_SEQ_LEN};
use crate::error::{GplError, Result};
use crate::seed::rng_for;

pub const OOV_TOKEN: &str = "[OOV]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const BOS_TOKEN: &str = "[BOS]";

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    /// First-token pooling.
    Cls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
}

impl Similarity {
    pub fn score(self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
        if u.len() != v.len() {
            return Err(GplError::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
        }
        let dot = u.dot(&v);
        match self {
            Similarity::Dot => Ok(dot),
            Similarity::Cosine => {
                let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
                if nu == 0.0 || nv == 0.0 {
                    return Err(GplError::Domain("cosine similarity of a zero vector".into()));
                }
                Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
            }
        }
    }

    /// Score plus its gradients with respect to `u` and `v`.
    pub fn score_with_grad(
        self,
        u: ArrayView1<f64>,
        v: ArrayView1<f64>,
    ) -> Result<(f64, Array1<f64>, Array1<f64>)> {
        if u.len() != v.len() {
            return Err(GplError::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
        }
        match self {
            Similarity::Dot => Ok((u.dot(&v), v.to_owned(), u.to_owned())),
            Similarity::Cosine => {
                let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
                if nu == 0.0 || nv == 0.0 {
                    return Err(GplError::Domain("cosine similarity of a zero vector".into()));
                }
                let s = u.dot(&v) / (nu * nv);
                let du = &v / (nu * nv) - &u * (s / (nu * nu));
                let dv = &u / (nu * nv) - &v * (s / (nv * nv));
                Ok((s, du, dv))
            }
        }
    }
}

/// Closed token vocabulary; ids 0..3 are reserved for the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [OOV_TOKEN, MASK_TOKEN, BOS_TOKEN] {
            vocab.push(special.to_string());
        }
        for t in tokens {
            vocab.push(t.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.oov_id())
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn oov_id(&self) -> usize {
        0
    }

    pub fn mask_id(&self) -> usize {
        1
    }

    pub fn bos_id(&self) -> usize {
        2
    }

    /// Ids of ordinary (non-special) tokens.
    pub fn regular_ids(&self) -> std::ops::Range<usize> {
        3..self.tokens.len()
    }
}

/// Forward-pass record needed by [`EncoderModel::backward`].
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub ids: Vec<usize>,
    pub pooled: Array1<f64>,
    pub mask: Option<Array1<f64>>,
    pub output: Array1<f64>,
}

/// Embedding-bag encoder: pool token embeddings, then one linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    vocab: Vocab,
    /// `vocab x d`
    pub embeddings: Array2<f64>,
    /// `d x d`, applied as `W * pooled`.
    pub projection: Array2<f64>,
    pub pooling: Pooling,
    pub similarity: Similarity,
    pub max_seq_len: usize,
}

impl EncoderModel {
    /// Embeddings drawn from N(0, 1/d), projection initialised to the identity.
    pub fn new(vocab: Vocab, dim: usize, pooling: Pooling, similarity: Similarity, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(GplError::Config("embedding dimension must be positive".into()));
        }
        let mut rng = rng_for(seed, &["encoder-init".into()]);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt())
            .map_err(|e| GplError::Config(e.to_string()))?;
        let embeddings = Array2::from_shape_fn((vocab.len(), dim), |_| normal.sample(&mut rng));
        Ok(EncoderModel {
            vocab,
            embeddings,
            projection: Array2::eye(dim),
            pooling,
            similarity,
            max_seq_len: MAX_SEQ_LEN,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn with_similarity(mut self, similarity: Similarity) -> Self {
        self.similarity = similarity;
        self
    }

    /// Token ids of `text`, truncated to `max_seq_len`. Empty texts map to a
    /// single OOV token.
    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text)
            .iter()
            .take(self.max_seq_len)
            .map(|t| self.vocab.id(t))
            .collect();
        if ids.is_empty() {
            ids.push(self.vocab.oov_id());
        }
        ids
    }

    /// Pooled (pre-projection) vector.
    pub fn pool(&self, ids: &[usize]) -> Array1<f64> {
        match self.pooling {
            Pooling::Mean => {
                let mut acc = Array1::zeros(self.dim());
                for &i in ids {
                    acc += &self.embeddings.row(i);
                }
                acc / ids.len() as f64
            }
            Pooling::Cls => self.embeddings.row(ids[0]).to_owned(),
        }
    }

    pub fn forward_ids(&self, ids: &[usize], mask: Option<Array1<f64>>) -> EncodeCache {
        let ids = if ids.is_empty() {
            vec![self.vocab.oov_id()]
        } else {
            ids[..ids.len().min(self.max_seq_len)].to_vec()
        };
        let pooled = self.pool(&ids);
        let input = match &mask {
            Some(m) => &pooled * m,
            None => pooled.clone(),
        };
        let output = self.projection.dot(&input);
        EncodeCache {
            ids,
            pooled,
            mask,
            output,
        }
    }

    pub fn forward(&self, text: &str) -> EncodeCache {
        self.forward_ids(&self.token_ids(text), None)
    }

    pub fn encode(&self, text: &str) -> Array1<f64> {
        self.forward(text).output
    }

    /// Row `i` is the embedding of `texts[i]`.
    pub fn encode_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Array2<f64> {
        let rows: Vec<Array1<f64>> = texts.par_iter().map(|t| self.encode(t.as_ref())).collect();
        let mut out = Array2::zeros((texts.len(), self.dim()));
        for (i, r) in rows.into_iter().enumerate() {
            out.row_mut(i).assign(&r);
        }
        out
    }

    pub fn similarity(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
        self.similarity.score(u, v)
    }

    /// Inverted-dropout mask on the pooled vector: each component is zeroed
    /// with probability `rate`, survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout_mask<R: Rng>(&self, rate: f64, rng: &mut R) -> Result<Array1<f64>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(GplError::Range(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        Ok(Array1::from_shape_fn(self.dim(), |_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        }))
    }

    /// Accumulate into `grads` the gradient of a loss whose derivative with
    /// respect to `cache.output` is `grad_out`.
    pub fn backward(&self, cache: &EncodeCache, grad_out: ArrayView1<f64>, grads: &mut Gradients) {
        let input = match &cache.mask {
            Some(m) => &cache.pooled * m,
            None => cache.pooled.clone(),
        };
        // output = W * input
        let d_w = grad_out
            .view()
            .insert_axis(Axis(1))
            .dot(&input.view().insert_axis(Axis(0)));
        grads.0[1] += &d_w;
        let mut d_pooled = self.projection.t().dot(&grad_out);
        if let Some(m) = &cache.mask {
            d_pooled *= m;
        }
        self.backward_pooled(&cache.ids, d_pooled.view(), grads);
    }

    /// Gradient of the pooled vector into the embedding table.
    pub fn backward_pooled(&self, ids: &[usize], d_pooled: ArrayView1<f64>, grads: &mut Gradients) {
        let emb = &mut grads.0[0];
        match self.pooling {
            Pooling::Mean => {
                let scale = 1.0 / ids.len() as f64;
                for &i in ids {
                    emb.row_mut(i).scaled_add(scale, &d_pooled);
                }
            }
            Pooling::Cls => {
                emb.row_mut(ids[0]).scaled_add(1.0, &d_pooled);
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dim: self.dim(),
            pooling: self.pooling,
            similarity: self.similarity,
            max_seq_len: self.max_seq_len,
            vocab: self.vocab.tokens.clone(),
            embeddings: self.embeddings.iter().copied().collect(),
            projection: self.projection.iter().copied().collect(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| GplError::Serde(e.to_string()))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| GplError::io(parent, e))?;
            }
        }
        std::fs::write(path, text + "\n").map_err(|e| GplError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GplError::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| GplError::parse(path, 1, e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(GplError::Config(format!(
                "unsupported checkpoint format version {}",
                ckpt.format_version
            )));
        }
        let specials = [OOV_TOKEN, MASK_TOKEN, BOS_TOKEN];
        if ckpt.vocab.len() < 3 || ckpt.vocab[..3] != specials {
            return Err(GplError::Config("checkpoint vocab lacks reserved tokens".into()));
        }
        let vocab = Vocab::new(ckpt.vocab[3..].iter().cloned());
        if vocab.len() != ckpt.vocab.len() {
            return Err(GplError::Config("checkpoint vocab has duplicate tokens".into()));
        }
        let embeddings = Array2::from_shape_vec((vocab.len(), ckpt.dim), ckpt.embeddings)
            .map_err(|e| GplError::Shape(e.to_string()))?;
        let projection = Array2::from_shape_vec((ckpt.dim, ckpt.dim), ckpt.projection)
            .map_err(|e| GplError::Shape(e.to_string()))?;
        Ok(EncoderModel {
            vocab,
            embeddings,
            projection,
            pooling: ckpt.pooling,
            similarity: ckpt.similarity,
            max_seq_len: ckpt.max_seq_len,
        })
    }
}

impl Trainable for EncoderModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.embeddings, &self.projection]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.embeddings, &mut self.projection]
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    dim: usize,
    pooling: Pooling,
    similarity: Similarity,
    max_seq_len: usize,
    vocab: Vec<String>,
    /// Row-major `vocab x dim`.
    embeddings: Vec<f64>,
    /// Row-major `dim x dim`.
    projection: Vec<f64>,
}
