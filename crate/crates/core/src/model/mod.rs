//! Model contracts and the reference trainable encoder.
//!
//! Everything trainable in this crate exposes its parameters as an ordered
//! list of dense `f64` matrices through [`Trainable`]. Gradients are a list of
//! matrices of the same shapes in the same order, which is what lets one SGD
//! routine and one finite-difference checker serve every loss.

mod contracts;
mod encoder;
mod gradcheck;
mod optim;

pub use contracts::{CrossEncoderScorer, FnScorer, LexicalCrossEncoder, QueryGenerator};
pub use encoder::{
    EncodeCache, EncoderModel, Pooling, Similarity, Vocab, BOS_TOKEN, CHECKPOINT_FORMAT_VERSION,
    MASK_TOKEN, OOV_TOKEN,
};
pub use gradcheck::{finite_diff_gradcheck, GradcheckReport, MIN_GRADCHECK_COORDS};
pub use optim::{apply_gradients, OptimizerState};

use ndarray::Array2;

use crate::error::{GplError, Result};

pub trait Trainable {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zero_grads(&self) -> Gradients {
        Gradients(
            self.tensors()
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        )
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradients aligned with [`Trainable::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Array2<f64>>);

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            g.mapv_inplace(|v| v * factor);
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(GplError::Shape(format!(
                "gradient lists of length {} and {}",
                self.0.len(),
                other.0.len()
            )));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            if a.dim() != b.dim() {
                return Err(GplError::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
            }
            a.scaled_add(factor, b);
        }
        Ok(())
    }

    /// Concatenate gradient lists of composite models.
    pub fn concat(parts: Vec<Gradients>) -> Gradients {
        Gradients(parts.into_iter().flat_map(|g| g.0).collect())
    }

    /// Split off the first `n` tensors.
    pub fn split_at(mut self, n: usize) -> (Gradients, Gradients) {
        let rest = self.0.split_off(n);
        (self, Gradients(rest))
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
