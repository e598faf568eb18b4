use rand::seq::index;

use super::{Gradients, Trainable};
use crate::error::{GplError, Result};
use crate::seed::rng_for;

pub const MIN_GRADCHECK_COORDS: usize = 100;
const SAMPLED_COORDS: usize = 128;

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)` so
/// that coordinates with a (near-)zero true gradient are compared absolutely.
const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Compare analytic gradients against central differences
/// `(L(θ+ε) - L(θ-ε)) / 2ε` on a random subsample of at least
/// [`MIN_GRADCHECK_COORDS`] coordinates (all coordinates when fewer exist).
pub fn finite_diff_gradcheck<M, F>(
    loss_fn: F,
    model: &M,
    epsilon: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradcheckReport>
where
    M: Trainable + Clone,
    F: Fn(&M) -> Result<(f64, Gradients)>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(GplError::Range(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (loss, grads) = loss_fn(model)?;
    if !loss.is_finite() {
        return Err(GplError::NonFinite(format!("loss {loss}")));
    }
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    if grads.0.len() != shapes.len() || grads.0.iter().map(|g| g.len()).ne(shapes.iter().copied()) {
        return Err(GplError::Shape("gradients do not align with parameters".into()));
    }
    let total: usize = shapes.iter().sum();
    let n = total.min(SAMPLED_COORDS.max(MIN_GRADCHECK_COORDS));
    let mut rng = rng_for(seed, &["gradcheck".into()]);
    let mut coords = index::sample(&mut rng, total, n).into_vec();
    coords.sort_unstable();

    let locate = |flat: usize| -> (usize, usize) {
        let mut rem = flat;
        for (t, &len) in shapes.iter().enumerate() {
            if rem < len {
                return (t, rem);
            }
            rem -= len;
        }
        unreachable!("coordinate out of range")
    };

    let mut probe = model.clone();
    let mut max_rel_err = 0.0f64;
    for flat in coords {
        let (t, off) = locate(flat);
        let original = nth(&probe, t, off);
        set_nth(&mut probe, t, off, original + epsilon);
        let (plus, _) = loss_fn(&probe)?;
        set_nth(&mut probe, t, off, original - epsilon);
        let (minus, _) = loss_fn(&probe)?;
        set_nth(&mut probe, t, off, original);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GplError::NonFinite("loss under perturbation".into()));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads.0[t].as_slice_memory_order().expect("contiguous gradient")[off];
        let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        max_rel_err = max_rel_err.max((analytic - numeric).abs() / denom);
    }
    Ok(GradcheckReport {
        max_rel_err,
        checked: n,
        pass: max_rel_err <= tolerance,
    })
}

fn nth<M: Trainable>(m: &M, t: usize, off: usize) -> f64 {
    m.tensors()[t].as_slice_memory_order().expect("contiguous parameter")[off]
}

fn set_nth<M: Trainable>(m: &mut M, t: usize, off: usize, v: f64) {
    let mut tensors = m.tensors_mut();
    tensors[t].as_slice_memory_order_mut().expect("contiguous parameter")[off] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[derive(Clone)]
    struct Scalar(Array2<f64>);

    impl Trainable for Scalar {
        fn tensors(&self) -> Vec<&Array2<f64>> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
            vec![&mut self.0]
        }
    }

    fn square(m: &Scalar) -> Result<(f64, Gradients)> {
        let t = m.0[[0, 0]];
        Ok((t * t, Gradients(vec![array![[2.0 * t]]])))
    }

    #[test]
    fn quadratic_is_exact() {
        let m = Scalar(array![[3.0]]);
        let r = finite_diff_gradcheck(square, &m, 1e-4, 1e-6, 0).unwrap();
        assert!(r.pass);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let m = Scalar(array![[3.0]]);
        let bad = |m: &Scalar| -> Result<(f64, Gradients)> {
            let t = m.0[[0, 0]];
            Ok((t * t, Gradients(vec![array![[t]]])))
        };
        assert!(!finite_diff_gradcheck(bad, &m, 1e-4, 1e-4, 0).unwrap().pass);
    }

    #[test]
    fn epsilon_range_and_non_finite_loss() {
        let m = Scalar(array![[3.0]]);
        assert!(matches!(finite_diff_gradcheck(square, &m, 1e-2, 1e-4, 0), Err(GplError::Range(_))));
        let nan = |_: &Scalar| -> Result<(f64, Gradients)> { Ok((f64::NAN, Gradients(vec![array![[0.0]]]))) };
        assert!(matches!(finite_diff_gradcheck(nan, &m, 1e-4, 1e-4, 0), Err(GplError::NonFinite(_))));
    }
}
