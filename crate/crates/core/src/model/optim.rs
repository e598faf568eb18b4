use ndarray::Array2;

use super::{Gradients, Trainable};
use crate::error::{GplError, Result};

/// Plain SGD, with optional heavy-ball momentum (off by default).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub step_count: u64,
    velocity: Vec<Array2<f64>>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::with_momentum(learning_rate, 0.0)
    }

    pub fn with_momentum(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(GplError::Config(format!("invalid learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(GplError::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            step_count: 0,
            velocity: Vec::new(),
        })
    }
}

/// `theta <- theta - lr * g` for every parameter, then `step_count += 1`.
pub fn apply_gradients<M: Trainable + ?Sized>(
    model: &mut M,
    grads: &Gradients,
    opt: &mut OptimizerState,
) -> Result<()> {
    let mut params = model.tensors_mut();
    if params.len() != grads.0.len() {
        return Err(GplError::Shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.0.len()
        )));
    }
    for (p, g) in params.iter().zip(&grads.0) {
        if p.dim() != g.dim() {
            return Err(GplError::Shape(format!(
                "parameter {:?} vs gradient {:?}",
                p.dim(),
                g.dim()
            )));
        }
    }
    if opt.momentum > 0.0 {
        if opt.velocity.len() != grads.0.len() {
            opt.velocity = grads.0.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(&grads.0).zip(opt.velocity.iter_mut()) {
            v.mapv_inplace(|x| x * opt.momentum);
            *v += g;
            p.scaled_add(-opt.learning_rate, v);
        }
    } else {
        for (p, g) in params.iter_mut().zip(&grads.0) {
            p.scaled_add(-opt.learning_rate, g);
        }
    }
    opt.step_count += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Scalar(Array2<f64>);

    impl Trainable for Scalar {
        fn tensors(&self) -> Vec<&Array2<f64>> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn sgd_examples() {
        let mut m = Scalar(array![[1.0]]);
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        apply_gradients(&mut m, &Gradients(vec![array![[2.0]]]), &mut opt).unwrap();
        assert!((m.0[[0, 0]] - 0.8).abs() < 1e-15);
        assert_eq!(opt.step_count, 1);

        let before = m.0.clone();
        let zeros = m.zero_grads();
        apply_gradients(&mut m, &zeros, &mut opt).unwrap();
        assert_eq!(m.0, before);
        assert_eq!(opt.step_count, 2);

        let mut frozen = OptimizerState::sgd(0.0).unwrap();
        apply_gradients(&mut m, &Gradients(vec![array![[5.0]]]), &mut frozen).unwrap();
        assert_eq!(m.0, before);
        assert_eq!(frozen.step_count, 1);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut m = Scalar(array![[1.0]]);
        let mut opt = OptimizerState::sgd(0.1).unwrap();
        let bad = Gradients(vec![array![[1.0, 2.0]]]);
        assert!(matches!(apply_gradients(&mut m, &bad, &mut opt), Err(GplError::Shape(_))));
        assert!(matches!(
            apply_gradients(&mut m, &Gradients(vec![]), &mut opt),
            Err(GplError::Shape(_))
        ));
        assert_eq!(opt.step_count, 0);
    }
}
