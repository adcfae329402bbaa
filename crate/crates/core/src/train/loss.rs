//! Composite training objective: fold-class cross-entropy, L1 and MSE
//! reconstruction terms, and the pre-estimator's coarse-state
//! cross-entropy.

use ndarray::Array2;

use super::TrainConfig;
use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::model::{ForwardVars, ModelConfig};
use crate::scalar::Scalar;

/// Term weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pre: f64,
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        Self {
            alpha: c.alpha,
            beta: c.beta,
            gamma: c.gamma,
            pre: c.pre_loss_weight,
        }
    }
}

/// Class indices for true fold counts, clipped into `±z_max`. Returns the
/// number of clipped nodes alongside.
pub fn fold_targets(z: &Array2<i32>, model: &ModelConfig) -> (Vec<usize>, usize) {
    let mut clipped = 0;
    let targets = z
        .iter()
        .map(|&v| {
            let (c, was_clipped) = model.class_of(v);
            clipped += usize::from(was_clipped);
            c
        })
        .collect();
    (targets, clipped)
}

/// Records the weighted objective. Zero-weight terms are skipped; the
/// coarse term is skipped when the forward pass has no pre-estimator.
/// `x_true` is in node order (`N` values).
pub fn record_composite_loss<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ForwardVars,
    fold_targets: &[usize],
    coarse_targets: &[usize],
    x_true: Var,
    w: LossWeights,
) -> Result<Var, TensorError> {
    let mut terms = Vec::with_capacity(4);
    if w.alpha > 0.0 {
        terms.push((
            tape.cross_entropy_rows(vars.fold_logits, fold_targets)?,
            T::lit(w.alpha),
        ));
    }
    if w.beta > 0.0 {
        terms.push((tape.l1_loss(vars.x_hat, x_true)?, T::lit(w.beta)));
    }
    if w.gamma > 0.0 {
        terms.push((tape.mse_loss(vars.x_hat, x_true)?, T::lit(w.gamma)));
    }
    if let (Some(pre), true) = (vars.pre_logits, w.pre > 0.0) {
        terms.push((tape.cross_entropy_rows(pre, coarse_targets)?, T::lit(w.pre)));
    }
    tape.weighted_sum(&terms)
}

/// `x` as an `N×1` column in node order.
pub fn node_column<T: Scalar>(x: &Array2<T>) -> Tensor<T> {
    Tensor::matrix(x.len(), 1, x.iter().copied().collect()).expect("one value per row")
}

/// Value of the objective for given logits and reconstruction, without
/// gradients. `pre_logits` may be absent. Returns the loss and the number
/// of clipped fold targets.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss<T: Scalar>(
    fold_logits: &Array2<T>,
    pre_logits: Option<&Array2<T>>,
    z_true: &Array2<i32>,
    coarse_true: &[usize],
    x_true: &Array2<T>,
    x_hat: &Array2<T>,
    model: &ModelConfig,
    w: LossWeights,
) -> Result<(T, usize), TensorError> {
    let n = z_true.len();
    if fold_logits.nrows() != n || x_true.len() != n || x_hat.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "composite_loss",
            left: vec![fold_logits.nrows(), x_true.len()],
            right: vec![n, x_hat.len()],
        });
    }
    let (targets, clipped) = fold_targets(z_true, model);
    let mut tape = Tape::new();
    let vars = ForwardVars {
        fold_logits: tape.constant(Tensor::from_array(fold_logits))?,
        pre_logits: pre_logits.map(|p| tape.constant(Tensor::from_array(p))).transpose()?,
        expected_z: tape.constant(Tensor::zeros(&[n, 1]))?,
        x_hat: tape.constant(node_column(x_hat))?,
        attention: Vec::new(),
    };
    let x = tape.constant(node_column(x_true))?;
    let loss = record_composite_loss(&mut tape, &vars, &targets, coarse_true, x, w)?;
    Ok((tape.value(loss).item(), clipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small() -> ModelConfig {
        ModelConfig {
            z_max: 1,
            ..ModelConfig::default()
        }
    }

    const ALL: LossWeights = LossWeights {
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        pre: 0.5,
    };

    #[test]
    fn perfect_prediction_is_near_zero() {
        let z = array![[1, -1], [0, 0]];
        let fold = Array2::from_shape_fn((4, 3), |(r, c)| {
            let class = (z.as_slice().unwrap()[r] + 1) as usize;
            if c == class {
                40.0
            } else {
                0.0
            }
        });
        let coarse = [0usize, 2, 1, 0];
        let pre = Array2::from_shape_fn((4, 3), |(r, c)| if c == coarse[r] { 40.0 } else { 0.0 });
        let x = array![[0.5, -0.2], [0.1, 0.3]];
        let (loss, clipped) = composite_loss(&fold, Some(&pre), &z, &coarse, &x, &x, &small(), ALL).unwrap();
        assert!(loss < 1e-6, "{loss}");
        assert_eq!(clipped, 0);
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let z = array![[1, -1, 0]];
        let x = array![[0.0, 0.0, 0.0]];
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            pre: 0.0,
        };
        let (loss, _) = composite_loss(&Array2::zeros((3, 3)), None, &z, &[0; 3], &x, &x, &small(), w).unwrap();
        assert_abs_diff_eq!(loss, 3f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn constant_offset_l1() {
        let z = array![[0, 0], [0, 0]];
        let x = array![[0.3, -0.7], [1.2, 0.0]];
        let xh = x.mapv(|v| v + 0.1);
        let w = LossWeights {
            alpha: 0.0,
            beta: 1.0,
            gamma: 0.0,
            pre: 0.0,
        };
        let (loss, _) = composite_loss(&Array2::zeros((4, 3)), None, &z, &[0; 4], &x, &xh, &small(), w).unwrap();
        assert_abs_diff_eq!(loss, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn clipping_is_counted() {
        let (t, clipped) = fold_targets(&array![[3, -1], [0, -5]], &small());
        assert_eq!(t, vec![2, 0, 1, 0]);
        assert_eq!(clipped, 2);
    }

    #[test]
    fn shape_mismatch() {
        let z = array![[0, 0]];
        let x = array![[0.0, 0.0]];
        assert!(composite_loss(&Array2::zeros((3, 3)), None, &z, &[0; 2], &x, &x, &small(), ALL).is_err());
    }
}
