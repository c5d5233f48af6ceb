use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Mean over the batch of `||pred - target||^2`, and its gradient w.r.t. `pred`.
pub fn squared_error(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.rows().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for ((g, p), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Squared error on one output slot per row; other slots get no gradient.
pub fn slot_squared_error(pred: &Matrix, slots: &[usize], values: &[f64]) -> Result<(f64, Matrix)> {
    if pred.rows() != slots.len() || slots.len() != values.len() {
        return Err(Error::ShapeMismatch(
            "slot targets vs prediction rows".into(),
        ));
    }
    let n = pred.rows().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for (r, (&s, &v)) in slots.iter().zip(values).enumerate() {
        if s >= pred.cols() {
            return Err(Error::ShapeMismatch(format!("slot {s} out of range")));
        }
        let d = pred[(r, s)] - v;
        loss += d * d;
        grad[(r, s)] = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}

/// Mean of `-ln p[class]` over the batch; the gradient is with respect to the
/// softmax logits, `(p - onehot) / batch`.
pub fn cross_entropy(probs: &Matrix, classes: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != classes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows vs {} labels",
            probs.rows(),
            classes.len()
        )));
    }
    let n = probs.rows().max(1) as f64;
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (r, &c) in classes.iter().enumerate() {
        if c >= probs.cols() {
            return Err(Error::ShapeMismatch(format!("class {c} out of range")));
        }
        loss -= probs[(r, c)].max(1e-300).ln();
        grad[(r, c)] -= 1.0;
    }
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// A loss paired with its targets.
#[derive(Debug, Clone)]
pub enum Loss<'a> {
    SquaredError(&'a Matrix),
    CrossEntropy(&'a [usize]),
    Slot {
        slots: &'a [usize],
        values: &'a [f64],
    },
}

impl Loss<'_> {
    /// Loss value and gradient; for cross-entropy the gradient is w.r.t. logits.
    pub fn evaluate(&self, output: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            Loss::SquaredError(t) => squared_error(output, t),
            Loss::CrossEntropy(c) => cross_entropy(output, c),
            Loss::Slot { slots, values } => slot_squared_error(output, slots, values),
        }
    }

    pub fn grad_is_logits(&self) -> bool {
        matches!(self, Loss::CrossEntropy(_))
    }
}
