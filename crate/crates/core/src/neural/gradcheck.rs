//! Central-difference gradient verification.

use super::loss::Loss;
use super::matrix::Matrix;
use super::net::{DenseNet, Mode};
use crate::error::Result;

/// Central differences of `objective` at `params`.
pub fn numeric_gradient(
    params: &[f64],
    h: f64,
    mut objective: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = objective(&p);
        p[i] = orig - h;
        let down = objective(&p);
        p[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    out
}

/// Worst `|a - n| / max(|a|, |n|, 1e-8)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares backpropagated gradients of `loss` at `input` with central
/// differences of step `h` over every trainable parameter. Runs in eval mode.
pub fn finite_diff_check(net: &DenseNet, input: &Matrix, loss: &Loss<'_>, h: f64) -> Result<f64> {
    let (out, cache) = net.forward(input, Mode::Eval)?;
    let (_, grad) = loss.evaluate(&out)?;
    let grads = if loss.grad_is_logits() {
        net.backward_logits(&cache, &grad)?
    } else {
        net.backward(&cache, &grad)?
    };
    let analytic = grads.flatten();

    let mut probe = net.clone();
    let params = net.trainable_params();
    let mut failure = None;
    let numeric = numeric_gradient(&params, h, |p| {
        let eval = probe
            .set_trainable_params(p)
            .and_then(|_| probe.predict(input))
            .and_then(|o| loss.evaluate(&o));
        match eval {
            Ok((l, _)) => l,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic, &numeric))
}
