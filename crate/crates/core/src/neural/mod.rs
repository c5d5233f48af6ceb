//! Small dense-network engine: layers, backpropagation, Adam and a
//! finite-difference gradient checker. Everything is `f64`.

mod adam;
mod gradcheck;
mod io;
mod loss;
mod matrix;
mod net;
mod train;

pub use adam::AdamState;
pub(crate) use adam::FlatAdam;
pub use gradcheck::{finite_diff_check, max_relative_error, numeric_gradient};
pub use io::{LayerLayout, NetLayout, NET_KIND};
pub use loss::{cross_entropy, slot_squared_error, squared_error, Loss};
pub use matrix::Matrix;
pub use net::{
    sigmoid, Activation, DenseNet, ForwardCache, Gradients, Layer, LayerGrad, LayerSpec, Mode,
};
pub use train::{fit, History, Targets, TrainConfig};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
