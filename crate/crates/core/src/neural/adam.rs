use serde::{Deserialize, Serialize};

use super::net::{DenseNet, Gradients};
use crate::error::{Error, Result};

/// Adam moments for one [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let sizes: Vec<usize> = net.layers().iter().map(|l| l.param_count()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One bias-corrected Adam update. Frozen layers are never written.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers().len() || self.first.len() != net.layers().len() {
            return Err(Error::ShapeMismatch(
                "gradient/optimizer layer count".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            if net.layers()[i].frozen {
                continue;
            }
            let layer = net.layer_mut(i);
            let nw = layer.weights.as_slice().len();
            if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                return Err(Error::ShapeMismatch(format!("gradient for layer {i}")));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let params = layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .chain(layer.bias.iter_mut());
            let gvals = g.weights.as_slice().iter().chain(&g.bias);
            for (k, (p, &gk)) in params.zip(gvals).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *p -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
            debug_assert_eq!(m.len(), nw + layer.bias.len());
        }
        net.touch();
        Ok(())
    }
}

/// Adam on a flat parameter vector (used where parameters are not a single net).
#[derive(Debug, Clone)]
pub(crate) struct FlatAdam {
    lr: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl FlatAdam {
    pub(crate) fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grads[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grads[k] * grads[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + EPS);
        }
    }
}
