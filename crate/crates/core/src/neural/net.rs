use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::softmax_in_place;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Identity => {}
            Activation::Softmax => softmax_in_place(row),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `outputs x inputs`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
    pub frozen: bool,
}

impl Layer {
    /// Glorot-uniform weights, zero bias.
    pub fn init(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Matrix::from_vec(outputs, inputs, data),
            bias: vec![0.0; outputs],
            activation,
            dropout,
            frozen: false,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    /// Little-endian bytes of weights followed by bias.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 8);
        for v in self.weights.as_slice().iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub outputs: usize,
    pub activation: Activation,
}

/// Feed-forward stack of fully connected layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    /// Bumped on every parameter change; ties forward caches to parameters.
    #[serde(skip)]
    version: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch(
                "network needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if !(0.0..1.0).contains(&l.dropout) {
                return Err(Error::BadConfig(format!(
                    "dropout {} not in [0, 1)",
                    l.dropout
                )));
            }
            if l.bias.len() != l.outputs() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias width")));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::BadConfig(
                    "softmax is only allowed on the final layer".into(),
                ));
            }
        }
        Ok(Self { layers, version: 0 })
    }

    /// Builds a randomly initialized network from `input` width and layer specs,
    /// applying `dropout` to every layer except the last.
    pub fn build(
        input: usize,
        specs: &[LayerSpec],
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input;
        for (i, s) in specs.iter().enumerate() {
            let rate = if i + 1 == specs.len() { 0.0 } else { dropout };
            layers.push(Layer::init(width, s.outputs, s.activation, rate, rng));
            width = s.outputs;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        self.version += 1;
        &mut self.layers[i]
    }

    pub fn replace_layer(&mut self, i: usize, layer: Layer) -> Result<()> {
        let old = &self.layers[i];
        if old.inputs() != layer.inputs() || old.outputs() != layer.outputs() {
            return Err(Error::ShapeMismatch(format!("replacement for layer {i}")));
        }
        self.layers[i] = layer;
        self.version += 1;
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn set_frozen(&mut self, layer: usize, frozen: bool) {
        self.layers[layer].frozen = frozen;
    }

    pub fn set_dropout(&mut self, rate: f64) {
        let last = self.layers.len() - 1;
        for l in &mut self.layers[..last] {
            l.dropout = rate;
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.frozen)
            .map(Layer::param_count)
            .sum()
    }

    /// Trainable parameters flattened layer by layer (weights, then bias).
    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_param_count());
        for l in self.layers.iter().filter(|l| !l.frozen) {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_trainable_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.trainable_param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.trainable_param_count(),
                params.len()
            )));
        }
        let mut at = 0;
        for l in self.layers.iter_mut().filter(|l| !l.frozen) {
            let nw = l.weights.as_slice().len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        self.version += 1;
        Ok(())
    }

    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }

    /// Deterministic inference (no dropout).
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward(input, Mode::Eval)?.0)
    }

    pub fn forward(&self, input: &Matrix, mode: Mode<'_>) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} != network input width {}",
                input.cols(),
                self.input_width()
            )));
        }
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let mut cache = ForwardCache {
            version: self.version,
            inputs: Vec::with_capacity(self.layers.len()),
            activations: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.matmul_t(&layer.weights);
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
                layer.activation.apply_row(row);
            }
            let act = z;
            let (out, mask) = match rng.as_deref_mut() {
                Some(r) if layer.dropout > 0.0 => {
                    let keep = 1.0 - layer.dropout;
                    let mut mask = Matrix::zeros(act.rows(), act.cols());
                    for m in mask.as_mut_slice() {
                        if r.random::<f64>() < keep {
                            *m = 1.0 / keep;
                        }
                    }
                    let mut out = act.clone();
                    for (o, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *o *= m;
                    }
                    (out, Some(mask))
                }
                _ => (act.clone(), None),
            };
            cache.inputs.push(std::mem::replace(&mut x, out));
            cache.activations.push(act);
            cache.masks.push(mask);
        }
        Ok((x, cache))
    }

    /// Backpropagates a gradient taken with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<Gradients> {
        self.check_cache(cache, grad_output)?;
        let last = self.layers.len() - 1;
        let mut g = grad_output.clone();
        apply_mask(&mut g, cache.masks[last].as_ref());
        let delta = activation_backward(self.layers[last].activation, &cache.activations[last], g);
        self.backward_from(cache, delta)
    }

    /// Backpropagates a gradient taken with respect to the final layer's
    /// pre-activation values (e.g. softmax logits).
    pub fn backward_logits(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<Gradients> {
        self.check_cache(cache, grad_logits)?;
        self.backward_from(cache, grad_logits.clone())
    }

    fn check_cache(&self, cache: &ForwardCache, grad: &Matrix) -> Result<()> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let out = cache.activations.last().expect("non-empty cache");
        if grad.shape() != out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape {:?} != output shape {:?}",
                grad.shape(),
                out.shape()
            )));
        }
        Ok(())
    }

    fn backward_from(&self, cache: &ForwardCache, mut delta: Matrix) -> Result<Gradients> {
        let n = self.layers.len();
        let mut grads: Vec<Option<LayerGrad>> = vec![None; n];
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if !layer.frozen {
                grads[i] = Some(LayerGrad {
                    weights: delta.t_matmul(&cache.inputs[i]),
                    bias: delta.column_sums(),
                });
            }
            let grad_in = delta.matmul(&layer.weights);
            if i == 0 {
                return Ok(Gradients {
                    layers: grads,
                    input: grad_in,
                });
            }
            let mut g = grad_in;
            apply_mask(&mut g, cache.masks[i - 1].as_ref());
            delta =
                activation_backward(self.layers[i - 1].activation, &cache.activations[i - 1], g);
        }
        unreachable!("loop returns at layer 0")
    }
}

fn apply_mask(g: &mut Matrix, mask: Option<&Matrix>) {
    if let Some(m) = mask {
        for (v, k) in g.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *v *= k;
        }
    }
}

fn activation_backward(act: Activation, out: &Matrix, mut g: Matrix) -> Matrix {
    match act {
        Activation::Identity => {}
        Activation::Relu => {
            for (v, a) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if *a <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (v, a) in g.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *v *= a * (1.0 - a);
            }
        }
        Activation::Softmax => {
            for r in 0..g.rows() {
                let p = out.row(r);
                let gr = g.row_mut(r);
                let dot: f64 = gr.iter().zip(p).map(|(a, b)| a * b).sum();
                for (v, pi) in gr.iter_mut().zip(p) {
                    *v = pi * (*v - dot);
                }
            }
        }
    }
    g
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Per-layer intermediates recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    inputs: Vec<Matrix>,
    /// Post-activation, pre-dropout values.
    activations: Vec<Matrix>,
    masks: Vec<Option<Matrix>>,
}

impl ForwardCache {
    pub fn activations(&self, layer: usize) -> &Matrix {
        &self.activations[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// `None` for frozen layers.
    pub layers: Vec<Option<LayerGrad>>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl Gradients {
    /// True when no layer received a gradient.
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }

    /// Flattened in the same order as [`DenseNet::trainable_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.layers.iter().flatten() {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// Adds `weight * W` to every weight gradient (gradient of `weight/2 * ||W||^2`).
    pub fn add_weight_decay(&mut self, net: &DenseNet, weight: f64) {
        for (g, l) in self.layers.iter_mut().zip(net.layers()) {
            if let Some(g) = g {
                for (gv, wv) in g
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(l.weights.as_slice())
                {
                    *gv += weight * wv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_layer_passes_input() {
        let layer = Layer {
            weights: Matrix::identity(3),
            bias: vec![0.0; 3],
            activation: Activation::Identity,
            dropout: 0.0,
            frozen: false,
        };
        let net = DenseNet::new(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let specs = [
            LayerSpec {
                outputs: 5,
                activation: Activation::Relu,
            },
            LayerSpec {
                outputs: 4,
                activation: Activation::Softmax,
            },
        ];
        let net = DenseNet::build(3, &specs, 0.0, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![5.0, 1.0, -3.0]]);
        let y = net.predict(&x).unwrap();
        for r in 0..2 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(y, net.predict(&x).unwrap());
    }

    #[test]
    fn softmax_must_be_last() {
        let mut r = rng();
        let layers = vec![
            Layer::init(2, 2, Activation::Softmax, 0.0, &mut r),
            Layer::init(2, 1, Activation::Identity, 0.0, &mut r),
        ];
        assert!(matches!(DenseNet::new(layers), Err(Error::BadConfig(_))));
    }

    #[test]
    fn width_chain_checked() {
        let mut r = rng();
        let layers = vec![
            Layer::init(2, 3, Activation::Relu, 0.0, &mut r),
            Layer::init(4, 1, Activation::Identity, 0.0, &mut r),
        ];
        assert!(matches!(
            DenseNet::new(layers),
            Err(Error::ShapeMismatch(_))
        ));
        let net = DenseNet::build(
            2,
            &[LayerSpec {
                outputs: 1,
                activation: Activation::Identity,
            }],
            0.0,
            &mut r,
        )
        .unwrap();
        assert!(net.predict(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let specs = [
            LayerSpec {
                outputs: 4,
                activation: Activation::Relu,
            },
            LayerSpec {
                outputs: 1,
                activation: Activation::Identity,
            },
        ];
        let mut net = DenseNet::build(3, &specs, 0.0, &mut rng()).unwrap();
        net.set_frozen(0, true);
        net.set_frozen(1, true);
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let (_, cache) = net.forward(&x, Mode::Eval).unwrap();
        let g = net
            .backward(&cache, &Matrix::from_rows(&[vec![1.0]]))
            .unwrap();
        assert!(g.is_empty());
        assert!(g.flatten().is_empty());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let specs = [
            LayerSpec {
                outputs: 4,
                activation: Activation::Sigmoid,
            },
            LayerSpec {
                outputs: 2,
                activation: Activation::Identity,
            },
        ];
        let net = DenseNet::build(3, &specs, 0.0, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]]);
        let (_, cache) = net.forward(&x, Mode::Eval).unwrap();
        let g = net.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let specs = [LayerSpec {
            outputs: 1,
            activation: Activation::Identity,
        }];
        let mut net = DenseNet::build(2, &specs, 0.0, &mut rng()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let (_, cache) = net.forward(&x, Mode::Eval).unwrap();
        net.layer_mut(0).bias[0] = 1.0;
        assert!(matches!(
            net.backward(&cache, &Matrix::zeros(1, 1)),
            Err(Error::StaleCache)
        ));
    }

    #[test]
    fn inverted_dropout_scales_kept_units() {
        let specs = [
            LayerSpec {
                outputs: 200,
                activation: Activation::Identity,
            },
            LayerSpec {
                outputs: 1,
                activation: Activation::Identity,
            },
        ];
        let mut net = DenseNet::build(1, &specs, 0.5, &mut rng()).unwrap();
        {
            let l = net.layer_mut(0);
            l.weights.as_mut_slice().iter_mut().for_each(|w| *w = 1.0);
        }
        let x = Matrix::from_rows(&[vec![1.0]]);
        let mut r = rng();
        let (_, cache) = net.forward(&x, Mode::Train(&mut r)).unwrap();
        let hidden = &cache.inputs[1];
        assert!(hidden.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = hidden.as_slice().iter().filter(|&&v| v == 2.0).count();
        assert!((60..140).contains(&kept), "{kept}");
        let (_, eval) = net.forward(&x, Mode::Eval).unwrap();
        assert!(eval.inputs[1].as_slice().iter().all(|&v| v == 1.0));
    }
}
