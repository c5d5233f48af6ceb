//! Binary layout of dense networks inside a [`Container`].

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::net::{Activation, DenseNet, Layer};
use crate::data::container::{ByteReader, ByteWriter, Container};
use crate::error::{Error, Result};

pub const NET_KIND: &str = "dense-net";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub frozen: bool,
}

/// Shapes and flags of every layer; parameters travel separately as
/// little-endian `f64` (weights row-major, then bias, layer by layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetLayout {
    pub layers: Vec<LayerLayout>,
}

impl DenseNet {
    pub fn layout(&self) -> NetLayout {
        NetLayout {
            layers: self
                .layers()
                .iter()
                .map(|l| LayerLayout {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    dropout: l.dropout,
                    frozen: l.frozen,
                })
                .collect(),
        }
    }

    pub(crate) fn write_params(&self, w: &mut ByteWriter) {
        for l in self.layers() {
            w.f64s(l.weights.as_slice());
            w.f64s(&l.bias);
        }
    }

    pub(crate) fn read_params(layout: &NetLayout, r: &mut ByteReader<'_>) -> Result<Self> {
        let mut layers = Vec::with_capacity(layout.layers.len());
        for l in &layout.layers {
            let weights = Matrix::from_vec(l.outputs, l.inputs, r.f64s(l.inputs * l.outputs)?);
            let bias = r.f64s(l.outputs)?;
            layers.push(Layer {
                weights,
                bias,
                activation: l.activation,
                dropout: l.dropout,
                frozen: l.frozen,
            });
        }
        DenseNet::new(layers)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut w = ByteWriter::new();
        self.write_params(&mut w);
        Container::new(NET_KIND, &self.layout(), w.into_inner())
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != NET_KIND {
            return Err(Error::Container(format!(
                "expected {NET_KIND}, found {}",
                c.kind
            )));
        }
        let layout: NetLayout = c.header_as()?;
        let mut r = ByteReader::new(&c.payload);
        let net = Self::read_params(&layout, &mut r)?;
        if !r.is_empty() {
            return Err(Error::Container("trailing parameter bytes".into()));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::LayerSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_every_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let specs = [
            LayerSpec {
                outputs: 5,
                activation: Activation::Relu,
            },
            LayerSpec {
                outputs: 3,
                activation: Activation::Softmax,
            },
        ];
        let mut net = DenseNet::build(4, &specs, 0.1, &mut rng).unwrap();
        net.set_frozen(0, true);
        let bytes = net.to_container().unwrap().to_bytes().unwrap();
        let back = DenseNet::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.layers(), net.layers());
    }
}
