use celleta::neural::{
    argmax, fit, softmax, Activation, DenseNet, LayerSpec, Matrix, Targets, TrainConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0..30.0f64, 1..16)
}

fn net(seed: u64) -> DenseNet {
    let specs = [
        LayerSpec {
            outputs: 6,
            activation: Activation::Relu,
        },
        LayerSpec {
            outputs: 4,
            activation: Activation::Sigmoid,
        },
        LayerSpec {
            outputs: 1,
            activation: Activation::Identity,
        },
    ];
    DenseNet::build(3, &specs, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn data(values: &[f64]) -> (Matrix, Targets) {
    let n = values.len() / 4;
    let x = Matrix::from_vec(
        n,
        3,
        values
            .iter()
            .take(n * 4)
            .enumerate()
            .filter(|(i, _)| i % 4 != 3)
            .map(|(_, v)| *v)
            .collect(),
    );
    let y = Matrix::from_vec(n, 1, values.iter().skip(3).step_by(4).copied().collect());
    (x, Targets::Regression(y))
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_keeps_argmax(z in logits(), shift in -100.0..100.0f64) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(argmax(&p), argmax(&z));
        let q = softmax(&z.iter().map(|v| v + shift).collect::<Vec<_>>());
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frozen_layers_never_move(seed in 0u64..1000, values in prop::collection::vec(-1.0..1.0f64, 40..120), layer in 0usize..3) {
        let mut model = net(seed);
        model.set_frozen(layer, true);
        let before = model.layers()[layer].param_bytes();
        let (x, y) = data(&values);
        let cfg = TrainConfig { epochs: 5, batch_size: 4, learning_rate: 0.05, dropout: 0.2, seed, patience: 0 };
        fit(&mut model, &x, &y, None, &cfg).unwrap();
        prop_assert_eq!(before, model.layers()[layer].param_bytes());
    }

    #[test]
    fn training_is_reproducible(seed in 0u64..1000, values in prop::collection::vec(-1.0..1.0f64, 40..120)) {
        let (x, y) = data(&values);
        let cfg = TrainConfig { epochs: 4, batch_size: 3, learning_rate: 0.01, dropout: 0.3, seed, patience: 0 };
        let (mut a, mut b) = (net(seed), net(seed));
        let ha = fit(&mut a, &x, &y, None, &cfg).unwrap();
        let hb = fit(&mut b, &x, &y, None, &cfg).unwrap();
        prop_assert_eq!(ha, hb);
        prop_assert_eq!(a, b);
    }
}
