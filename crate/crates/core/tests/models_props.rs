use celleta::knowledge::{CellKnowledgeVector, CELL_VECTOR_WIDTH};
use celleta::models::{eta_features, make_class_label, top_k_mask, FeatureLayout};
use celleta::neural::argmax;
use proptest::prelude::*;

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 1..20)
}

proptest! {
    #[test]
    fn mask_keeps_argmax(p in probs(), k_frac in 0.0..1.0f64) {
        let k = 1 + ((p.len() - 1) as f64 * k_frac) as usize;
        let m = top_k_mask(&p, k).unwrap();
        prop_assert_eq!(argmax(&m), argmax(&p));
    }

    #[test]
    fn mask_keeps_exactly_k(p in prop::collection::btree_set(1u32..1_000_000, 1..20), k_frac in 0.0..1.0f64) {
        let p: Vec<f64> = p.into_iter().map(|v| v as f64 / 1e6).collect();
        let k = 1 + ((p.len() - 1) as f64 * k_frac) as usize;
        let m = top_k_mask(&p, k).unwrap();
        prop_assert_eq!(m.iter().filter(|v| **v != 0.0).count(), k);
        let smallest_kept = m.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
        for (orig, kept) in p.iter().zip(&m) {
            prop_assert!(*kept == 0.0 || kept == orig);
            prop_assert!(*kept != 0.0 || *orig < smallest_kept);
        }
    }

    #[test]
    fn feature_width_law(n in 1usize..40, embed in 0usize..64, chord in 0.0..500.0f64, phi in 0.0001..0.01f64) {
        let layout = FeatureLayout::new(n, embed);
        let vec = CellKnowledgeVector(vec![0.5; CELL_VECTOR_WIDTH]);
        let f = eta_features(&vec, &vec![0.1; n], &vec![0.2; embed], chord, phi, &layout).unwrap();
        prop_assert_eq!(f.len(), CELL_VECTOR_WIDTH + n + embed + 1);
        prop_assert_eq!(f.len(), layout.width());
        let last = f[f.len() - 1];
        prop_assert!((0.0..=1.0).contains(&last));
    }

    #[test]
    fn labels_do_not_depend_on_order(
        profiles in prop::collection::vec(prop::collection::vec(0.1..60.0f64, 1..8), 1..30)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
        n in 2usize..16,
    ) {
        let (original, shuffled) = profiles;
        let label_all = |set: &[Vec<f64>]| {
            let gmax = set.iter().flatten().copied().fold(0.0, f64::max);
            set.iter()
                .map(|s| (s.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), make_class_label(s, gmax, n).unwrap()))
                .collect::<std::collections::BTreeMap<_, _>>()
        };
        let (a, b) = (label_all(&original), label_all(&shuffled));
        prop_assert_eq!(&a, &b);
        prop_assert!(a.values().all(|&l| l < n));
    }
}
