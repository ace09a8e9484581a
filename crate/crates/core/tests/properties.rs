use cloudop_core::bench::synthetic_dataset;
use cloudop_core::cloudgen::{io, rotate_cloud};
use cloudop_core::numnet::{canonical_rows, Activation, Mlp, Parameters};
use cloudop_core::trainer::{error_metric, Input, ModelKind, Network, Transform};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rows: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * 11).prop_map(move |v| Array2::from_shape_vec((rows, 11), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn canonical_order_ignores_row_order(q in (1usize..12).prop_flat_map(cloud), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..q.nrows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = q.select(Axis(0), &order);
        prop_assert_eq!(canonical_rows(q.view()), canonical_rows(shuffled.view()));
    }

    #[test]
    fn rotation_round_trip(q in cloud(6), beta in -7.0f64..7.0) {
        let back = rotate_cloud(&rotate_cloud(&q, beta), -beta);
        for (a, b) in q.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Scalar columns never move.
        let turned = rotate_cloud(&q, beta);
        prop_assert_eq!(turned.slice(ndarray::s![.., 4..]), q.slice(ndarray::s![.., 4..]));
    }

    #[test]
    fn perfect_predictions_have_zero_error(labels in prop::collection::vec(0.01f64..10.0, 1..40)) {
        prop_assert_eq!(error_metric(&labels, &labels).unwrap(), 0.0);
        let doubled: Vec<f64> = labels.iter().map(|v| 2.0 * v).collect();
        prop_assert!((error_metric(&doubled, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_descriptions_parse_back(deg in -360.0f64..360.0, dx in -9.0f64..9.0, dy in -9.0f64..9.0, seed in any::<u64>()) {
        let rot = Transform::parse(&format!("rot:{deg}")).unwrap();
        prop_assert!(matches!(rot, Transform::Rotation(b) if (b - deg.to_radians()).abs() < 1e-12));
        let t = Transform::parse(&format!("trans:{dx},{dy}")).unwrap();
        prop_assert_eq!(Transform::parse(&t.describe()).unwrap(), t);
        let p = Transform::Permutation(seed);
        prop_assert_eq!(Transform::parse(&p.describe()).unwrap(), p);
    }

    #[test]
    fn mlp_gradients_match_central_differences(
        sizes in prop::collection::vec(1usize..5, 2..5),
        x in prop::collection::vec(-1.0f64..1.0, 4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::<f64>::new(&sizes, Activation::Linear, &mut rng).unwrap();
        // Nonzero biases keep relu pre-activations off their kink.
        for b in net.blocks_mut() {
            for v in b {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let x = &x[..sizes[0]];
        let dy: Vec<f64> = (0..*sizes.last().unwrap()).map(|k| 1.0 + k as f64).collect();
        let objective = |m: &Mlp<f64>| -> f64 {
            m.forward(x).unwrap().0.iter().zip(&dy).map(|(y, w)| y * w).sum()
        };
        let (_, cache) = net.forward(x).unwrap();
        let (_, grads) = net.backward(&cache, &dy).unwrap();
        let h = 1e-6;
        for (bi, block) in grads.blocks().iter().enumerate() {
            for (k, &g) in block.iter().enumerate() {
                let mut up = net.clone();
                up.blocks_mut()[bi][k] += h;
                let mut down = net.clone();
                down.blocks_mut()[bi][k] -= h;
                let fd = (objective(&up) - objective(&down)) / (2.0 * h);
                prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1.0), "block {} entry {}: {} vs {}", bi, k, g, fd);
            }
        }
    }
}

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for (samples, n, seed) in [(1, 1, 0), (7, 5, 1), (30, 12, 2)] {
        let ds = synthetic_dataset(samples, n, seed);
        let path = dir.path().join(format!("d{seed}.vcld"));
        io::save_dataset(&ds, &path).unwrap();
        assert_eq!(io::load_dataset(&path).unwrap(), ds);
        let bytes = std::fs::read(&path).unwrap();
        assert!(io::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn tripled_clouds_leave_split_vcnn_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = synthetic_dataset(5, 9, 3);
    let net = Network::<f64>::new(ModelKind::VcnnSplit, &mut rng).unwrap();
    for s in &ds.samples {
        let base = net.predict(Input::Cloud(s.q.view())).unwrap();
        let dup = ndarray::concatenate![Axis(0), s.q, s.q, s.q];
        let t = net.predict(Input::Cloud(dup.view())).unwrap();
        assert!((t - base).abs() < 1e-12);
    }
}
