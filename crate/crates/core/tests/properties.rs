//! Property tests for the spec invariants that hold over whole input
//! families rather than single fixtures.

use morphgan::perceptual::{FeatureExtractor, LayerGroupSet};
use morphgan::schedule::TimeSchedule;
use morphgan::tensor::{grid_sample, Tensor};
use morphgan::warp::{partial_warp, ControlGrid, WarpDirection};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partial_warp_is_affine_in_t(
        offsets in finite_vec(2 * 5 * 5),
        t in 0.0f64..1.0,
    ) {
        let identity = ControlGrid::<f64>::identity(5);
        let values: Vec<f64> = identity
            .values()
            .to_vec()
            .iter()
            .zip(&offsets)
            .map(|(i, o)| i + 0.3 * o)
            .collect();
        let grid = ControlGrid::from_tensor(
            Tensor::from_vec(&[2, 5, 5], values.clone()).unwrap(),
        )
        .unwrap();
        let warped = partial_warp(&grid, t, WarpDirection::AToB).values().to_vec();
        for ((w, i), v) in warped.iter().zip(identity.values().to_vec()).zip(&values) {
            prop_assert_eq!(*w, (1.0 - t) * i + t * v);
        }
    }

    #[test]
    fn grid_sample_identity_is_identity(
        seed in 0u64..1000,
        h in 2usize..9,
        w in 2usize..9,
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut field = vec![0.0; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                field[y * w + x] = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
                field[h * w + y * w + x] = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
            }
        }
        let out = grid_sample(
            &Tensor::from_vec(&[1, 1, h, w], img.clone()).unwrap(),
            &Tensor::from_vec(&[1, 2, h, w], field).unwrap(),
        )
        .unwrap();
        for (a, b) in out.to_vec().iter().zip(&img) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn forward_ops_preserve_finiteness(data in finite_vec(2 * 3 * 16)) {
        // A chain touching most elementwise and structural ops stays finite
        // on finite inputs.
        let x = Tensor::from_vec(&[2, 3, 4, 4], data).unwrap();
        let y = x
            .relu()
            .add_scalar(0.25)
            .tanh()
            .scale(1.5)
            .sigmoid()
            .sqrt()
            .unwrap();
        prop_assert!(y.all_finite());
        let z = Tensor::concat_channels(&[x.clone(), y.clone()]).unwrap();
        prop_assert!(z.all_finite());
        prop_assert!(z.mean_all().all_finite());
        prop_assert!(x.mse(&y).unwrap().all_finite());
    }

    #[test]
    fn ps_is_a_symmetric_nonnegative_pseudometric_surrogate(
        seed in 0u64..200,
    ) {
        use rand::Rng;
        let fx = FeatureExtractor::<f64>::random(9, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| {
            let d: Vec<f64> = (0..3 * 1024).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::from_vec(&[1, 3, 32, 32], d).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let g = LayerGroupSet::pair_metric();
        let ab = fx.ps(&a, &b, &g).unwrap().item();
        let ba = fx.ps(&b, &a, &g).unwrap().item();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(fx.ps(&a, &a, &g).unwrap().item(), 0.0);
    }

    #[test]
    fn cs_schedule_endpoints_pinned_and_sorted(seed in 0u64..500, k in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = TimeSchedule::content_style(k, &mut rng).unwrap();
        let c = s.content_times();
        let st = s.style_times();
        prop_assert_eq!((c[0], st[0]), (0.0, 0.0));
        prop_assert_eq!((c[k - 1], st[k - 1]), (1.0, 1.0));
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(st.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn batch_concat_then_slice_roundtrips(
        a in finite_vec(3 * 4),
        b in finite_vec(3 * 4),
    ) {
        let ta = Tensor::from_vec(&[1, 3, 2, 2], a.clone()).unwrap();
        let tb = Tensor::from_vec(&[1, 3, 2, 2], b.clone()).unwrap();
        let cat = Tensor::concat_batch(&[ta, tb]).unwrap();
        prop_assert_eq!(cat.slice_batch(0, 1).unwrap().to_vec(), a);
        prop_assert_eq!(cat.slice_batch(1, 1).unwrap().to_vec(), b);
    }
}
