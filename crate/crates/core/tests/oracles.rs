mod common;

use common::{brute_lloyd, brute_rft, brute_tree};
use gusl_core::codebook::{image_patches, lloyd, quantize_predict, Codebook, DIM};
use gusl_core::features::FeatureMatrix;
use gusl_core::gbrt::{GbrtModel, GbrtParams};
use gusl_core::saab::SaabKernels;
use gusl_core::select::rft_loss;
use gusl_core::Image;
use proptest::prelude::*;

fn rows_and_targets(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (4..=max_rows, 1..=max_cols).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec((0u8..8).prop_map(|k| k as f64 / 8.0), d), n),
            prop::collection::vec((-5i32..=5).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rft_matches_exhaustive_thresholds(
        (x, y) in (2usize..=64).prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )),
        bins in 2usize..=8,
    ) {
        let got = rft_loss(&x, &y, bins).unwrap();
        prop_assert!((got - brute_rft(&x, &y, bins)).abs() < 1e-12);
    }

    #[test]
    fn first_tree_matches_gain_enumeration(
        (rows, y) in rows_and_targets(32, 4),
        depth in 1usize..=3,
        lambda in prop::sample::select(vec![0.0, 1.0, 2.5]),
        gamma in prop::sample::select(vec![0.0, 0.5]),
    ) {
        let params = GbrtParams { lambda, gamma, ..GbrtParams::plain(depth, 1) };
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let model = GbrtModel::fit(&x, &y, &params, 0).unwrap();
        let got: Vec<(Option<usize>, f64)> = model.trees()[0].preorder().iter().map(|n| (n.feature, n.value)).collect();
        prop_assert_eq!(got, brute_tree(&rows, &y, &params));
    }

    #[test]
    fn lloyd_matches_plain_iteration(seed in any::<u64>(), n in 8usize..40, k in 2usize..5) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..DIM).map(|_| rng.random::<f64>()).collect()).collect();
        let init: Vec<Vec<f64>> = points[..k].to_vec();
        let (bc, bl, bi) = brute_lloyd(&points, &init, 50);
        // an emptied cluster is reseeded by the engine but frozen by the oracle
        prop_assume!((0..k).all(|c| bl.contains(&c)));
        let (c, l, inertia) = lloyd(&points.concat(), init.concat(), 50);
        prop_assert_eq!(&l, &bl);
        prop_assert!((inertia.last().unwrap() - bi).abs() < 1e-9);
        for (a, b) in c.iter().zip(bc.concat()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for w in inertia.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn quantize_matches_nearest_scan(seed in any::<u64>(), bh in 1usize..5, bw in 1usize..5, k in 1usize..6) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(bh * 4, bw * 4, |_, _| rng.random());
        let centroids: Vec<f64> = (0..k * DIM).map(|_| rng.random()).collect();
        let cb = Codebook::from_parts(centroids.clone(), None).unwrap();
        let out = quantize_predict(&img, &cb).unwrap();
        let patches = image_patches(&img);
        for (b, p) in patches.chunks_exact(DIM).enumerate() {
            let dist = |c: &[f64]| p.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..k).min_by(|&i, &j| dist(&centroids[i * DIM..][..DIM]).total_cmp(&dist(&centroids[j * DIM..][..DIM]))).unwrap();
            let (br, bc) = (b / bw, b % bw);
            for i in 0..DIM {
                prop_assert_eq!(out.get(br * 4 + i / 4, bc * 4 + i % 4), centroids[best * DIM + i]);
            }
        }
    }

    #[test]
    fn saab_bank_is_orthonormal_and_energy_preserving(seed in any::<u64>(), window in prop::sample::select(vec![3usize, 5])) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = window * window;
        let patches: Vec<f64> = (0..dim * 3 * dim).map(|_| rng.random::<f64>()).collect();
        let bank = SaabKernels::fit(&patches, window).unwrap();
        prop_assert_eq!(bank.channels(), dim);
        for i in 0..dim {
            for j in 0..dim {
                let dot: f64 = bank.kernel(i).iter().zip(bank.kernel(j)).map(|(a, b)| a * b).sum();
                prop_assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
        }
        let mut coef = vec![0.0; dim];
        for p in patches.chunks_exact(dim) {
            bank.transform_patch(p, &mut coef);
            let (e, c): (f64, f64) = (p.iter().map(|v| v * v).sum(), coef.iter().map(|v| v * v).sum());
            prop_assert!((e - c).abs() <= 1e-9 * e);
        }
    }
}
