mod common;

use flowcast_core::dlf::{forward, hsoftmax_prob, Dims, HsTree};
use ndarray::Array1;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_forward, flat_softmax, gradient_gap, model_case};

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..7, 1usize..9, 1usize..5).prop_map(|(d_x, d, d_t)| Dims { d_x, d, d_t })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_matches_loop_oracle(seed in any::<u64>(), n in 2usize..12, dims in dims_strategy(), k in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = model_case(&mut rng, n, dims, k, 1);
        let fast = forward(&case.params, &case.x, &case.sample).unwrap().z2;
        let slow = dense_forward(&case.params, &case.x, &case.sample);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn attention_ignores_neighbor_order(seed in any::<u64>(), n in 2usize..12, dims in dims_strategy(), k in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = model_case(&mut rng, n, dims, k, 1);
        let mut shuffled = case.sample.clone();
        shuffled.entries.shuffle(&mut rng);
        let a = forward(&case.params, &case.x, &case.sample).unwrap().z2;
        let b = forward(&case.params, &case.x, &shuffled).unwrap().z2;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn tree_probabilities_sum_to_one(seed in any::<u64>(), n in 2usize..40, depth in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = model_case(&mut rng, n, Dims { d_x: 3, d: 4, d_t: 2 }, 2, depth);
        let z = Array1::from_shape_fn(4, |_| rng.random_range(-3.0..3.0));
        let p = hsoftmax_prob(z.view(), &case.tree, &case.params);
        prop_assert_eq!(p.len(), n);
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn flat_tree_is_a_plain_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 5, 17] {
        let case = model_case(&mut rng, n, Dims { d_x: 2, d: 6, d_t: 2 }, 1, 1);
        assert_eq!(case.tree, HsTree::flat(n));
        for _ in 0..50 {
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let tree = hsoftmax_prob(Array1::from(z.clone()).view(), &case.tree, &case.params);
            let flat = flat_softmax(&case.params.tree_w[0], case.params.tree_b[0].as_slice().unwrap(), &z);
            for (a, b) in tree.iter().zip(&flat) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    for (seed, depth) in [(1, 1), (2, 2), (3, 3), (4, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = model_case(&mut rng, 9, Dims { d_x: 3, d: 5, d_t: 2 }, 4, depth);
        let (gap, at) = gradient_gap(&case, 1e-5);
        assert!(gap < 1e-4, "seed {seed}: relative error {gap:e} at {at}");
    }
}
