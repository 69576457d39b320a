//! Property tests over the numeric invariants.

use proptest::prelude::*;
use semaug::checkpoint;
use semaug::metrics::levenshtein;
use semaug::params::Parameters;
use semaug::sampler::entropy;
use semaug::scn::kl_divergence;
use semaug::tensor::{Graph, Tensor};
use semaug::trainer::{gamma_schedule, TrainConfig};

proptest! {
    #[test]
    fn softmax_is_a_strictly_positive_distribution(
        logits in proptest::collection::vec(-30.0f64..30.0, 1..24),
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(logits));
        let s = g.softmax(x);
        let out = &g.value(s).data;
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
        prop_assert!(out.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn layer_norm_standardizes_every_row(
        rows in 1usize..5,
        cols in 2usize..10,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![rows, cols], data));
        let y = g.layer_norm(x, None, None, 1e-12).unwrap();
        for row in g.value(y).data.chunks(cols) {
            let mean: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn entropy_is_bounded_by_log_support(
        raw in proptest::collection::vec(1e-9f64..1.0, 2..16),
    ) {
        let total: f64 = raw.iter().sum();
        let dist: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let h = entropy(&dist).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (dist.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn kl_between_random_gaussians_is_nonnegative(
        mu_bar in proptest::collection::vec(-3.0f64..3.0, 1..8),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let d = mu_bar.len();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let lv_bar: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lv: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let kl = kl_divergence((&mu_bar, &lv_bar), (&mu, &lv)).unwrap();
        prop_assert!(kl >= 0.0, "kl = {kl}");
    }

    #[test]
    fn levenshtein_is_symmetric_and_triangular(
        a in proptest::collection::vec(0u32..5, 0..10),
        b in proptest::collection::vec(0u32..5, 0..10),
        c in proptest::collection::vec(0u32..5, 0..10),
    ) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn gamma_schedule_is_monotone_and_bounded(
        ramp_start in 0u64..100,
        ramp_steps in 1u64..100,
        steps in proptest::collection::vec(0u64..500, 2..20),
    ) {
        let cfg = TrainConfig { gamma_ramp_start: ramp_start, gamma_ramp_steps: ramp_steps, ..TrainConfig::default() };
        let mut sorted = steps.clone();
        sorted.sort_unstable();
        let mut prev = -1.0f64;
        for s in sorted {
            let g = gamma_schedule(s, &cfg);
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_identity(
        tensors in proptest::collection::vec(
            (
                "[a-z][a-z0-9_.]{0,12}",
                proptest::collection::vec(-1e6f64..1e6, 1..20),
            ),
            1..6,
        ),
    ) {
        let mut params = Parameters::new();
        let mut used = std::collections::HashSet::new();
        for (name, data) in tensors {
            if !used.insert(name.clone()) {
                continue;
            }
            let n = data.len();
            params.insert(name, Tensor::new(vec![n], data));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        checkpoint::save(&path, &[("", &params)]).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        prop_assert_eq!(loaded.len(), params.len());
        for (name, t) in params.iter() {
            let l = loaded.expect(name);
            prop_assert_eq!(&l.shape, &t.shape);
            prop_assert_eq!(&l.data, &t.data);
        }
    }
}
