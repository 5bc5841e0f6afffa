use std::time::Instant;

use fsdp::cluster::kmeans_pp_extend;
use fsdp::gp::{DenseGp, FitOptions, GpInit, RbfKernel, SgpModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| (0.8 * v).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    (x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elbo_is_a_lower_bound(seed in 0u64..1000, n in 10usize..200, m in 1usize..12,
                             ell in 0.3f64..3.0, sf2 in 0.2f64..3.0, sn2 in 0.01f64..0.5) {
        let (x, y) = dataset(seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let z: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0)).collect();
        let k = RbfKernel::new(ell, sf2);
        let s = SgpModel::from_parts(&x, &y, &z, k, sn2).unwrap();
        let d = DenseGp::from_parts(&x, &y, k, sn2).unwrap();
        prop_assert!(s.elbo() <= d.log_marginal_likelihood() + 1e-6);
    }

    #[test]
    fn posterior_variance_is_bounded(seed in 0u64..1000, t in -5.0f64..15.0) {
        let (x, y) = dataset(seed, 60);
        let k = RbfKernel::new(0.9, 1.1);
        let s = SgpModel::from_parts(&x, &y, &x[..8], k, 0.05).unwrap();
        let p = s.predict(t);
        prop_assert!(p.variance >= 0.0);
        prop_assert!(p.variance <= 1.1 + 0.05 + 1e-8);
    }

    #[test]
    fn cache_rebuild_changes_nothing(seed in 0u64..1000, t in -2.0f64..12.0) {
        let (x, y) = dataset(seed, 50);
        let s = SgpModel::from_parts(&x, &y, &x[..6], RbfKernel::new(1.2, 0.8), 0.03).unwrap();
        let r = SgpModel::from_snapshot(&s.snapshot()).unwrap();
        prop_assert!((s.predict(t).mean - r.predict(t).mean).abs() <= 1e-10);
        prop_assert!((s.predict(t).variance - r.predict(t).variance).abs() <= 1e-10);
    }
}

#[test]
fn more_inducing_points_never_lower_the_bound() {
    for seed in 0..5 {
        let (x, y) = dataset(seed, 150);
        let opts = FitOptions { iters: 60, ..Default::default() };
        let small = SgpModel::fit(&x, &y, 8, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = small.inducing().to_vec();
        z.extend(kmeans_pp_extend(&x, &z, 5, &mut rng));
        let k = small.kernel();
        let init = GpInit {
            lengthscale: Some(k.lengthscale),
            signal_variance: Some(k.signal_variance),
            noise_variance: Some(small.noise_variance()),
            inducing: Some(z),
        };
        let big = SgpModel::fit(&x, &y, 13, &FitOptions { iters: 60, init, ..Default::default() }).unwrap();
        assert!(big.elbo() >= small.elbo() - 1e-6, "seed {seed}: {} < {}", big.elbo(), small.elbo());
    }
}

#[test]
fn predict_cost_does_not_grow_with_n() {
    let k = RbfKernel::new(1.0, 1.0);
    let xs: Vec<f64> = (0..2000).map(|i| i as f64 * 0.005).collect();
    let time = |n: usize| {
        let (x, y) = dataset(3, n);
        let z: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let s = SgpModel::from_parts(&x, &y, &z, k, 0.05).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..5 {
            let t0 = Instant::now();
            let mut acc = 0.0;
            for &t in &xs {
                acc += s.predict(t).mean;
            }
            std::hint::black_box(acc);
            best = best.min(t0.elapsed().as_secs_f64());
        }
        best
    };
    let t100 = time(100);
    let t400 = time(400);
    assert!(t400 <= 2.0 * t100, "N=400 {t400:e}s vs N=100 {t100:e}s");
}
