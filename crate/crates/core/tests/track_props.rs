use fsdp::track::builders::{circle, oval_chicane, s_curve, OvalChicane};
use fsdp::track::{wrap_angle, FrenetPose, Raceline};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn half_width_limit(t: &Raceline) -> f64 {
    0.5 * t.waypoints().iter().map(|w| w.d_left.min(w.d_right)).fold(f64::INFINITY, f64::min)
}

fn round_trip_error(t: &Raceline, p: FrenetPose) -> (f64, f64, f64) {
    let c = t.frenet_to_cartesian(p).unwrap();
    let q = t.cartesian_to_frenet(c.x, c.y, c.psi, p.s).unwrap();
    (t.signed_gap(p.s, q.s).abs(), (q.n - p.n).abs(), wrap_angle(q.theta - p.theta).abs())
}

#[test]
fn s_curve_round_trip_over_random_poses() {
    let t = s_curve(0.1, 1.0, 3.0);
    let nmax = half_width_limit(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let p = FrenetPose {
            s: rng.random_range(0.5..t.total_length() - 0.5),
            n: rng.random_range(-nmax..nmax),
            theta: rng.random_range(-0.8..0.8),
        };
        let (ds, dn, dth) = round_trip_error(&t, p);
        assert!(ds < 1e-6 && dn < 1e-6 && dth < 1e-6, "{p:?}: {ds:e} {dn:e} {dth:e}");
    }
}

#[test]
fn arc_curvature_is_exact() {
    for r in [2.0, 3.5, 7.0] {
        let t = circle(r, 0.05, 0.8, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let s = rng.random_range(0.0..t.total_length());
            assert!((t.sample(s).kappa - 1.0 / r).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oval_round_trip(u in 0.0f64..1.0, fn_ in -1.0f64..1.0, th in -0.8f64..0.8) {
        let t = oval_chicane(OvalChicane::default());
        let p = FrenetPose { s: u * t.total_length(), n: fn_ * half_width_limit(&t), theta: th };
        let (ds, dn, dth) = round_trip_error(&t, p);
        prop_assert!(ds < 1e-6 && dn < 1e-6 && dth < 1e-6, "{:?}: {:e} {:e} {:e}", p, ds, dn, dth);
    }

    #[test]
    fn closed_sampling_is_periodic(s in -100.0f64..100.0, k in -3i32..4) {
        let t = oval_chicane(OvalChicane::default());
        let shifted = s + k as f64 * t.total_length();
        prop_assert_eq!(t.sample(s), t.sample(t.wrap_s(s)));
        prop_assert_eq!(t.sample(shifted), t.sample(t.wrap_s(shifted)));
        let (a, b) = (t.sample(shifted), t.sample(s));
        prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && wrap_angle(a.psi - b.psi).abs() < 1e-9);
    }
}

#[test]
fn bundled_track_matches_the_builder() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../tracks/oval_chicane.csv");
    let file = Raceline::load(&path).unwrap();
    let built = oval_chicane(OvalChicane::default());
    assert!(file.is_closed());
    assert_eq!(file.waypoints().len(), built.waypoints().len());
    assert!((file.total_length() - built.total_length()).abs() < 1e-6);
    for (a, b) in file.waypoints().iter().zip(built.waypoints()) {
        assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6 && (a.v_ref - b.v_ref).abs() < 1e-6);
        assert!((a.d_left - b.d_left).abs() < 1e-6 && (a.d_right - b.d_right).abs() < 1e-6);
    }
}
