mod common;

use common::quintic::{lagrange_fit, objective};
use fsdp::predictor::CollisionInterval;
use fsdp::seed::*;
use fsdp::track::builders;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn quintic_input_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let duration: f64 = rng.random_range(1.0..4.0);
        let c: [f64; 6] = std::array::from_fn(|k| rng.random_range(-1.0..1.0) / duration.powi(k as i32));
        let t: Vec<f64> = (0..=60).map(|i| duration * i as f64 / 60.0).collect();
        let p: Vec<f64> = t.iter().map(|t| poly_eval(&c, *t)[0]).collect();
        let e0 = poly_eval(&c, 0.0);
        let e1 = poly_eval(&c, duration);
        let fit = fit_axis(&t, &p, duration, Endpoints { p0: e0[0], v0: e0[1], p1: e1[0], v1: e1[1] }).unwrap();
        for k in 0..6 {
            assert!((fit[k] - c[k]).abs() < 1e-8, "coefficient {k}: {} vs {}", fit[k], c[k]);
        }
    }
}

#[test]
fn rough_paths_match_lagrange_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..20 {
        let s1 = rng.random_range(0.0..10.0);
        let gaps: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..4.0)).collect();
        let mut s = vec![s1];
        for g in &gaps {
            s.push(s.last().unwrap() + g);
        }
        let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
        let mid: Vec<f64> = (0..3).map(|_| side.sign() * rng.random_range(0.2..1.0)).collect();
        let kps = KeyPointSet {
            points: [
                KeyPoint { s: s[0], d: 0.0 },
                KeyPoint { s: s[1], d: mid[0] },
                KeyPoint { s: s[2], d: mid[1] },
                KeyPoint { s: s[3], d: mid[2] },
                KeyPoint { s: s[4], d: 0.0 },
            ],
            side,
            margin: 0.4,
        };
        let rough = interpolate_rough(&kps, 0.1, rng.random_range(1.5..6.0)).unwrap();
        let traj = fit_quintic(&rough).unwrap();
        let w = trapezoid_weights(&rough.t);
        let n = rough.t.len();
        let e = Endpoints {
            p0: rough.d[0],
            v0: (rough.d[1] - rough.d[0]) / (rough.t[1] - rough.t[0]),
            p1: rough.d[n - 1],
            v1: (rough.d[n - 1] - rough.d[n - 2]) / (rough.t[n - 1] - rough.t[n - 2]),
        };
        let oracle = lagrange_fit(&rough.t, &rough.d, &w, rough.duration, e);
        let f_fit = objective(&rough.t, &rough.d, &w, &traj.coeffs_d);
        let f_orc = objective(&rough.t, &rough.d, &w, &oracle);
        assert!(f_fit - f_orc < 1e-6, "path {i}: {f_fit} vs {f_orc}");
        // Endpoint equalities hold to 1e-8.
        let a = poly_eval(&traj.coeffs_d, 0.0);
        let b = poly_eval(&traj.coeffs_d, rough.duration);
        assert!((a[0] - e.p0).abs() < 1e-8 && (a[1] - e.v0).abs() < 1e-8);
        assert!((b[0] - e.p1).abs() < 1e-8 && (b[1] - e.v1).abs() < 1e-8);
        // The s axis stays the constant-speed line.
        for (t, s) in rough.t.iter().zip(&rough.s) {
            assert!((poly_eval(&traj.coeffs_s, *t)[0] - s).abs() < 1e-8);
        }
    }
}

/// Exact Cartesian position on a counter-clockwise circle of radius `r`
/// starting at (r, 0), with d positive toward the center.
fn circle_xy(r: f64, s: f64, d: f64) -> (f64, f64) {
    let a = s / r;
    ((r - d) * a.cos(), (r - d) * a.sin())
}

#[test]
fn flatness_matches_finite_differences() {
    let (radius, wb) = (5.0, 0.33);
    let track = builders::circle(radius, 0.05, 1.2, 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-2);
    for _ in 0..50 {
        let duration: f64 = rng.random_range(1.0..3.0);
        let mut cs: [f64; 6] = std::array::from_fn(|k| rng.random_range(-0.3..0.3) / duration.powi(k as i32));
        cs[0] = rng.random_range(0.0..30.0);
        cs[1] = rng.random_range(2.0..5.0);
        let cd: [f64; 6] = std::array::from_fn(|k| rng.random_range(-0.2..0.2) / duration.powi(k as i32));
        let traj = QuinticTraj { coeffs_s: cs, coeffs_d: cd, duration };
        let pos = |t: f64| {
            let k = traj.eval(t);
            circle_xy(radius, k.s, k.d)
        };
        for j in 1..10 {
            let t = duration * j as f64 / 10.0;
            let h = 1e-3;
            let (xm, ym) = pos(t - h);
            let (x0, y0) = pos(t);
            let (xp, yp) = pos(t + h);
            let (vx, vy) = ((xp - xm) / (2.0 * h), (yp - ym) / (2.0 * h));
            let (ax, ay) = ((xp - 2.0 * x0 + xm) / (h * h), (yp - 2.0 * y0 + ym) / (h * h));
            let v = vx.hypot(vy);
            let a_t = (vx * ax + vy * ay) / v;
            let delta = (wb * (vx * ay - vy * ax) / (v * v * v)).atan();
            let f = flat_point(&traj.eval(t), &track, wb);
            assert!(rel(f.v, v) < 1e-4, "v {} vs {v}", f.v);
            assert!(rel(f.a_t, a_t) < 1e-4, "a_t {} vs {a_t}", f.a_t);
            assert!(rel(f.delta, delta) < 1e-4, "delta {} vs {delta}", f.delta);
            let psi = vy.atan2(vx);
            assert!(fsdp::track::wrap_angle(f.psi - psi).abs() < 1e-4);
        }
    }
}

#[test]
fn integrating_references_reproduces_positions() {
    let track = builders::circle(5.0, 0.05, 1.2, 4.0);
    let traj = QuinticTraj {
        coeffs_s: [1.0, 3.0, 0.2, -0.05, 0.0, 0.0],
        coeffs_d: [0.0, 0.3, 0.1, -0.1, 0.02, 0.0],
        duration: 3.0,
    };
    let cfg = FlatConfig { wheelbase: 0.33, v_min: 0.1, delta_max: 1.0 };
    let dt = 0.002;
    let n = 1000;
    let r = extract_flat_references(&traj, &track, n, dt, 0.0, &cfg).unwrap();
    let start = track.frenet_to_cartesian(fsdp::track::FrenetPose { s: r.x_ref[0][0], n: r.x_ref[0][1], theta: 0.0 }).unwrap();
    let (mut x, mut y) = (start.x, start.y);
    let heading = |k: usize| track.sample(r.x_ref[k][0]).psi + r.x_ref[k][2];
    let speed = |k: usize| if k < n { r.u_ref[k][0] } else { flat_point(&traj.eval(r.t[k]), &track, 0.33).v };
    for k in 0..n {
        let (p0, p1) = (heading(k), heading(k + 1));
        x += 0.5 * dt * (speed(k) * p0.cos() + speed(k + 1) * p1.cos());
        y += 0.5 * dt * (speed(k) * p0.sin() + speed(k + 1) * p1.sin());
        let p = track.frenet_to_cartesian(fsdp::track::FrenetPose { s: r.x_ref[k + 1][0], n: r.x_ref[k + 1][1], theta: 0.0 }).unwrap();
        assert!((x - p.x).hypot(y - p.y) < 1e-3, "step {k}");
    }
}

#[test]
fn planned_seed_keeps_clearance_and_bounds() {
    let track = builders::straight(80.0, 0.1, 1.2, 5.0);
    let cfg = SeedConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut planned = 0;
    for _ in 0..30 {
        let c0 = rng.random_range(20.0..40.0);
        let iv = CollisionInterval { c_start: c0, c_end: c0 + rng.random_range(1.0..5.0), exists: true };
        let base = rng.random_range(-0.5..0.5);
        let d_opp = move |s: f64| base + 0.1 * (0.3 * s).sin();
        let Ok(plan) = plan_seed(&iv, &d_opp, &track, rng.random_range(2.0..6.0), &cfg, None) else { continue };
        planned += 1;
        for j in 0..=400 {
            let t = plan.traj.duration * j as f64 / 400.0;
            let k = plan.traj.eval(t);
            assert!(k.d.abs() <= 1.2 - cfg.boundary_margin + 1e-9);
            if iv.contains(k.s) {
                assert!((k.d - d_opp(k.s)).abs() >= cfg.clearance_factor * cfg.margin - 1e-9);
            }
        }
    }
    assert!(planned >= 25, "only {planned} of 30 seeds planned");
}
