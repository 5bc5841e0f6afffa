#![allow(dead_code)]

pub mod oracle {
    use nalgebra::{DMatrix, DVector};

    /// Minimizes 1/2 x'Hx + g'x subject to rows `lo <= A x <= hi` by trying
    /// every assignment of each row to {inactive, at lower, at upper}, solving
    /// the equality-constrained KKT system, and keeping the best feasible
    /// candidate. Rows with `lo == hi` are always active. Exponential; only
    /// for tiny problems.
    pub fn enumerate(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = g.len();
        let m = lo.len();
        let eq: Vec<usize> = (0..m).filter(|&i| lo[i] == hi[i]).collect();
        let ineq: Vec<usize> = (0..m).filter(|&i| lo[i] != hi[i]).collect();
        let mut best: Option<(DVector<f64>, f64)> = None;
        let total = 3usize.pow(ineq.len() as u32);
        for code in 0..total {
            let mut c = code;
            let mut rows: Vec<(usize, f64)> = eq.iter().map(|&i| (i, lo[i])).collect();
            for &i in &ineq {
                match c % 3 {
                    1 => rows.push((i, lo[i])),
                    2 => rows.push((i, hi[i])),
                    _ => {}
                }
                c /= 3;
            }
            if rows.len() > n {
                continue;
            }
            let k = rows.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-g));
            for (r, &(i, b)) in rows.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = a[(i, j)];
                    kkt[(j, n + r)] = a[(i, j)];
                }
                rhs[n + r] = b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let ax = a * &x;
            if (0..m).any(|i| ax[i] < lo[i] - 1e-9 || ax[i] > hi[i] + 1e-9) {
                continue;
            }
            let f = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
            if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        best.expect("feasible problem")
    }
}

pub mod mpc {
    use fsdp::mpc::{Corridor, MpcConfig};
    use fsdp::seed::{extract_flat_references, FlatConfig, FlatReferences, QuinticTraj};
    use fsdp::track::Raceline;
    use rand::Rng;

    pub struct Instance {
        pub refs: FlatReferences,
        pub corridor: Corridor,
        pub x0: [f64; 3],
        pub u_prev: [f64; 2],
    }

    /// Random smooth references on `track` with a corridor around them and
    /// a perturbed initial state.
    pub fn random_instance<R: Rng>(rng: &mut R, track: &Raceline, cfg: &MpcConfig) -> Instance {
        let duration: f64 = 3.0;
        let mut cs = [0.0; 6];
        cs[0] = rng.random_range(1.0..track.total_length() - 15.0);
        cs[1] = rng.random_range(2.0..4.0);
        cs[2] = rng.random_range(-0.2..0.2);
        let cd: [f64; 6] = std::array::from_fn(|k| rng.random_range(-0.15..0.15) / duration.powi(k as i32));
        let traj = QuinticTraj { coeffs_s: cs, coeffs_d: cd, duration };
        let fc = FlatConfig { wheelbase: cfg.wheelbase, v_min: 0.1, delta_max: cfg.delta_max };
        let refs = extract_flat_references(&traj, track, cfg.horizon, cfg.dt, 0.0, &fc).unwrap();
        let mut corridor = Corridor { lower: Vec::new(), upper: Vec::new() };
        for k in 1..=cfg.horizon {
            let n = refs.x_ref[k][1];
            corridor.lower.push(n - rng.random_range(0.05..0.5));
            corridor.upper.push(n + rng.random_range(0.05..0.5));
        }
        let r0 = refs.x_ref[0];
        let x0 = [r0[0] + rng.random_range(-0.05..0.05), r0[1] + rng.random_range(-0.03..0.03), r0[2] + rng.random_range(-0.05..0.05)];
        let u_prev = [refs.u_ref[0][0] + rng.random_range(-0.1..0.1), refs.u_ref[0][1] + rng.random_range(-0.05..0.05)];
        Instance { refs, corridor, x0, u_prev }
    }
}

pub mod quintic {
    use fsdp::seed::{poly_eval, Endpoints};
    use nalgebra::{DMatrix, DVector};

    /// Constrained least squares by Lagrange elimination on the normal
    /// equations, in the natural basis.
    pub fn lagrange_fit(t: &[f64], p: &[f64], w: &[f64], duration: f64, e: Endpoints) -> [f64; 6] {
        let mut kkt = DMatrix::zeros(10, 10);
        let mut rhs = DVector::zeros(10);
        for j in 0..t.len() {
            let b: Vec<f64> = (0..6).map(|k| t[j].powi(k)).collect();
            for r in 0..6 {
                rhs[r] += w[j] * p[j] * b[r];
                for c in 0..6 {
                    kkt[(r, c)] += w[j] * b[r] * b[c];
                }
            }
        }
        let rows: [Vec<f64>; 4] = [
            (0..6).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect(),
            (0..6).map(|k| if k == 1 { 1.0 } else { 0.0 }).collect(),
            (0..6).map(|k| duration.powi(k)).collect(),
            (0..6).map(|k| if k == 0 { 0.0 } else { k as f64 * duration.powi(k - 1) }).collect(),
        ];
        let vals = [e.p0, e.v0, e.p1, e.v1];
        for (i, row) in rows.iter().enumerate() {
            for k in 0..6 {
                kkt[(6 + i, k)] = row[k];
                kkt[(k, 6 + i)] = row[k];
            }
            rhs[6 + i] = vals[i];
        }
        let sol = kkt.lu().solve(&rhs).unwrap();
        std::array::from_fn(|k| sol[k])
    }

    pub fn objective(t: &[f64], p: &[f64], w: &[f64], c: &[f64; 6]) -> f64 {
        t.iter().zip(p).zip(w).map(|((t, p), w)| w * (poly_eval(c, *t)[0] - p).powi(2)).sum()
    }
}
