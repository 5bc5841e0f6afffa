//! Sparse (VFE) and dense Gaussian-process regression on 1-D inputs.
//!
//! Both models use an RBF kernel and a zero prior mean on centered targets.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster;

pub const DENSE_MAX_N: usize = 2000;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate fit: {0}")]
    Fit(String),
    #[error("factorization failed")]
    Degenerate,
    #[error("dense GP refuses N = {0} (limit {DENSE_MAX_N})")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, signal_variance: f64) -> Self {
        RbfKernel { lengthscale, signal_variance }
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let r = (a - b) / self.lengthscale;
        self.signal_variance * (-0.5 * r * r).exp()
    }

    /// Gram matrix with rows indexed by `a` and columns by `b`.
    pub fn matrix(&self, a: &[f64], b: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(a[i], b[j]))
    }

    pub fn vector(&self, x: f64, b: &[f64]) -> DVector<f64> {
        DVector::from_iterator(b.len(), b.iter().map(|&z| self.eval(x, z)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Starting point for hyperparameter search. `None` fields are derived from
/// the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GpInit {
    pub lengthscale: Option<f64>,
    pub signal_variance: Option<f64>,
    pub noise_variance: Option<f64>,
    pub inducing: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iters: usize,
    pub init: GpInit,
    pub optimize_hypers: bool,
    pub optimize_inducing: bool,
    pub seed: u64,
    pub min_noise: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            iters: 200,
            init: GpInit::default(),
            optimize_hypers: true,
            optimize_inducing: true,
            seed: 0,
            min_noise: 1e-6,
        }
    }
}

fn check_data(x: &[f64], y: &[f64], min_n: usize) -> Result<(), GpError> {
    if x.len() != y.len() {
        return Err(GpError::InvalidInput(format!("{} inputs but {} targets", x.len(), y.len())));
    }
    if x.len() < min_n {
        return Err(GpError::InvalidInput(format!("need at least {min_n} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(GpError::InvalidInput("non-finite input or target".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
}

fn chol_jittered(k: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jit = JITTER_START;
    while jit <= JITTER_MAX * 1.0000001 {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jit * scale;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jit));
        }
        jit *= 10.0;
    }
    Err(GpError::Degenerate)
}

fn lower(c: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    c.l()
}

fn solve_l(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b).expect("nonsingular triangle")
}

fn solve_lt(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b).expect("nonsingular triangle")
}

fn solve_l_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b).expect("nonsingular triangle")
}

fn solve_lt_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b).expect("nonsingular triangle")
}

/// Gradient of an objective w.r.t. log hyperparameters and raw inducing inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub log_lengthscale: f64,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
    pub inducing: Vec<f64>,
}

/// VFE lower bound and its gradient for centered targets `y`.
pub fn vfe_bound(x: &[f64], y: &[f64], z: &[f64], kernel: RbfKernel, noise: f64) -> Result<(f64, Gradient), GpError> {
    let n = x.len();
    let m = z.len();
    let ell2 = kernel.lengthscale * kernel.lengthscale;
    let sf2 = kernel.signal_variance;
    let sn2 = noise;
    let yv = DVector::from_column_slice(y);

    let kmm0 = kernel.matrix(z, z);
    let (chol, jit) = chol_jittered(&kmm0, sf2)?;
    let l = lower(&chol);
    let kmn = kernel.matrix(z, x);
    let a = solve_l(&l, &kmn);
    let mut bmat = &a * a.transpose();
    for i in 0..m {
        bmat[(i, i)] += sn2;
    }
    let lb = lower(&Cholesky::new(bmat).ok_or(GpError::Degenerate)?);
    let ay = &a * &yv;
    let c = solve_l_vec(&lb, &ay);
    let trq = a.norm_squared();
    let yty = yv.norm_squared();
    let logdet = (n - m) as f64 * sn2.ln() + 2.0 * lb.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = (yty - c.norm_squared()) / sn2;
    let trace = (n as f64 * sf2 - trq) / (2.0 * sn2);
    let f = -0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * quad - trace;

    // b = P^-1 Kmn y with P = L B L^T
    let b = solve_lt_vec(&l, &solve_lt_vec(&lb, &c));
    let alpha = (&yv - kmn.transpose() * &b) / sn2;
    let binv_a = solve_lt(&lb, &solve_l(&lb, &a));
    let pinv_kmn = solve_lt(&l, &binv_a);
    let kinv_kmn = solve_lt(&l, &a);
    let gmn = &b * alpha.transpose() - &pinv_kmn + &kinv_kmn / sn2;

    let eye = DMatrix::<f64>::identity(m, m);
    let linv = solve_l(&l, &eye);
    let kinv = linv.transpose() * &linv;
    let lb_inv = solve_l(&lb, &eye);
    let binv = lb_inv.transpose() * &lb_inv;
    let pinv = linv.transpose() * &binv * &linv;
    let gmm = -0.5 * &b * b.transpose() + 0.5 * (&kinv - sn2 * &pinv) - (&kinv_kmn * kinv_kmn.transpose()) / (2.0 * sn2);

    let dsn2 = 0.5 * (alpha.norm_squared() - n as f64 / sn2 + (m as f64 - sn2 * binv.trace()) / sn2)
        + (n as f64 * sf2 - trq) / (2.0 * sn2 * sn2);

    let mut dlog_ell = 0.0;
    let mut dlog_sf2 = -(n as f64) * sf2 / (2.0 * sn2) + jit * sf2 * gmm.trace();
    let mut dz = vec![0.0; m];
    for i in 0..m {
        for j in 0..n {
            let g = gmn[(i, j)] * kmn[(i, j)];
            let d = z[i] - x[j];
            dlog_ell += g * d * d / ell2;
            dlog_sf2 += g;
            dz[i] -= g * d / ell2;
        }
        for j in 0..m {
            let g = gmm[(i, j)] * kmm0[(i, j)];
            let d = z[i] - z[j];
            dlog_ell += g * d * d / ell2;
            dlog_sf2 += g;
            dz[i] -= 2.0 * g * d / ell2;
        }
    }
    Ok((
        f,
        Gradient { log_lengthscale: dlog_ell, log_signal_variance: dlog_sf2, log_noise_variance: sn2 * dsn2, inducing: dz },
    ))
}

/// Exact log marginal likelihood and gradient for centered targets.
pub fn dense_lml(x: &[f64], y: &[f64], kernel: RbfKernel, noise: f64) -> Result<(f64, Gradient), GpError> {
    let n = x.len();
    let k0 = kernel.matrix(x, x);
    let mut k = k0.clone();
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let chol = Cholesky::new(k).ok_or(GpError::Degenerate)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let l = chol.l();
    let lml = -0.5 * yv.dot(&alpha) - l.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * n as f64 * (2.0 * PI).ln();
    let w = &alpha * alpha.transpose() - chol.inverse();
    let ell2 = kernel.lengthscale * kernel.lengthscale;
    let mut dl = 0.0;
    let mut ds = 0.0;
    for i in 0..n {
        for j in 0..n {
            let g = w[(i, j)] * k0[(i, j)];
            let d = x[i] - x[j];
            dl += g * d * d / ell2;
            ds += g;
        }
    }
    Ok((
        lml,
        Gradient {
            log_lengthscale: 0.5 * dl,
            log_signal_variance: 0.5 * ds,
            log_noise_variance: 0.5 * noise * w.trace(),
            inducing: Vec::new(),
        },
    ))
}

struct Params {
    log_ell: f64,
    log_sf2: f64,
    log_sn2: f64,
    z: Vec<f64>,
}

/// Gradient ascent with step halving on decrease and growth on acceptance.
/// Every objective evaluation counts against `iters`.
fn ascend<F>(p: &mut Params, iters: usize, opts: &FitOptions, z_scale: f64, eval: F) -> Result<f64, GpError>
where
    F: Fn(&Params) -> Result<(f64, Gradient), GpError>,
{
    let pack = |g: &Gradient| -> Vec<f64> {
        let mut v = Vec::with_capacity(3 + g.inducing.len());
        if opts.optimize_hypers {
            v.extend([g.log_lengthscale, g.log_signal_variance, g.log_noise_variance]);
        } else {
            v.extend([0.0; 3]);
        }
        if opts.optimize_inducing {
            v.extend(g.inducing.iter().map(|d| d * z_scale));
        } else {
            v.extend(std::iter::repeat_n(0.0, g.inducing.len()));
        }
        v
    };
    let min_log_sn2 = opts.min_noise.ln();
    let step = |p: &Params, dir: &[f64], eta: f64| -> Params {
        Params {
            log_ell: (p.log_ell + eta * dir[0]).clamp(-12.0, 12.0),
            log_sf2: (p.log_sf2 + eta * dir[1]).clamp(-25.0, 25.0),
            log_sn2: (p.log_sn2 + eta * dir[2]).clamp(min_log_sn2, 25.0),
            z: p.z.iter().zip(&dir[3..]).map(|(z, d)| z + eta * d * z_scale).collect(),
        }
    };
    let (mut f, g) = eval(p)?;
    let mut dir = pack(&g);
    let gmax = dir.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if gmax == 0.0 || iters == 0 {
        return Ok(f);
    }
    let mut eta = 0.1 / gmax;
    for _ in 0..iters {
        let cand = step(p, &dir, eta);
        match eval(&cand) {
            Ok((fc, gc)) if fc.is_finite() && fc > f => {
                *p = cand;
                f = fc;
                dir = pack(&gc);
                eta *= 1.5;
            }
            _ => {
                eta *= 0.5;
                let gmax = dir.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if eta * gmax < 1e-12 {
                    break;
                }
            }
        }
    }
    Ok(f)
}

fn initial_hypers(x: &[f64], yc: &[f64], init: &GpInit) -> (f64, f64, f64) {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let var = variance(yc).max(1e-6);
    (
        init.lengthscale.unwrap_or(0.1 * (hi - lo)),
        init.signal_variance.unwrap_or(var),
        init.noise_variance.unwrap_or(0.1 * var),
    )
}

/// Fitted VFE sparse GP with a cached factorization.
#[derive(Debug, Clone)]
pub struct SgpModel {
    inducing: Vec<f64>,
    kernel: RbfKernel,
    noise_variance: f64,
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    y_mean: f64,
    elbo: f64,
    jitter: f64,
    l: DMatrix<f64>,
    lb: DMatrix<f64>,
    w: DVector<f64>,
}

/// Serializable model contents; the factorization is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgpSnapshot {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub inducing: Vec<f64>,
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub elbo: f64,
}

impl SgpModel {
    /// Builds a model with fixed hyperparameters and inducing inputs.
    pub fn from_parts(x: &[f64], y: &[f64], inducing: &[f64], kernel: RbfKernel, noise: f64) -> Result<Self, GpError> {
        check_data(x, y, 1)?;
        if inducing.is_empty() || inducing.iter().any(|v| !v.is_finite()) {
            return Err(GpError::InvalidInput("inducing inputs must be non-empty and finite".into()));
        }
        if !(kernel.lengthscale > 0.0 && kernel.signal_variance > 0.0 && noise > 0.0) {
            return Err(GpError::InvalidInput("hyperparameters must be positive".into()));
        }
        let y_mean = mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let (elbo, _) = vfe_bound(x, &yc, inducing, kernel, noise)?;
        let kmm = kernel.matrix(inducing, inducing);
        let (chol, jitter) = chol_jittered(&kmm, kernel.signal_variance)?;
        let l = lower(&chol);
        let a = solve_l(&l, &kernel.matrix(inducing, x));
        let mut bmat = &a * a.transpose();
        for i in 0..inducing.len() {
            bmat[(i, i)] += noise;
        }
        let lb = lower(&Cholesky::new(bmat).ok_or(GpError::Degenerate)?);
        let ay = &a * DVector::from_column_slice(&yc);
        let w = solve_lt_vec(&l, &solve_lt_vec(&lb, &solve_l_vec(&lb, &ay)));
        Ok(SgpModel {
            inducing: inducing.to_vec(),
            kernel,
            noise_variance: noise,
            train_x: x.to_vec(),
            train_y: y.to_vec(),
            y_mean,
            elbo,
            jitter,
            l,
            lb,
            w,
        })
    }

    /// Fits hyperparameters and inducing inputs by ascent on the VFE bound.
    pub fn fit(x: &[f64], y: &[f64], m: usize, opts: &FitOptions) -> Result<Self, GpError> {
        check_data(x, y, 2)?;
        if m == 0 {
            return Err(GpError::InvalidInput("M must be at least 1".into()));
        }
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(GpError::Fit("all inputs identical".into()));
        }
        let y_mean = mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let (ell, sf2, sn2) = initial_hypers(x, &yc, &opts.init);
        let z0 = match &opts.init.inducing {
            Some(z) => z.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let seeds = cluster::kmeans_pp(x, m.min(x.len()), &mut rng);
                let mut z = cluster::lloyd(x, &seeds, 20, 1e-9).0;
                z.sort_by(f64::total_cmp);
                z
            }
        };
        let mut p = Params { log_ell: ell.ln(), log_sf2: sf2.ln(), log_sn2: sn2.max(opts.min_noise).ln(), z: z0 };
        ascend(&mut p, opts.iters, opts, ell, |q| {
            vfe_bound(x, &yc, &q.z, RbfKernel::new(q.log_ell.exp(), q.log_sf2.exp()), q.log_sn2.exp())
        })?;
        SgpModel::from_parts(x, y, &p.z, RbfKernel::new(p.log_ell.exp(), p.log_sf2.exp()), p.log_sn2.exp())
    }

    pub fn inducing(&self) -> &[f64] {
        &self.inducing
    }

    pub fn kernel(&self) -> RbfKernel {
        self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn train_x(&self) -> &[f64] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn elbo(&self) -> f64 {
        self.elbo
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, x: f64) -> Posterior {
        let k = self.kernel.vector(x, &self.inducing);
        let v = solve_l_vec(&self.l, &k);
        let u = solve_l_vec(&self.lb, &v);
        let var = self.kernel.signal_variance - v.norm_squared() + self.noise_variance * u.norm_squared();
        Posterior { mean: self.y_mean + k.dot(&self.w), variance: var.max(0.0) }
    }

    pub fn predict_batch(&self, xs: &[f64]) -> Vec<Posterior> {
        let kms = self.kernel.matrix(&self.inducing, xs);
        let v = solve_l(&self.l, &kms);
        let u = solve_l(&self.lb, &v);
        (0..xs.len())
            .map(|j| {
                let var = self.kernel.signal_variance - v.column(j).norm_squared()
                    + self.noise_variance * u.column(j).norm_squared();
                Posterior { mean: self.y_mean + kms.column(j).dot(&self.w), variance: var.max(0.0) }
            })
            .collect()
    }

    /// Nystrom gap plus noise: k(x,x) - k_xZ Kzz^-1 k_Zx + noise.
    /// Joint posterior covariance of the latent function at `xs`.
    pub fn predict_covariance(&self, xs: &[f64]) -> DMatrix<f64> {
        let v = solve_l(&self.l, &self.kernel.matrix(&self.inducing, xs));
        let u = solve_l(&self.lb, &v);
        self.kernel.matrix(xs, xs) - v.transpose() * &v + u.transpose() * &u * self.noise_variance
    }

    pub fn predictive_distance(&self, x: f64) -> f64 {
        let k = self.kernel.vector(x, &self.inducing);
        let v = solve_l_vec(&self.l, &k);
        (self.kernel.signal_variance - v.norm_squared()).max(0.0) + self.noise_variance
    }

    pub fn snapshot(&self) -> SgpSnapshot {
        SgpSnapshot {
            lengthscale: self.kernel.lengthscale,
            signal_variance: self.kernel.signal_variance,
            noise_variance: self.noise_variance,
            inducing: self.inducing.clone(),
            train_x: self.train_x.clone(),
            train_y: self.train_y.clone(),
            elbo: self.elbo,
        }
    }

    pub fn from_snapshot(s: &SgpSnapshot) -> Result<Self, GpError> {
        SgpModel::from_parts(
            &s.train_x,
            &s.train_y,
            &s.inducing,
            RbfKernel::new(s.lengthscale, s.signal_variance),
            s.noise_variance,
        )
    }
}

/// Exact GP regression.
#[derive(Debug, Clone)]
pub struct DenseGp {
    kernel: RbfKernel,
    noise_variance: f64,
    train_x: Vec<f64>,
    y_mean: f64,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    lml: f64,
}

impl DenseGp {
    pub fn from_parts(x: &[f64], y: &[f64], kernel: RbfKernel, noise: f64) -> Result<Self, GpError> {
        check_data(x, y, 1)?;
        if x.len() > DENSE_MAX_N {
            return Err(GpError::TooLarge(x.len()));
        }
        if !(kernel.lengthscale > 0.0 && kernel.signal_variance > 0.0 && noise > 0.0) {
            return Err(GpError::InvalidInput("hyperparameters must be positive".into()));
        }
        let y_mean = mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut k = kernel.matrix(x, x);
        for i in 0..x.len() {
            k[(i, i)] += noise;
        }
        let chol = Cholesky::new(k).ok_or(GpError::Degenerate)?;
        let yv = DVector::from_column_slice(&yc);
        let alpha = chol.solve(&yv);
        let l = chol.l();
        let lml = -0.5 * yv.dot(&alpha)
            - l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
            - 0.5 * x.len() as f64 * (2.0 * PI).ln();
        Ok(DenseGp { kernel, noise_variance: noise, train_x: x.to_vec(), y_mean, l, alpha, lml })
    }

    /// Fits hyperparameters by ascent on the exact marginal likelihood.
    pub fn fit(x: &[f64], y: &[f64], opts: &FitOptions) -> Result<Self, GpError> {
        check_data(x, y, 2)?;
        if x.len() > DENSE_MAX_N {
            return Err(GpError::TooLarge(x.len()));
        }
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(GpError::Fit("all inputs identical".into()));
        }
        let y_mean = mean(y);
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let (ell, sf2, sn2) = initial_hypers(x, &yc, &opts.init);
        let mut p = Params { log_ell: ell.ln(), log_sf2: sf2.ln(), log_sn2: sn2.max(opts.min_noise).ln(), z: Vec::new() };
        let opts = FitOptions { optimize_hypers: true, ..opts.clone() };
        ascend(&mut p, opts.iters, &opts, ell, |q| {
            dense_lml(x, &yc, RbfKernel::new(q.log_ell.exp(), q.log_sf2.exp()), q.log_sn2.exp())
        })?;
        DenseGp::from_parts(x, y, RbfKernel::new(p.log_ell.exp(), p.log_sf2.exp()), p.log_sn2.exp())
    }

    pub fn kernel(&self) -> RbfKernel {
        self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn predict(&self, x: f64) -> Posterior {
        let k = self.kernel.vector(x, &self.train_x);
        let v = solve_l_vec(&self.l, &k);
        let var = self.kernel.signal_variance - v.norm_squared();
        Posterior { mean: self.y_mean + k.dot(&self.alpha), variance: var.max(0.0) }
    }

    pub fn predict_batch(&self, xs: &[f64]) -> Vec<Posterior> {
        let kns = self.kernel.matrix(&self.train_x, xs);
        let v = solve_l(&self.l, &kns);
        (0..xs.len())
            .map(|j| {
                let var = self.kernel.signal_variance - v.column(j).norm_squared();
                Posterior { mean: self.y_mean + kns.column(j).dot(&self.alpha), variance: var.max(0.0) }
            })
            .collect()
    }

    /// Joint posterior covariance of the latent function at `xs`.
    pub fn predict_covariance(&self, xs: &[f64]) -> DMatrix<f64> {
        let v = solve_l(&self.l, &self.kernel.matrix(&self.train_x, xs));
        self.kernel.matrix(xs, xs) - v.transpose() * &v
    }
}
