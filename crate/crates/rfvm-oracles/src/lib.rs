//! Independent reference computations for validating the rfvm crate.
//!
//! Everything here is deliberately brute force: adaptive quadrature against
//! a re-derived folded-normal density, a textbook conjugate-regression
//! posterior via a dense solve, Monte Carlo predictive moments, and the
//! uncached double-loop form of the relevance coordinate update. None of it
//! shares code paths with the implementations it checks, so agreement is
//! evidence rather than tautology.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use rfvm::predict::FittedModel;
use rfvm::state::{DesignMatrices, VariationalState};

/// Failure of an oracle itself (non-convergent quadrature, singular solve):
/// a test-infrastructure problem, never evidence about the main crate.
#[derive(Debug, Clone)]
pub struct OracleError(pub String);

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "oracle failure: {}", self.0)
    }
}

impl std::error::Error for OracleError {}

/// Recursive adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// Subdivides until the classic `|S2 - S1| < 15 tol` criterion holds on
/// every panel; exhausting `max_depth` anywhere is an error.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64, OracleError> {
    if !(tol > 0.0) {
        return Err(OracleError(format!("tolerance must be positive, got {tol}")));
    }
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, m: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        m: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, OracleError> {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = simpson(f, a, lm, m);
        let right = simpson(f, m, rm, b);
        let delta = left + right - whole;
        if delta.abs() < 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(OracleError(format!(
                "quadrature did not converge on [{a}, {b}] (residual {delta:e})"
            )));
        }
        let l = recurse(f, a, lm, m, left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, rm, b, right, 0.5 * tol, depth - 1)?;
        Ok(l + r)
    }
    let m = 0.5 * (a + b);
    recurse(f, a, m, b, simpson(f, a, m, b), tol, max_depth)
}

/// Folded-normal density at `x >= 0`, written out from the two-branch
/// definition: the normal mass at `x` plus the reflected mass at `-x`.
pub fn folded_pdf(x: f64, mu: f64, sigma2: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma2).sqrt();
    let a = (x - mu) * (x - mu) / (2.0 * sigma2);
    let b = (x + mu) * (x + mu) / (2.0 * sigma2);
    norm * ((-a).exp() + (-b).exp())
}

/// Mean, variance, and total probability mass of a folded normal, all by
/// quadrature of the density over `[0, |mu| + 12 sigma]`.
///
/// The interval is split at points bracketing the density peak so that a
/// narrow spike (small sigma, large |mu|) cannot slip between the initial
/// sample points of the adaptive rule.
pub fn quad_folded_moments(mu: f64, sigma2: f64) -> Result<(f64, f64, f64), OracleError> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() || !mu.is_finite() {
        return Err(OracleError(format!(
            "invalid folded-normal parameters mu={mu} sigma2={sigma2}"
        )));
    }
    let sigma = sigma2.sqrt();
    let upper = mu.abs() + 12.0 * sigma;
    let mut cuts = vec![0.0];
    for k in [-6.0, -2.0, -0.5, 0.0, 0.5, 2.0, 6.0] {
        let p = mu.abs() + k * sigma;
        if p > 0.0 && p < upper {
            cuts.push(p);
        }
    }
    cuts.push(upper);
    cuts.sort_by(f64::total_cmp);
    let piecewise = |f: &dyn Fn(f64) -> f64| -> Result<f64, OracleError> {
        let mut total = 0.0;
        for pair in cuts.windows(2) {
            total += adaptive_simpson(f, pair[0], pair[1], 1e-13, 48)?;
        }
        Ok(total)
    };
    let mass = piecewise(&|x| folded_pdf(x, mu, sigma2))?;
    let mean = piecewise(&|x| x * folded_pdf(x, mu, sigma2))?;
    let second = piecewise(&|x| x * x * folded_pdf(x, mu, sigma2))?;
    if (mass - 1.0).abs() > 1e-10 {
        return Err(OracleError(format!(
            "folded density mass {mass} is not 1 within 1e-10 (mu={mu}, sigma2={sigma2})"
        )));
    }
    Ok((mean, second - mean * mean, mass))
}

/// Exact Gaussian-conjugate posterior of the dual weights when the latent
/// targets are observed real values: with `R = X X~^T`,
/// `cov = (tau R^T R + diag(psi))^{-1}` and `mean = tau cov R^T y`,
/// computed through a dense LU solve.
pub fn conjugate_dual_regression(
    x: ArrayView2<'_, f64>,
    x_tilde: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    tau: f64,
    psi: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), OracleError> {
    let n = x.nrows();
    let nt = x_tilde.nrows();
    if x.ncols() != x_tilde.ncols() || y.len() != n || psi.len() != nt {
        return Err(OracleError(format!(
            "inconsistent shapes: X {}x{}, X~ {}x{}, y {}, psi {}",
            n,
            x.ncols(),
            nt,
            x_tilde.ncols(),
            y.len(),
            psi.len()
        )));
    }
    if !(tau > 0.0) || psi.iter().any(|p| !(*p > 0.0)) {
        return Err(OracleError("tau and psi must be positive".into()));
    }
    let mut r = DMatrix::zeros(n, nt);
    for i in 0..n {
        for j in 0..nt {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                acc += x[[i, k]] * x_tilde[[j, k]];
            }
            r[(i, j)] = acc;
        }
    }
    let mut prec = r.transpose() * &r * tau;
    for j in 0..nt {
        prec[(j, j)] += psi[j];
    }
    let lu = prec.lu();
    let identity = DMatrix::identity(nt, nt);
    let cov = lu
        .solve(&identity)
        .ok_or_else(|| OracleError("singular precision matrix in conjugate solve".into()))?;
    let yv = DVector::from_iterator(n, y.iter().copied());
    let mean = &cov * (r.transpose() * yv) * tau;
    let cov_rows = (0..nt)
        .map(|i| (0..nt).map(|j| cov[(i, j)]).collect())
        .collect();
    Ok((mean.iter().copied().collect(), cov_rows))
}

/// Monte Carlo estimate of the latent predictive mean and variance.
///
/// Draws every posterior factor independently: dual weights from their
/// Gaussian, each relevance weight as the absolute value of its underlying
/// normal (which is exactly folded-normal distributed), the bias from its
/// Gaussian, and the observation noise at the posterior-mean precision.
pub fn mc_predictive_moments(
    model: &FittedModel,
    x_star: ArrayView1<'_, f64>,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64), OracleError> {
    if n_samples < 100_000 {
        return Err(OracleError(format!(
            "need at least 1e5 samples for stable moments, got {n_samples}"
        )));
    }
    let xs = model
        .standardized_active_input(x_star)
        .map_err(|e| OracleError(format!("bad probe input: {e}")))?;
    let d = model.d_active();
    let nt = model.n_tilde_active();

    let cov = DMatrix::from_fn(nt, nt, |i, j| model.a_cov[[i, j]]);
    let chol = cholesky_with_jitter(cov)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut z = DVector::zeros(nt);
    for _ in 0..n_samples {
        for i in 0..nt {
            z[i] = rng.sample::<f64, _>(StandardNormal);
        }
        let a = &chol * &z;
        let mut y_star = model.b_mean + model.b_var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        y_star += (1.0 / model.tau_mean).sqrt() * rng.sample::<f64, _>(StandardNormal);
        for j in 0..d {
            let v = (model.v_mu[j]
                + model.v_sigma2[j].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .abs();
            let mut proj = 0.0;
            for i in 0..nt {
                proj += model.x_tilde[[i, j]] * (model.a_mean[i] + a[i]);
            }
            y_star += xs[j] * v * proj;
        }
        sum += y_star;
        sum_sq += y_star * y_star;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    Ok((mean, var))
}

fn cholesky_with_jitter(cov: DMatrix<f64>) -> Result<DMatrix<f64>, OracleError> {
    let nt = cov.nrows();
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.l());
    }
    let scale = cov.trace().abs().max(1e-300) / nt as f64;
    for exp in [-12, -10, -8, -6] {
        let mut jittered = cov.clone();
        let jitter = scale * 10f64.powi(exp);
        for i in 0..nt {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = jittered.cholesky() {
            return Ok(c.l());
        }
    }
    Err(OracleError(
        "dual covariance is not positive definite even under jitter".into(),
    ))
}

/// The relevance coordinate update written as the literal sums, with no
/// residual caching: precision and mean of the one-dimensional underlying
/// normal for coordinate `d`, given every other coordinate held fixed at
/// its current value.
pub fn naive_v_update(state: &VariationalState, _data: &DesignMatrices, d: usize) -> (f64, f64) {
    let n = state.n();
    let nt = state.n_tilde_active();
    let dims = state.d_active();
    let tau = state.tau_mean();
    let a_second = state.a_second_moment();

    // x is stored transposed in the state (feature-major); data.x is row-major.
    let quad = |da: usize, db: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..nt {
            for j in 0..nt {
                acc += state.xt_t[[da, i]] * a_second[[i, j]] * state.xt_t[[db, j]];
            }
        }
        acc
    };

    let mut c_d = 0.0;
    for sample in 0..n {
        c_d += state.x_t[[d, sample]] * state.x_t[[d, sample]];
    }
    let prec = tau * c_d * quad(d, d) + state.q_delta.mean(d);

    let mut p_d = 0.0;
    for i in 0..nt {
        p_d += state.xt_t[[d, i]] * state.q_a.mean[i];
    }
    let mut lin = 0.0;
    for sample in 0..n {
        lin += tau * state.x_t[[d, sample]] * p_d * (state.q_y.mean[sample] - state.q_b.mean);
        for other in 0..dims {
            if other == d {
                continue;
            }
            lin -= tau
                * state.x_t[[d, sample]]
                * state.q_v[other].folded_mean
                * state.x_t[[other, sample]]
                * quad(d, other);
        }
    }
    (prec, lin / prec)
}

/// One-sample Kolmogorov-Smirnov statistic: the largest gap between the
/// empirical distribution of `samples` and `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: &dyn Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut worst: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let c = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        worst = worst.max((c - lo).abs()).max((hi - c).abs());
    }
    worst
}

/// Draws from `|N(mu, sigma2)|`, which is folded-normal distributed.
pub fn sample_folded(mu: f64, sigma2: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sigma = sigma2.sqrt();
    (0..n)
        .map(|_| (mu + sigma * rng.sample::<f64, _>(StandardNormal)).abs())
        .collect()
}

/// Deterministic random matrix for test fixtures.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> ndarray::Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ndarray::Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Deterministic random vector for test fixtures.
pub fn random_vector(len: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Array1::from_shape_fn(len, |_| rng.sample::<f64, _>(StandardNormal))
}
