//! Factor updates, the evidence lower bound, and the fit loop.
//!
//! Every update is exact coordinate ascent on the mean-field factorization
//! given the moments of the other factors. The logistic likelihood enters
//! through the Jaakkola-Jordan bound, which makes the latent-target factor
//! Gaussian; the relevance weights are updated one feature at a time in a
//! Gauss-Seidel sweep that maintains the fitted-signal matrix
//! `R = X diag(E v) X~^T` with rank-one corrections, so a full sweep costs
//! `O(D N N~)` instead of the naive `O(D^2 N N~)`.
//!
//! The public per-factor functions rebuild their scratch from the state on
//! every call, which keeps them independently testable; [`fit`] runs the same
//! inner routines against a shared workspace so each iteration builds the
//! expensive intermediates once.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::time::Instant;

use crate::distributions::{
    folded_softplus_unit, jaakkola_lambda, softplus, GammaParams, LN_2PI,
};
use crate::error::Error;
use crate::state::{
    DesignMatrices, Hyperparams, QRelevance, TraceRecord, VariationalState,
};
use crate::Result;

/// One pruning pass that removed something, with the bound on both sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEvent {
    /// 1-based iteration at which the pass ran.
    pub iteration: usize,
    /// Bound computed just before pruning.
    pub elbo_before: f64,
    /// Bound recomputed on the compacted model.
    pub elbo_after: f64,
    /// Removed feature columns, in original coordinates.
    pub removed_features: Vec<usize>,
    /// Removed relevance-vector rows, in original coordinates.
    pub removed_rvs: Vec<usize>,
}

/// Everything the fit loop observed: the per-iteration trace, the stopping
/// reason, and every pruning pass that removed something.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub trace: Vec<TraceRecord>,
    /// True when the windowed rule stopped the fit, false on budget exhaustion.
    pub converged: bool,
    pub iterations_run: usize,
    /// Bound at the last iteration.
    pub final_elbo: f64,
    pub prune_events: Vec<PruneEvent>,
}

/// Fitted-signal matrix `R` with `R[n, i] = x_n^T diag(E v) x~_i`,
/// shape (N, N~ active). Row `n` is the feature-weighted overlap of sample
/// `n` with every active relevance vector.
pub fn residual_matrix(state: &VariationalState) -> Array2<f64> {
    let mut scaled = state.x_t.clone();
    for (f, mut row) in scaled.rows_mut().into_iter().enumerate() {
        row *= state.q_v[f].folded_mean;
    }
    scaled.t().dot(&state.xt_t)
}

/// Per-feature squared norms over training samples, `c_d = sum_n x_{nd}^2`.
pub fn feature_squared_norms(state: &VariationalState) -> Array1<f64> {
    Array1::from_iter(
        state
            .x_t
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|x| x * x).sum()),
    )
}

/// Mean of the fitted signal without the bias, `m_n = x_n^T diag(E v) X~^T E a`.
pub fn predicted_latent_mean(state: &VariationalState) -> Array1<f64> {
    let p = state.xt_t.dot(&state.q_a.mean);
    let g = Array1::from_iter(
        state
            .q_v
            .iter()
            .zip(p.iter())
            .map(|(q, pf)| q.folded_mean * pf),
    );
    state.x_t.t().dot(&g)
}

/// Shared per-iteration scratch. Field invariants, in terms of the current
/// state: `r_mat` is the fitted-signal matrix, `c` the feature squared
/// norms, `a_moment = cov + mean mean^T` of the dual factor, `s` the
/// quadratic forms `x~_d^T a_moment x~_d`, and `m` the fitted-signal mean.
struct Workspace {
    r_mat: Array2<f64>,
    c: Array1<f64>,
    a_moment: Array2<f64>,
    s: Array1<f64>,
    m: Array1<f64>,
    rq: Array1<f64>,
    /// `ln det` of the dual covariance; NaN until a dual update or an
    /// explicit factorization has run.
    logdet_cov: f64,
}

impl Workspace {
    fn new(state: &VariationalState) -> Self {
        let r_mat = residual_matrix(state);
        let c = feature_squared_norms(state);
        let a_moment = state.a_second_moment();
        let s = quadratic_forms(state, &a_moment);
        let m = r_mat.dot(&state.q_a.mean);
        let n = state.n();
        Workspace {
            r_mat,
            c,
            a_moment,
            s,
            m,
            rq: Array1::zeros(n),
            logdet_cov: f64::NAN,
        }
    }

    /// Rebuilds every cached quantity after the active sets changed.
    fn refresh_after_prune(&mut self, state: &VariationalState) -> Result<()> {
        self.r_mat = residual_matrix(state);
        self.c = feature_squared_norms(state);
        self.a_moment = state.a_second_moment();
        self.s = quadratic_forms(state, &self.a_moment);
        self.m = self.r_mat.dot(&state.q_a.mean);
        let (l, _) = cholesky_with_jitter(state.q_a.cov.view(), "dual-weight covariance")?;
        self.logdet_cov = chol_logdet(&l);
        Ok(())
    }
}

/// `s_d = x~_d^T a_moment x~_d` for every active feature.
fn quadratic_forms(state: &VariationalState, a_moment: &Array2<f64>) -> Array1<f64> {
    let q_mat = state.xt_t.dot(a_moment);
    Array1::from_iter(
        q_mat
            .rows()
            .into_iter()
            .zip(state.xt_t.rows())
            .map(|(q, x)| q.dot(&x)),
    )
}

/// Updates the latent-target factor given the current fitted signal.
pub fn update_q_y(state: &mut VariationalState) {
    let m = predicted_latent_mean(state);
    step_y(state, &m);
}

fn step_y(state: &mut VariationalState, m: &Array1<f64>) {
    let tau = state.tau_mean();
    let b = state.q_b.mean;
    for n in 0..state.n() {
        let var = 1.0 / (tau + 2.0 * jaakkola_lambda(state.xi[n]));
        state.q_y.var[n] = var;
        state.q_y.mean[n] = (state.t[n] - 0.5 + tau * (m[n] + b)) * var;
    }
}

/// Moves each bound anchor to the root-mean-square of its latent target,
/// `xi_n = sqrt(E[y_n]^2 + var y_n)`, the tightest choice for the bound.
pub fn update_xi(state: &mut VariationalState) {
    for n in 0..state.n() {
        state.xi[n] = (state.q_y.mean[n] * state.q_y.mean[n] + state.q_y.var[n]).sqrt();
    }
}

/// Updates the dual-weight factor by solving the Gaussian system
/// `[tau (R^T R + X~ diag(w) X~^T) + diag(E psi)] mu = tau R^T (E y - E b)`
/// with `w_d = (var v_d) c_d`, via a Cholesky factorization with an
/// escalating-jitter fallback.
pub fn update_q_a(state: &mut VariationalState) -> Result<()> {
    let mut ws = Workspace::new(state);
    step_a(state, &mut ws)
}

fn step_a(state: &mut VariationalState, ws: &mut Workspace) -> Result<()> {
    let tau = state.tau_mean();
    let n_tilde = state.n_tilde_active();

    // Gram of the fitted signal plus the relevance-variance correction.
    let mut prec = ws.r_mat.t().dot(&ws.r_mat);
    let mut scaled = state.xt_t.clone();
    for (f, mut row) in scaled.rows_mut().into_iter().enumerate() {
        row *= state.q_v[f].folded_var * ws.c[f];
    }
    prec += &scaled.t().dot(&state.xt_t);
    prec *= tau;
    for i in 0..n_tilde {
        prec[[i, i]] += state.q_psi.mean(i);
    }

    let e = &state.q_y.mean - state.q_b.mean;
    let mut rhs = state.q_a.mean.clone();
    general_mat_vec_mul(tau, &ws.r_mat.t(), &e, 0.0, &mut rhs);

    let (l, _) = cholesky_with_jitter(prec.view(), "dual-weight precision")?;
    state.q_a.mean = chol_solve(&l, &rhs);
    state.q_a.cov = chol_inverse(&l);
    ws.logdet_cov = -chol_logdet(&l);
    ws.a_moment = state.a_second_moment();
    ws.s = quadratic_forms(state, &ws.a_moment);
    Ok(())
}

/// Runs one Gauss-Seidel sweep over the relevance weights in natural
/// feature order.
pub fn update_q_v_sweep(state: &mut VariationalState) -> Result<()> {
    let mut ws = Workspace::new(state);
    step_v(state, &mut ws, None)
}

/// Runs one Gauss-Seidel sweep visiting features in the given order, which
/// must be a permutation of `0..d_active`.
pub fn update_q_v_sweep_with_order(state: &mut VariationalState, order: &[usize]) -> Result<()> {
    let d = state.d_active();
    let mut seen = vec![false; d];
    for &f in order {
        if f >= d || seen[f] {
            return Err(Error::InvalidParameter(format!(
                "sweep order must be a permutation of 0..{d}"
            )));
        }
        seen[f] = true;
    }
    if order.len() != d {
        return Err(Error::InvalidParameter(format!(
            "sweep order has {} entries for {} active features",
            order.len(),
            d
        )));
    }
    let mut ws = Workspace::new(state);
    step_v(state, &mut ws, Some(order))
}

fn step_v(
    state: &mut VariationalState,
    ws: &mut Workspace,
    order: Option<&[usize]>,
) -> Result<()> {
    let tau = state.tau_mean();
    let d = state.d_active();
    let p = state.xt_t.dot(&state.q_a.mean);
    let e = &state.q_y.mean - state.q_b.mean;
    let q_mat = state.xt_t.dot(&ws.a_moment);

    let natural: Vec<usize>;
    let order: &[usize] = match order {
        Some(o) => o,
        None => {
            natural = (0..d).collect();
            &natural
        }
    };

    for &f in order {
        let xrow = state.x_t.row(f);
        let xtrow = state.xt_t.row(f);
        let qrow = q_mat.row(f);
        let s_f = xtrow.dot(&qrow);
        let c_f = ws.c[f];
        ws.s[f] = s_f;

        // h_f = sum_n x_{nf} (r_n . q_f), with the maintained signal matrix
        // still carrying this feature's current weight; the linear term
        // removes that self-contribution.
        general_mat_vec_mul(1.0, &ws.r_mat, &qrow, 0.0, &mut ws.rq);
        let h_f = ws.rq.dot(&xrow);
        let xe = xrow.dot(&e);

        let old_mean = state.q_v[f].folded_mean;
        let precision = tau * s_f * c_f + state.q_delta.mean(f);
        let linear = tau * p[f] * xe - tau * (h_f - old_mean * s_f * c_f);
        if !precision.is_finite() || precision <= 0.0 || !linear.is_finite() {
            return Err(Error::Numeric {
                iteration: 0,
                detail: format!(
                    "relevance update for feature {} produced precision {precision}, linear term {linear}",
                    state.active_features[f]
                ),
            });
        }
        let mu = linear / precision;
        let sigma2 = 1.0 / precision;
        state.q_v[f] = QRelevance::from_underlying(mu, sigma2)?;

        let delta = state.q_v[f].folded_mean - old_mean;
        if delta != 0.0 {
            for (n, &xn) in xrow.iter().enumerate() {
                if xn != 0.0 {
                    ws.r_mat.row_mut(n).scaled_add(delta * xn, &xtrow);
                }
            }
        }
    }
    Ok(())
}

/// Updates the bias factor.
pub fn update_q_b(state: &mut VariationalState) {
    let m = predicted_latent_mean(state);
    step_b(state, &m);
}

fn step_b(state: &mut VariationalState, m: &Array1<f64>) {
    let tau = state.tau_mean();
    let n = state.n() as f64;
    let var = 1.0 / (n * tau + 1.0);
    state.q_b.var = var;
    state.q_b.mean = tau * (state.q_y.mean.sum() - m.sum()) * var;
}

/// Updates the noise-precision factor from the expected squared residual.
pub fn update_q_tau(state: &mut VariationalState) {
    let ws = Workspace::new(state);
    step_tau(state, &ws);
}

fn step_tau(state: &mut VariationalState, ws: &Workspace) {
    let n = state.n() as f64;
    let s = residual_sq(state, ws);
    state.q_tau = GammaParams {
        alpha: state.hp.alpha0_tau + 0.5 * n,
        beta: state.hp.beta0_tau + 0.5 * s,
    };
}

/// Updates the dual-precision factors from the dual second moments.
pub fn update_q_psi(state: &mut VariationalState) {
    let ws = Workspace::new(state);
    step_psi(state, &ws);
}

fn step_psi(state: &mut VariationalState, ws: &Workspace) {
    for i in 0..state.n_tilde_active() {
        state.q_psi.alpha[i] = state.hp.alpha0_psi + 0.5;
        state.q_psi.beta[i] = state.hp.beta0_psi + 0.5 * ws.a_moment[[i, i]];
    }
}

/// Updates the relevance-precision factors from the relevance second moments.
pub fn update_q_delta(state: &mut VariationalState) {
    for f in 0..state.d_active() {
        state.q_delta.alpha[f] = state.hp.alpha0_delta + 0.5;
        state.q_delta.beta[f] = state.hp.beta0_delta + 0.5 * state.q_v[f].second_moment();
    }
}

/// Expected squared residual `E || y - R a - b ||^2` under the current
/// factors, the quantity driving the noise-precision update.
pub fn expected_squared_residual(state: &VariationalState) -> f64 {
    let ws = Workspace::new(state);
    residual_sq(state, &ws)
}

fn residual_sq(state: &VariationalState, ws: &Workspace) -> f64 {
    let n = state.n() as f64;
    let sum_y2: f64 = state
        .q_y
        .mean
        .iter()
        .zip(state.q_y.var.iter())
        .map(|(m, v)| m * m + v)
        .sum();
    let dot_ym = state.q_y.mean.dot(&ws.m);
    let sum_y = state.q_y.mean.sum();
    let sum_m = ws.m.sum();
    let b = state.q_b.mean;
    let b2 = b * b + state.q_b.var;

    // E[(R a)_n^2] summed over n: the dual part through the quadratic form
    // with `a_moment`, plus the relevance-variance correction.
    let u = ws.r_mat.dot(&ws.a_moment);
    let quad_dual: f64 = u.iter().zip(ws.r_mat.iter()).map(|(a, b)| a * b).sum();
    let quad_relevance: f64 = state
        .q_v
        .iter()
        .zip(ws.c.iter())
        .zip(ws.s.iter())
        .map(|((q, c), s)| q.folded_var * c * s)
        .sum();

    let s = sum_y2 - 2.0 * dot_ym - 2.0 * b * sum_y + quad_dual + quad_relevance
        + 2.0 * b * sum_m
        + n * b2;
    // Non-negative in exact arithmetic; clamp round-off on nearly perfect fits.
    s.max(0.0)
}

/// Evidence lower bound of the current state.
///
/// This is the exact bound for the factorized family: expected log-joint
/// (with the logistic term replaced by its quadratic lower bound at the
/// current anchors) plus the entropy of every factor. Any non-finite term
/// is reported as a numeric error naming the term.
pub fn compute_elbo(state: &VariationalState) -> Result<f64> {
    let mut ws = Workspace::new(state);
    let (l, _) = cholesky_with_jitter(state.q_a.cov.view(), "dual-weight covariance")?;
    ws.logdet_cov = chol_logdet(&l);
    elbo_inner(state, &ws)
}

fn elbo_inner(state: &VariationalState, ws: &Workspace) -> Result<f64> {
    let n = state.n() as f64;
    let d = state.d_active() as f64;
    let n_tilde = state.n_tilde_active() as f64;
    let hp = &state.hp;
    let tau = state.tau_mean();
    let e_ln_tau = state.q_tau.mean_log();

    let resid = residual_sq(state, ws);
    let likelihood = -0.5 * n * LN_2PI + 0.5 * n * e_ln_tau - 0.5 * tau * resid;

    let mut logistic = 0.0;
    for i in 0..state.n() {
        let xi = state.xi[i];
        let ym = state.q_y.mean[i];
        let y2 = ym * ym + state.q_y.var[i];
        logistic += -softplus(-xi) + state.t[i] * ym - 0.5 * (ym + xi)
            - jaakkola_lambda(xi) * (y2 - xi * xi);
    }

    let mut dual_prior = -0.5 * n_tilde * LN_2PI;
    let mut dual_prec_prior = 0.0;
    let mut dual_prec_entropy = 0.0;
    for i in 0..state.n_tilde_active() {
        let q = state.q_psi.params(i);
        dual_prior += 0.5 * q.mean_log() - 0.5 * q.mean() * ws.a_moment[[i, i]];
        dual_prec_prior += gamma_prior_cross(hp.alpha0_psi, hp.beta0_psi, &q);
        dual_prec_entropy += q.entropy();
    }

    let mut relevance_prior = d * std::f64::consts::LN_2 - 0.5 * d * LN_2PI;
    let mut relevance_prec_prior = 0.0;
    let mut relevance_prec_entropy = 0.0;
    let mut relevance_entropy = 0.0;
    for f in 0..state.d_active() {
        let qv = &state.q_v[f];
        let qd = state.q_delta.params(f);
        relevance_prior += 0.5 * qd.mean_log() - 0.5 * qd.mean() * qv.second_moment();
        relevance_prec_prior += gamma_prior_cross(hp.alpha0_delta, hp.beta0_delta, &qd);
        relevance_prec_entropy += qd.entropy();
        let abs_mu = qv.mu.abs();
        let sigma = qv.sigma2.sqrt();
        relevance_entropy += 0.5 * (LN_2PI + 1.0 + qv.sigma2.ln())
            + (abs_mu * abs_mu - abs_mu * qv.folded_mean) / qv.sigma2
            - folded_softplus_unit(abs_mu / sigma);
    }

    let noise_prior = gamma_prior_cross(hp.alpha0_tau, hp.beta0_tau, &state.q_tau);
    let b2 = state.q_b.mean * state.q_b.mean + state.q_b.var;
    let bias_prior = -0.5 * LN_2PI - 0.5 * b2;

    let dual_entropy = 0.5 * n_tilde * (LN_2PI + 1.0) + 0.5 * ws.logdet_cov;
    let latent_entropy: f64 = state
        .q_y
        .var
        .iter()
        .map(|v| 0.5 * (LN_2PI + 1.0 + v.ln()))
        .sum();
    let bias_entropy = 0.5 * (LN_2PI + 1.0 + state.q_b.var.ln());
    let noise_entropy = state.q_tau.entropy();

    let terms = [
        ("expected log-likelihood", likelihood),
        ("logistic bound", logistic),
        ("dual-weight prior", dual_prior),
        ("dual-precision prior", dual_prec_prior),
        ("relevance prior", relevance_prior),
        ("relevance-precision prior", relevance_prec_prior),
        ("noise-precision prior", noise_prior),
        ("bias prior", bias_prior),
        ("dual-weight entropy", dual_entropy),
        ("latent-target entropy", latent_entropy),
        ("bias entropy", bias_entropy),
        ("relevance entropy", relevance_entropy),
        ("dual-precision entropy", dual_prec_entropy),
        ("relevance-precision entropy", relevance_prec_entropy),
        ("noise-precision entropy", noise_entropy),
    ];
    let mut total = 0.0;
    for (name, value) in terms {
        if !value.is_finite() {
            return Err(Error::Numeric {
                iteration: 0,
                detail: format!("evidence bound term '{name}' is not finite ({value})"),
            });
        }
        total += value;
    }
    Ok(total)
}

/// `E_q[ln p(x)]` for a gamma prior `(alpha0, beta0)` under a gamma factor.
fn gamma_prior_cross(alpha0: f64, beta0: f64, q: &GammaParams) -> f64 {
    alpha0 * beta0.ln() - ln_gamma(alpha0) + (alpha0 - 1.0) * q.mean_log() - beta0 * q.mean()
}

/// Windowed stopping rule on the trace: converged when the record `window`
/// iterations back has the same active counts as the latest one (so no
/// pruning happened in between) and its bound already exceeds the latest
/// bound discounted by the relative tolerance.
pub fn window_converged(trace: &[TraceRecord], window: usize, rel_tol: f64) -> bool {
    if trace.len() <= window {
        return false;
    }
    let cur = &trace[trace.len() - 1];
    let prev = &trace[trace.len() - 1 - window];
    prev.n_active_features == cur.n_active_features
        && prev.n_active_rvs == cur.n_active_rvs
        && prev.elbo > cur.elbo * (1.0 - rel_tol)
}

/// Runs mean-field coordinate ascent to convergence or the iteration budget.
///
/// Per iteration, in order: latent targets, bound anchors, dual weights,
/// one relevance sweep, bias, noise precision, dual precisions, relevance
/// precisions; then the bound is computed, pruning runs once the warmup is
/// over, and the windowed stopping rule is checked. The trace records the
/// post-pruning bound and active counts for every iteration.
pub fn fit(data: &DesignMatrices, hp: &Hyperparams) -> Result<(VariationalState, FitReport)> {
    let mut state = VariationalState::init(data, hp)?;
    let start = Instant::now();
    let mut ws = Workspace::new(&state);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut prune_events: Vec<PruneEvent> = Vec::new();
    let mut converged = false;

    for iteration in 1..=hp.max_iters {
        if iteration % 64 == 0 {
            // The signal matrix is maintained by rank-one corrections;
            // rebuild it periodically so round-off cannot accumulate over
            // long fits.
            ws.r_mat = residual_matrix(&state);
            ws.m = ws.r_mat.dot(&state.q_a.mean);
        }
        step_y(&mut state, &ws.m);
        update_xi(&mut state);
        step_a(&mut state, &mut ws).map_err(|e| stamp(e, iteration))?;
        step_v(&mut state, &mut ws, None).map_err(|e| stamp(e, iteration))?;
        ws.m = ws.r_mat.dot(&state.q_a.mean);
        step_b(&mut state, &ws.m);
        step_tau(&mut state, &ws);
        step_psi(&mut state, &ws);
        update_q_delta(&mut state);

        let elbo_before = elbo_inner(&state, &ws).map_err(|e| stamp(e, iteration))?;
        let mut elbo = elbo_before;
        if iteration >= hp.prune_warmup_iters {
            let outcome = state.prune();
            if outcome.any() {
                ws.refresh_after_prune(&state)
                    .map_err(|e| stamp(e, iteration))?;
                let elbo_after = elbo_inner(&state, &ws).map_err(|e| stamp(e, iteration))?;
                prune_events.push(PruneEvent {
                    iteration,
                    elbo_before,
                    elbo_after,
                    removed_features: outcome.removed_features,
                    removed_rvs: outcome.removed_rvs,
                });
                elbo = elbo_after;
            }
        }

        trace.push(TraceRecord {
            iteration,
            elbo,
            n_active_features: state.d_active(),
            n_active_rvs: state.n_tilde_active(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        if window_converged(&trace, hp.conv_window, hp.conv_rel_tol) {
            converged = true;
            break;
        }
    }

    let final_elbo = trace.last().map(|r| r.elbo).unwrap_or(f64::NAN);
    let iterations_run = trace.len();
    Ok((
        state,
        FitReport {
            trace,
            converged,
            iterations_run,
            final_elbo,
            prune_events,
        },
    ))
}

fn stamp(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numeric {
            iteration: 0,
            detail,
        } => Error::Numeric { iteration, detail },
        other => other,
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix, with an
/// escalating diagonal jitter fallback: after a clean attempt, up to six
/// retries add `10^k * 1e-10 * trace / dim` to the diagonal. Returns the
/// factor of the (possibly jittered) matrix and the jitter used.
pub(crate) fn cholesky_with_jitter(
    matrix: ArrayView2<'_, f64>,
    what: &str,
) -> Result<(Array2<f64>, f64)> {
    let k = matrix.nrows();
    let trace: f64 = (0..k).map(|i| matrix[[i, i]]).sum();
    let base = 1e-10 * trace.abs().max(f64::MIN_POSITIVE) / k.max(1) as f64;
    let mut jitter = 0.0;
    for attempt in 0..=6 {
        if attempt > 0 {
            jitter = base * 10f64.powi(attempt - 1);
        }
        if let Some(l) = cholesky_lower(matrix, jitter) {
            return Ok((l, jitter));
        }
    }
    Err(Error::Numeric {
        iteration: 0,
        detail: format!(
            "{what} is not positive definite (jitter escalation up to {:.3e} failed)",
            base * 1e5
        ),
    })
}

fn cholesky_lower(matrix: ArrayView2<'_, f64>, jitter: f64) -> Option<Array2<f64>> {
    let k = matrix.nrows();
    let mut l = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let mut sum = matrix[[i, j]];
            if i == j {
                sum += jitter;
            }
            for p in 0..j {
                sum -= l[[i, p]] * l[[j, p]];
            }
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` by forward and back substitution.
fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let k = l.nrows();
    let mut x = b.clone();
    for i in 0..k {
        let mut sum = x[i];
        for p in 0..i {
            sum -= l[[i, p]] * x[p];
        }
        x[i] = sum / l[[i, i]];
    }
    for i in (0..k).rev() {
        let mut sum = x[i];
        for p in (i + 1)..k {
            sum -= l[[p, i]] * x[p];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Inverse of `L L^T` from its lower factor, symmetrized exactly.
fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let k = l.nrows();
    // W = L^{-1} by forward substitution on identity columns.
    let mut w = Array2::<f64>::zeros((k, k));
    for col in 0..k {
        for i in col..k {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for p in col..i {
                sum -= l[[i, p]] * w[[p, col]];
            }
            w[[i, col]] = sum / l[[i, i]];
        }
    }
    let mut inv = w.t().dot(&w);
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

fn chol_logdet(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[[i, i]].ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::QBias;
    use ndarray::array;

    fn small_data() -> DesignMatrices {
        let x = array![
            [1.2, -0.3, 0.5],
            [-0.7, 0.8, -1.1],
            [0.4, 1.5, 0.2],
            [-1.3, -0.9, 0.7],
            [0.9, 0.1, -0.4],
            [-0.2, -1.2, 1.0],
        ];
        let t = array![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        DesignMatrices::self_dual(x, t).unwrap()
    }

    fn scrambled_state() -> VariationalState {
        let mut st = VariationalState::init(&small_data(), &Hyperparams::default()).unwrap();
        st.q_a.mean = array![0.3, -0.5, 0.2, 0.7, -0.1, 0.4];
        st.q_b = QBias {
            mean: 0.25,
            var: 0.5,
        };
        st.q_tau = GammaParams {
            alpha: 3.0,
            beta: 2.0,
        };
        for (f, mu) in [(0usize, 0.9), (1, -0.2), (2, 0.4)] {
            st.q_v[f] = QRelevance::from_underlying(mu, 0.3).unwrap();
        }
        st
    }

    #[test]
    fn residual_matrix_matches_direct_triple_product() {
        let st = scrambled_state();
        let r = residual_matrix(&st);
        for n in 0..st.n() {
            for i in 0..st.n_tilde_active() {
                let mut want = 0.0;
                for f in 0..st.d_active() {
                    want += st.x_t[[f, n]] * st.q_v[f].folded_mean * st.xt_t[[f, i]];
                }
                assert!((r[[n, i]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn latent_update_matches_componentwise_formula() {
        let mut st = scrambled_state();
        let m = predicted_latent_mean(&st);
        let tau = st.tau_mean();
        let xi0 = st.xi[2];
        update_q_y(&mut st);
        let var = 1.0 / (tau + 2.0 * jaakkola_lambda(xi0));
        let mean = (st.t[2] - 0.5 + tau * (m[2] + st.q_b.mean)) * var;
        assert!((st.q_y.var[2] - var).abs() < 1e-14);
        assert!((st.q_y.mean[2] - mean).abs() < 1e-14);
    }

    #[test]
    fn dual_update_solves_its_own_normal_equations() {
        let mut st = scrambled_state();
        let r = residual_matrix(&st);
        let c = feature_squared_norms(&st);
        let tau = st.tau_mean();
        let k = st.n_tilde_active();

        // Assemble the precision and right-hand side with plain loops.
        let mut prec = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                let mut g = 0.0;
                for n in 0..st.n() {
                    g += r[[n, i]] * r[[n, j]];
                }
                for f in 0..st.d_active() {
                    g += st.q_v[f].folded_var * c[f] * st.xt_t[[f, i]] * st.xt_t[[f, j]];
                }
                prec[[i, j]] = tau * g;
            }
            prec[[i, i]] += st.q_psi.mean(i);
        }
        let mut rhs = Array1::<f64>::zeros(k);
        for i in 0..k {
            for n in 0..st.n() {
                rhs[i] += tau * r[[n, i]] * (st.q_y.mean[n] - st.q_b.mean);
            }
        }

        update_q_a(&mut st).unwrap();
        let residual = prec.dot(&st.q_a.mean) - &rhs;
        for v in residual.iter() {
            assert!(v.abs() < 1e-9, "normal equations violated by {v}");
        }
        let should_be_eye = prec.dot(&st.q_a.cov);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((should_be_eye[[i, j]] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sweep_with_order_validates_permutations() {
        let mut st = scrambled_state();
        assert!(update_q_v_sweep_with_order(&mut st, &[0, 0, 1]).is_err());
        assert!(update_q_v_sweep_with_order(&mut st, &[0, 1]).is_err());
        assert!(update_q_v_sweep_with_order(&mut st, &[0, 1, 5]).is_err());
        update_q_v_sweep_with_order(&mut st, &[2, 0, 1]).unwrap();
    }

    #[test]
    fn fused_iteration_matches_public_update_sequence() {
        let data = small_data();
        let mut hp = Hyperparams::default();
        hp.max_iters = 1;
        hp.conv_window = 1;
        let (fused, report) = fit(&data, &hp).unwrap();

        let mut manual = VariationalState::init(&data, &hp).unwrap();
        update_q_y(&mut manual);
        update_xi(&mut manual);
        update_q_a(&mut manual).unwrap();
        update_q_v_sweep(&mut manual).unwrap();
        update_q_b(&mut manual);
        update_q_tau(&mut manual);
        update_q_psi(&mut manual);
        update_q_delta(&mut manual);
        let elbo = compute_elbo(&manual).unwrap();

        for i in 0..fused.n_tilde_active() {
            assert!((fused.q_a.mean[i] - manual.q_a.mean[i]).abs() < 1e-10);
        }
        for f in 0..fused.d_active() {
            assert!((fused.q_v[f].mu - manual.q_v[f].mu).abs() < 1e-10);
            assert!((fused.q_v[f].sigma2 - manual.q_v[f].sigma2).abs() < 1e-10);
        }
        assert!((fused.q_b.mean - manual.q_b.mean).abs() < 1e-12);
        assert!((fused.q_tau.beta - manual.q_tau.beta).abs() < 1e-9);
        let got = report.trace[0].elbo;
        assert!(
            (got - elbo).abs() < 1e-8 * (1.0 + elbo.abs()),
            "fused {got} vs sequential {elbo}"
        );
    }

    #[test]
    fn bound_is_monotone_on_a_small_problem() {
        let data = small_data();
        let mut hp = Hyperparams::default();
        hp.max_iters = 40;
        hp.conv_window = 40;
        let (_, report) = fit(&data, &hp).unwrap();
        assert_eq!(report.trace.len(), 40);
        for w in report.trace.windows(2) {
            let tol = 1e-7 * (1.0 + w[1].elbo.abs());
            assert!(
                w[1].elbo >= w[0].elbo - tol,
                "bound dropped at iteration {}: {} -> {}",
                w[1].iteration,
                w[0].elbo,
                w[1].elbo
            );
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let data = small_data();
        let mut hp = Hyperparams::default();
        hp.max_iters = 25;
        hp.conv_window = 25;
        let (s1, r1) = fit(&data, &hp).unwrap();
        let (s2, r2) = fit(&data, &hp).unwrap();
        for (a, b) in r1.trace.iter().zip(r2.trace.iter()) {
            assert_eq!(a.elbo.to_bits(), b.elbo.to_bits());
            assert_eq!(a.n_active_features, b.n_active_features);
        }
        for i in 0..s1.n_tilde_active() {
            assert_eq!(s1.q_a.mean[i].to_bits(), s2.q_a.mean[i].to_bits());
        }
    }

    #[test]
    fn stopping_decision_is_replayable_from_the_trace() {
        let data = small_data();
        let mut hp = Hyperparams::default();
        hp.max_iters = 120;
        hp.conv_window = 30;
        hp.prune_warmup_iters = usize::MAX;
        let (_, report) = fit(&data, &hp).unwrap();
        // Replay the rule offline; the fit must have stopped exactly where
        // the replay says (first firing index, or budget exhaustion).
        let mut first_stop = None;
        for t in 0..report.trace.len() {
            if window_converged(&report.trace[..=t], hp.conv_window, hp.conv_rel_tol) {
                first_stop = Some(t + 1);
                break;
            }
        }
        match first_stop {
            Some(it) => {
                assert!(report.converged);
                assert_eq!(report.iterations_run, it);
            }
            None => {
                assert!(!report.converged);
                assert_eq!(report.iterations_run, hp.max_iters);
            }
        }
    }

    #[test]
    fn pruning_records_events_and_shrinks_counts() {
        let data = small_data();
        let mut hp = Hyperparams::default();
        hp.max_iters = 60;
        hp.conv_window = 60;
        hp.prune_warmup_iters = 5;
        hp.prune_threshold_v = 0.9;
        hp.prune_threshold_a = 0.9;
        let (state, report) = fit(&data, &hp).unwrap();
        assert!(
            !report.prune_events.is_empty(),
            "aggressive thresholds should prune something"
        );
        for ev in &report.prune_events {
            assert!(ev.iteration >= 5);
            assert!(ev.elbo_before.is_finite() && ev.elbo_after.is_finite());
            let rec = &report.trace[ev.iteration - 1];
            assert_eq!(rec.elbo.to_bits(), ev.elbo_after.to_bits());
            for &f in &ev.removed_features {
                assert!(f < 3);
                assert!(!state.active_features.contains(&f));
            }
        }
        let counts: Vec<usize> = report.trace.iter().map(|r| r.n_active_features).collect();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn window_rule_requires_matching_active_counts() {
        let rec = |iteration, elbo, n_feat| TraceRecord {
            iteration,
            elbo,
            n_active_features: n_feat,
            n_active_rvs: 4,
            elapsed_seconds: 0.0,
        };
        // The rule is literal: the record a window back must exceed the
        // latest bound discounted by the tolerance. A bound that slipped
        // back by more than the tolerance fires it.
        let trace = vec![rec(1, -10.0, 6), rec(2, -10.0, 6), rec(3, -10.001, 6)];
        assert!(window_converged(&trace, 2, 1e-8));
        // The same slip straddling a prune does not: counts differ.
        let trace = vec![rec(1, -10.0, 8), rec(2, -10.0, 6), rec(3, -10.001, 6)];
        assert!(!window_converged(&trace, 2, 1e-8));
        // A perfectly flat negative bound never fires (the discount moves
        // the comparison point above the old value).
        let trace = vec![rec(1, -10.0, 6), rec(2, -10.0, 6), rec(3, -10.0, 6)];
        assert!(!window_converged(&trace, 2, 1e-8));
        // A positive bound improving by less than the tolerance fires.
        let trace = vec![rec(1, 10.0, 6), rec(2, 10.0, 6), rec(3, 10.0 + 1e-9, 6)];
        assert!(window_converged(&trace, 2, 1e-8));
        // Still improving faster than the tolerance: not converged.
        let trace = vec![rec(1, -11.0, 6), rec(2, -10.5, 6), rec(3, -10.0, 6)];
        assert!(!window_converged(&trace, 2, 1e-8));
        // Window longer than the trace: never converged.
        assert!(!window_converged(&trace, 3, 1e-8));
    }

    #[test]
    fn jitter_ladder_rescues_singular_and_rejects_indefinite() {
        let singular = array![[1.0, 1.0], [1.0, 1.0]];
        let (l, jitter) = cholesky_with_jitter(singular.view(), "test matrix").unwrap();
        assert!(jitter > 0.0);
        assert!(l[[0, 0]] > 0.0);

        let indefinite = array![[1.0, 2.0], [2.0, 1.0]];
        let err = cholesky_with_jitter(indefinite.view(), "test matrix").unwrap_err();
        assert_eq!(err.category(), "numeric");
        assert!(err.to_string().contains("test matrix"));
    }

    #[test]
    fn cholesky_solve_and_inverse_agree_with_direct_2x2() {
        let m = array![[4.0, 1.0], [1.0, 3.0]];
        let (l, _) = cholesky_with_jitter(m.view(), "test").unwrap();
        let x = chol_solve(&l, &array![1.0, 2.0]);
        // Direct inverse of [[4,1],[1,3]] is [[3,-1],[-1,4]]/11.
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
        let inv = chol_inverse(&l);
        assert!((inv[[0, 0]] - 3.0 / 11.0).abs() < 1e-12);
        assert!((inv[[0, 1]] + 1.0 / 11.0).abs() < 1e-12);
        assert!((inv[[1, 1]] - 4.0 / 11.0).abs() < 1e-12);
        let logdet = chol_logdet(&l);
        assert!((logdet - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn residual_sq_is_nonnegative_and_matches_wrapper() {
        let st = scrambled_state();
        let s = expected_squared_residual(&st);
        assert!(s >= 0.0);
        let ws = Workspace::new(&st);
        assert_eq!(s.to_bits(), residual_sq(&st, &ws).to_bits());
    }
}
