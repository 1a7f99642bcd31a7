//! Model configuration, design matrices, and the variational state.
//!
//! The state holds one factor per latent quantity of the mean-field
//! factorization: the dual weights `a` (multivariate normal), per-feature
//! relevance weights `v_d` (folded normal), their precisions `delta_d`
//! (gamma), the dual-weight precisions `psi` (gamma), the noise precision
//! `tau` (gamma), the bias `b` (normal), the latent regression targets `y`
//! (independent normals), and the logistic-bound anchors `xi`.
//!
//! Feature and relevance-vector pruning compacts the working matrices in
//! place; `active_features` / `active_rvs` map compacted positions back to
//! original column and row indices. Matrices are stored feature-major
//! (`x_t[d, n]`, `xt_t[d, i]`) because the coordinate sweep walks features in
//! the hot loop.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::distributions::{unit_folded_mean_location, FoldedNormal, GammaParams};
use crate::error::Error;
use crate::Result;

/// Hyperparameters of the model and of the fit loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Shape of the gamma prior on dual-weight precisions `psi`.
    pub alpha0_psi: f64,
    /// Rate of the gamma prior on dual-weight precisions `psi`.
    pub beta0_psi: f64,
    /// Shape of the gamma prior on relevance precisions `delta`.
    pub alpha0_delta: f64,
    /// Rate of the gamma prior on relevance precisions `delta`.
    pub beta0_delta: f64,
    /// Shape of the gamma prior on the noise precision `tau`.
    pub alpha0_tau: f64,
    /// Rate of the gamma prior on the noise precision `tau`.
    pub beta0_tau: f64,
    /// Relative threshold for pruning features: drop feature `d` when its
    /// folded mean falls below `prune_threshold_v * max_d folded mean`.
    pub prune_threshold_v: f64,
    /// Relative threshold for pruning relevance vectors: drop sample `i` when
    /// `|a_i|` falls below `prune_threshold_a * max_i |a_i|`.
    pub prune_threshold_a: f64,
    /// Width of the convergence window, in iterations.
    pub conv_window: usize,
    /// Relative tolerance of the convergence rule.
    pub conv_rel_tol: f64,
    /// Iteration budget.
    pub max_iters: usize,
    /// Number of initial iterations during which pruning is not applied.
    pub prune_warmup_iters: usize,
    /// Seed recorded in the model and used by data-dependent helpers
    /// (fold plans, synthetic data); the fit itself is deterministic.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha0_psi: 1e-6,
            beta0_psi: 1e-6,
            alpha0_delta: 1e-6,
            beta0_delta: 1e-6,
            alpha0_tau: 1e-6,
            beta0_tau: 1e-6,
            prune_threshold_v: 1e-2,
            prune_threshold_a: 1e-3,
            conv_window: 100,
            conv_rel_tol: 1e-8,
            max_iters: 1000,
            prune_warmup_iters: 50,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Checks positivity and consistency constraints.
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("alpha0_psi", self.alpha0_psi),
            ("beta0_psi", self.beta0_psi),
            ("alpha0_delta", self.alpha0_delta),
            ("beta0_delta", self.beta0_delta),
            ("alpha0_tau", self.alpha0_tau),
            ("beta0_tau", self.beta0_tau),
            ("prune_threshold_v", self.prune_threshold_v),
            ("prune_threshold_a", self.prune_threshold_a),
        ];
        for (name, value) in positives {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if !self.conv_rel_tol.is_finite() || self.conv_rel_tol < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "conv_rel_tol must be finite and non-negative, got {}",
                self.conv_rel_tol
            )));
        }
        if self.conv_window == 0 {
            return Err(Error::InvalidParameter(
                "conv_window must be at least 1".into(),
            ));
        }
        if self.max_iters < self.conv_window {
            return Err(Error::InvalidParameter(format!(
                "max_iters ({}) must be at least conv_window ({})",
                self.max_iters, self.conv_window
            )));
        }
        Ok(())
    }
}

/// Immutable training inputs: primal design `X` (N x D), observed design
/// `X~` (N~ x D) holding the relevance-vector candidates, and binary labels.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub x: Array2<f64>,
    pub x_tilde: Array2<f64>,
    pub t: Array1<f64>,
}

impl DesignMatrices {
    /// Validates shapes, finiteness, and label encoding.
    pub fn new(x: Array2<f64>, x_tilde: Array2<f64>, t: Array1<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data("design matrix is empty".into()));
        }
        if x_tilde.ncols() != x.ncols() {
            return Err(Error::Shape(format!(
                "X has {} columns but X~ has {}",
                x.ncols(),
                x_tilde.ncols()
            )));
        }
        if x_tilde.nrows() == 0 {
            return Err(Error::Data("observed design X~ has no rows".into()));
        }
        if t.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                t.len(),
                x.nrows()
            )));
        }
        for (name, m) in [("X", &x), ("X~", &x_tilde)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{name} contains non-finite values")));
            }
        }
        if let Some(bad) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!(
                "labels must be 0 or 1, found {bad}"
            )));
        }
        Ok(DesignMatrices { x, x_tilde, t })
    }

    /// Builds the default self-dual configuration where every training sample
    /// is a relevance-vector candidate (`X~ = X`).
    pub fn self_dual(x: Array2<f64>, t: Array1<f64>) -> Result<Self> {
        let x_tilde = x.clone();
        DesignMatrices::new(x, x_tilde, t)
    }
}

/// Normal factor over the dual weights.
#[derive(Debug, Clone)]
pub struct QWeights {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Folded-normal factor over one relevance weight, with its cached moments.
#[derive(Debug, Clone, Copy)]
pub struct QRelevance {
    /// Location of the underlying normal.
    pub mu: f64,
    /// Variance of the underlying normal.
    pub sigma2: f64,
    /// Folded mean (always non-negative).
    pub folded_mean: f64,
    /// Folded variance.
    pub folded_var: f64,
}

impl QRelevance {
    /// Builds the factor from underlying parameters, caching folded moments.
    pub fn from_underlying(mu: f64, sigma2: f64) -> Result<Self> {
        let f = FoldedNormal::new(mu, sigma2)?;
        Ok(QRelevance {
            mu,
            sigma2,
            folded_mean: f.mean(),
            folded_var: f.variance(),
        })
    }

    /// Second moment `mu^2 + sigma2` (shared by the folded and underlying laws).
    pub fn second_moment(&self) -> f64 {
        self.mu * self.mu + self.sigma2
    }
}

/// Independent gamma factors stored structure-of-arrays.
#[derive(Debug, Clone)]
pub struct QGammaVec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl QGammaVec {
    fn constant(len: usize, alpha: f64, beta: f64) -> Self {
        QGammaVec {
            alpha: vec![alpha; len],
            beta: vec![beta; len],
        }
    }

    /// Mean of component `i`.
    pub fn mean(&self, i: usize) -> f64 {
        self.alpha[i] / self.beta[i]
    }

    /// Component `i` as a parameter pair.
    pub fn params(&self, i: usize) -> GammaParams {
        GammaParams {
            alpha: self.alpha[i],
            beta: self.beta[i],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Normal factor over the bias.
#[derive(Debug, Clone, Copy)]
pub struct QBias {
    pub mean: f64,
    pub var: f64,
}

/// Independent normal factors over the latent regression targets.
#[derive(Debug, Clone)]
pub struct QLatent {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// One row of the per-iteration fit trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Evidence lower bound at the end of the iteration (after pruning).
    pub elbo: f64,
    /// Number of active features after the iteration.
    pub n_active_features: usize,
    /// Number of active relevance vectors after the iteration.
    pub n_active_rvs: usize,
    /// Wall-clock seconds since the fit started.
    pub elapsed_seconds: f64,
}

/// Indices removed by one pruning pass, in original coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneOutcome {
    pub removed_features: Vec<usize>,
    pub removed_rvs: Vec<usize>,
}

impl PruneOutcome {
    /// True when the pass removed anything.
    pub fn any(&self) -> bool {
        !self.removed_features.is_empty() || !self.removed_rvs.is_empty()
    }
}

/// Full variational state plus the compacted working copies of the data.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// Primal design, feature-major: `x_t[d, n]` = value of active feature `d`
    /// for sample `n`. Shape (d_active, N).
    pub x_t: Array2<f64>,
    /// Observed design, feature-major: `xt_t[d, i]` = value of active feature
    /// `d` for active relevance vector `i`. Shape (d_active, n_tilde_active).
    pub xt_t: Array2<f64>,
    /// Labels in {0, 1}, length N.
    pub t: Array1<f64>,
    /// Original column index of each active feature (ascending).
    pub active_features: Vec<usize>,
    /// Original row index (into the initial X~) of each active relevance
    /// vector (ascending).
    pub active_rvs: Vec<usize>,
    /// Number of feature columns before any pruning.
    pub d_original: usize,
    /// Number of relevance-vector candidates before any pruning.
    pub n_tilde_original: usize,

    pub q_a: QWeights,
    pub q_v: Vec<QRelevance>,
    pub q_psi: QGammaVec,
    pub q_delta: QGammaVec,
    pub q_tau: GammaParams,
    pub q_b: QBias,
    pub q_y: QLatent,
    pub xi: Array1<f64>,

    pub hp: Hyperparams,
}

impl VariationalState {
    /// Deterministic initialization: gamma factors at their priors, dual
    /// weights at zero with identity covariance, relevance weights at folded
    /// mean 1 with unit underlying variance, bias at (0, 1), latent targets
    /// at `2t - 1` with unit variance, and all bound anchors at 1.
    pub fn init(data: &DesignMatrices, hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        let n = data.x.nrows();
        let d = data.x.ncols();
        let n_tilde = data.x_tilde.nrows();
        let n_pos = data.t.iter().filter(|&&v| v == 1.0).count();
        if n_pos == 0 || n_pos == n {
            return Err(Error::Data(format!(
                "training labels contain a single class ({} of {} positive)",
                n_pos, n
            )));
        }

        let mu0 = unit_folded_mean_location();
        let q_v = vec![QRelevance::from_underlying(mu0, 1.0)?; d];
        let y_mean = data.t.mapv(|t| 2.0 * t - 1.0);

        Ok(VariationalState {
            x_t: data.x.t().to_owned(),
            xt_t: data.x_tilde.t().to_owned(),
            t: data.t.clone(),
            active_features: (0..d).collect(),
            active_rvs: (0..n_tilde).collect(),
            d_original: d,
            n_tilde_original: n_tilde,
            q_a: QWeights {
                mean: Array1::zeros(n_tilde),
                cov: Array2::eye(n_tilde),
            },
            q_v,
            q_psi: QGammaVec::constant(n_tilde, hp.alpha0_psi, hp.beta0_psi),
            q_delta: QGammaVec::constant(d, hp.alpha0_delta, hp.beta0_delta),
            q_tau: GammaParams::new(hp.alpha0_tau, hp.beta0_tau)?,
            q_b: QBias { mean: 0.0, var: 1.0 },
            q_y: QLatent {
                mean: y_mean,
                var: Array1::ones(n),
            },
            xi: Array1::ones(n),
            hp: hp.clone(),
        })
    }

    /// Number of training samples.
    pub fn n(&self) -> usize {
        self.t.len()
    }

    /// Number of currently active features.
    pub fn d_active(&self) -> usize {
        self.active_features.len()
    }

    /// Number of currently active relevance vectors.
    pub fn n_tilde_active(&self) -> usize {
        self.active_rvs.len()
    }

    /// Mean of the noise precision factor.
    pub fn tau_mean(&self) -> f64 {
        self.q_tau.mean()
    }

    /// Posterior second-moment matrix of the dual weights,
    /// `cov + mean mean^T`.
    pub fn a_second_moment(&self) -> Array2<f64> {
        let m = &self.q_a.mean;
        let mut aat = self.q_a.cov.clone();
        let k = m.len();
        for i in 0..k {
            for j in 0..k {
                aat[[i, j]] += m[i] * m[j];
            }
        }
        aat
    }

    /// One pruning pass over both active sets.
    ///
    /// A feature is dropped when its folded mean falls strictly below
    /// `prune_threshold_v` times the largest folded mean; a relevance vector
    /// when `|a_i|` falls strictly below `prune_threshold_a` times the
    /// largest `|a_i|`. With thresholds below 1 the largest element always
    /// survives, so the comparison alone cannot empty a set; if a threshold
    /// of 1 or more would, the largest-magnitude element is kept and a
    /// warning is logged. Removal is permanent: the working matrices and all
    /// per-feature / per-vector factors are compacted.
    pub fn prune(&mut self) -> PruneOutcome {
        let mut outcome = PruneOutcome::default();

        let d = self.d_active();
        if d > 0 {
            let max_v = self
                .q_v
                .iter()
                .map(|q| q.folded_mean)
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = self.hp.prune_threshold_v * max_v;
            let mut keep: Vec<usize> = (0..d)
                .filter(|&i| self.q_v[i].folded_mean >= cut)
                .collect();
            if keep.is_empty() {
                let argmax = (0..d)
                    .max_by(|&i, &j| {
                        self.q_v[i]
                            .folded_mean
                            .total_cmp(&self.q_v[j].folded_mean)
                    })
                    .expect("non-empty feature set");
                log::warn!(
                    "feature pruning threshold {} would empty the model; keeping feature {}",
                    self.hp.prune_threshold_v,
                    self.active_features[argmax]
                );
                keep.push(argmax);
            }
            if keep.len() < d {
                outcome.removed_features = (0..d)
                    .filter(|i| !keep.contains(i))
                    .map(|i| self.active_features[i])
                    .collect();
                self.retain_features(&keep);
            }
        }

        let n_tilde = self.n_tilde_active();
        if n_tilde > 0 {
            let max_a = self
                .q_a
                .mean
                .iter()
                .map(|a| a.abs())
                .fold(f64::NEG_INFINITY, f64::max);
            let cut = self.hp.prune_threshold_a * max_a;
            let mut keep: Vec<usize> = (0..n_tilde)
                .filter(|&i| self.q_a.mean[i].abs() >= cut)
                .collect();
            if keep.is_empty() {
                let argmax = (0..n_tilde)
                    .max_by(|&i, &j| {
                        self.q_a.mean[i].abs().total_cmp(&self.q_a.mean[j].abs())
                    })
                    .expect("non-empty relevance-vector set");
                log::warn!(
                    "relevance-vector pruning threshold {} would empty the model; keeping vector {}",
                    self.hp.prune_threshold_a,
                    self.active_rvs[argmax]
                );
                keep.push(argmax);
            }
            if keep.len() < n_tilde {
                outcome.removed_rvs = (0..n_tilde)
                    .filter(|i| !keep.contains(i))
                    .map(|i| self.active_rvs[i])
                    .collect();
                self.retain_rvs(&keep);
            }
        }

        outcome
    }

    /// Compacts all per-feature structures to the given positions
    /// (ascending positions into the current active set).
    fn retain_features(&mut self, keep: &[usize]) {
        let n = self.n();
        let n_tilde = self.n_tilde_active();
        let mut x_t = Array2::zeros((keep.len(), n));
        let mut xt_t = Array2::zeros((keep.len(), n_tilde));
        for (new_i, &old_i) in keep.iter().enumerate() {
            x_t.row_mut(new_i).assign(&self.x_t.row(old_i));
            xt_t.row_mut(new_i).assign(&self.xt_t.row(old_i));
        }
        self.x_t = x_t;
        self.xt_t = xt_t;
        self.active_features = keep.iter().map(|&i| self.active_features[i]).collect();
        self.q_v = keep.iter().map(|&i| self.q_v[i]).collect();
        self.q_delta = QGammaVec {
            alpha: keep.iter().map(|&i| self.q_delta.alpha[i]).collect(),
            beta: keep.iter().map(|&i| self.q_delta.beta[i]).collect(),
        };
    }

    /// Compacts all per-relevance-vector structures to the given positions.
    fn retain_rvs(&mut self, keep: &[usize]) {
        let d = self.d_active();
        let mut xt_t = Array2::zeros((d, keep.len()));
        for (new_j, &old_j) in keep.iter().enumerate() {
            xt_t.column_mut(new_j).assign(&self.xt_t.column(old_j));
        }
        self.xt_t = xt_t;
        self.active_rvs = keep.iter().map(|&i| self.active_rvs[i]).collect();
        self.q_a.mean = Array1::from_iter(keep.iter().map(|&i| self.q_a.mean[i]));
        let mut cov = Array2::zeros((keep.len(), keep.len()));
        for (ni, &oi) in keep.iter().enumerate() {
            for (nj, &oj) in keep.iter().enumerate() {
                cov[[ni, nj]] = self.q_a.cov[[oi, oj]];
            }
        }
        self.q_a.cov = cov;
        self.q_psi = QGammaVec {
            alpha: keep.iter().map(|&i| self.q_psi.alpha[i]).collect(),
            beta: keep.iter().map(|&i| self.q_psi.beta[i]).collect(),
        };
    }
}
