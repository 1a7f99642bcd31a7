//! The fitted model and its posterior predictive distribution.
//!
//! A fitted model keeps only the active features and relevance vectors that
//! survived pruning, plus the preprocessing statistics. For a new input
//! `x*`, the latent regression value has closed-form moments under the
//! factorized posterior; the class probability applies the probit-matched
//! sigmoid `sigma(mean / sqrt(1 + (pi/8) var))`, the scaling at which the
//! sigmoid and probit agree most closely.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::data::{Dataset, Standardizer};
use crate::distributions::sigmoid;
use crate::error::Error;
use crate::inference::{fit, FitReport};
use crate::state::{DesignMatrices, Hyperparams, VariationalState};
use crate::Result;

/// Mean and variance of the latent regression value at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMoments {
    pub mean_ystar: f64,
    /// Always positive: includes the noise variance `1/E tau` and the bias
    /// variance on top of the weight-uncertainty terms.
    pub var_ystar: f64,
}

/// Everything prediction needs, detached from the training state.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub hyperparams: Hyperparams,
    /// Original column index of each active feature (ascending).
    pub active_features: Vec<usize>,
    /// Original row index of each active relevance vector (ascending).
    pub active_rvs: Vec<usize>,
    pub d_original: usize,
    pub n_tilde_original: usize,
    /// Folded posterior means of the relevance weights, per active feature.
    pub v_folded_mean: Array1<f64>,
    /// Folded posterior variances, per active feature.
    pub v_folded_var: Array1<f64>,
    /// Location of the underlying normal of each relevance factor (signed).
    pub v_mu: Array1<f64>,
    /// Variance of the underlying normal of each relevance factor.
    pub v_sigma2: Array1<f64>,
    /// Posterior mean of the dual weights, per active relevance vector.
    pub a_mean: Array1<f64>,
    /// Posterior covariance of the dual weights.
    pub a_cov: Array2<f64>,
    /// Active relevance-vector rows in standardized space, restricted to
    /// active feature columns; shape (active RVs, active features).
    pub x_tilde: Array2<f64>,
    pub b_mean: f64,
    pub b_var: f64,
    pub tau_mean: f64,
    pub standardizer: Standardizer,
    /// Seed recorded at training time.
    pub seed: u64,
    /// Iterations the fit ran.
    pub iterations: usize,
    /// Bound at the last iteration.
    pub final_elbo: f64,
}

impl FittedModel {
    /// Extracts the prediction-relevant posterior pieces from a training state.
    pub fn from_state(
        state: &VariationalState,
        standardizer: Standardizer,
        report: &FitReport,
    ) -> FittedModel {
        FittedModel {
            hyperparams: state.hp.clone(),
            active_features: state.active_features.clone(),
            active_rvs: state.active_rvs.clone(),
            d_original: state.d_original,
            n_tilde_original: state.n_tilde_original,
            v_folded_mean: Array1::from_iter(state.q_v.iter().map(|q| q.folded_mean)),
            v_folded_var: Array1::from_iter(state.q_v.iter().map(|q| q.folded_var)),
            v_mu: Array1::from_iter(state.q_v.iter().map(|q| q.mu)),
            v_sigma2: Array1::from_iter(state.q_v.iter().map(|q| q.sigma2)),
            a_mean: state.q_a.mean.clone(),
            a_cov: state.q_a.cov.clone(),
            x_tilde: state.xt_t.t().to_owned(),
            b_mean: state.q_b.mean,
            b_var: state.q_b.var,
            tau_mean: state.tau_mean(),
            standardizer,
            seed: state.hp.seed,
            iterations: report.iterations_run,
            final_elbo: report.final_elbo,
        }
    }

    pub fn d_active(&self) -> usize {
        self.active_features.len()
    }

    pub fn n_tilde_active(&self) -> usize {
        self.active_rvs.len()
    }

    /// Standardizes a raw input row and restricts it to the active feature
    /// columns. Pruned dimensions are dropped here, which is why perturbing
    /// them cannot change any prediction.
    pub fn standardized_active_input(&self, x_star: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let z = self.standardizer.transform_row(x_star)?;
        Ok(Array1::from_iter(
            self.active_features.iter().map(|&j| z[j]),
        ))
    }

    /// Per-active-feature projections of the dual mean, `p_d = x~_d^T E a`.
    fn rv_projections(&self) -> Array1<f64> {
        self.x_tilde.t().dot(&self.a_mean)
    }

    /// Latent mean and variance at one raw input row.
    ///
    /// With `xs` the standardized active input, `u = X~^T-weighted input
    /// direction` and `A = cov + mean mean^T` of the dual factor:
    /// mean `= sum_d xs_d (E v_d) p_d + E b`, variance
    /// `= u^T cov_a u + sum_d xs_d^2 (var v_d)(x~_d^T A x~_d) + 1/E tau + var b`.
    pub fn predict_latent(&self, x_star: ArrayView1<'_, f64>) -> Result<PredictiveMoments> {
        let xs = self.standardized_active_input(x_star)?;
        Ok(self.latent_from_active(&xs))
    }

    /// Latent moments from an already standardized active-space input;
    /// shared by the batch path so standardization runs once per row.
    fn latent_from_active(&self, xs: &Array1<f64>) -> PredictiveMoments {
        let p = self.rv_projections();
        let weighted = Array1::from_iter(
            xs.iter()
                .zip(self.v_folded_mean.iter())
                .map(|(x, v)| x * v),
        );
        let mean = weighted.dot(&p) + self.b_mean;

        let u = self.x_tilde.dot(&weighted);
        let dual_quad = u.dot(&self.a_cov.dot(&u));
        let mut relevance_quad = 0.0;
        for d in 0..self.d_active() {
            let xt_d = self.x_tilde.column(d);
            let s_d = xt_d.dot(&self.a_cov.dot(&xt_d)) + xt_d.dot(&self.a_mean).powi(2);
            relevance_quad += xs[d] * xs[d] * self.v_folded_var[d] * s_d;
        }
        let var = dual_quad + relevance_quad + 1.0 / self.tau_mean + self.b_var;
        PredictiveMoments {
            mean_ystar: mean,
            var_ystar: var,
        }
    }

    /// Class-1 probability at one raw input row.
    pub fn predict_proba(&self, x_star: ArrayView1<'_, f64>) -> Result<f64> {
        let m = self.predict_latent(x_star)?;
        Ok(probit_matched_proba(m.mean_ystar, m.var_ystar))
    }

    /// Hard label at one raw input row: 1 iff the probability reaches the
    /// threshold (ties go to 1).
    pub fn predict_label(&self, x_star: ArrayView1<'_, f64>, threshold: f64) -> Result<f64> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decision threshold must lie strictly inside (0, 1), got {threshold}"
            )));
        }
        let p = self.predict_proba(x_star)?;
        Ok(if p >= threshold { 1.0 } else { 0.0 })
    }

    /// Class-1 probabilities for every row of a raw input matrix.
    pub fn predict_proba_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let mut out = Array1::zeros(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let xs = self.standardized_active_input(row)?;
            let m = self.latent_from_active(&xs);
            out[i] = probit_matched_proba(m.mean_ystar, m.var_ystar);
        }
        Ok(out)
    }

    /// Fraction of rows whose thresholded label matches, at threshold 1/2.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: ArrayView1<'_, f64>) -> Result<f64> {
        let proba = self.predict_proba_batch(x)?;
        let hits = proba
            .iter()
            .zip(labels.iter())
            .filter(|(p, l)| (**p >= 0.5) == (**l == 1.0))
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    /// Feature importances `w_d = (E v_d) p_d` over active features, mapped
    /// to original indices and sorted by descending signed weight (ties keep
    /// index order). Positive weights point toward class 1.
    pub fn rank_features(&self) -> Vec<(usize, f64)> {
        self.ranked(&self.v_folded_mean)
    }

    /// Importance variant using the signed locations of the underlying
    /// normals instead of the folded means.
    pub fn rank_features_underlying(&self) -> Vec<(usize, f64)> {
        self.ranked(&self.v_mu)
    }

    fn ranked(&self, v: &Array1<f64>) -> Vec<(usize, f64)> {
        let p = self.rv_projections();
        let mut out: Vec<(usize, f64)> = self
            .active_features
            .iter()
            .zip(v.iter().zip(p.iter()))
            .map(|(&j, (vd, pd))| (j, vd * pd))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Probit-matched class probability from latent moments.
pub(crate) fn probit_matched_proba(mean: f64, var: f64) -> f64 {
    sigmoid(mean / (1.0 + std::f64::consts::FRAC_PI_8 * var).sqrt())
}

/// Standardizes (optionally), fits, and packages the model.
///
/// This is the one entry point the command layer and the cross-validation
/// driver use: the standardizer is fitted on exactly the rows passed in,
/// so held-out rows never leak into preprocessing.
pub fn train(
    dataset: &Dataset,
    hp: &Hyperparams,
    standardize: bool,
) -> Result<(FittedModel, FitReport)> {
    let standardizer = if standardize {
        Standardizer::fit(dataset.features.view())
    } else {
        Standardizer::identity(dataset.d())
    };
    let x = standardizer.transform(dataset.features.view())?;
    let data = DesignMatrices::self_dual(x, dataset.labels.clone())?;
    let (state, report) = fit(&data, hp)?;
    Ok((FittedModel::from_state(&state, standardizer, &report), report))
}
