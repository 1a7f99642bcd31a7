//! Saving and loading fitted models.
//!
//! Models are stored as a single JSON document so they stay human-inspectable
//! and diff-able. The on-disk schema is versioned; loading checks the version
//! and the internal shape consistency before handing back a usable model, so
//! a truncated or hand-edited file fails loudly instead of mispredicting.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, Standardizer};
use crate::error::Error;
use crate::predict::FittedModel;
use crate::state::Hyperparams;
use crate::Result;

/// Current on-disk schema version.
pub const FORMAT_VERSION: u32 = 1;

/// Training facts carried along with the posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub iterations: usize,
    pub final_elbo: f64,
}

/// The JSON document written to disk. Matrices are nested row-major lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub d_original: usize,
    pub n_tilde_original: usize,
    pub active_features: Vec<usize>,
    pub active_rvs: Vec<usize>,
    pub v_folded_mean: Vec<f64>,
    pub v_folded_var: Vec<f64>,
    pub v_mu: Vec<f64>,
    pub v_sigma2: Vec<f64>,
    pub a_mean: Vec<f64>,
    pub a_cov: Vec<Vec<f64>>,
    pub x_tilde: Vec<Vec<f64>>,
    pub b_mean: f64,
    pub b_var: f64,
    pub tau_mean: f64,
    pub standardizer: Standardizer,
    pub provenance: Provenance,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * ncols);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::Model(format!(
                "{what} has a row of length {} where {ncols} was expected",
                r.len()
            )));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::Model(format!("{what}: {e}")))
}

impl ModelFile {
    pub fn from_model(model: &FittedModel) -> ModelFile {
        ModelFile {
            format_version: FORMAT_VERSION,
            hyperparams: model.hyperparams.clone(),
            d_original: model.d_original,
            n_tilde_original: model.n_tilde_original,
            active_features: model.active_features.clone(),
            active_rvs: model.active_rvs.clone(),
            v_folded_mean: model.v_folded_mean.to_vec(),
            v_folded_var: model.v_folded_var.to_vec(),
            v_mu: model.v_mu.to_vec(),
            v_sigma2: model.v_sigma2.to_vec(),
            a_mean: model.a_mean.to_vec(),
            a_cov: to_rows(&model.a_cov),
            x_tilde: to_rows(&model.x_tilde),
            b_mean: model.b_mean,
            b_var: model.b_var,
            tau_mean: model.tau_mean,
            standardizer: model.standardizer.clone(),
            provenance: Provenance {
                seed: model.seed,
                iterations: model.iterations,
                final_elbo: model.final_elbo,
            },
        }
    }

    /// Validates internal consistency and rebuilds the in-memory model.
    pub fn into_model(self) -> Result<FittedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported format_version {} (this build reads version {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let d = self.active_features.len();
        let nt = self.active_rvs.len();
        for (len, what) in [
            (self.v_folded_mean.len(), "v_folded_mean"),
            (self.v_folded_var.len(), "v_folded_var"),
            (self.v_mu.len(), "v_mu"),
            (self.v_sigma2.len(), "v_sigma2"),
        ] {
            if len != d {
                return Err(Error::Model(format!(
                    "{what} has {len} entries but {d} features are active"
                )));
            }
        }
        if self.a_mean.len() != nt || self.a_cov.len() != nt || self.x_tilde.len() != nt {
            return Err(Error::Model(format!(
                "dual blocks disagree with the {nt} active relevance vectors \
                 (a_mean {}, a_cov {} rows, x_tilde {} rows)",
                self.a_mean.len(),
                self.a_cov.len(),
                self.x_tilde.len()
            )));
        }
        if self.standardizer.d() != self.d_original {
            return Err(Error::Model(format!(
                "standardizer covers {} columns but d_original is {}",
                self.standardizer.d(),
                self.d_original
            )));
        }
        if let Some(&j) = self.active_features.iter().find(|&&j| j >= self.d_original) {
            return Err(Error::Model(format!(
                "active feature index {j} is out of range for d_original {}",
                self.d_original
            )));
        }
        if let Some(&i) = self.active_rvs.iter().find(|&&i| i >= self.n_tilde_original) {
            return Err(Error::Model(format!(
                "active relevance-vector index {i} is out of range for {} originals",
                self.n_tilde_original
            )));
        }
        self.hyperparams.validate()?;
        let a_cov = from_rows(&self.a_cov, nt, "a_cov")?;
        let x_tilde = from_rows(&self.x_tilde, d, "x_tilde")?;
        Ok(FittedModel {
            hyperparams: self.hyperparams,
            active_features: self.active_features,
            active_rvs: self.active_rvs,
            d_original: self.d_original,
            n_tilde_original: self.n_tilde_original,
            v_folded_mean: Array1::from_vec(self.v_folded_mean),
            v_folded_var: Array1::from_vec(self.v_folded_var),
            v_mu: Array1::from_vec(self.v_mu),
            v_sigma2: Array1::from_vec(self.v_sigma2),
            a_mean: Array1::from_vec(self.a_mean),
            a_cov,
            x_tilde,
            b_mean: self.b_mean,
            b_var: self.b_var,
            tau_mean: self.tau_mean,
            standardizer: self.standardizer,
            seed: self.provenance.seed,
            iterations: self.provenance.iterations,
            final_elbo: self.provenance.final_elbo,
        })
    }
}

/// Serializes a model to pretty JSON and writes it atomically.
pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let file = ModelFile::from_model(model);
    let mut body = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Model(format!("serializing model: {e}")))?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

/// Reads, validates, and rebuilds a model from disk.
pub fn load_model(path: &Path) -> Result<FittedModel> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&body)
        .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
    file.into_model()
}
