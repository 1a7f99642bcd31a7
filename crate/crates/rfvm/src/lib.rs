//! Relevance feature and vector machine (RFVM).
//!
//! A variational-Bayes binary classifier for fat data (many more features than
//! samples) that is sparse in two directions at once: automatic relevance
//! determination over features through folded-normal relevance weights, and
//! over training samples through a dual weight vector, so a fitted model keeps
//! only a small set of features and a small set of relevance vectors.
//!
//! The generative model couples a latent regression
//! `y_n = x_n diag(v) X~^T a + b + eps` with a logistic observation
//! `t_n ~ Bernoulli(sigmoid(y_n))`. Inference is mean-field coordinate ascent
//! with the Jaakkola-Jordan bound handling the logistic term; every factor
//! update is closed form. Features and relevance vectors whose posterior
//! weights collapse are pruned during the fit, which is what makes training
//! cost shrink as the active set does.
//!
//! Crate layout:
//! - [`distributions`]: folded-normal moments, gamma helpers, the logistic
//!   bound, and the numeric primitives they need.
//! - [`state`]: hyperparameters, design matrices, the variational state, and
//!   pruning of the active sets.
//! - [`inference`]: the factor updates, the evidence lower bound, and the
//!   fit loop with its convergence rule.
//! - [`predict`]: the fitted model, predictive moments, class probabilities,
//!   and feature ranking.
//! - [`data`]: CSV ingestion, standardization, fold plans, and the synthetic
//!   benchmark generator.
//! - [`model_io`]: versioned JSON model files.
//! - [`commands`]: the operations behind the `rfvm` command-line tool.

pub mod commands;
pub mod data;
pub mod distributions;
pub mod error;
pub mod inference;
pub mod model_io;
pub mod predict;
pub mod state;

pub use error::Error;

/// Convenience result type used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
