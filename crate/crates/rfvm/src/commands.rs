//! Batch command implementations behind the CLI binary.
//!
//! Each command is a plain function so the whole surface stays testable
//! without spawning processes: the binary only parses flags, calls one of
//! these, and maps errors to exit codes. All file outputs are written
//! atomically (temp file in the target directory, then rename).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::data::{
    gen_synthetic, load_csv, load_matrix_csv, make_folds, save_dataset_csv, write_atomic,
    Dataset, LabelColumn,
};
use crate::error::Error;
use crate::model_io::{load_model, save_model};
use crate::predict::train;
use crate::state::Hyperparams;
use crate::Result;

/// What `cmd_train` reports after writing the model.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub n: usize,
    pub d: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: f64,
    pub n_active_features: usize,
    pub n_active_rvs: usize,
}

/// Per-fold cross-validation results.
#[derive(Debug, Clone, Serialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// 100 * active features / D.
    pub pct_features_selected: f64,
    /// 100 * active relevance vectors / fold training size.
    pub pct_rvs_selected: f64,
}

/// Cross-validation report: mean and sample standard deviation (n-1
/// denominator, 0 for a single fold) of accuracy and the two sparsity
/// percentages, plus the per-fold breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub pct_features_mean: f64,
    pub pct_features_std: f64,
    pub pct_rvs_mean: f64,
    pub pct_rvs_std: f64,
    pub folds: Vec<FoldMetrics>,
}

/// One row of the scaling study.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingCell {
    pub d: usize,
    pub repeats: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

/// Scaling study results: per-d timing and the fitted log-log slope of
/// mean fit time against d (absent when the grid has a single point).
#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub n: usize,
    pub cells: Vec<ScalingCell>,
    pub slope: Option<f64>,
}

/// Fits a model on a labeled CSV, writes it as JSON, and optionally writes
/// the per-iteration trace CSV (columns: iter, elbo, n_feat, n_rv, seconds).
pub fn cmd_train(
    train_csv: &Path,
    label: &LabelColumn,
    has_header: bool,
    hp: &Hyperparams,
    out_model: &Path,
    trace_out: Option<&Path>,
) -> Result<TrainSummary> {
    let dataset = load_csv(train_csv, label, has_header)?;
    let (model, report) = train(&dataset, hp, true)?;
    save_model(&model, out_model)?;
    if let Some(trace_path) = trace_out {
        let mut out = String::from("iter,elbo,n_feat,n_rv,seconds\n");
        for rec in &report.trace {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                rec.iteration, rec.elbo, rec.n_active_features, rec.n_active_rvs, rec.elapsed_seconds
            );
        }
        write_atomic(trace_path, out.as_bytes())?;
    }
    Ok(TrainSummary {
        n: dataset.n(),
        d: dataset.d(),
        iterations: report.iterations_run,
        converged: report.converged,
        final_elbo: report.final_elbo,
        n_active_features: model.d_active(),
        n_active_rvs: model.n_tilde_active(),
    })
}

/// Scores an input CSV with a saved model and writes one row per input row
/// (columns: row_index, proba, label). `row_index` is zero-based. When
/// `label` names a column it is dropped before scoring, so a training file
/// can be pushed back through its own model; otherwise every column is a
/// feature and the width must equal the model's original feature count.
pub fn cmd_predict(
    model_path: &Path,
    input_csv: &Path,
    label: Option<&LabelColumn>,
    has_header: bool,
    threshold: f64,
    out_csv: &Path,
) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "decision threshold must lie strictly inside (0, 1), got {threshold}"
        )));
    }
    let model = load_model(model_path)?;
    let features = match label {
        Some(col) => load_csv(input_csv, col, has_header)?.features,
        None => load_matrix_csv(input_csv, has_header)?,
    };
    if features.ncols() != model.d_original {
        return Err(Error::Shape(format!(
            "{}: input has {} feature columns but the model was trained on {}",
            input_csv.display(),
            features.ncols(),
            model.d_original
        )));
    }
    let proba = model.predict_proba_batch(features.view())?;
    let mut out = String::from("row_index,proba,label\n");
    for (i, p) in proba.iter().enumerate() {
        let hard = if *p >= threshold { 1 } else { 0 };
        let _ = writeln!(out, "{i},{p},{hard}");
    }
    write_atomic(out_csv, out.as_bytes())?;
    Ok(proba.len())
}

/// k-fold cross-validation with per-fold standardization and training.
///
/// Folds are stratified except for leave-one-out (`k = N`), where
/// stratification is impossible and plain shuffled folds are used instead.
pub fn cmd_cv(
    train_csv: &Path,
    label: &LabelColumn,
    has_header: bool,
    k: usize,
    hp: &Hyperparams,
) -> Result<MetricsReport> {
    let dataset = load_csv(train_csv, label, has_header)?;
    cv_on_dataset(&dataset, k, hp)
}

/// Cross-validation core, shared with in-process callers.
pub fn cv_on_dataset(dataset: &Dataset, k: usize, hp: &Hyperparams) -> Result<MetricsReport> {
    let stratified = k != dataset.n();
    if !stratified {
        log::warn!("k equals the sample count; leave-one-out folds cannot be stratified");
    }
    let plan = make_folds(dataset.labels.view(), k, stratified, hp.seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (train_rows, test_rows) = plan.split(fold);
        let train_set = dataset.subset(&train_rows);
        let test_set = dataset.subset(&test_rows);
        let (model, _) = train(&train_set, hp, true)?;
        let accuracy = model.accuracy(test_set.features.view(), test_set.labels.view())?;
        folds.push(FoldMetrics {
            fold,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            accuracy,
            pct_features_selected: 100.0 * model.d_active() as f64 / model.d_original as f64,
            pct_rvs_selected: 100.0 * model.n_tilde_active() as f64
                / model.n_tilde_original as f64,
        });
    }
    let (accuracy_mean, accuracy_std) = mean_std(folds.iter().map(|f| f.accuracy));
    let (pct_features_mean, pct_features_std) =
        mean_std(folds.iter().map(|f| f.pct_features_selected));
    let (pct_rvs_mean, pct_rvs_std) = mean_std(folds.iter().map(|f| f.pct_rvs_selected));
    Ok(MetricsReport {
        k,
        seed: hp.seed,
        stratified,
        accuracy_mean,
        accuracy_std,
        pct_features_mean,
        pct_features_std,
        pct_rvs_mean,
        pct_rvs_std,
        folds,
    })
}

/// Generates a synthetic dataset CSV plus a sidecar file
/// (`<out>.informative`) listing the ground-truth informative column
/// indices, one per line.
pub fn cmd_synth(n: usize, d: usize, frac: f64, seed: u64, out_csv: &Path) -> Result<()> {
    let synth = gen_synthetic(n, d, frac, seed)?;
    save_dataset_csv(&synth.dataset, out_csv)?;
    let mut sidecar = String::new();
    for idx in &synth.informative {
        let _ = writeln!(sidecar, "{idx}");
    }
    write_atomic(&sidecar_path(out_csv), sidecar.as_bytes())
}

/// Path of the informative-index sidecar next to a synthetic CSV.
pub fn sidecar_path(out_csv: &Path) -> PathBuf {
    let mut os = out_csv.as_os_str().to_owned();
    os.push(".informative");
    PathBuf::from(os)
}

/// Times `repeats` fresh-data fits per feature count and writes a CSV
/// (columns: d, repeats, mean_seconds, std_seconds, slope). The slope
/// column repeats the log-log regression slope of mean time against d on
/// every row, and is empty when the grid has fewer than two points.
///
/// Run `r` at grid position `i` draws its data with seed
/// `hp.seed + i*repeats + r`, so every cell is reproducible in isolation.
pub fn cmd_scaling(
    n: usize,
    d_list: &[usize],
    repeats: usize,
    frac: f64,
    hp: &Hyperparams,
    out_csv: &Path,
) -> Result<ScalingReport> {
    if d_list.is_empty() {
        return Err(Error::Data("scaling grid must name at least one d".into()));
    }
    if d_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Data(format!(
            "scaling grid must be strictly ascending, got {d_list:?}"
        )));
    }
    if repeats == 0 {
        return Err(Error::Data("repeats must be at least 1".into()));
    }
    // The entropy lookup table is built lazily on first use; force it now so
    // the one-time cost does not land inside the first timed fit.
    let _ = crate::distributions::folded_softplus_unit(1.0);
    let mut cells = Vec::with_capacity(d_list.len());
    for (i, &d) in d_list.iter().enumerate() {
        let mut seconds = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let data_seed = hp.seed.wrapping_add((i * repeats + r) as u64);
            let synth = gen_synthetic(n, d, frac, data_seed)?;
            let started = Instant::now();
            let (_, report) = train(&synth.dataset, hp, true)?;
            let elapsed = started.elapsed().as_secs_f64();
            seconds.push(elapsed);
            log::info!(
                "scaling d={d} repeat={r}: {elapsed:.3}s over {} iterations",
                report.iterations_run
            );
        }
        let (mean_seconds, std_seconds) = mean_std(seconds.iter().copied());
        cells.push(ScalingCell {
            d,
            repeats,
            mean_seconds,
            std_seconds,
        });
    }
    let slope = log_log_slope(
        &cells.iter().map(|c| c.d as f64).collect::<Vec<_>>(),
        &cells.iter().map(|c| c.mean_seconds).collect::<Vec<_>>(),
    );
    let mut out = String::from("d,repeats,mean_seconds,std_seconds,slope\n");
    for cell in &cells {
        let _ = write!(
            out,
            "{},{},{},{},",
            cell.d, cell.repeats, cell.mean_seconds, cell.std_seconds
        );
        match slope {
            Some(s) => {
                let _ = writeln!(out, "{s}");
            }
            None => out.push('\n'),
        }
    }
    write_atomic(out_csv, out.as_bytes())?;
    Ok(ScalingReport { n, cells, slope })
}

/// Ordinary least-squares slope of `ln t` against `ln d`.
///
/// Returns nothing when fewer than two points are given. This is the exact
/// arithmetic behind the slope column of the scaling report, exposed so the
/// report can be recomputed offline.
pub fn log_log_slope(ds: &[f64], ts: &[f64]) -> Option<f64> {
    if ds.len() < 2 || ds.len() != ts.len() {
        return None;
    }
    let n = ds.len() as f64;
    let xs: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - x_mean) * (y - y_mean);
        sxx += (x - x_mean) * (x - x_mean);
    }
    Some(sxy / sxx)
}

/// Writes the ranked-feature file: up to `top_k` positive-weight features
/// (largest first) and up to `top_k` negative-weight features (most
/// negative first), as CSV columns block, rank, feature_index, weight.
pub fn cmd_rank(model_path: &Path, top_k: usize, underlying: bool, out_csv: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let ranked = if underlying {
        model.rank_features_underlying()
    } else {
        model.rank_features()
    };
    if top_k > ranked.len() {
        log::warn!(
            "top_k {} exceeds the {} active features; emitting all of them",
            top_k,
            ranked.len()
        );
    }
    let mut out = String::from("block,rank,feature_index,weight\n");
    for (rank, (idx, w)) in ranked.iter().filter(|(_, w)| *w > 0.0).take(top_k).enumerate() {
        let _ = writeln!(out, "positive,{},{},{}", rank + 1, idx, w);
    }
    for (rank, (idx, w)) in ranked
        .iter()
        .rev()
        .filter(|(_, w)| *w < 0.0)
        .take(top_k)
        .enumerate()
    {
        let _ = writeln!(out, "negative,{},{},{}", rank + 1, idx, w);
    }
    write_atomic(out_csv, out.as_bytes())
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = values.collect();
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
