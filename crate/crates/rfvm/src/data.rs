//! Dataset ingestion, standardization, fold plans, and the synthetic
//! fat-data generator.
//!
//! CSV files are comma-separated UTF-8 with `.` decimals, an optional single
//! header row, and one label column holding 0/1; every other column is a
//! feature. Parse failures are located by data row and column, both 1-based
//! (the header does not count as a row).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// Class-conditional mean shift of informative synthetic columns, in units
/// of the column's noise standard deviation.
pub const SYNTHETIC_SEPARATION: f64 = 1.5;

/// A labeled design matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// N x D feature matrix, finite throughout.
    pub features: Array2<f64>,
    /// Labels in {0, 1}, length N.
    pub labels: Array1<f64>,
    /// Column names when the source had a header.
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Rows of this dataset selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// How to find the label column in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Match a header name (requires a header row).
    Name(String),
    /// Zero-based column position.
    Index(usize),
}

impl LabelColumn {
    /// Interprets a command-line value: an unsigned integer is a position,
    /// anything else is a header name.
    pub fn parse(raw: &str) -> LabelColumn {
        match raw.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(raw.to_string()),
        }
    }

    fn resolve(&self, header: Option<&[String]>, n_cols: usize) -> Result<usize> {
        match self {
            LabelColumn::Name(name) => {
                let header = header.ok_or_else(|| {
                    Error::Data(format!(
                        "label column '{name}' was given by name but the file has no header"
                    ))
                })?;
                header.iter().position(|h| h == name).ok_or_else(|| {
                    Error::Data(format!("label column '{name}' not found in header"))
                })
            }
            LabelColumn::Index(i) => {
                if *i >= n_cols {
                    Err(Error::Data(format!(
                        "label column index {i} out of range for {n_cols} columns"
                    )))
                } else {
                    Ok(*i)
                }
            }
        }
    }
}

/// Loads a CSV file into a dataset.
///
/// Row order is preserved; `D` is the column count minus the label column.
/// Cells that do not parse as finite reals and labels outside {0, 1} are
/// reported with their data row and column, both 1-based.
pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = reader.records();
    let header: Option<Vec<String>> = if has_header {
        match records.next() {
            Some(rec) => Some(
                rec.map_err(|e| csv_error(path, e))?
                    .iter()
                    .map(str::to_string)
                    .collect(),
            ),
            None => return Err(Error::Data(format!("{}: empty file", path.display()))),
        }
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut bad_labels: Vec<String> = Vec::new();
    let mut label_idx = 0usize;
    for (row_0, rec) in records.enumerate() {
        let row = row_0 + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if row == 1 {
            label_idx = label.resolve(header.as_deref(), rec.len())?;
            if rec.len() < 2 {
                return Err(Error::Data(format!(
                    "{}: need at least one feature column besides the label",
                    path.display()
                )));
            }
        } else if rec.len() != rows[0].len() + 1 {
            return Err(Error::Data(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                row,
                rec.len(),
                rows[0].len() + 1
            )));
        }
        let mut features = Vec::with_capacity(rec.len() - 1);
        for (col_0, cell) in rec.iter().enumerate() {
            let col = col_0 + 1;
            let value: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: cell '{}' at row {} col {} does not parse as a number",
                    path.display(),
                    cell,
                    row,
                    col
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value '{}' at row {} col {}",
                    path.display(),
                    cell,
                    row,
                    col
                )));
            }
            if col_0 == label_idx {
                if value != 0.0 && value != 1.0 && !bad_labels.contains(&cell.to_string()) {
                    bad_labels.push(cell.to_string());
                }
                labels.push(value);
            } else {
                features.push(value);
            }
        }
        rows.push(features);
    }

    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    if !bad_labels.is_empty() {
        return Err(Error::Data(format!(
            "{}: labels must be 0 or 1, found: {}",
            path.display(),
            bad_labels.join(", ")
        )));
    }

    let d = rows[0].len();
    let n = rows.len();
    let mut features = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let feature_names = header.map(|h| {
        h.iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, name)| name.clone())
            .collect()
    });
    Ok(Dataset {
        features,
        labels: Array1::from_vec(labels),
        feature_names,
    })
}

/// Loads a CSV file of numbers only, with no label column.
///
/// Used for prediction inputs. Same cell-level error reporting as
/// [`load_csv`]: data rows and columns are 1-based, the header row (when
/// present) is not counted.
pub fn load_matrix_csv(path: &Path, has_header: bool) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = reader.records();
    if has_header && records.next().is_none() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_0, rec) in records.enumerate() {
        let row = row_0 + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if let Some(first) = rows.first() {
            if rec.len() != first.len() {
                return Err(Error::Data(format!(
                    "{}: row {} has {} columns, expected {}",
                    path.display(),
                    row,
                    rec.len(),
                    first.len()
                )));
            }
        }
        let mut values = Vec::with_capacity(rec.len());
        for (col_0, cell) in rec.iter().enumerate() {
            let col = col_0 + 1;
            let value: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "{}: cell '{}' at row {} col {} does not parse as a number",
                    path.display(),
                    cell,
                    row,
                    col
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value '{}' at row {} col {}",
                    path.display(),
                    cell,
                    row,
                    col
                )));
            }
            values.push(value);
        }
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let (n, d) = (rows.len(), rows[0].len());
    let mut out = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("is_io_error guarantees an Io kind"),
        }
    } else {
        Error::Data(format!("{}: {}", path.display(), e))
    }
}

/// Writes a dataset as CSV with a header, label column last.
///
/// Values are written in the shortest representation that parses back to the
/// same float, so a load/save cycle is lossless.
pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    match &dataset.feature_names {
        Some(names) => {
            for name in names {
                out.push_str(name);
                out.push(',');
            }
        }
        None => {
            for j in 0..dataset.d() {
                let _ = write!(out, "f{j},");
            }
        }
    }
    out.push_str("label\n");
    for i in 0..dataset.n() {
        for j in 0..dataset.d() {
            let _ = write!(out, "{},", dataset.features[[i, j]]);
        }
        let _ = writeln!(out, "{}", dataset.labels[i]);
    }
    write_atomic(path, out.as_bytes())
}

/// Writes a whole file atomically: the content lands under a temporary name
/// in the target directory and is renamed over the destination.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Per-feature affine preprocessing: z-scores from training statistics.
///
/// Means and standard deviations are population statistics of the training
/// rows. Zero-variance columns are flagged and carry standard deviation 1,
/// so their transform subtracts the mean and maps the training column to
/// exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    /// Fits means and standard deviations on training rows.
    pub fn fit(x: ArrayView2<'_, f64>) -> Standardizer {
        let n = x.nrows() as f64;
        let d = x.ncols();
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for col in x.columns() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            if var == 0.0 {
                stds.push(1.0);
                constant.push(true);
            } else {
                stds.push(var.sqrt());
                constant.push(false);
            }
        }
        Standardizer {
            means,
            stds,
            constant,
        }
    }

    /// The identity transform in `d` dimensions.
    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            means: vec![0.0; d],
            stds: vec![1.0; d],
            constant: vec![false; d],
        }
    }

    pub fn d(&self) -> usize {
        self.means.len()
    }

    /// Applies the transform column-wise to a matrix with matching width.
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.stds[j]);
        }
        Ok(out)
    }

    /// Applies the transform to a single row.
    pub fn transform_row(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.check_width(x.len())?;
        Ok(Array1::from_iter(
            x.iter()
                .enumerate()
                .map(|(j, v)| (v - self.means[j]) / self.stds[j]),
        ))
    }

    /// Inverts the transform (exact on all columns; flagged columns use the
    /// stand-in deviation of 1).
    pub fn inverse_transform(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(z.ncols())?;
        let mut out = z.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.stds[j] + self.means[j]);
        }
        Ok(out)
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.d() {
            return Err(Error::Shape(format!(
                "input has {} features but the standardizer was fitted on {}",
                got,
                self.d()
            )));
        }
        Ok(())
    }
}

/// A deterministic k-fold assignment of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold id in `0..k` for each sample.
    pub assignments: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    /// Training and held-out row indices of one fold, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Builds a k-fold plan over the labels.
///
/// Stratified plans shuffle each class separately and deal samples to folds
/// round-robin, carrying the dealing position across classes, which keeps
/// the class ratio of every fold within one sample of the global ratio.
/// Unstratified plans deal a single shuffled index list. Deterministic for
/// a given seed.
pub fn make_folds(labels: ArrayView1<'_, f64>, k: usize, stratified: bool, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Data(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Data(format!(
            "cannot split {n} samples into {k} folds"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; n];
    if stratified {
        let classes: [f64; 2] = [0.0, 1.0];
        let smallest = classes
            .iter()
            .map(|&c| labels.iter().filter(|&&l| l == c).count())
            .min()
            .unwrap_or(0);
        if smallest < k {
            return Err(Error::Data(format!(
                "stratified {k}-fold split infeasible: smallest class has only {smallest} samples"
            )));
        }
        let mut next_fold = 0usize;
        for &c in &classes {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng);
            for i in idx {
                assignments[i] = next_fold;
                next_fold = (next_fold + 1) % k;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignments[i] = pos % k;
        }
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified,
        seed,
    })
}

/// A generated dataset together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Ascending original indices of the informative columns.
    pub informative: Vec<usize>,
}

/// Generates balanced two-class fat data.
///
/// `round(frac * d)` columns (at least 1) are informative: class-conditional
/// unit-variance Gaussians whose means differ by [`SYNTHETIC_SEPARATION`].
/// Every other column is standard normal noise. Labels are balanced to
/// within one sample and shuffled. Deterministic for a given seed.
pub fn gen_synthetic(n: usize, d: usize, informative_frac: f64, seed: u64) -> Result<SyntheticDataset> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs n >= 2 and d >= 2, got n={n}, d={d}"
        )));
    }
    if !(informative_frac > 0.0 && informative_frac <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "informative fraction must be in (0, 1], got {informative_frac}"
        )));
    }
    let n_inf = ((informative_frac * d as f64).round() as usize).clamp(1, d);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let n_pos = n - n / 2;
    let mut labels: Vec<f64> = std::iter::repeat(1.0)
        .take(n_pos)
        .chain(std::iter::repeat(0.0).take(n - n_pos))
        .collect();
    labels.shuffle(&mut rng);

    let mut all: Vec<usize> = (0..d).collect();
    all.shuffle(&mut rng);
    let mut informative: Vec<usize> = all.into_iter().take(n_inf).collect();
    informative.sort_unstable();

    let half = 0.5 * SYNTHETIC_SEPARATION;
    let mut features = Array2::zeros((n, d));
    for j in 0..d {
        let is_informative = informative.binary_search(&j).is_ok();
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = if is_informative {
                z + if labels[i] == 1.0 { half } else { -half }
            } else {
                z
            };
        }
    }

    Ok(SyntheticDataset {
        dataset: Dataset {
            features,
            labels: Array1::from_vec(labels),
            feature_names: None,
        },
        informative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_with_header_and_named_label() {
        let f = write_temp("a,b,label\n1.0,2.0,1\n3.5,-0.25,0\n0.5,4.0,1\n");
        let ds = load_csv(f.path(), &LabelColumn::Name("label".into()), true).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.labels, array![1.0, 0.0, 1.0]);
        assert_eq!(ds.features[[1, 1]], -0.25);
        assert_eq!(ds.feature_names.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
    }

    #[test]
    fn load_csv_label_by_index_without_header() {
        let f = write_temp("1,1.0,2.0\n0,3.0,4.0\n");
        let ds = load_csv(f.path(), &LabelColumn::Index(0), false).unwrap();
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.labels, array![1.0, 0.0]);
        assert_eq!(ds.features.row(0).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn load_csv_parse_error_names_row_and_column() {
        let f = write_temp("a,b,label\n1.0,2.0,1\nabc,3.0,0\n");
        let err = load_csv(f.path(), &LabelColumn::Name("label".into()), true).unwrap_err();
        assert_eq!(err.category(), "data");
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("col 1"), "{msg}");
        assert!(msg.contains("'abc'"), "{msg}");
    }

    #[test]
    fn load_csv_rejects_non_binary_labels() {
        let f = write_temp("a,label\n1.0,2\n2.0,1\n");
        let err = load_csv(f.path(), &LabelColumn::Name("label".into()), true).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("labels must be 0 or 1") && msg.contains('2'), "{msg}");
    }

    #[test]
    fn load_csv_rejects_non_finite_cells() {
        let f = write_temp("a,label\ninf,1\n2.0,0\n");
        let err = load_csv(f.path(), &LabelColumn::Name("label".into()), true).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn load_csv_missing_file_is_io() {
        let err = load_csv(
            Path::new("/nonexistent/nope.csv"),
            &LabelColumn::Index(0),
            false,
        )
        .unwrap_err();
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn save_and_reload_is_lossless() {
        let ds = Dataset {
            features: array![[0.1, -2.5e-7], [std::f64::consts::PI, 4.0]],
            labels: array![1.0, 0.0],
            feature_names: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        save_dataset_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &LabelColumn::Name("label".into()), true).unwrap();
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn standardizer_z_scores_arithmetic_sequence() {
        let x = array![[1.0], [2.0], [3.0]];
        let s = Standardizer::fit(x.view());
        let z = s.transform(x.view()).unwrap();
        let want = 1.5f64.sqrt(); // 1 / sqrt(2/3)
        assert!((z[[0, 0]] + want).abs() < 1e-12);
        assert!(z[[1, 0]].abs() < 1e-12);
        assert!((z[[2, 0]] - want).abs() < 1e-12);
        assert!((want - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn standardizer_flags_constant_columns() {
        let x = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let s = Standardizer::fit(x.view());
        assert!(s.constant[0] && !s.constant[1]);
        let z = s.transform(x.view()).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardizer_round_trips() {
        let x = array![[1.0, -3.0], [2.5, 0.5], [4.0, 10.0], [-1.5, 2.0]];
        let s = Standardizer::fit(x.view());
        let z = s.transform(x.view()).unwrap();
        let back = s.inverse_transform(z.view()).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Transformed columns are centered and unit-scale.
        for col in z.columns() {
            let mean = col.sum() / 4.0;
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn standardizer_rejects_width_mismatch() {
        let s = Standardizer::identity(3);
        let err = s.transform(array![[1.0, 2.0]].view()).unwrap_err();
        assert_eq!(err.category(), "shape");
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels = array![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let plan = make_folds(labels.view(), 5, true, 7).unwrap();
        for fold in 0..5 {
            let (_, test) = plan.split(fold);
            assert_eq!(test.len(), 2);
            let pos = test.iter().filter(|&&i| labels[i] == 1.0).count();
            assert_eq!(pos, 1, "fold {fold} should hold one sample per class");
        }
    }

    #[test]
    fn folds_partition_every_sample_once() {
        let labels = Array1::from_iter((0..23).map(|i| (i % 2) as f64));
        let plan = make_folds(labels.view(), 4, false, 3).unwrap();
        let mut seen = vec![0usize; 23];
        for fold in 0..4 {
            let (train, test) = plan.split(fold);
            assert_eq!(train.len() + test.len(), 23);
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn folds_are_deterministic_per_seed() {
        let labels = Array1::from_iter((0..40).map(|i| (i % 2) as f64));
        let a = make_folds(labels.view(), 5, true, 11).unwrap();
        let b = make_folds(labels.view(), 5, true, 11).unwrap();
        let c = make_folds(labels.view(), 5, true, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignments, c.assignments);
    }

    #[test]
    fn two_folds_of_two_samples() {
        let labels = array![0.0, 1.0];
        let plan = make_folds(labels.view(), 2, false, 0).unwrap();
        let (train, test) = plan.split(0);
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn infeasible_stratification_names_the_limiting_count() {
        let labels = array![0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let err = make_folds(labels.view(), 3, true, 0).unwrap_err();
        assert_eq!(err.category(), "data");
        assert!(err.to_string().contains("2 samples"), "{err}");
    }

    #[test]
    fn synthetic_counts_and_balance() {
        let s = gen_synthetic(300, 50, 0.1, 42).unwrap();
        assert_eq!(s.informative.len(), 5);
        assert_eq!(s.dataset.n(), 300);
        assert_eq!(s.dataset.d(), 50);
        let pos = s.dataset.labels.iter().filter(|&&l| l == 1.0).count();
        assert_eq!(pos, 150);
        assert!(s.informative.windows(2).all(|w| w[0] < w[1]));

        let t = gen_synthetic(5, 2, 1.0, 0).unwrap();
        assert_eq!(t.informative, vec![0, 1]);
        let pos = t.dataset.labels.iter().filter(|&&l| l == 1.0).count();
        assert_eq!(pos, 3);
    }

    #[test]
    fn synthetic_is_deterministic_and_seed_sensitive() {
        let a = gen_synthetic(40, 12, 0.25, 9).unwrap();
        let b = gen_synthetic(40, 12, 0.25, 9).unwrap();
        let c = gen_synthetic(40, 12, 0.25, 10).unwrap();
        assert_eq!(a.dataset.features, b.dataset.features);
        assert_eq!(a.dataset.labels, b.dataset.labels);
        assert_eq!(a.informative, b.informative);
        assert_ne!(a.dataset.features, c.dataset.features);
    }

    #[test]
    fn synthetic_informative_columns_separate_classes() {
        let s = gen_synthetic(2000, 10, 0.2, 5).unwrap();
        let ds = &s.dataset;
        for &j in &s.informative {
            let mut sums = [0.0f64; 2];
            let mut counts = [0usize; 2];
            for i in 0..ds.n() {
                let c = ds.labels[i] as usize;
                sums[c] += ds.features[[i, j]];
                counts[c] += 1;
            }
            let gap = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
            assert!(
                (gap - SYNTHETIC_SEPARATION).abs() < 0.15,
                "column {j}: gap {gap}"
            );
        }
    }

    #[test]
    fn synthetic_rejects_bad_parameters() {
        assert!(gen_synthetic(1, 5, 0.5, 0).is_err());
        assert!(gen_synthetic(10, 1, 0.5, 0).is_err());
        assert!(gen_synthetic(10, 5, 0.0, 0).is_err());
        assert!(gen_synthetic(10, 5, 1.5, 0).is_err());
    }
}
