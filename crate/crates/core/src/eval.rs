//! Real-data workflow: CSV ingestion, response preprocessing, noise estimation and cross-validation.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, EstimatorKind, FitOptions};
use crate::logistic::sigmoid;
use crate::model::{least_squares_single, DatasetCollection, EffectsMatrix, RegressionDataset, ResponseKind};
use crate::rng::substream;
use crate::table::Table;
use crate::theory::mean_sem;

/// Responses beyond this many training standard deviations are clipped.
pub const CLIP_SD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

impl TaskKind {
    pub fn response_kind(self) -> ResponseKind {
        match self {
            TaskKind::Regression => ResponseKind::Gaussian,
            TaskKind::Classification => ResponseKind::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub response_column: String,
    pub task_kind: TaskKind,
    pub datasets: Vec<ManifestEntry>,
    /// Directory that relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Manifest("no datasets listed".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.datasets {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate dataset name '{}'", e.name)));
            }
            if e.path.as_os_str().is_empty() {
                return Err(Error::Manifest(format!("empty path for dataset '{}'", e.name)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.iter().map(|e| e.name.clone()).collect()
    }
}

/// A collection with the names it was loaded under.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCollection {
    pub collection: DatasetCollection,
    pub dataset_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_numeric_csv(path: &Path) -> Result<CsvTable> {
    let file = path.display().to_string();
    let io = |e: &dyn std::fmt::Display| Error::Io {
        path: file.clone(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| io(&e))?;
    let header: Vec<String> = reader.headers().map_err(|e| io(&e))?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile { file });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io(&e))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let location = |message: String| Error::Parse {
                    file: file.clone(),
                    row: i + 1,
                    column: header.get(j).cloned().unwrap_or_else(|| j.to_string()),
                    message,
                };
                let v: f64 = cell.trim().parse().map_err(|_| location(format!("non-numeric cell '{cell}'")))?;
                if !v.is_finite() {
                    return Err(location(format!("non-finite cell '{cell}'")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile { file });
    }
    Ok(CsvTable { header, rows })
}

/// Reads every dataset in the manifest; non-response columns become covariates in header order.
pub fn load_csv_collection(manifest: &Manifest) -> Result<LoadedCollection> {
    manifest.validate()?;
    let kind = manifest.task_kind.response_kind();
    let mut covariate_names: Option<(String, Vec<String>)> = None;
    let mut datasets = Vec::with_capacity(manifest.datasets.len());
    for (q, entry) in manifest.datasets.iter().enumerate() {
        let path = manifest.resolve(entry);
        let file = path.display().to_string();
        let table = read_numeric_csv(&path)?;
        let yi = table
            .header
            .iter()
            .position(|h| h == &manifest.response_column)
            .ok_or_else(|| Error::MissingColumn {
                file: file.clone(),
                column: manifest.response_column.clone(),
            })?;
        let cov: Vec<String> = table.header.iter().enumerate().filter(|&(j, _)| j != yi).map(|(_, h)| h.clone()).collect();
        match &covariate_names {
            None => covariate_names = Some((file.clone(), cov.clone())),
            Some((first, names)) if names != &cov => {
                return Err(Error::HeaderMismatch {
                    first: first.clone(),
                    second: file,
                })
            }
            _ => {}
        }
        let n = table.rows.len();
        let d = cov.len();
        let x = DMatrix::from_fn(n, d, |i, j| table.rows[i][if j < yi { j } else { j + 1 }]);
        let y = DVector::from_fn(n, |i, _| table.rows[i][yi]);
        let noise = if kind == ResponseKind::Gaussian { entry.noise_variance } else { None };
        if kind == ResponseKind::Binary && entry.noise_variance.is_some() {
            return Err(Error::NoiseOnBinary { dataset: q });
        }
        datasets.push(RegressionDataset::new(x, y, noise, kind).map_err(|e| e.at_dataset(q))?);
    }
    Ok(LoadedCollection {
        collection: DatasetCollection::new(datasets)?,
        dataset_names: manifest.names(),
        covariate_names: covariate_names.map(|(_, n)| n).unwrap_or_default(),
    })
}

/// Design matrix from a headered CSV, taking the named covariate columns in order.
pub fn read_design_csv(path: &Path, covariate_names: &[String]) -> Result<DMatrix<f64>> {
    let table = read_numeric_csv(path)?;
    let idx = covariate_names
        .iter()
        .map(|c| {
            table.header.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn {
                file: path.display().to_string(),
                column: c.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(table.rows.len(), idx.len(), |i, j| table.rows[i][idx[j]]))
}

/// Square or rectangular matrix from a headerless numeric CSV.
pub fn read_headerless_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: file.clone(),
            message: e.to_string(),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io {
            path: file.clone(),
            message: e.to_string(),
        })?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    file: file.clone(),
                    row: i + 1,
                    column: (j + 1).to_string(),
                    message: format!("invalid numeric cell '{cell}'"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile { file });
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!("ragged rows in {file}")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Center, scale to unit sample variance, then clip at ±2, using statistics from one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseScaling {
    pub mean: f64,
    pub sd: f64,
}

impl ResponseScaling {
    /// Sample mean and (n − 1) standard deviation.
    pub fn fit(y: &DVector<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::ZeroVariance { dataset: 0 });
        }
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::ZeroVariance { dataset: 0 });
        }
        Ok(Self { mean, sd: var.sqrt() })
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| ((v - self.mean) / self.sd).clamp(-CLIP_SD, CLIP_SD))
    }
}

/// Standardizes and winsorizes the responses of each dataset in place; covariates are untouched.
///
/// Attached noise variances are rescaled by 1/sd².
pub fn preprocess(collection: &DatasetCollection) -> Result<DatasetCollection> {
    Ok(preprocess_with_scalings(collection)?.0)
}

pub fn preprocess_with_scalings(collection: &DatasetCollection) -> Result<(DatasetCollection, Vec<ResponseScaling>)> {
    collection.require_kind(ResponseKind::Gaussian)?;
    let mut out = Vec::with_capacity(collection.task_count());
    let mut scalings = Vec::with_capacity(collection.task_count());
    for (q, ds) in collection.datasets().iter().enumerate() {
        let s = ResponseScaling::fit(ds.responses()).map_err(|e| e.at_dataset(q))?;
        let scaled = ds
            .with_responses(s.apply(ds.responses()))?
            .with_noise_variance(ds.noise_variance().map(|v| v / (s.sd * s.sd)))?;
        out.push(scaled);
        scalings.push(s);
    }
    Ok((DatasetCollection::new(out)?, scalings))
}

/// Residual variance ‖Y − Xβ̂_LS‖² / (N − D).
pub fn estimate_noise(dataset: &RegressionDataset) -> Result<f64> {
    let (n, d) = (dataset.rows(), dataset.covariates());
    if n <= d {
        return Err(Error::NoiseRequired {
            dataset: 0,
            reason: format!("cannot estimate the residual variance with {n} rows and {d} covariates"),
        });
    }
    let b = least_squares_single(dataset)?;
    let r = dataset.responses() - dataset.design() * b;
    Ok(r.norm_squared() / (n - d) as f64)
}

/// Fold label of each of `n` rows; a pure function of (seed, n, folds).
pub fn fold_assignment(seed: u64, n: usize, folds: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &[0x464f_4c44, n as u64, folds as u64], 0);
    order.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    ClassificationError,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::ClassificationError => "classification_error",
        }
    }
}

/// Held-out metric for one (estimator, dataset, fold); `None` when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub estimator: EstimatorKind,
    pub dataset: String,
    pub fold: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    /// Mean over folds of the dataset-averaged metric.
    pub mean: f64,
    /// SEM across folds.
    pub sem: f64,
    pub folds_used: usize,
    pub failures: usize,
}

/// Fitted effects of one (fold, estimator), kept for leakage checks.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub fold: usize,
    pub estimator: EstimatorKind,
    pub beta: Option<EffectsMatrix>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub metric: Metric,
    pub folds: usize,
    pub rows: Vec<CvRow>,
    pub aggregates: BTreeMap<String, CvAggregate>,
    pub fits: Vec<FoldFit>,
}

impl CvReport {
    pub fn aggregate(&self, kind: EstimatorKind) -> Option<&CvAggregate> {
        self.aggregates.get(kind.name())
    }

    /// Long format: estimator, dataset, fold, metric, value.
    pub fn to_table(&self) -> Table {
        Table::new(
            &["estimator", "dataset", "fold", "metric", "value"],
            self.rows
                .iter()
                .map(|r| {
                    vec![
                        r.estimator.name().to_string(),
                        r.dataset.clone(),
                        r.fold.to_string(),
                        self.metric.name().to_string(),
                        r.value.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
                    ]
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let failures: BTreeMap<String, String> = self
            .fits
            .iter()
            .filter_map(|f| f.failure.as_ref().map(|m| (format!("{}/fold{}", f.estimator.name(), f.fold), m.clone())))
            .collect();
        serde_json::json!({
            "metric": self.metric,
            "folds": self.folds,
            "aggregates": self.aggregates,
            "failures": failures,
        })
    }
}

fn split(ds: &RegressionDataset, labels: &[usize], fold: usize) -> (RegressionDataset, RegressionDataset) {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != fold).collect();
    let test: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == fold).collect();
    (ds.select_rows(&train), ds.select_rows(&test))
}

struct FoldData {
    train: DatasetCollection,
    /// Test design and transformed test responses per dataset.
    test: Vec<(DMatrix<f64>, DVector<f64>)>,
}

fn prepare_fold(collection: &DatasetCollection, labels: &[Vec<usize>], fold: usize) -> Result<FoldData> {
    let mut train = Vec::with_capacity(collection.task_count());
    let mut test = Vec::with_capacity(collection.task_count());
    for (q, ds) in collection.datasets().iter().enumerate() {
        let (tr, te) = split(ds, &labels[q], fold);
        match collection.kind() {
            ResponseKind::Gaussian => {
                let s = ResponseScaling::fit(tr.responses()).map_err(|e| e.at_dataset(q))?;
                let scaled = tr
                    .with_responses(s.apply(tr.responses()))?
                    .with_noise_variance(tr.noise_variance().map(|v| v / (s.sd * s.sd)))?;
                train.push(scaled);
                test.push((te.design().clone(), s.apply(te.responses())));
            }
            ResponseKind::Binary => {
                train.push(tr);
                test.push((te.design().clone(), te.responses().clone()));
            }
        }
    }
    Ok(FoldData {
        train: DatasetCollection::new(train)?,
        test,
    })
}

fn metric_value(metric: Metric, beta: &EffectsMatrix, q: usize, x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let eta = x * beta.values().column(q);
    let n = y.len().max(1) as f64;
    match metric {
        Metric::Mse => (eta - y).norm_squared() / n,
        Metric::ClassificationError => {
            eta.iter()
                .zip(y.iter())
                .filter(|(e, t)| (sigmoid(**e) >= 0.5) != (**t == 1.0))
                .count() as f64
                / n
        }
    }
}

/// k-fold cross-validation of each estimator with train-only preprocessing.
pub fn cross_validate(
    collection: &DatasetCollection,
    dataset_names: &[String],
    estimator_kinds: &[EstimatorKind],
    folds: usize,
    seed: u64,
    options: &FitOptions,
) -> Result<CvReport> {
    let (d, q) = (collection.covariate_count(), collection.task_count());
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 folds are required, got {folds}")));
    }
    if estimator_kinds.is_empty() {
        return Err(Error::InvalidArgument("at least one estimator is required".into()));
    }
    if dataset_names.len() != q {
        return Err(Error::Shape(format!("{} names for {q} datasets", dataset_names.len())));
    }
    let metric = match collection.kind() {
        ResponseKind::Gaussian => Metric::Mse,
        ResponseKind::Binary => Metric::ClassificationError,
    };
    for (k, ds) in collection.datasets().iter().enumerate() {
        let needed = match metric {
            Metric::Mse => folds * (d + 2),
            Metric::ClassificationError => folds * 2,
        };
        if ds.rows() < needed {
            return Err(Error::TooFewRows {
                dataset: k,
                rows: ds.rows(),
                needed,
            });
        }
    }
    let labels: Vec<Vec<usize>> = collection.datasets().iter().map(|ds| fold_assignment(seed, ds.rows(), folds)).collect();
    let fold_data = (0..folds).map(|f| prepare_fold(collection, &labels, f)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, EstimatorKind)> = (0..folds)
        .flat_map(|f| estimator_kinds.iter().map(move |&k| (f, k)))
        .collect();
    let fits: Vec<FoldFit> = jobs
        .par_iter()
        .map(|&(f, k)| match fit(k, &fold_data[f].train, None, options) {
            Ok(m) => FoldFit {
                fold: f,
                estimator: k,
                beta: Some(m.beta),
                failure: None,
            },
            Err(e) => FoldFit {
                fold: f,
                estimator: k,
                beta: None,
                failure: Some(format!("{}: {}", e.code(), e)),
            },
        })
        .collect();
    let mut rows = Vec::new();
    let mut aggregates = BTreeMap::new();
    for &k in estimator_kinds {
        let mut per_fold = Vec::new();
        for f in 0..folds {
            let ff = fits.iter().find(|x| x.fold == f && x.estimator == k).expect("every job ran");
            let mut vals = Vec::with_capacity(q);
            for (t, (x, y)) in fold_data[f].test.iter().enumerate() {
                let value = ff.beta.as_ref().map(|b| metric_value(metric, b, t, x, y));
                vals.extend(value);
                rows.push(CvRow {
                    estimator: k,
                    dataset: dataset_names[t].clone(),
                    fold: f,
                    value,
                });
            }
            if vals.len() == q {
                per_fold.push(vals.iter().sum::<f64>() / q as f64);
            }
        }
        let (mean, sem) = if per_fold.is_empty() { (f64::NAN, f64::NAN) } else { mean_sem(&per_fold) };
        aggregates.insert(
            k.name().to_string(),
            CvAggregate {
                mean,
                sem,
                folds_used: per_fold.len(),
                failures: folds - per_fold.len(),
            },
        );
    }
    Ok(CvReport {
        metric,
        folds,
        rows,
        aggregates,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn manifest(dir: &Path, files: &[&str]) -> Manifest {
        Manifest {
            response_column: "y".into(),
            task_kind: TaskKind::Regression,
            datasets: files
                .iter()
                .enumerate()
                .map(|(i, f)| ManifestEntry {
                    name: format!("d{i}"),
                    path: PathBuf::from(f),
                    noise_variance: None,
                })
                .collect(),
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn loads_two_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "y,a,b\n1,2,3\n4,5,6\n7,8,10\n");
        write(dir.path(), "b.csv", "y,a,b\n0,1,1\n1,0,2\n");
        let l = load_csv_collection(&manifest(dir.path(), &["a.csv", "b.csv"])).unwrap();
        assert_eq!(l.collection.covariate_count(), 2);
        assert_eq!(l.collection.task_count(), 2);
        assert_eq!(l.covariate_names, vec!["a", "b"]);
        assert_eq!(l.collection.dataset(0).design()[(2, 1)], 10.0);
    }

    #[test]
    fn header_order_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "y,a,b\n1,2,3\n");
        write(dir.path(), "b.csv", "y,b,a\n1,2,3\n");
        let e = load_csv_collection(&manifest(dir.path(), &["a.csv", "b.csv"])).unwrap_err();
        assert!(e.to_string().contains("covariate order mismatch"));
    }

    #[test]
    fn nan_cell_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "y,a\n1,2\n3,NaN\n");
        let e = load_csv_collection(&manifest(dir.path(), &["a.csv"])).unwrap_err();
        match e {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        write(dir.path(), "e.csv", "");
        assert_eq!(load_csv_collection(&manifest(dir.path(), &["e.csv"])).unwrap_err().code(), "empty_file");
        write(dir.path(), "m.csv", "z,a\n1,2\n");
        assert_eq!(load_csv_collection(&manifest(dir.path(), &["m.csv"])).unwrap_err().code(), "missing_column");
    }

    fn single(y: Vec<f64>) -> DatasetCollection {
        let n = y.len();
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        DatasetCollection::from_parts(vec![(x, DVector::from_vec(y), None)], ResponseKind::Gaussian).unwrap()
    }

    #[test]
    fn two_point_responses_are_bounded() {
        let out = preprocess(&single(vec![0.0, 10.0])).unwrap();
        let y = out.dataset(0).responses();
        assert!(y.iter().all(|v| v.abs() <= 2.0));
        assert_relative_eq!(y[0], -y[1], epsilon = 1e-12);
    }

    #[test]
    fn standardized_in_range_data_unchanged() {
        let raw = DVector::from_vec(vec![-1.2, 0.3, 0.5, 1.1, -0.7]);
        let s = ResponseScaling::fit(&raw).unwrap();
        let z = raw.map(|v| (v - s.mean) / s.sd);
        let out = preprocess(&single(z.iter().copied().collect())).unwrap();
        assert_relative_eq!(out.dataset(0).responses(), &z, epsilon = 1e-12);
    }

    #[test]
    fn single_outlier_clipped_once() {
        // Five points cannot put any z-score beyond (n−1)/√n ≈ 1.79, so use ten.
        let y = vec![0.1, -0.2, 0.3, 0.0, -0.1, 0.2, -0.3, 0.05, -0.05, 10.0];
        let s = ResponseScaling::fit(&DVector::from_vec(y.clone())).unwrap();
        let z: Vec<f64> = y.iter().map(|v| (v - s.mean) / s.sd).collect();
        assert_eq!(z.iter().filter(|v| v.abs() > 2.0).count(), 1);
        let out = preprocess(&single(y)).unwrap();
        let r = out.dataset(0).responses();
        assert_eq!(r.iter().filter(|v| v.abs() == 2.0).count(), 1);
        assert_eq!(r[9], 2.0);
    }

    #[test]
    fn zero_variance_is_rejected() {
        assert_eq!(preprocess(&single(vec![1.0, 1.0, 1.0])).unwrap_err().code(), "zero_variance");
    }

    #[test]
    fn noise_estimate_edge_cases() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i * (j + 1)) as f64 + j as f64);
        let y = &x * DVector::from_vec(vec![1.0, -2.0]);
        let ds = RegressionDataset::gaussian(x.clone(), y, None).unwrap();
        assert!(estimate_noise(&ds).unwrap().abs() < 1e-10);
        let sq = RegressionDataset::gaussian(x.rows(0, 2).into_owned(), DVector::from_vec(vec![1.0, 2.0]), None).unwrap();
        assert_eq!(estimate_noise(&sq).unwrap_err().code(), "noise_required");
    }

    #[test]
    fn folds_are_balanced_and_pure() {
        let a = fold_assignment(5, 23, 5);
        assert_eq!(a, fold_assignment(5, 23, 5));
        for f in 0..5 {
            let c = a.iter().filter(|&&l| l == f).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn noiseless_ls_recovers_exactly() {
        // An evenly spaced covariate keeps every z-score near √3, so nothing is clipped;
        // the constant column absorbs the centering.
        let parts = (0..2)
            .map(|k| {
                let x = DMatrix::from_fn(60, 2, |i, j| if j == 0 { 1.0 } else { -1.0 + 2.0 * ((i * (k + 7)) % 60) as f64 / 59.0 });
                let y = &x * DVector::from_vec(vec![0.3, -0.8]);
                (x, y, None)
            })
            .collect();
        let c = DatasetCollection::from_parts(parts, ResponseKind::Gaussian).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = cross_validate(&c, &names, &[EstimatorKind::Ls], 5, 3, &FitOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 10);
        let worst = r.rows.iter().map(|row| row.value.unwrap()).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "worst fold MSE {worst}");
        assert_eq!(r.aggregate(EstimatorKind::Ls).unwrap().folds_used, 5);
    }
}
