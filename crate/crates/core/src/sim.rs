//! Synthetic multi-dataset problems and dimension sweeps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit, EstimatorKind, FitOptions};
use crate::linalg::{symmetrize, sym_apply};
use crate::model::{DatasetCollection, EffectsMatrix, NoiseModel, RegressionDataset, ResponseKind, TaskCovariance};
use crate::rng::{derive_seed, haar_orthogonal, random_orthonormal_columns, standard_normal_matrix, substream};
use crate::table::Table;

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum EffectCovarianceKind {
    /// Random eigenvectors with eigenvalues 1, 1/2, 1/4, ...
    Correlated,
    Independent,
    Explicit(TaskCovariance),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub task_count: usize,
    pub covariate_dims: Vec<usize>,
    pub replicates: usize,
    pub effect_covariance_kind: EffectCovarianceKind,
    /// Poisson rate of the per-dataset row count.
    pub expected_points: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(task_count: usize, covariate_dims: Vec<usize>, effect_covariance_kind: EffectCovarianceKind, seed: u64) -> Self {
        Self {
            task_count,
            covariate_dims,
            replicates: 20,
            effect_covariance_kind,
            expected_points: 1000.0,
            noise_variance: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_count == 0 || self.replicates == 0 || self.covariate_dims.is_empty() {
            return Err(Error::InvalidArgument("task count, replicates and dims must be positive".into()));
        }
        if self.covariate_dims.contains(&0) || self.covariate_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("dims must be positive and strictly increasing".into()));
        }
        if !(self.expected_points.is_finite() && self.expected_points > 0.0) {
            return Err(Error::InvalidArgument(format!("expected_points must be positive, got {}", self.expected_points)));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be positive, got {}", self.noise_variance)));
        }
        if let EffectCovarianceKind::Explicit(s) = &self.effect_covariance_kind {
            if s.dim() != self.task_count {
                return Err(Error::Shape(format!("explicit Σ is {}x{} but Q = {}", s.dim(), s.dim(), self.task_count)));
            }
        }
        Ok(())
    }
}

/// Task covariance for the requested kind; deterministic in `seed`.
pub fn make_effect_covariance(kind: &EffectCovarianceKind, q: usize, seed: u64) -> Result<TaskCovariance> {
    if q == 0 {
        return Err(Error::InvalidArgument("Q must be at least 1".into()));
    }
    match kind {
        EffectCovarianceKind::Independent => Ok(TaskCovariance::identity(q)),
        EffectCovarianceKind::Explicit(s) => {
            if s.dim() != q {
                return Err(Error::Shape(format!("explicit Σ is {}x{} but Q = {q}", s.dim(), s.dim())));
            }
            Ok(s.clone())
        }
        EffectCovarianceKind::Correlated => {
            let mut rng = substream(seed, &[0x434f_5256], 0);
            let u = haar_orthogonal(&mut rng, q);
            let lam: Vec<f64> = (0..q).map(|i| 0.5f64.powi(i as i32)).collect();
            let m = DMatrix::from_fn(q, q, |i, j| u[(i, j)] * lam[j]) * u.transpose();
            TaskCovariance::new(symmetrize(&m))
        }
    }
}

fn cell_seed(config: &SimulationConfig, d: usize, replicate: usize) -> u64 {
    derive_seed(config.seed, &[d as u64, replicate as u64])
}

/// One synthetic problem and its true effects, deterministic in (seed, D, replicate).
///
/// Σ is drawn per cell, rows are Poisson(expected_points) with redraws below
/// D + 1, X rows are N(0, I/expected_points) and the true noise variance is
/// attached to every dataset.
pub fn simulate_collection(config: &SimulationConfig, d: usize, replicate: usize) -> Result<(DatasetCollection, EffectsMatrix)> {
    config.validate()?;
    if d == 0 {
        return Err(Error::InvalidArgument("D must be at least 1".into()));
    }
    let seed = cell_seed(config, d, replicate);
    let q = config.task_count;
    let sigma = make_effect_covariance(&config.effect_covariance_kind, q, seed)?;
    let mut rng = substream(seed, &[0x4441_5441], 0);
    let root = sym_apply(sigma.matrix(), |l| l.max(0.0).sqrt());
    let beta = standard_normal_matrix(&mut rng, d, q) * root;
    let poisson = Poisson::new(config.expected_points).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let x_scale = config.expected_points.sqrt().recip();
    let noise_sd = config.noise_variance.sqrt();
    let mut datasets = Vec::with_capacity(q);
    for k in 0..q {
        let mut n = None;
        for _ in 0..MAX_REDRAWS {
            let draw = poisson.sample(&mut rng) as usize;
            if draw > d {
                n = Some(draw);
                break;
            }
        }
        let n = n.ok_or_else(|| {
            Error::RedrawLimit(format!(
                "row count for dataset {k} stayed below D + 1 = {} after {MAX_REDRAWS} draws",
                d + 1
            ))
        })?;
        let x = standard_normal_matrix(&mut rng, n, d) * x_scale;
        let eps = standard_normal_matrix(&mut rng, n, 1);
        let y: DVector<f64> = &x * beta.column(k) + eps.column(0) * noise_sd;
        datasets.push(RegressionDataset::gaussian(x, y, Some(config.noise_variance)).map_err(|e| e.at_dataset(k))?);
    }
    Ok((DatasetCollection::new(datasets)?, EffectsMatrix::new(beta)?))
}

/// Squared error of one estimator on one simulated cell; `None` when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dimension: usize,
    pub replicate: usize,
    pub estimator: EstimatorKind,
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub dimension: usize,
    pub estimator: EstimatorKind,
    /// Mean over successful replicates (NaN when all failed).
    pub mean_error: f64,
    pub sem: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub rows: Vec<RiskRow>,
    pub cells: Vec<CellResult>,
}

impl RiskCurve {
    pub fn row(&self, dimension: usize, estimator: EstimatorKind) -> Option<&RiskRow> {
        self.rows.iter().find(|r| r.dimension == dimension && r.estimator == estimator)
    }

    /// Per-replicate errors of one estimator at one dimension, in replicate order.
    pub fn errors(&self, dimension: usize, estimator: EstimatorKind) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .filter(|c| c.dimension == dimension && c.estimator == estimator)
            .map(|c| c.error)
            .collect()
    }

    pub fn to_table(&self) -> Table {
        Table::new(
            &["dimension", "estimator", "mean_error", "sem", "replicates", "failures"],
            self.rows
                .iter()
                .map(|r| {
                    vec![
                        r.dimension.to_string(),
                        r.estimator.name().to_string(),
                        r.mean_error.to_string(),
                        r.sem.to_string(),
                        r.replicates.to_string(),
                        r.failures.to_string(),
                    ]
                })
                .collect(),
        )
    }
}

fn applicable(kind: EstimatorKind, d: usize, options: &FitOptions) -> bool {
    !(kind == EstimatorKind::EdataEm && d > options.edata.max_dimension)
}

/// Sweeps estimators over the configured dimensions.
///
/// Cells run in parallel; per-cell seeds make the table independent of
/// scheduling. EData EM cells above its dimension cap are omitted.
pub fn risk_curve(config: &SimulationConfig, estimator_kinds: &[EstimatorKind], options: &FitOptions) -> Result<RiskCurve> {
    config.validate()?;
    if estimator_kinds.is_empty() {
        return Err(Error::InvalidArgument("at least one estimator is required".into()));
    }
    let jobs: Vec<(usize, usize)> = config
        .covariate_dims
        .iter()
        .flat_map(|&d| (0..config.replicates).map(move |r| (d, r)))
        .collect();
    let per_job: Vec<Result<Vec<CellResult>>> = jobs
        .par_iter()
        .map(|&(d, r)| {
            let (coll, truth) = simulate_collection(config, d, r)?;
            let noise = NoiseModel::from_collection(&coll)?;
            Ok(estimator_kinds
                .iter()
                .filter(|&&k| applicable(k, d, options))
                .map(|&k| {
                    let res = fit(k, &coll, Some(&noise), options);
                    if let Err(e) = &res {
                        log::debug!("D={d} replicate={r} {k}: {e}");
                    }
                    CellResult {
                        dimension: d,
                        replicate: r,
                        estimator: k,
                        error: res.ok().map(|m| m.beta.squared_error(&truth)),
                    }
                })
                .collect())
        })
        .collect();
    let mut cells = Vec::new();
    for j in per_job {
        cells.extend(j?);
    }
    let mut rows = Vec::new();
    for &d in &config.covariate_dims {
        for &k in estimator_kinds {
            if !applicable(k, d, options) {
                continue;
            }
            let errs: Vec<f64> = cells
                .iter()
                .filter(|c| c.dimension == d && c.estimator == k)
                .filter_map(|c| c.error)
                .collect();
            let failures = config.replicates - errs.len();
            let (mean_error, sem) = if errs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                crate::theory::mean_sem(&errs)
            };
            rows.push(RiskRow {
                dimension: d,
                estimator: k,
                mean_error,
                sem,
                replicates: errs.len(),
                failures,
            });
        }
    }
    Ok(RiskCurve { rows, cells })
}

/// Datasets whose least-squares estimate is exactly `beta_ls` with X^{q⊤}X^q = rows·I.
///
/// Dataset q carries noise variance shared_variances[q]·rows, so the
/// orthogonal-design shared variance σ_q²/c_q equals shared_variances[q].
pub fn orthogonal_collection(beta_ls: &DMatrix<f64>, shared_variances: &[f64], rows: usize, seed: u64) -> Result<DatasetCollection> {
    let (d, q) = beta_ls.shape();
    if shared_variances.len() != q {
        return Err(Error::Shape(format!("{} variances for {q} datasets", shared_variances.len())));
    }
    if rows < d {
        return Err(Error::InvalidArgument(format!("rows ({rows}) must be at least D ({d})")));
    }
    let mut rng = substream(seed, &[0x4f52_5448], 0);
    let scale = (rows as f64).sqrt();
    let mut datasets = Vec::with_capacity(q);
    for k in 0..q {
        let x = random_orthonormal_columns(&mut rng, rows, d) * scale;
        let y = &x * beta_ls.column(k);
        datasets.push(RegressionDataset::gaussian(x, y, Some(shared_variances[k] * rows as f64)).map_err(|e| e.at_dataset(k))?);
    }
    DatasetCollection::new(datasets)
}

/// Binary-response tasks with correlated effects, for classification experiments.
///
/// β rows are N(0, Σ), X rows are N(0, I/D) and y ~ Bernoulli(σ(xᵀβ^q)).
pub fn simulate_binary_collection(
    sigma: &TaskCovariance,
    d: usize,
    rows: usize,
    seed: u64,
) -> Result<(DatasetCollection, EffectsMatrix)> {
    let q = sigma.dim();
    let mut rng = substream(seed, &[0x4249_4e41], 0);
    let root = sym_apply(sigma.matrix(), |l| l.max(0.0).sqrt());
    let beta = standard_normal_matrix(&mut rng, d, q) * root;
    let scale = (d as f64).sqrt().recip();
    let mut parts = Vec::with_capacity(q);
    for k in 0..q {
        let x = standard_normal_matrix(&mut rng, rows, d) * scale;
        let eta = &x * beta.column(k);
        let y = DVector::from_fn(rows, |i, _| if rng.random::<f64>() < crate::logistic::sigmoid(eta[i]) { 1.0 } else { 0.0 });
        parts.push((x, y, None));
    }
    Ok((DatasetCollection::from_parts(parts, ResponseKind::Binary)?, EffectsMatrix::new(beta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigenvalues;
    use approx::assert_relative_eq;

    #[test]
    fn independent_covariance_is_identity() {
        let s = make_effect_covariance(&EffectCovarianceKind::Independent, 4, 1).unwrap();
        assert_eq!(s.matrix(), &DMatrix::identity(4, 4));
    }

    #[test]
    fn correlated_covariance_has_geometric_spectrum() {
        let s = make_effect_covariance(&EffectCovarianceKind::Correlated, 3, 7).unwrap();
        let ev = sym_eigenvalues(s.matrix());
        assert_relative_eq!(ev[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(ev[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(ev[2], 1.0, epsilon = 1e-12);
        let again = make_effect_covariance(&EffectCovarianceKind::Correlated, 3, 7).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn simulated_gram_is_near_identity() {
        let cfg = SimulationConfig::new(2, vec![10], EffectCovarianceKind::Independent, 3);
        for r in 0..100 {
            let (c, _) = simulate_collection(&cfg, 10, r).unwrap();
            for ds in c.datasets() {
                let g = ds.design().tr_mul(ds.design());
                assert!((g - DMatrix::identity(10, 10)).norm() / 10.0 <= 0.2);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimulationConfig::new(3, vec![4], EffectCovarianceKind::Correlated, 11);
        let a = simulate_collection(&cfg, 4, 2).unwrap();
        let b = simulate_collection(&cfg, 4, 2).unwrap();
        assert_eq!(a, b);
        let c = simulate_collection(&cfg, 4, 3).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn orthogonal_collection_reproduces_beta() {
        let beta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let c = orthogonal_collection(&beta, &[0.5, 0.5], 5, 1).unwrap();
        let ls = crate::model::least_squares(&c).unwrap();
        assert_relative_eq!(ls.values(), &beta, epsilon = 1e-10);
        let g = c.dataset(1).design().tr_mul(c.dataset(1).design());
        assert_relative_eq!(g, DMatrix::identity(3, 3) * 5.0, epsilon = 1e-10);
        assert_relative_eq!(c.dataset(0).noise_variance().unwrap(), 2.5);
    }
}
