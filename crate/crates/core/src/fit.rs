//! One entry point over every estimator, for the CLI and evaluation pipeline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::edata::{edata_estimate, EdataMethod, EdataOptions};
use crate::error::{Error, Result};
use crate::estimators::{ecov_estimate, em_fit_linear, EcovMethod, EcovOptions, EmTrace};
use crate::logistic::{em_logistic_full, map_newton, NewtonOptions};
use crate::model::{
    least_squares, least_squares_single, DatasetCollection, EffectsMatrix, NoiseModel, NoiseSource, RegressionDataset,
    ResponseKind, TaskCovariance,
};
use crate::posterior::{posterior_gaussian, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    EcovEm,
    EcovMm,
    EcovMmPractical,
    EdataEm,
    EdataMm,
    Ls,
    LsPooled,
    Id,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::EcovEm,
        EstimatorKind::EcovMm,
        EstimatorKind::EcovMmPractical,
        EstimatorKind::EdataEm,
        EstimatorKind::EdataMm,
        EstimatorKind::Ls,
        EstimatorKind::LsPooled,
        EstimatorKind::Id,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::EcovEm => "ecov-em",
            EstimatorKind::EcovMm => "ecov-mm",
            EstimatorKind::EcovMmPractical => "ecov-mm-practical",
            EstimatorKind::EdataEm => "edata-em",
            EstimatorKind::EdataMm => "edata-mm",
            EstimatorKind::Ls => "ls",
            EstimatorKind::LsPooled => "ls-pooled",
            EstimatorKind::Id => "id",
        }
    }

    /// Whether the estimator needs σ_q² for Gaussian responses.
    pub fn needs_noise(self) -> bool {
        !matches!(self, EstimatorKind::Ls | EstimatorKind::LsPooled)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('_', "-");
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!("unknown estimator '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub ecov: EcovOptions,
    pub edata: EdataOptions,
    pub newton: NewtonOptions,
    pub logistic_max_iterations: usize,
    /// Relative Frobenius change of Σ that stops the logistic EM.
    pub logistic_rel_tolerance: f64,
    /// Prior scale used by the unregularized logistic baselines.
    pub weak_prior_variance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ecov: EcovOptions::default(),
            edata: EdataOptions::default(),
            newton: NewtonOptions::default(),
            logistic_max_iterations: 200,
            logistic_rel_tolerance: 1e-6,
            weak_prior_variance: 1e6,
        }
    }
}

/// Which covariance a fitted model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRole {
    /// Q×Q Σ̂.
    Task,
    /// D×D Γ̂.
    Covariate,
    /// Diagonal of per-dataset scalars from the independent fits.
    PerDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub kind: EstimatorKind,
    pub response_kind: ResponseKind,
    pub beta: EffectsMatrix,
    pub covariance: Option<(CovarianceRole, DMatrix<f64>)>,
    pub traces: Vec<EmTrace>,
    pub cg_iterations: Option<usize>,
}

impl FittedModel {
    fn plain(kind: EstimatorKind, response_kind: ResponseKind, beta: EffectsMatrix) -> Self {
        Self {
            kind,
            response_kind,
            beta,
            covariance: None,
            traces: Vec::new(),
            cg_iterations: None,
        }
    }
}

/// Fits `kind` to the collection.
///
/// For Gaussian responses, `noise` overrides the variances carried by the
/// datasets. Datasets without one get the residual-variance estimate.
pub fn fit(
    kind: EstimatorKind,
    collection: &DatasetCollection,
    noise: Option<&NoiseModel>,
    options: &FitOptions,
) -> Result<FittedModel> {
    match collection.kind() {
        ResponseKind::Gaussian => fit_gaussian(kind, collection, noise, options),
        ResponseKind::Binary => fit_binary(kind, collection, options),
    }
}

/// Attached noise variances, with the residual estimate filling gaps.
pub fn resolve_noise(collection: &DatasetCollection) -> Result<NoiseModel> {
    let mut source = NoiseSource::UserSupplied;
    let mut v = Vec::with_capacity(collection.task_count());
    for (q, ds) in collection.datasets().iter().enumerate() {
        match ds.noise_variance() {
            Some(s) => v.push(s),
            None => {
                source = NoiseSource::Estimated;
                v.push(crate::eval::estimate_noise(ds).map_err(|e| e.at_dataset(q))?);
            }
        }
    }
    NoiseModel::new(v, source)
}

fn fit_gaussian(
    kind: EstimatorKind,
    collection: &DatasetCollection,
    noise: Option<&NoiseModel>,
    options: &FitOptions,
) -> Result<FittedModel> {
    let rk = ResponseKind::Gaussian;
    let owned;
    let noise = match noise {
        Some(n) => n,
        None if kind.needs_noise() => {
            owned = resolve_noise(collection)?;
            &owned
        }
        None => {
            owned = NoiseModel::shared(1.0, collection.task_count())?;
            &owned
        }
    };
    let ecov = |m: EcovMethod| -> Result<FittedModel> {
        let (beta, report) = ecov_estimate(collection, noise, m, &options.ecov)?;
        Ok(FittedModel {
            kind,
            response_kind: rk,
            beta,
            covariance: Some((CovarianceRole::Task, report.covariance)),
            traces: report.trace.into_iter().collect(),
            cg_iterations: report.cg_iterations,
        })
    };
    let edata = |m: EdataMethod| -> Result<FittedModel> {
        let (beta, report) = edata_estimate(collection, noise, m, &options.edata)?;
        Ok(FittedModel {
            kind,
            response_kind: rk,
            beta,
            covariance: Some((CovarianceRole::Covariate, report.covariance)),
            traces: report.trace.into_iter().collect(),
            cg_iterations: None,
        })
    };
    match kind {
        EstimatorKind::EcovEm => ecov(EcovMethod::Em),
        EstimatorKind::EcovMm => ecov(EcovMethod::Mm),
        EstimatorKind::EcovMmPractical => ecov(EcovMethod::MmPractical),
        EstimatorKind::EdataEm => edata(EdataMethod::Em),
        EstimatorKind::EdataMm => edata(EdataMethod::Mm),
        EstimatorKind::Ls => Ok(FittedModel::plain(kind, rk, least_squares(collection)?)),
        EstimatorKind::LsPooled => Ok(FittedModel::plain(kind, rk, pooled_least_squares(collection)?)),
        EstimatorKind::Id => {
            let fit = independent_fit(collection, noise, options)?;
            Ok(FittedModel {
                kind,
                response_kind: rk,
                beta: fit.beta,
                covariance: Some((CovarianceRole::PerDataset, DMatrix::from_diagonal(&DVector::from_vec(fit.scales)))),
                traces: fit.traces,
                cg_iterations: None,
            })
        }
    }
}

fn fit_binary(kind: EstimatorKind, collection: &DatasetCollection, options: &FitOptions) -> Result<FittedModel> {
    let rk = ResponseKind::Binary;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    let weak = |n: usize| TaskCovariance::scaled_identity(n, options.weak_prior_variance);
    match kind {
        EstimatorKind::EcovEm => {
            let out = em_logistic_full(
                collection,
                &TaskCovariance::identity(q),
                options.logistic_max_iterations,
                options.logistic_rel_tolerance,
                &options.newton,
            )?;
            Ok(FittedModel {
                kind,
                response_kind: rk,
                beta: out.mean,
                covariance: Some((CovarianceRole::Task, out.sigma.matrix().clone())),
                traces: vec![out.trace],
                cg_iterations: None,
            })
        }
        EstimatorKind::Id => {
            let mut beta = DMatrix::zeros(d, q);
            let mut scales = Vec::with_capacity(q);
            let mut traces = Vec::with_capacity(q);
            for k in 0..q {
                let out = em_logistic_full(
                    &collection.single(k),
                    &TaskCovariance::identity(1),
                    options.logistic_max_iterations,
                    options.logistic_rel_tolerance,
                    &options.newton,
                )
                .map_err(|e| e.at_dataset(k))?;
                beta.set_column(k, &out.mean.values().column(0));
                scales.push(out.sigma.matrix()[(0, 0)]);
                traces.push(out.trace);
            }
            Ok(FittedModel {
                kind,
                response_kind: rk,
                beta: EffectsMatrix::new(beta)?,
                covariance: Some((CovarianceRole::PerDataset, DMatrix::from_diagonal(&DVector::from_vec(scales)))),
                traces,
                cg_iterations: None,
            })
        }
        EstimatorKind::Ls => {
            let beta = map_newton(collection, &weak(q)?, &EffectsMatrix::zeros(d, q), &options.newton)?;
            Ok(FittedModel::plain(kind, rk, beta))
        }
        EstimatorKind::LsPooled => {
            let pooled = DatasetCollection::new(vec![stack(collection)?])?;
            let b = map_newton(&pooled, &weak(1)?, &EffectsMatrix::zeros(d, 1), &options.newton)?;
            let col = b.values().column(0).into_owned();
            Ok(FittedModel::plain(kind, rk, EffectsMatrix::new(DMatrix::from_fn(d, q, |i, _| col[i]))?))
        }
        other => Err(Error::Unsupported(format!(
            "estimator {other} is not available for binary responses"
        ))),
    }
}

/// All rows of every dataset in one dataset (noise variance dropped).
fn stack(collection: &DatasetCollection) -> Result<RegressionDataset> {
    let d = collection.covariate_count();
    let n: usize = collection.datasets().iter().map(|ds| ds.rows()).sum();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut at = 0;
    for ds in collection.datasets() {
        let r = ds.rows();
        x.view_mut((at, 0), (r, d)).copy_from(ds.design());
        y.rows_mut(at, r).copy_from(ds.responses());
        at += r;
    }
    RegressionDataset::new(x, y, None, collection.kind())
}

/// One least-squares β on the row-stacked data, repeated in every column.
pub fn pooled_least_squares(collection: &DatasetCollection) -> Result<EffectsMatrix> {
    collection.require_kind(ResponseKind::Gaussian)?;
    let b = least_squares_single(&stack(collection)?)?;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    EffectsMatrix::new(DMatrix::from_fn(d, q, |i, _| b[i]))
}

/// Per-dataset fits with Q = 1 ECov.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentFit {
    pub beta: EffectsMatrix,
    /// Fitted prior variance of each dataset.
    pub scales: Vec<f64>,
    pub traces: Vec<EmTrace>,
}

/// Runs the single-dataset EM and posterior mean on each dataset separately.
pub fn independent_fit(collection: &DatasetCollection, noise: &NoiseModel, options: &FitOptions) -> Result<IndependentFit> {
    collection.require_kind(ResponseKind::Gaussian)?;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    if noise.variances().len() != q {
        return Err(Error::Shape(format!("noise model has {} variances for {q} datasets", noise.variances().len())));
    }
    let mut beta = DMatrix::zeros(d, q);
    let mut scales = Vec::with_capacity(q);
    let mut traces = Vec::with_capacity(q);
    for k in 0..q {
        let single = collection.single(k);
        let nk = NoiseModel::new(vec![noise.variance(k)], noise.source())?;
        let (sigma, trace) = em_fit_linear(&single, &nk, &TaskCovariance::identity(1), options.ecov.em.max_iterations, options.ecov.em.rel_tolerance)
            .map_err(|e| e.at_dataset(k))?;
        let post = posterior_gaussian(&single, &sigma, &nk, &SolverOptions::default()).map_err(|e| e.at_dataset(k))?;
        beta.set_column(k, &post.mean.values().column(0));
        scales.push(sigma.matrix()[(0, 0)]);
        traces.push(trace);
    }
    Ok(IndependentFit {
        beta: EffectsMatrix::new(beta)?,
        scales,
        traces,
    })
}

/// Columns of [`independent_fit`].
pub fn independent_estimate(collection: &DatasetCollection, noise: &NoiseModel, options: &FitOptions) -> Result<EffectsMatrix> {
    Ok(independent_fit(collection, noise, options)?.beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy(seed: u64, q: usize) -> DatasetCollection {
        let mut rng = crate::rng::substream(seed, &[], 0);
        let parts = (0..q)
            .map(|_| {
                let x = crate::rng::standard_normal_matrix(&mut rng, 30, 4);
                let e = crate::rng::standard_normal_matrix(&mut rng, 30, 1);
                let y = &x * DVector::from_vec(vec![1.0, -0.5, 0.2, 0.0]) + e.column(0);
                (x, y, Some(1.0))
            })
            .collect();
        DatasetCollection::from_parts(parts, ResponseKind::Gaussian).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!("ecov_mm_practical".parse::<EstimatorKind>().unwrap(), EstimatorKind::EcovMmPractical);
        assert!("nope".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn id_on_single_dataset_matches_ecov_em() {
        let c = toy(4, 1);
        let noise = NoiseModel::from_collection(&c).unwrap();
        let opts = FitOptions::default();
        let id = independent_estimate(&c, &noise, &opts).unwrap();
        let em = fit(EstimatorKind::EcovEm, &c, Some(&noise), &opts).unwrap();
        assert_relative_eq!(id.values(), em.beta.values(), epsilon = 1e-10);
    }

    #[test]
    fn pooled_columns_identical_and_match_duplicates() {
        let c = toy(5, 1);
        let dup = DatasetCollection::new(vec![c.dataset(0).clone(), c.dataset(0).clone()]).unwrap();
        let pooled = pooled_least_squares(&dup).unwrap();
        let ls = least_squares(&c).unwrap();
        assert_relative_eq!(pooled.values().column(0), ls.values().column(0), epsilon = 1e-10);
        assert_eq!(pooled.values().column(0), pooled.values().column(1));
    }

    #[test]
    fn opposite_effects_pool_near_zero() {
        let x = DMatrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let b = DVector::from_vec(vec![2.0, -1.0]);
        let y1 = &x * &b;
        let y2 = -&y1;
        let c = DatasetCollection::from_parts(vec![(x.clone(), y1, None), (x, y2, None)], ResponseKind::Gaussian).unwrap();
        assert!(pooled_least_squares(&c).unwrap().values().amax() < 1e-10);
    }

    #[test]
    fn zero_responses_give_zero_id_estimate() {
        let c = toy(6, 2);
        let zeroed = DatasetCollection::new(
            c.datasets().iter().map(|ds| ds.with_responses(DVector::zeros(ds.rows())).unwrap()).collect(),
        )
        .unwrap();
        let noise = NoiseModel::from_collection(&zeroed).unwrap();
        let est = independent_estimate(&zeroed, &noise, &FitOptions::default()).unwrap();
        assert!(est.values().amax() < 1e-8);
    }

    #[test]
    fn binary_rejects_moment_estimators() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i + j) as f64 / 10.0 - 0.5);
        let y = DVector::from_fn(10, |i, _| (i % 2) as f64);
        let c = DatasetCollection::from_parts(vec![(x, y, None)], ResponseKind::Binary).unwrap();
        let err = fit(EstimatorKind::EcovMm, &c, None, &FitOptions::default()).unwrap_err();
        assert_eq!(err.code(), "unsupported");
    }
}
