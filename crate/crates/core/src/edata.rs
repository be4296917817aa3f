//! Exchangeable-datasets baseline: columns β^q iid N(0, Γ) with a D×D covariance Γ.
//!
//! Datasets are conditionally independent given Γ, so the E-step is one
//! D-dimensional Gaussian conjugacy per dataset.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EmInit, EmOptions, EmTrace, FitReport, MomentEstimate, LIKELIHOOD_DECREASE_TOLERANCE};
use crate::linalg::{symmetrize, LuFactor, SpdFactor};
use crate::model::{CovariateCovariance, DatasetCollection, EffectsMatrix, NoiseModel, ResponseKind, SufficientStats};

/// Default cap on D for EData EM.
pub const DEFAULT_EDATA_MAX_DIMENSION: usize = 500;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn prepare(collection: &DatasetCollection, noise: &NoiseModel) -> Result<SufficientStats> {
    collection.require_kind(ResponseKind::Gaussian)?;
    noise.check_len(collection.task_count())?;
    SufficientStats::new(collection)
}

struct EdataEstep {
    log_marginal: f64,
    means: DMatrix<f64>,
    covariance_sum: DMatrix<f64>,
}

fn estep(stats: &SufficientStats, noise: &NoiseModel, gamma: &DMatrix<f64>) -> Result<EdataEstep> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let mut log_marginal = 0.0;
    let mut means = DMatrix::zeros(d, q);
    let mut covariance_sum = DMatrix::zeros(d, d);
    for k in 0..q {
        // β̂^q ~ N(0, Γ + σ_q² G_q^{-1}).
        let kq = gamma + &stats.gram_inverses[k] * noise.variance(k);
        let chol = SpdFactor::new(&symmetrize(&kq))
            .map_err(|_| Error::Singular(format!("marginal covariance of dataset {k} is singular")))?;
        let b = stats.beta_ls.column(k).into_owned();
        let alpha = chol.solve_vec(&b);
        log_marginal -= 0.5 * (d as f64 * LN_2PI + chol.log_det() + b.dot(&alpha));
        means.set_column(k, &(gamma * alpha));
        let kinv_gamma = chol.solve(gamma);
        covariance_sum += gamma - gamma * kinv_gamma;
    }
    Ok(EdataEstep {
        log_marginal,
        means,
        covariance_sum: symmetrize(&covariance_sum),
    })
}

struct EdataOutcome {
    gamma: CovariateCovariance,
    trace: EmTrace,
    means: DMatrix<f64>,
}

fn em_from_stats(
    stats: &SufficientStats,
    noise: &NoiseModel,
    init: &DMatrix<f64>,
    max_iterations: usize,
    rel_tolerance: f64,
) -> Result<EdataOutcome> {
    let q = stats.tasks() as f64;
    let mut gamma = init.clone();
    let mut trace = EmTrace {
        sigma_iterates: Vec::new(),
        log_marginal_likelihoods: Vec::new(),
        converged: false,
        iterations: 0,
    };
    let mut previous: Option<f64> = None;
    loop {
        let e = estep(stats, noise, &gamma)?;
        if !e.log_marginal.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: trace.iterations,
            });
        }
        trace.sigma_iterates.push(gamma.clone());
        trace.log_marginal_likelihoods.push(e.log_marginal);
        if let Some(prev) = previous {
            if e.log_marginal < prev - LIKELIHOOD_DECREASE_TOLERANCE {
                return Err(Error::LikelihoodDecrease {
                    iteration: trace.iterations,
                    previous: prev,
                    current: e.log_marginal,
                });
            }
            if (e.log_marginal - prev).abs() / prev.abs().max(1.0) < rel_tolerance {
                trace.converged = true;
            }
        }
        if trace.converged || trace.iterations >= max_iterations {
            return Ok(EdataOutcome {
                gamma: CovariateCovariance::new(gamma)?,
                trace,
                means: e.means,
            });
        }
        let next = symmetrize(&((&e.means * e.means.transpose() + &e.covariance_sum) / q));
        CovariateCovariance::new(next.clone())?;
        gamma = next;
        previous = Some(e.log_marginal);
        trace.iterations += 1;
    }
}

/// EM for the covariate covariance Γ.
pub fn em_fit_edata(
    collection: &DatasetCollection,
    noise: &NoiseModel,
    init: &CovariateCovariance,
    max_iterations: usize,
    rel_tolerance: f64,
) -> Result<(CovariateCovariance, EmTrace)> {
    let stats = prepare(collection, noise)?;
    if init.dim() != stats.covariates() {
        return Err(Error::Shape(format!("Γ is {0}x{0} for D={1}", init.dim(), stats.covariates())));
    }
    let out = em_from_stats(&stats, noise, init.matrix(), max_iterations, rel_tolerance)?;
    Ok((out.gamma, out.trace))
}

/// Q^{-1}β̂β̂ᵀ − Q^{-1}Σ_q σ_q²(X^{q⊤}X^q)^{-1}.
pub fn moment_gamma(collection: &DatasetCollection, noise: &NoiseModel) -> Result<MomentEstimate> {
    let stats = prepare(collection, noise)?;
    Ok(moment_from_stats(&stats, noise))
}

fn moment_from_stats(stats: &SufficientStats, noise: &NoiseModel) -> MomentEstimate {
    let q = stats.tasks() as f64;
    let mut m = &stats.beta_ls * stats.beta_ls.transpose() / q;
    for k in 0..stats.tasks() {
        m -= &stats.gram_inverses[k] * (noise.variance(k) / q);
    }
    MomentEstimate::new(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdataMethod {
    Em,
    Mm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdataOptions {
    pub em: EmOptions,
    /// EM refuses D above this unless raised.
    pub max_dimension: usize,
}

impl Default for EdataOptions {
    fn default() -> Self {
        Self {
            em: EmOptions::default(),
            max_dimension: DEFAULT_EDATA_MAX_DIMENSION,
        }
    }
}

/// β̂_EData: per-dataset posterior means under an estimated Γ.
pub fn edata_estimate(
    collection: &DatasetCollection,
    noise: &NoiseModel,
    method: EdataMethod,
    options: &EdataOptions,
) -> Result<(EffectsMatrix, FitReport)> {
    let (d, q) = (collection.covariate_count(), collection.task_count());
    match method {
        EdataMethod::Mm => {
            if d > q {
                return Err(Error::InfiniteRisk(format!(
                    "the moment-based exchangeable-datasets estimator is defined only for D <= Q (got D={d}, Q={q}); its risk is infinite by convention"
                )));
            }
            let stats = prepare(collection, noise)?;
            let mm = moment_from_stats(&stats, noise);
            let mut means = DMatrix::zeros(d, q);
            for k in 0..q {
                let kq = &mm.matrix + &stats.gram_inverses[k] * noise.variance(k);
                let lu = LuFactor::new(&kq, 1e-12)
                    .map_err(|_| Error::Singular(format!("Γ̂ + σ²(X'X)^{{-1}} is singular for dataset {k}")))?;
                let alpha = lu.solve_vec(&stats.beta_ls.column(k).into_owned());
                means.set_column(k, &(&mm.matrix * alpha));
            }
            Ok((
                EffectsMatrix::new(means)?,
                FitReport {
                    covariance: mm.matrix,
                    covariance_is_psd: mm.is_psd,
                    trace: None,
                    cg_iterations: None,
                },
            ))
        }
        EdataMethod::Em => {
            if d > options.max_dimension {
                return Err(Error::InvalidArgument(format!(
                    "EData EM is limited to D <= {} (got D={d}); raise the limit explicitly",
                    options.max_dimension
                )));
            }
            let stats = prepare(collection, noise)?;
            let init = match &options.em.init {
                EmInit::Identity => DMatrix::identity(d, d),
                EmInit::PracticalMoment => {
                    let mm = moment_from_stats(&stats, noise);
                    crate::linalg::sym_apply(&mm.matrix, |l| l.max(0.0)) + DMatrix::identity(d, d) * 1e-6
                }
                EmInit::Explicit(m) => CovariateCovariance::new(m.clone())?.matrix().clone(),
            };
            let out = em_from_stats(&stats, noise, &init, options.em.max_iterations, options.em.rel_tolerance)?;
            Ok((
                EffectsMatrix::new(out.means)?,
                FitReport {
                    covariance: out.gamma.matrix().clone(),
                    covariance_is_psd: true,
                    trace: Some(out.trace),
                    cg_iterations: None,
                },
            ))
        }
    }
}
