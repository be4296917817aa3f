//! Estimators of the task covariance Σ and the resulting effect estimates.
//!
//! EM and the likelihood work with the marginal distribution of the
//! least-squares estimates, vec β̂ ~ N(0, K) with
//! `K = Σ ⊗ I_D + blockdiag(σ_q² (X^{q⊤}X^q)^{-1})`. This form needs no inverse
//! of Σ, so rank-deficient iterates are handled without jitter.

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fix_sign, sym_eigen_desc, sym_eigenvalues, symmetrize, LuFactor, SpdFactor};
use crate::model::{DatasetCollection, EffectsMatrix, NoiseModel, ResponseKind, SufficientStats, TaskCovariance};
use crate::posterior::{posterior_from_stats, unvec, vec_of, SolverMode, SolverOptions};

/// Iterates of an EM run together with the objective at each iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    #[serde(skip)]
    pub sigma_iterates: Vec<DMatrix<f64>>,
    pub log_marginal_likelihoods: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Starting covariance for EM.
#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    Identity,
    PracticalMoment,
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    pub max_iterations: usize,
    /// Stop when |ΔL| / max(|L|, 1) falls below this.
    pub rel_tolerance: f64,
    pub init: EmInit,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tolerance: 1e-8,
            init: EmInit::Identity,
        }
    }
}

/// Largest tolerated decrease of the log marginal likelihood between EM iterations.
pub const LIKELIHOOD_DECREASE_TOLERANCE: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// K = Σ ⊗ I_D + blockdiag(σ_q² G_q^{-1}).
fn marginal_covariance(stats: &SufficientStats, noise: &NoiseModel, sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let mut k = DMatrix::zeros(d * q, d * q);
    for a in 0..q {
        for b in 0..q {
            let s = sigma[(a, b)];
            for i in 0..d {
                k[(a * d + i, b * d + i)] += s;
            }
        }
        let block = &stats.gram_inverses[a] * noise.variance(a);
        let mut v = k.view_mut((a * d, a * d), (d, d));
        v += &block;
    }
    k
}

/// Output of one E-step in the marginal form.
pub(crate) struct MarginalEstep {
    pub log_marginal: f64,
    /// Posterior mean, D×Q.
    pub mean: DMatrix<f64>,
    /// Σ_d V_d.
    pub block_sum: DMatrix<f64>,
}

pub(crate) fn marginal_estep(
    stats: &SufficientStats,
    noise: &NoiseModel,
    sigma: &DMatrix<f64>,
) -> Result<MarginalEstep> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let k = marginal_covariance(stats, noise, sigma);
    let chol = SpdFactor::new(&k).map_err(|_| Error::Singular("marginal covariance of β̂ is singular".into()))?;
    let beta = vec_of(&stats.beta_ls);
    let alpha = chol.solve_vec(&beta);
    let log_marginal = -0.5 * ((d * q) as f64 * LN_2PI + chol.log_det() + beta.dot(&alpha));
    let kinv = chol.inverse();
    // Σ_d B_d with B_d[a, b] = K^{-1}[(a, d), (b, d)].
    let mut bsum = DMatrix::zeros(q, q);
    for a in 0..q {
        for b in 0..q {
            let mut s = 0.0;
            for i in 0..d {
                s += kinv[(a * d + i, b * d + i)];
            }
            bsum[(a, b)] = s;
        }
    }
    let mean = unvec(&alpha, d, q) * sigma;
    let block_sum = sigma * d as f64 - sigma * bsum * sigma;
    Ok(MarginalEstep {
        log_marginal,
        mean,
        block_sum: symmetrize(&block_sum),
    })
}

fn log_marginal_from_stats(stats: &SufficientStats, noise: &NoiseModel, sigma: &DMatrix<f64>) -> Result<f64> {
    let n = stats.covariates() * stats.tasks();
    let k = marginal_covariance(stats, noise, sigma);
    let chol = SpdFactor::new(&k).map_err(|_| Error::Singular("marginal covariance of β̂ is singular".into()))?;
    let beta = vec_of(&stats.beta_ls);
    let alpha = chol.solve_vec(&beta);
    Ok(-0.5 * (n as f64 * LN_2PI + chol.log_det() + beta.dot(&alpha)))
}

/// log p(β̂_LS | Σ): the Gaussian log density of the least-squares estimates,
/// including all constants.
pub fn log_marginal_likelihood(collection: &DatasetCollection, sigma: &TaskCovariance, noise: &NoiseModel) -> Result<f64> {
    let stats = prepare(collection, noise)?;
    check_sigma_dim(sigma.dim(), stats.tasks())?;
    log_marginal_from_stats(&stats, noise, sigma.matrix())
}

fn prepare(collection: &DatasetCollection, noise: &NoiseModel) -> Result<SufficientStats> {
    collection.require_kind(ResponseKind::Gaussian)?;
    noise.check_len(collection.task_count())?;
    SufficientStats::new(collection)
}

fn check_sigma_dim(dim: usize, q: usize) -> Result<()> {
    if dim != q {
        return Err(Error::Shape(format!("Σ is {dim}x{dim} for {q} datasets")));
    }
    Ok(())
}

/// Result of an EM run on the linear model.
pub(crate) struct EmOutcome {
    pub sigma: TaskCovariance,
    pub trace: EmTrace,
    /// Posterior mean at the returned Σ.
    pub mean: DMatrix<f64>,
}

pub(crate) fn em_from_stats(
    stats: &SufficientStats,
    noise: &NoiseModel,
    init: &DMatrix<f64>,
    max_iterations: usize,
    rel_tolerance: f64,
) -> Result<EmOutcome> {
    let d = stats.covariates() as f64;
    let mut sigma = init.clone();
    let mut trace = EmTrace {
        sigma_iterates: Vec::new(),
        log_marginal_likelihoods: Vec::new(),
        converged: false,
        iterations: 0,
    };
    let mut previous: Option<f64> = None;
    loop {
        let e = marginal_estep(stats, noise, &sigma)?;
        if !e.log_marginal.is_finite() {
            return Err(Error::NonFiniteObjective {
                iteration: trace.iterations,
            });
        }
        trace.sigma_iterates.push(sigma.clone());
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
            debug!(
                "EM stopped after {} iterations (converged: {}), log marginal {}",
                trace.iterations, trace.converged, e.log_marginal
            );
            return Ok(EmOutcome {
                sigma: TaskCovariance::new(sigma)?,
                trace,
                mean: e.mean,
            });
        }
        let next = symmetrize(&((e.mean.tr_mul(&e.mean) + &e.block_sum) / d));
        // The M-step averages PSD matrices; a failure here means a bug.
        TaskCovariance::new(next.clone())?;
        sigma = next;
        previous = Some(e.log_marginal);
        trace.iterations += 1;
    }
}

/// EM for the task covariance Σ of the linear model.
pub fn em_fit_linear(
    collection: &DatasetCollection,
    noise: &NoiseModel,
    init: &TaskCovariance,
    max_iterations: usize,
    rel_tolerance: f64,
) -> Result<(TaskCovariance, EmTrace)> {
    let stats = prepare(collection, noise)?;
    check_sigma_dim(init.dim(), stats.tasks())?;
    let out = em_from_stats(&stats, noise, init.matrix(), max_iterations, rel_tolerance)?;
    Ok((out.sigma, out.trace))
}

/// A symmetric estimate that need not be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub matrix: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub is_psd: bool,
}

impl MomentEstimate {
    pub(crate) fn new(matrix: DMatrix<f64>) -> Self {
        let matrix = symmetrize(&matrix);
        let min_eigenvalue = sym_eigenvalues(&matrix)[0];
        Self {
            is_psd: min_eigenvalue >= 0.0,
            matrix,
            min_eigenvalue,
        }
    }
}

/// D^{-1}β̂ᵀβ̂ − D^{-1} diag(σ_q² ‖X^{q†}‖_F²).
pub fn moment_sigma(collection: &DatasetCollection, noise: &NoiseModel) -> Result<MomentEstimate> {
    let stats = prepare(collection, noise)?;
    Ok(moment_from_stats(&stats, noise))
}

fn moment_from_stats(stats: &SufficientStats, noise: &NoiseModel) -> MomentEstimate {
    let d = stats.covariates() as f64;
    let mut m = stats.beta_ls.tr_mul(&stats.beta_ls) / d;
    for q in 0..stats.tasks() {
        m[(q, q)] -= noise.variance(q) * stats.gram_inverses[q].trace() / d;
    }
    MomentEstimate::new(m)
}

/// Projected responses and trace weights behind the practical moment estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoStatistics {
    /// Z^q = S^{q⊤}Y^q as columns of a D×Q matrix.
    pub pseudo_responses: DMatrix<f64>,
    /// Ω_{q,q'} = 1 / tr(W^{q⊤}W^{q'}), W^q = S^{q⊤}X^q.
    pub trace_inverse_weights: DMatrix<f64>,
    pub noise_vector: Vec<f64>,
}

/// Builds Z and Ω from the thin SVD of each design.
pub fn pseudo_statistics(collection: &DatasetCollection, noise: &NoiseModel) -> Result<PseudoStatistics> {
    collection.require_kind(ResponseKind::Gaussian)?;
    noise.check_len(collection.task_count())?;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    let mut z = DMatrix::zeros(d, q);
    let mut w = Vec::with_capacity(q);
    for (k, ds) in collection.datasets().iter().enumerate() {
        if ds.rows() < d {
            return Err(Error::TooFewRows {
                dataset: k,
                rows: ds.rows(),
                needed: d,
            });
        }
        let svd = ds.design().clone().svd(true, true);
        let mut s = svd.u.expect("u requested");
        let mut r = svd.v_t.expect("v_t requested").transpose();
        for j in 0..d {
            let mut col: Vec<f64> = r.column(j).iter().copied().collect();
            if fix_sign(&mut col) {
                r.column_mut(j).neg_mut();
                s.column_mut(j).neg_mut();
            }
        }
        z.set_column(k, &s.tr_mul(ds.responses()));
        // W = S^T X = diag(ω) R^T.
        let mut wk = r.transpose();
        for j in 0..d {
            wk.row_mut(j).scale_mut(svd.singular_values[j]);
        }
        w.push(wk);
    }
    let mut omega = DMatrix::zeros(q, q);
    for a in 0..q {
        for b in a..q {
            let t = crate::linalg::frob_dot(&w[a], &w[b]);
            let scale = (w[a].norm() * w[b].norm()).max(f64::MIN_POSITIVE);
            if t.abs() <= 1e-12 * scale {
                return Err(Error::Singular(format!(
                    "cross trace between datasets {a} and {b} is numerically zero"
                )));
            }
            omega[(a, b)] = 1.0 / t;
            omega[(b, a)] = 1.0 / t;
        }
    }
    Ok(PseudoStatistics {
        pseudo_responses: z,
        trace_inverse_weights: omega,
        noise_vector: noise.variances().to_vec(),
    })
}

/// [ZᵀZ − D diag(σ²)] ⊙ Ω before eigenvalue clipping.
pub fn practical_moment_raw(collection: &DatasetCollection, noise: &NoiseModel) -> Result<MomentEstimate> {
    let p = pseudo_statistics(collection, noise)?;
    let d = collection.covariate_count() as f64;
    let mut m = p.pseudo_responses.tr_mul(&p.pseudo_responses);
    for (k, &s) in p.noise_vector.iter().enumerate() {
        m[(k, k)] -= d * s;
    }
    Ok(MomentEstimate::new(m.component_mul(&p.trace_inverse_weights)))
}

/// Practical moment estimator with eigenvalues clipped at λ_max / condition_cap.
///
/// Falls back to ε·I with ε = 1e-3 · mean(σ²) when no eigenvalue is positive.
pub fn practical_moment_sigma(
    collection: &DatasetCollection,
    noise: &NoiseModel,
    condition_cap: f64,
) -> Result<TaskCovariance> {
    if !(condition_cap >= 1.0) {
        return Err(Error::InvalidArgument(format!("condition cap must be ≥ 1, got {condition_cap}")));
    }
    let raw = practical_moment_raw(collection, noise)?;
    let q = raw.matrix.nrows();
    let (vals, vecs) = sym_eigen_desc(&raw.matrix);
    if vals[0] <= 0.0 {
        let mean = noise.variances().iter().sum::<f64>() / q as f64;
        return TaskCovariance::scaled_identity(q, mean * 1e-3);
    }
    let floor = vals[0] / condition_cap;
    let clipped = DMatrix::from_fn(q, q, |i, j| vecs[(i, j)] * vals[j].max(floor));
    TaskCovariance::new(symmetrize(&(clipped * vecs.transpose())))
}

/// Closed-form maximum marginal likelihood under orthogonal design.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdShrinkageResult {
    /// D×Q left singular vectors V.
    pub left_vectors: DMatrix<f64>,
    /// Q×Q right singular vectors U.
    pub right_vectors: DMatrix<f64>,
    /// Squared singular values λ, descending.
    pub singular_value_squares: Vec<f64>,
    pub sigma_hat: TaskCovariance,
    pub beta_hat: EffectsMatrix,
}

/// Σ̂ = U diag((λ/D − σ²)_+) Uᵀ and β̂ = V diag(λ^{1/2}(1 − σ²D/λ)_+) Uᵀ from β̂_LS = V diag(λ^{1/2}) Uᵀ.
pub fn mle_sigma_orthogonal(beta_ls: &EffectsMatrix, shared_variance: f64) -> Result<SvdShrinkageResult> {
    let (d, q) = (beta_ls.covariate_count(), beta_ls.task_count());
    if d <= q {
        return Err(Error::Regime(format!("closed-form solution needs D > Q, got D={d}, Q={q}")));
    }
    if !(shared_variance.is_finite() && shared_variance > 0.0) {
        return Err(Error::InvalidArgument(format!("shared variance must be positive, got {shared_variance}")));
    }
    let svd = beta_ls.values().clone().svd(true, true);
    let u_raw = svd.v_t.expect("v_t requested").transpose();
    let v_raw = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut u = DMatrix::zeros(q, q);
    let mut v = DMatrix::zeros(d, q);
    let mut lambda = Vec::with_capacity(q);
    for (k, &i) in order.iter().enumerate() {
        let mut ucol: Vec<f64> = u_raw.column(i).iter().copied().collect();
        let flipped = fix_sign(&mut ucol);
        let sign = if flipped { -1.0 } else { 1.0 };
        u.set_column(k, &nalgebra::DVector::from_vec(ucol));
        v.set_column(k, &(v_raw.column(i) * sign));
        let s = svd.singular_values[i];
        lambda.push(s * s);
    }
    let df = d as f64;
    let eig: Vec<f64> = lambda.iter().map(|&l| (l / df - shared_variance).max(0.0)).collect();
    let sigma = DMatrix::from_fn(q, q, |i, j| u[(i, j)] * eig[j]) * u.transpose();
    let shrunk: Vec<f64> = lambda
        .iter()
        .map(|&l| if l > 0.0 { l.sqrt() * (1.0 - shared_variance * df / l).max(0.0) } else { 0.0 })
        .collect();
    let beta = DMatrix::from_fn(d, q, |i, j| v[(i, j)] * shrunk[j]) * u.transpose();
    Ok(SvdShrinkageResult {
        left_vectors: v,
        right_vectors: u,
        singular_value_squares: lambda,
        sigma_hat: TaskCovariance::new(symmetrize(&sigma))?,
        beta_hat: EffectsMatrix::new(beta)?,
    })
}

/// Shared σ² = σ_q²/c_q when every design satisfies X^{q⊤}X^q = c_q I and the ratios agree.
pub(crate) fn orthogonal_shared_variance(stats: &SufficientStats, noise: &NoiseModel) -> Result<f64> {
    let d = stats.covariates();
    let mut shared: Option<f64> = None;
    for (q, g) in stats.grams.iter().enumerate() {
        let c = g.trace() / d as f64;
        let dev = (g - DMatrix::identity(d, d) * c).amax();
        if !(c > 0.0) || dev > 1e-8 * c {
            return Err(Error::InvalidArgument(format!(
                "dataset {q} does not have an orthogonal design (X'X ≠ cI)"
            )));
        }
        let s = noise.variance(q) / c;
        match shared {
            None => shared = Some(s),
            Some(prev) if (prev - s).abs() > 1e-8 * prev => {
                return Err(Error::InvalidArgument(
                    "orthogonal design requires equal σ_q² / c_q across datasets".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(shared.expect("at least one dataset"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcovMethod {
    Em,
    Mm,
    MmPractical,
    MleOrthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcovOptions {
    pub em: EmOptions,
    pub solver: SolverOptions,
    pub condition_cap: f64,
}

impl Default for EcovOptions {
    fn default() -> Self {
        Self {
            em: EmOptions::default(),
            solver: SolverOptions::default(),
            condition_cap: 100.0,
        }
    }
}

/// Diagnostics from fitting a covariance-based estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Covariance estimate that was plugged into the posterior (Σ̂ or Γ̂).
    pub covariance: DMatrix<f64>,
    pub covariance_is_psd: bool,
    pub trace: Option<EmTrace>,
    pub cg_iterations: Option<usize>,
}

/// Posterior mean α_mat·Σ with K α = vec β̂ solved by LU, for possibly indefinite Σ.
pub(crate) fn plugin_mean_general(stats: &SufficientStats, noise: &NoiseModel, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let k = marginal_covariance(stats, noise, sigma);
    let lu = LuFactor::new(&k, 1e-12)
        .map_err(|_| Error::Singular("σ^{-2}Σ̂ + I is singular for the moment estimate".into()))?;
    let alpha = lu.solve_vec(&vec_of(&stats.beta_ls));
    Ok(unvec(&alpha, d, q) * sigma)
}

fn resolve_init(init: &EmInit, collection: &DatasetCollection, noise: &NoiseModel, q: usize) -> Result<DMatrix<f64>> {
    match init {
        EmInit::Identity => Ok(DMatrix::identity(q, q)),
        EmInit::PracticalMoment => Ok(practical_moment_sigma(collection, noise, 100.0)?.matrix().clone()),
        EmInit::Explicit(m) => {
            check_sigma_dim(m.nrows(), q)?;
            Ok(TaskCovariance::new(m.clone())?.matrix().clone())
        }
    }
}

/// β̂_ECov: the posterior mean under an estimated Σ.
pub fn ecov_estimate(
    collection: &DatasetCollection,
    noise: &NoiseModel,
    method: EcovMethod,
    options: &EcovOptions,
) -> Result<(EffectsMatrix, FitReport)> {
    let stats = prepare(collection, noise)?;
    options.solver.validate()?;
    let q = stats.tasks();
    match method {
        EcovMethod::Em => {
            let init = resolve_init(&options.em.init, collection, noise, q)?;
            let out = em_from_stats(&stats, noise, &init, options.em.max_iterations, options.em.rel_tolerance)?;
            let (mean, cg_iterations) = if options.solver.mode == SolverMode::Cg {
                let post = posterior_from_stats(&stats, &out.sigma, noise, &options.solver)?;
                (post.mean.into_inner(), post.cg_iterations)
            } else {
                (out.mean, None)
            };
            Ok((
                EffectsMatrix::new(mean)?,
                FitReport {
                    covariance: out.sigma.matrix().clone(),
                    covariance_is_psd: true,
                    trace: Some(out.trace),
                    cg_iterations,
                },
            ))
        }
        EcovMethod::Mm => {
            let mm = moment_from_stats(&stats, noise);
            let mean = plugin_mean_general(&stats, noise, &mm.matrix)?;
            Ok((
                EffectsMatrix::new(mean)?,
                FitReport {
                    covariance: mm.matrix,
                    covariance_is_psd: mm.is_psd,
                    trace: None,
                    cg_iterations: None,
                },
            ))
        }
        EcovMethod::MmPractical => {
            let sigma = practical_moment_sigma(collection, noise, options.condition_cap)?;
            let post = posterior_from_stats(&stats, &sigma, noise, &options.solver)?;
            Ok((
                post.mean,
                FitReport {
                    covariance: sigma.matrix().clone(),
                    covariance_is_psd: true,
                    trace: None,
                    cg_iterations: post.cg_iterations,
                },
            ))
        }
        EcovMethod::MleOrthogonal => {
            let shared = orthogonal_shared_variance(&stats, noise)?;
            let res = mle_sigma_orthogonal(&EffectsMatrix::new(stats.beta_ls.clone())?, shared)?;
            Ok((
                res.beta_hat,
                FitReport {
                    covariance: res.sigma_hat.matrix().clone(),
                    covariance_is_psd: true,
                    trace: None,
                    cg_iterations: None,
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegressionDataset;
    use crate::sim::orthogonal_collection;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_em_converges_to_positive_part() {
        // ‖β̂‖² = 8, D = 4, σ² = 1 → Σ̂ = 8/4 − 1 = 1.
        let beta = DMatrix::from_column_slice(4, 1, &[2.0, 0.0, 2.0, 0.0]);
        let c = orthogonal_collection(&beta, &[1.0], 6, 3).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let (sigma, trace) = em_fit_linear(&c, &noise, &TaskCovariance::identity(1), 5000, 1e-14).unwrap();
        assert_relative_eq!(sigma.matrix()[(0, 0)], 1.0, epsilon = 1e-8);
        assert!(trace.log_marginal_likelihoods.windows(2).all(|w| w[1] >= w[0] - 1e-8));
    }

    #[test]
    fn orthogonal_likelihood_matches_closed_form_display() {
        let beta = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1, 1.5, -1.0, 0.2, 0.4]);
        let c = orthogonal_collection(&beta, &[0.8, 0.8], 7, 11).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let stats = SufficientStats::new(&c).unwrap();
        let s2 = orthogonal_shared_variance(&stats, &noise).unwrap();
        let display = |sigma: &DMatrix<f64>| {
            let m = sigma + DMatrix::identity(2, 2) * s2;
            let inv = m.clone().try_inverse().unwrap();
            -(5.0 / 2.0) * (m.determinant().ln() + (inv * beta.tr_mul(&beta)).trace() / 5.0)
        };
        let s1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let s2m = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, -0.1, 2.0]);
        let l1 = log_marginal_likelihood(&c, &TaskCovariance::new(s1.clone()).unwrap(), &noise).unwrap();
        let l2 = log_marginal_likelihood(&c, &TaskCovariance::new(s2m.clone()).unwrap(), &noise).unwrap();
        assert_relative_eq!(l1 - l2, display(&s1) - display(&s2m), epsilon = 1e-10);
    }

    #[test]
    fn moment_estimator_examples() {
        let zero = DMatrix::zeros(3, 2);
        let c = orthogonal_collection(&zero, &[1.0, 1.0], 3, 1).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let mm = moment_sigma(&c, &noise).unwrap();
        assert_relative_eq!(mm.matrix, -DMatrix::identity(2, 2), epsilon = 1e-12);
        assert!(!mm.is_psd);

        let ones = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let c = orthogonal_collection(&ones, &[0.5], 2, 1).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        assert_relative_eq!(moment_sigma(&c, &noise).unwrap().matrix[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mle_closed_form_examples() {
        // Q=1, D=10, σ²=1, λ=20 → Σ̂ = 1, shrink factor 0.5.
        let mut b = DMatrix::zeros(10, 1);
        b[(0, 0)] = 20f64.sqrt();
        let r = mle_sigma_orthogonal(&EffectsMatrix::new(b.clone()).unwrap(), 1.0).unwrap();
        assert_relative_eq!(r.sigma_hat.matrix()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.beta_hat.values(), &(b * 0.5), epsilon = 1e-12);

        let small = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, -0.3, 0.1, 0.2, 0.0, 0.1, -0.1]);
        let r = mle_sigma_orthogonal(&EffectsMatrix::new(small).unwrap(), 1.0).unwrap();
        assert_eq!(r.sigma_hat.matrix(), &DMatrix::zeros(2, 2));
        assert_eq!(r.beta_hat.values(), &DMatrix::zeros(4, 2));
        assert!(mle_sigma_orthogonal(&EffectsMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn mm_orthogonal_matches_pseudoinverse_formula() {
        let beta = DMatrix::from_row_slice(5, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1, 1.5, -1.0, 0.2, 0.4]);
        let c = orthogonal_collection(&beta, &[0.3, 0.3], 8, 5).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let (est, _) = ecov_estimate(&c, &noise, EcovMethod::Mm, &EcovOptions::default()).unwrap();
        let s2 = 0.3;
        let expected = &beta - crate::linalg::pinv(&beta).transpose() * (s2 * 5.0);
        assert_relative_eq!(est.values(), &expected, epsilon = 1e-10);
    }

    #[test]
    fn em_shrinks_single_dataset() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0 + 0.1 * j as f64);
        let y = nalgebra::DVector::from_fn(20, |i, _| (i % 4) as f64 - 1.5);
        let c = DatasetCollection::new(vec![RegressionDataset::gaussian(x, y, Some(1.0)).unwrap()]).unwrap();
        let noise = NoiseModel::from_collection(&c).unwrap();
        let (est, _) = ecov_estimate(&c, &noise, EcovMethod::Em, &EcovOptions::default()).unwrap();
        let ls = crate::model::least_squares(&c).unwrap();
        assert!(est.values().norm() <= ls.values().norm());
    }
}
