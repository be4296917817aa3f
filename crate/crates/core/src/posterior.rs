//! Gaussian posterior of the effects given a task covariance Σ.
//!
//! Effects are vectorized column by column: entry (d, q) of β sits at index
//! `q * D + d` of vec β. The posterior precision is
//! `Σ^{-1} ⊗ I_D + blockdiag(X^{q⊤}X^q / σ_q²)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_dot, sym_eigenvalues, symmetrize, SpdFactor};
use crate::model::{DatasetCollection, EffectsMatrix, NoiseModel, SufficientStats, TaskCovariance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Dense,
    Cg,
    Auto,
}

/// Starting point for conjugate gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgInit {
    Zero,
    /// Posterior mean of each dataset conditioned on that dataset alone, with prior variance Σ_qq.
    PerDataset,
}

/// Largest DQ solved densely in auto mode.
pub const AUTO_DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub mode: SolverMode,
    /// Relative residual target. Zero means "run the full iteration budget".
    pub cg_rel_tolerance: f64,
    /// Defaults to DQ when absent.
    pub cg_max_iterations: Option<usize>,
    pub jitter_scale: f64,
    pub cg_init: CgInit,
    /// Compute the per-covariate blocks V_d in CG mode (dense mode always has them).
    pub cg_covariate_blocks: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::Auto,
            cg_rel_tolerance: 1e-10,
            cg_max_iterations: None,
            jitter_scale: 1e-10,
            cg_init: CgInit::PerDataset,
            cg_covariate_blocks: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_rel_tolerance >= 0.0 && self.cg_rel_tolerance < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cg_rel_tolerance must lie in [0, 1), got {}",
                self.cg_rel_tolerance
            )));
        }
        if self.cg_max_iterations == Some(0) {
            return Err(Error::InvalidArgument("cg_max_iterations must be at least 1".into()));
        }
        if !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::InvalidArgument("jitter_scale must be non-negative".into()));
        }
        Ok(())
    }

    fn use_dense(&self, n: usize) -> bool {
        match self.mode {
            SolverMode::Dense => true,
            SolverMode::Cg => false,
            SolverMode::Auto => n <= AUTO_DENSE_LIMIT,
        }
    }
}

/// Posterior mean (D×Q) and per-covariate Q×Q covariance blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: EffectsMatrix,
    /// V_d for d = 0..D; empty when CG mode ran without block requests.
    pub covariate_blocks: Vec<DMatrix<f64>>,
    /// Full DQ×DQ covariance, dense mode only.
    pub full_covariance: Option<DMatrix<f64>>,
    /// CG iterations used, when CG ran.
    pub cg_iterations: Option<usize>,
}

/// Σ prepared for inversion: either exactly zero or with its inverse.
pub(crate) enum PreparedPrior {
    Zero,
    Regular { sigma: DMatrix<f64>, inverse: DMatrix<f64> },
}

/// Adds jitter·(tr Σ / Q)·I when the smallest eigenvalue falls below that level.
pub(crate) fn prepare_prior(sigma: &TaskCovariance, jitter_scale: f64) -> Result<PreparedPrior> {
    let s = sigma.matrix();
    if s.iter().all(|&v| v == 0.0) {
        return Ok(PreparedPrior::Zero);
    }
    let q = s.nrows();
    let level = jitter_scale * s.trace() / q as f64;
    let min_eig = sym_eigenvalues(s)[0];
    let used = if min_eig < level {
        s + DMatrix::identity(q, q) * level
    } else {
        s.clone()
    };
    let inverse = SpdFactor::new(&used)
        .map_err(|_| Error::Singular("prior covariance is singular after jitter".into()))?
        .inverse();
    Ok(PreparedPrior::Regular { sigma: used, inverse })
}

fn check_inputs(collection: &DatasetCollection, sigma: &TaskCovariance, noise: &NoiseModel) -> Result<()> {
    collection.require_kind(crate::model::ResponseKind::Gaussian)?;
    noise.check_len(collection.task_count())?;
    if sigma.dim() != collection.task_count() {
        return Err(Error::Shape(format!(
            "Σ is {}x{} but there are {} datasets",
            sigma.dim(),
            sigma.dim(),
            collection.task_count()
        )));
    }
    Ok(())
}

/// Right-hand side [X^{q⊤}Y^q / σ_q²] as a D×Q matrix.
fn rhs_matrix(stats: &SufficientStats, noise: &NoiseModel) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(stats.covariates(), stats.tasks());
    for q in 0..stats.tasks() {
        b.set_column(q, &(&stats.cross[q] / noise.variance(q)));
    }
    b
}

/// Dense precision matrix Σ^{-1} ⊗ I_D + blockdiag(G_q / σ_q²).
pub(crate) fn dense_precision(stats: &SufficientStats, noise: &NoiseModel, sigma_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let mut p = DMatrix::zeros(d * q, d * q);
    for a in 0..q {
        for b in 0..q {
            let s = sigma_inv[(a, b)];
            for k in 0..d {
                p[(a * d + k, b * d + k)] += s;
            }
        }
        let scaled = &stats.grams[a] / noise.variance(a);
        let mut v = p.view_mut((a * d, a * d), (d, d));
        v += &scaled;
    }
    p
}

pub(crate) fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub(crate) fn unvec(v: &DVector<f64>, d: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(d, q, v.as_slice())
}

/// Extracts V_d[q, q'] = V[(q, d), (q', d)] for every covariate d.
pub(crate) fn extract_blocks(v: &DMatrix<f64>, d: usize, q: usize) -> Vec<DMatrix<f64>> {
    (0..d)
        .map(|k| symmetrize(&DMatrix::from_fn(q, q, |a, b| v[(a * d + k, b * d + k)])))
        .collect()
}

/// Posterior mean and covariance of β given Σ.
pub fn posterior_gaussian(
    collection: &DatasetCollection,
    sigma: &TaskCovariance,
    noise: &NoiseModel,
    options: &SolverOptions,
) -> Result<PosteriorSummary> {
    check_inputs(collection, sigma, noise)?;
    options.validate()?;
    let stats = SufficientStats::new(collection)?;
    posterior_from_stats(&stats, sigma, noise, options)
}

pub(crate) fn posterior_from_stats(
    stats: &SufficientStats,
    sigma: &TaskCovariance,
    noise: &NoiseModel,
    options: &SolverOptions,
) -> Result<PosteriorSummary> {
    let (d, q) = (stats.covariates(), stats.tasks());
    let n = d * q;
    let dense = options.use_dense(n);
    let (sigma_used, sigma_inv) = match prepare_prior(sigma, options.jitter_scale)? {
        PreparedPrior::Zero => {
            return Ok(PosteriorSummary {
                mean: EffectsMatrix::zeros(d, q),
                covariate_blocks: if dense || options.cg_covariate_blocks {
                    vec![DMatrix::zeros(q, q); d]
                } else {
                    Vec::new()
                },
                full_covariance: dense.then(|| DMatrix::zeros(n, n)),
                cg_iterations: (!dense).then_some(0),
            });
        }
        PreparedPrior::Regular { sigma, inverse } => (sigma, inverse),
    };
    let b = rhs_matrix(stats, noise);
    if dense {
        let p = dense_precision(stats, noise, &sigma_inv);
        let chol = SpdFactor::new(&p).map_err(|_| Error::Singular("posterior precision is singular".into()))?;
        let v = chol.inverse();
        let mean = unvec(&(&v * vec_of(&b)), d, q);
        let blocks = extract_blocks(&v, d, q);
        return Ok(PosteriorSummary {
            mean: EffectsMatrix::new(mean)?,
            covariate_blocks: blocks,
            full_covariance: Some(v),
            cg_iterations: None,
        });
    }
    let op = PrecisionOperator::new(stats, noise, sigma_inv);
    let x0 = initial_guess(&op, stats, noise, &sigma_used, &b, options.cg_init)?;
    let sol = cg_solve(&op, &b, x0, options.cg_rel_tolerance, options.cg_max_iterations.unwrap_or(n))?;
    let blocks = if options.cg_covariate_blocks {
        cg_blocks(&op, options)?
    } else {
        Vec::new()
    };
    Ok(PosteriorSummary {
        mean: EffectsMatrix::new(sol.x)?,
        covariate_blocks: blocks,
        full_covariance: None,
        cg_iterations: Some(sol.iterations),
    })
}

/// Closed-form posterior mean under orthogonal design: β̂ − β̂[σ^{-2}Σ + I]^{-1}.
pub fn posterior_mean_orthogonal(
    beta_ls: &EffectsMatrix,
    sigma: &TaskCovariance,
    shared_variance: f64,
) -> Result<EffectsMatrix> {
    if !(shared_variance.is_finite() && shared_variance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shared variance must be positive, got {shared_variance}"
        )));
    }
    let q = beta_ls.task_count();
    if sigma.dim() != q {
        return Err(Error::Shape(format!("Σ is {}x{} for {} tasks", sigma.dim(), sigma.dim(), q)));
    }
    let m = sigma.matrix() / shared_variance + DMatrix::identity(q, q);
    let inv = SpdFactor::new(&m)?.inverse();
    let b = beta_ls.values();
    EffectsMatrix::new(b - b * inv)
}

/// Result of a conjugate-gradient posterior-mean solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub mean: EffectsMatrix,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Posterior mean by unpreconditioned conjugate gradient, never forming the DQ×DQ matrix.
pub fn posterior_mean_cg(
    collection: &DatasetCollection,
    sigma: &TaskCovariance,
    noise: &NoiseModel,
    options: &SolverOptions,
) -> Result<CgSolution> {
    check_inputs(collection, sigma, noise)?;
    options.validate()?;
    if options.mode != SolverMode::Cg {
        return Err(Error::InvalidArgument("posterior_mean_cg requires mode = cg".into()));
    }
    let stats = SufficientStats::new(collection)?;
    let (d, q) = (stats.covariates(), stats.tasks());
    let (sigma_used, sigma_inv) = match prepare_prior(sigma, options.jitter_scale)? {
        PreparedPrior::Zero => {
            return Ok(CgSolution {
                mean: EffectsMatrix::zeros(d, q),
                iterations: 0,
                relative_residual: 0.0,
            })
        }
        PreparedPrior::Regular { sigma, inverse } => (sigma, inverse),
    };
    let b = rhs_matrix(&stats, noise);
    let op = PrecisionOperator::new(&stats, noise, sigma_inv);
    let x0 = initial_guess(&op, &stats, noise, &sigma_used, &b, options.cg_init)?;
    let sol = cg_solve(&op, &b, x0, options.cg_rel_tolerance, options.cg_max_iterations.unwrap_or(d * q))?;
    Ok(CgSolution {
        mean: EffectsMatrix::new(sol.x)?,
        iterations: sol.iterations,
        relative_residual: sol.relative_residual,
    })
}

/// Matrix-free application of the posterior precision to a D×Q matrix.
pub(crate) struct PrecisionOperator {
    sigma_inv: DMatrix<f64>,
    scaled_grams: Vec<DMatrix<f64>>,
}

impl PrecisionOperator {
    pub(crate) fn new(stats: &SufficientStats, noise: &NoiseModel, sigma_inv: DMatrix<f64>) -> Self {
        let scaled_grams = (0..stats.tasks()).map(|q| &stats.grams[q] / noise.variance(q)).collect();
        Self { sigma_inv, scaled_grams }
    }

    /// vec(vΣ^{-1}) + [G_q v_q / σ_q²].
    pub(crate) fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = v * &self.sigma_inv;
        for (q, g) in self.scaled_grams.iter().enumerate() {
            let col = g * v.column(q);
            let mut dst = out.column_mut(q);
            dst += col;
        }
        out
    }

    fn dims(&self) -> (usize, usize) {
        (self.scaled_grams[0].nrows(), self.scaled_grams.len())
    }
}

fn initial_guess(
    op: &PrecisionOperator,
    stats: &SufficientStats,
    noise: &NoiseModel,
    sigma_used: &DMatrix<f64>,
    b: &DMatrix<f64>,
    init: CgInit,
) -> Result<DMatrix<f64>> {
    let (d, q) = op.dims();
    match init {
        CgInit::Zero => Ok(DMatrix::zeros(d, q)),
        CgInit::PerDataset => {
            let mut x = DMatrix::zeros(d, q);
            for k in 0..q {
                let m = &stats.grams[k] / noise.variance(k) + DMatrix::identity(d, d) / sigma_used[(k, k)];
                let col = SpdFactor::new(&m)?.solve_vec(&b.column(k).into_owned());
                x.set_column(k, &col);
            }
            Ok(x)
        }
    }
}

pub(crate) struct CgOutput {
    pub x: DMatrix<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Plain conjugate gradient on D×Q matrices with the Frobenius inner product.
pub(crate) fn cg_solve(
    op: &PrecisionOperator,
    b: &DMatrix<f64>,
    x0: DMatrix<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<CgOutput> {
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(CgOutput {
            x: DMatrix::zeros(b.nrows(), b.ncols()),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut x = x0;
    let mut r = b - op.apply(&x);
    let mut rr = frob_dot(&r, &r);
    let mut iterations = 0;
    let done = |rr: f64| rr.sqrt() <= tol * bnorm || rr == 0.0;
    if !done(rr) {
        let mut p = r.clone();
        while iterations < max_iterations {
            let ap = op.apply(&p);
            let pap = frob_dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Singular("precision operator is not positive definite".into()));
            }
            let alpha = rr / pap;
            x += &p * alpha;
            r -= &ap * alpha;
            let rr_new = frob_dot(&r, &r);
            iterations += 1;
            if done(rr_new) {
                rr = rr_new;
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p = &r + &p * beta;
        }
    }
    // Report the true residual rather than the recursively updated one.
    let relative_residual = (b - op.apply(&x)).norm() / bnorm;
    let converged = done(rr) || relative_residual <= tol;
    if !converged && tol > 0.0 {
        return Err(Error::CgNotConverged {
            iterations,
            relative_residual,
        });
    }
    Ok(CgOutput {
        x,
        iterations,
        relative_residual,
    })
}

/// V_d blocks by solving Q unit right-hand sides per covariate.
fn cg_blocks(op: &PrecisionOperator, options: &SolverOptions) -> Result<Vec<DMatrix<f64>>> {
    let (d, q) = op.dims();
    let tol = if options.cg_rel_tolerance > 0.0 { options.cg_rel_tolerance } else { 1e-12 };
    let max_it = options.cg_max_iterations.unwrap_or(d * q);
    let mut blocks = Vec::with_capacity(d);
    for k in 0..d {
        let mut block = DMatrix::zeros(q, q);
        for a in 0..q {
            let mut e = DMatrix::zeros(d, q);
            e[(k, a)] = 1.0;
            let sol = cg_solve(op, &e, DMatrix::zeros(d, q), tol, max_it)?;
            for c in 0..q {
                block[(c, a)] = sol.x[(k, c)];
            }
        }
        blocks.push(symmetrize(&block));
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegressionDataset;
    use approx::assert_relative_eq;

    fn orthogonal_dataset(beta: &[f64], scale: f64) -> RegressionDataset {
        let d = beta.len();
        let x = DMatrix::identity(d, d) * scale.sqrt();
        let y = &x * DVector::from_column_slice(beta);
        RegressionDataset::gaussian(x, y, None).unwrap()
    }

    #[test]
    fn scalar_conjugacy() {
        let ds = RegressionDataset::gaussian(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 2.0), None).unwrap();
        let c = DatasetCollection::new(vec![ds]).unwrap();
        let post = posterior_gaussian(&c, &TaskCovariance::identity(1), &NoiseModel::shared(1.0, 1).unwrap(), &SolverOptions::default())
            .unwrap();
        assert_relative_eq!(post.mean.values()[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(post.covariate_blocks[0][(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn flat_prior_recovers_least_squares() {
        let c = DatasetCollection::new(vec![orthogonal_dataset(&[1.0, -2.0, 0.5], 2.0), orthogonal_dataset(&[0.3, 0.1, 4.0], 2.0)])
            .unwrap();
        let sigma = TaskCovariance::scaled_identity(2, 1e12).unwrap();
        let post = posterior_gaussian(&c, &sigma, &NoiseModel::shared(1.0, 2).unwrap(), &SolverOptions::default()).unwrap();
        let ls = crate::model::least_squares(&c).unwrap();
        assert_relative_eq!(post.mean.values(), ls.values(), max_relative = 1e-6);
    }

    #[test]
    fn zero_data_gives_zero_mean_and_zero_prior_short_circuits() {
        let ds = orthogonal_dataset(&[0.0, 0.0], 1.0);
        let c = DatasetCollection::new(vec![ds.clone(), ds]).unwrap();
        let noise = NoiseModel::shared(1.0, 2).unwrap();
        let post = posterior_gaussian(&c, &TaskCovariance::identity(2), &noise, &SolverOptions::default()).unwrap();
        assert_eq!(post.mean.values(), &DMatrix::zeros(2, 2));
        let c2 = DatasetCollection::new(vec![orthogonal_dataset(&[1.0, 2.0], 1.0), orthogonal_dataset(&[1.0, 2.0], 1.0)]).unwrap();
        let post = posterior_gaussian(&c2, &TaskCovariance::new(DMatrix::zeros(2, 2)).unwrap(), &noise, &SolverOptions::default())
            .unwrap();
        assert_eq!(post.mean.values(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn orthogonal_closed_form_examples() {
        let b = EffectsMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5])).unwrap();
        let zero = posterior_mean_orthogonal(&b, &TaskCovariance::new(DMatrix::zeros(2, 2)).unwrap(), 1.0).unwrap();
        assert_relative_eq!(zero.values(), &DMatrix::zeros(2, 2), epsilon = 1e-15);
        let half = posterior_mean_orthogonal(&b, &TaskCovariance::identity(2), 1.0).unwrap();
        assert_relative_eq!(half.values(), &(b.values() / 2.0), epsilon = 1e-15);
    }

    #[test]
    fn blocks_match_full_covariance() {
        let x1 = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 0.3, 1.0, -0.5, 0.4, 0.7, -0.1]);
        let x2 = DMatrix::from_row_slice(5, 2, &[0.4, 1.0, 1.1, 0.2, -0.3, 0.8, 0.9, 0.9, 0.1, -0.6]);
        let c = DatasetCollection::new(vec![
            RegressionDataset::gaussian(x1, DVector::from_vec(vec![1.0, 0.5, -0.2, 0.3]), None).unwrap(),
            RegressionDataset::gaussian(x2, DVector::from_vec(vec![0.1, 0.4, 1.2, -0.7, 0.2]), None).unwrap(),
        ])
        .unwrap();
        let sigma = TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0])).unwrap();
        let noise = NoiseModel::new(vec![0.5, 1.5], crate::model::NoiseSource::UserSupplied).unwrap();
        let post = posterior_gaussian(&c, &sigma, &noise, &SolverOptions::default()).unwrap();
        let v = post.full_covariance.as_ref().unwrap();
        for k in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    assert!((post.covariate_blocks[k][(a, b)] - v[(a * 2 + k, b * 2 + k)]).abs() <= 1e-12);
                }
            }
        }
        let opts = SolverOptions {
            mode: SolverMode::Cg,
            cg_covariate_blocks: true,
            cg_rel_tolerance: 1e-13,
            ..SolverOptions::default()
        };
        let cg = posterior_gaussian(&c, &sigma, &noise, &opts).unwrap();
        assert_relative_eq!(cg.mean.values(), post.mean.values(), max_relative = 1e-10);
        for k in 0..2 {
            assert_relative_eq!(&cg.covariate_blocks[k], &post.covariate_blocks[k], max_relative = 1e-9);
        }
    }

    #[test]
    fn cg_zero_iterations_from_exact_start() {
        let c = DatasetCollection::new(vec![orthogonal_dataset(&[1.0, 2.0, 3.0], 2.0), orthogonal_dataset(&[-1.0, 0.0, 1.0], 3.0)])
            .unwrap();
        let sigma = TaskCovariance::new(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))).unwrap();
        let noise = NoiseModel::shared(1.0, 2).unwrap();
        let opts = SolverOptions {
            mode: SolverMode::Cg,
            ..SolverOptions::default()
        };
        let sol = posterior_mean_cg(&c, &sigma, &noise, &opts).unwrap();
        assert_eq!(sol.iterations, 0);
    }
}
