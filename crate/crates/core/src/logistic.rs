//! Logistic regression across datasets with a shared task covariance Σ.
//!
//! MAP estimation by damped Newton, a Laplace approximation of the posterior,
//! and an approximate EM over Σ built on that approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EmTrace;
use crate::linalg::{symmetrize, SpdFactor};
use crate::model::{DatasetCollection, EffectsMatrix, ResponseKind, TaskCovariance};
use crate::posterior::{extract_blocks, prepare_prior, vec_of, PreparedPrior, AUTO_DENSE_LIMIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Converged when ‖∇‖ ≤ gradient_tolerance · max(1, ‖β‖).
    pub gradient_tolerance: f64,
    pub max_newton_iterations: usize,
    pub step_halving_max: usize,
    /// Jitter policy for Σ, as in the linear posterior.
    pub jitter_scale: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-10,
            max_newton_iterations: 100,
            step_halving_max: 30,
            jitter_scale: 1e-10,
        }
    }
}

impl NewtonOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) || self.max_newton_iterations == 0 || self.step_halving_max == 0 {
            return Err(Error::InvalidArgument("Newton options must all be positive".into()));
        }
        Ok(())
    }
}

/// Logistic function evaluated without overflow for any finite input.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^t) without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Log posterior pieces at a point.
struct Evaluation {
    value: f64,
    log_likelihood: f64,
    gradient: DMatrix<f64>,
    weights: Vec<DVector<f64>>,
}

struct Problem<'a> {
    collection: &'a DatasetCollection,
    sigma_inv: DMatrix<f64>,
    /// ln|Σ| of the (possibly jittered) prior covariance.
    sigma_log_det: f64,
}

impl<'a> Problem<'a> {
    fn new(collection: &'a DatasetCollection, sigma: &TaskCovariance, jitter_scale: f64) -> Result<Self> {
        collection.require_kind(ResponseKind::Binary)?;
        if sigma.dim() != collection.task_count() {
            return Err(Error::Shape(format!(
                "Σ is {0}x{0} for {1} datasets",
                sigma.dim(),
                collection.task_count()
            )));
        }
        match prepare_prior(sigma, jitter_scale)? {
            PreparedPrior::Zero => Err(Error::InvalidArgument(
                "Σ = 0 makes the log posterior degenerate; use a positive definite Σ".into(),
            )),
            PreparedPrior::Regular { sigma, inverse } => Ok(Self {
                collection,
                sigma_inv: inverse,
                sigma_log_det: SpdFactor::new(&sigma)?.log_det(),
            }),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.collection.covariate_count(), self.collection.task_count())
    }

    fn value(&self, beta: &DMatrix<f64>) -> f64 {
        let mut ll = 0.0;
        for (q, ds) in self.collection.datasets().iter().enumerate() {
            let t = ds.design() * beta.column(q);
            for (ti, yi) in t.iter().zip(ds.responses().iter()) {
                ll += yi * ti - softplus(*ti);
            }
        }
        ll - 0.5 * (beta * &self.sigma_inv).component_mul(beta).sum()
    }

    fn evaluate(&self, beta: &DMatrix<f64>) -> Evaluation {
        let (d, q) = self.dims();
        let mut ll = 0.0;
        let mut gradient = -(beta * &self.sigma_inv);
        let mut weights = Vec::with_capacity(q);
        for (k, ds) in self.collection.datasets().iter().enumerate() {
            let t = ds.design() * beta.column(k);
            let mut resid = DVector::zeros(t.len());
            let mut w = DVector::zeros(t.len());
            for i in 0..t.len() {
                let y = ds.responses()[i];
                ll += y * t[i] - softplus(t[i]);
                let p = sigmoid(t[i]);
                resid[i] = y - p;
                w[i] = p * (1.0 - p);
            }
            let g = ds.design().tr_mul(&resid);
            let mut col = gradient.column_mut(k);
            col += g;
            weights.push(w);
        }
        debug_assert_eq!(gradient.nrows(), d);
        let prior = 0.5 * (beta * &self.sigma_inv).component_mul(beta).sum();
        Evaluation {
            value: ll - prior,
            log_likelihood: ll,
            gradient,
            weights,
        }
    }

    /// Negative Hessian blockdiag(X^{q⊤}W_qX^q) + Σ^{-1} ⊗ I_D.
    fn negative_hessian(&self, weights: &[DVector<f64>]) -> DMatrix<f64> {
        let (d, q) = self.dims();
        let mut h = DMatrix::zeros(d * q, d * q);
        for (k, ds) in self.collection.datasets().iter().enumerate() {
            let mut wx = ds.design().clone();
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row *= weights[k][i];
            }
            let block = ds.design().tr_mul(&wx);
            h.view_mut((k * d, k * d), (d, d)).copy_from(&block);
        }
        for a in 0..q {
            for b in 0..q {
                let s = self.sigma_inv[(a, b)];
                for i in 0..d {
                    h[(a * d + i, b * d + i)] += s;
                }
            }
        }
        symmetrize(&h)
    }
}

fn map_with_problem(problem: &Problem<'_>, init: &DMatrix<f64>, options: &NewtonOptions) -> Result<(DMatrix<f64>, Evaluation)> {
    let (d, q) = problem.dims();
    let mut beta = init.clone();
    for iteration in 0..=options.max_newton_iterations {
        let ev = problem.evaluate(&beta);
        if !ev.value.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        let gnorm = ev.gradient.norm();
        if gnorm <= options.gradient_tolerance * beta.norm().max(1.0) {
            return Ok((beta, ev));
        }
        if iteration == options.max_newton_iterations {
            return Err(Error::NewtonNotConverged {
                iterations: iteration,
                gradient_norm: gnorm,
            });
        }
        let h = problem.negative_hessian(&ev.weights);
        let chol = SpdFactor::new(&h).map_err(|_| Error::Singular("negative Hessian is not positive definite".into()))?;
        let step = DMatrix::from_column_slice(d, q, chol.solve_vec(&vec_of(&ev.gradient)).as_slice());
        let slack = 1e-13 * ev.value.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=options.step_halving_max {
            let candidate = &beta + &step * scale;
            let value = problem.value(&candidate);
            if value.is_finite() && value >= ev.value - slack {
                beta = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonNotConverged {
                iterations: iteration,
                gradient_norm: gnorm,
            });
        }
    }
    unreachable!("loop returns on its final iteration")
}

fn check_init(collection: &DatasetCollection, init: &EffectsMatrix) -> Result<()> {
    if init.covariate_count() != collection.covariate_count() || init.task_count() != collection.task_count() {
        return Err(Error::Shape(format!(
            "initial effects are {}x{}, expected {}x{}",
            init.covariate_count(),
            init.task_count(),
            collection.covariate_count(),
            collection.task_count()
        )));
    }
    Ok(())
}

/// Maximum a posteriori effects under the Gaussian prior with task covariance Σ.
pub fn map_newton(
    collection: &DatasetCollection,
    sigma: &TaskCovariance,
    init: &EffectsMatrix,
    options: &NewtonOptions,
) -> Result<EffectsMatrix> {
    options.validate()?;
    check_init(collection, init)?;
    let problem = Problem::new(collection, sigma, options.jitter_scale)?;
    let (beta, _) = map_with_problem(&problem, init.values(), options)?;
    EffectsMatrix::new(beta)
}

/// Log posterior (up to a constant), its gradient and the negative Hessian at β.
///
/// Exposed for derivative checks.
pub fn log_posterior_derivatives(
    collection: &DatasetCollection,
    sigma: &TaskCovariance,
    beta: &EffectsMatrix,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    check_init(collection, beta)?;
    let problem = Problem::new(collection, sigma, 0.0)?;
    let ev = problem.evaluate(beta.values());
    let h = problem.negative_hessian(&ev.weights);
    Ok((ev.value, ev.gradient, h))
}

/// Laplace approximation at the MAP.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceApproximation {
    pub mean: EffectsMatrix,
    pub covariate_blocks: Vec<DMatrix<f64>>,
    /// log p(Y | μ*) + log p(μ* | Σ) + (DQ/2) ln 2π − ½ ln|H|.
    pub log_marginal_approx: f64,
}

fn laplace_with_problem(problem: &Problem<'_>, init: &DMatrix<f64>, options: &NewtonOptions) -> Result<LaplaceApproximation> {
    let (d, q) = problem.dims();
    let (mean, ev) = map_with_problem(problem, init, options)?;
    let h = problem.negative_hessian(&ev.weights);
    let chol = SpdFactor::new(&h).map_err(|_| Error::Singular("negative Hessian is not positive definite at the MAP".into()))?;
    let blocks = if d * q <= AUTO_DENSE_LIMIT {
        extract_blocks(&chol.inverse(), d, q)
    } else {
        let mut blocks = Vec::with_capacity(d);
        for k in 0..d {
            let mut e = DMatrix::zeros(d * q, q);
            for a in 0..q {
                e[(a * d + k, a)] = 1.0;
            }
            let x = chol.solve(&e);
            blocks.push(symmetrize(&DMatrix::from_fn(q, q, |a, b| x[(a * d + k, b)])));
        }
        blocks
    };
    let prior_quad = (&mean * &problem.sigma_inv).component_mul(&mean).sum();
    let log_marginal_approx =
        ev.log_likelihood - 0.5 * prior_quad - 0.5 * d as f64 * problem.sigma_log_det - 0.5 * chol.log_det();
    Ok(LaplaceApproximation {
        mean: EffectsMatrix::new(mean)?,
        covariate_blocks: blocks,
        log_marginal_approx,
    })
}

/// MAP point and per-covariate blocks of the inverse negative Hessian.
pub fn laplace_estep(
    collection: &DatasetCollection,
    sigma: &TaskCovariance,
    options: &NewtonOptions,
) -> Result<LaplaceApproximation> {
    options.validate()?;
    let problem = Problem::new(collection, sigma, options.jitter_scale)?;
    let (d, q) = problem.dims();
    laplace_with_problem(&problem, &DMatrix::zeros(d, q), options)
}

/// Result of the approximate EM.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticEmOutcome {
    pub sigma: TaskCovariance,
    pub trace: EmTrace,
    /// MAP effects at the returned Σ.
    pub mean: EffectsMatrix,
}

/// Approximate EM over Σ with Laplace E-steps, warm-started at the previous MAP.
///
/// Stops when ‖Σ^{(t+1)} − Σ^{(t)}‖_F / ‖Σ^{(t)}‖_F < rel_tolerance. The
/// recorded objective is the Laplace approximation and need not be monotone.
pub fn em_fit_logistic(
    collection: &DatasetCollection,
    init: &TaskCovariance,
    max_iterations: usize,
    rel_tolerance: f64,
    newton_options: &NewtonOptions,
) -> Result<(TaskCovariance, EmTrace)> {
    let out = em_logistic_full(collection, init, max_iterations, rel_tolerance, newton_options)?;
    Ok((out.sigma, out.trace))
}

pub fn em_logistic_full(
    collection: &DatasetCollection,
    init: &TaskCovariance,
    max_iterations: usize,
    rel_tolerance: f64,
    newton_options: &NewtonOptions,
) -> Result<LogisticEmOutcome> {
    newton_options.validate()?;
    collection.require_kind(ResponseKind::Binary)?;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    let mut sigma = init.clone();
    let mut warm = DMatrix::zeros(d, q);
    let mut trace = EmTrace {
        sigma_iterates: Vec::new(),
        log_marginal_likelihoods: Vec::new(),
        converged: false,
        iterations: 0,
    };
    loop {
        let problem = Problem::new(collection, &sigma, newton_options.jitter_scale)?;
        let lap = laplace_with_problem(&problem, &warm, newton_options)?;
        trace.sigma_iterates.push(sigma.matrix().clone());
        trace.log_marginal_likelihoods.push(lap.log_marginal_approx);
        if trace.converged || trace.iterations >= max_iterations {
            return Ok(LogisticEmOutcome {
                sigma,
                trace,
                mean: lap.mean,
            });
        }
        let mu = lap.mean.values();
        let mut next = mu.tr_mul(mu);
        for v in &lap.covariate_blocks {
            next += v;
        }
        let next = TaskCovariance::new(symmetrize(&(next / d as f64)))?;
        let change = (next.matrix() - sigma.matrix()).norm() / sigma.matrix().norm().max(f64::MIN_POSITIVE);
        warm = mu.clone();
        sigma = next;
        trace.iterations += 1;
        if change < rel_tolerance {
            trace.converged = true;
        }
    }
}

/// Probabilities σ(X β^q) for one task.
pub fn predict_proba(beta: &EffectsMatrix, design: &DMatrix<f64>, task_index: usize) -> Result<DVector<f64>> {
    if task_index >= beta.task_count() {
        return Err(Error::InvalidArgument(format!(
            "task index {task_index} out of range for {} tasks",
            beta.task_count()
        )));
    }
    if design.ncols() != beta.covariate_count() {
        return Err(Error::Shape(format!(
            "design has {} columns, effects have {} rows",
            design.ncols(),
            beta.covariate_count()
        )));
    }
    let t = design * beta.values().column(task_index);
    Ok(t.map(sigmoid))
}
