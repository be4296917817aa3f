//! Monte Carlo checks of the risk and gain results under orthogonal design.
//!
//! With X^{q⊤}X^q/σ_q² = I/σ² for every dataset, β̂_LS = β + σε with ε iid
//! standard normal, so every check samples that sufficient statistic directly.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv, sym_eigen_desc, SpdFactor};
use crate::model::{EffectsMatrix, TaskCovariance};
use crate::rng::{random_orthonormal_columns, standard_normal_matrix, substream};
use crate::table::Table;

/// Estimators with closed forms under orthogonal design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskEstimator {
    Ls,
    EcovMm,
    EcovMle,
    EdataMm,
    Id,
}

impl RiskEstimator {
    pub fn name(self) -> &'static str {
        match self {
            RiskEstimator::Ls => "ls",
            RiskEstimator::EcovMm => "ecov_mm",
            RiskEstimator::EcovMle => "ecov_mle",
            RiskEstimator::EdataMm => "edata_mm",
            RiskEstimator::Id => "id",
        }
    }

    /// Rejects (D, Q) combinations where the estimator is undefined or has infinite risk by convention.
    pub fn check_regime(self, d: usize, q: usize) -> Result<()> {
        match self {
            RiskEstimator::Ls => Ok(()),
            RiskEstimator::EcovMm if d < q => Err(Error::InfiniteRisk(format!(
                "moment-based ECov estimator needs D >= Q (got D={d}, Q={q})"
            ))),
            RiskEstimator::EcovMle if d <= q => Err(Error::Regime(format!(
                "closed-form maximum likelihood needs D > Q (got D={d}, Q={q})"
            ))),
            RiskEstimator::EdataMm if d > q => Err(Error::InfiniteRisk(format!(
                "moment-based EData estimator needs D <= Q (got D={d}, Q={q})"
            ))),
            RiskEstimator::Id if d <= 1 => Err(Error::Regime(format!(
                "per-dataset shrinkage needs D > 1 (got D={d})"
            ))),
            _ => Ok(()),
        }
    }
}

/// β̂ − σ²D β̂^{†⊤}.
pub fn ecov_mm_orthogonal(beta_ls: &DMatrix<f64>, shared_variance: f64) -> DMatrix<f64> {
    let d = beta_ls.nrows() as f64;
    beta_ls - pinv(beta_ls).transpose() * (shared_variance * d)
}

/// β̂ − σ²Q β̂^{†⊤}.
pub fn edata_mm_orthogonal(beta_ls: &DMatrix<f64>, shared_variance: f64) -> DMatrix<f64> {
    let q = beta_ls.ncols() as f64;
    beta_ls - pinv(beta_ls).transpose() * (shared_variance * q)
}

/// Positive-part shrinkage β̂ U diag((1 − σ²D/λ)_+) Uᵀ from the eigen-decomposition of β̂ᵀβ̂.
pub fn ecov_mle_orthogonal(beta_ls: &DMatrix<f64>, shared_variance: f64) -> DMatrix<f64> {
    let d = beta_ls.nrows() as f64;
    let (lambda, u) = sym_eigen_desc(&beta_ls.tr_mul(beta_ls));
    let q = lambda.len();
    let f: Vec<f64> = lambda
        .iter()
        .map(|&l| if l > 0.0 { (1.0 - shared_variance * d / l).max(0.0) } else { 0.0 })
        .collect();
    let m = DMatrix::from_fn(q, q, |i, j| u[(i, j)] * f[j]) * u.transpose();
    beta_ls * m
}

/// Per-column positive-part shrinkage (the Q = 1 closed form applied to each dataset).
pub fn id_orthogonal(beta_ls: &DMatrix<f64>, shared_variance: f64) -> DMatrix<f64> {
    let d = beta_ls.nrows() as f64;
    let mut out = beta_ls.clone();
    for mut col in out.column_iter_mut() {
        let l = col.norm_squared();
        let f = if l > 0.0 { (1.0 - shared_variance * d / l).max(0.0) } else { 0.0 };
        col *= f;
    }
    out
}

fn apply(kind: RiskEstimator, beta_ls: &DMatrix<f64>, s2: f64) -> DMatrix<f64> {
    match kind {
        RiskEstimator::Ls => beta_ls.clone(),
        RiskEstimator::EcovMm => ecov_mm_orthogonal(beta_ls, s2),
        RiskEstimator::EcovMle => ecov_mle_orthogonal(beta_ls, s2),
        RiskEstimator::EdataMm => edata_mm_orthogonal(beta_ls, s2),
        RiskEstimator::Id => id_orthogonal(beta_ls, s2),
    }
}

/// Mean and standard error of the mean (n − 1 denominator).
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of a frequentist risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub estimator_kind: RiskEstimator,
    pub mean_loss: f64,
    pub sem: f64,
    pub replicates: usize,
}

fn check_common(shared_variance: f64, replicates: usize, min_replicates: usize) -> Result<()> {
    if !(shared_variance.is_finite() && shared_variance > 0.0) {
        return Err(Error::InvalidArgument(format!("shared variance must be positive, got {shared_variance}")));
    }
    if replicates < min_replicates {
        return Err(Error::InvalidArgument(format!(
            "at least {min_replicates} replicates are required, got {replicates}"
        )));
    }
    Ok(())
}

fn draw(beta: &DMatrix<f64>, sd: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    beta + standard_normal_matrix(rng, beta.nrows(), beta.ncols()) * sd
}

/// Per-replicate losses for several estimators on common random numbers.
///
/// Replicate r uses stream r of the family keyed by `seed`, so results are
/// identical for any thread count.
pub fn paired_losses(
    kinds: &[RiskEstimator],
    beta_true: &DMatrix<f64>,
    shared_variance: f64,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (d, q) = beta_true.shape();
    for k in kinds {
        k.check_regime(d, q)?;
    }
    let sd = shared_variance.sqrt();
    let per_rep: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[0x5249_534b], r);
            let b = draw(beta_true, sd, &mut rng);
            kinds
                .iter()
                .map(|&k| (apply(k, &b, shared_variance) - beta_true).norm_squared())
                .collect()
        })
        .collect();
    Ok((0..kinds.len())
        .map(|j| per_rep.iter().map(|row| row[j]).collect())
        .collect())
}

/// Frequentist risk E‖β̂ − β‖²_F by Monte Carlo.
pub fn mc_risk(
    estimator_kind: RiskEstimator,
    beta_true: &EffectsMatrix,
    shared_variance: f64,
    replicates: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_common(shared_variance, replicates, 100)?;
    let losses = paired_losses(&[estimator_kind], beta_true.values(), shared_variance, replicates, seed)?;
    let (mean_loss, sem) = mean_sem(&losses[0]);
    Ok(RiskEstimate {
        estimator_kind,
        mean_loss,
        sem,
        replicates,
    })
}

/// Which closed-form risk identity to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentitySide {
    /// σ²DQ − σ⁴D(D−2−2Q)E‖β̂^†‖² for the ECov moment estimator.
    Ecov,
    /// σ²DQ − σ⁴Q(Q−2−2D)E‖β̂^†‖² for the EData moment estimator.
    Edata,
}

/// Both sides of a risk identity estimated from one sample stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskIdentityReport {
    pub side: IdentitySide,
    pub covariates: usize,
    pub tasks: usize,
    pub replicates: usize,
    pub empirical_loss_mean: f64,
    pub empirical_loss_sem: f64,
    pub formula_mean: f64,
    pub formula_sem: f64,
    pub discrepancy: f64,
    /// sqrt(sem_left² + sem_right²).
    pub combined_sem: f64,
    /// SEM of the per-replicate differences.
    pub paired_sem: f64,
    pub within_three_sem: bool,
}

/// Paired check of the closed-form risk of a moment estimator.
pub fn risk_identity_check(
    beta_true: &EffectsMatrix,
    shared_variance: f64,
    side: IdentitySide,
    replicates: usize,
    seed: u64,
) -> Result<RiskIdentityReport> {
    check_common(shared_variance, replicates, 2)?;
    let (d, q) = (beta_true.covariate_count(), beta_true.task_count());
    let (small, large) = match side {
        IdentitySide::Ecov => (q, d),
        IdentitySide::Edata => (d, q),
    };
    if large <= small + 1 {
        return Err(Error::InfiniteRisk(format!(
            "infinite-risk regime: need {} > {} + 1 (got D={d}, Q={q})",
            if side == IdentitySide::Ecov { "D" } else { "Q" },
            if side == IdentitySide::Ecov { "Q" } else { "D" }
        )));
    }
    let kind = match side {
        IdentitySide::Ecov => RiskEstimator::EcovMm,
        IdentitySide::Edata => RiskEstimator::EdataMm,
    };
    let (l, s) = (large as f64, small as f64);
    let s2 = shared_variance;
    let sd = s2.sqrt();
    let beta = beta_true.values();
    let pairs: Vec<(f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[0x4c45_4d32], r);
            let b = draw(beta, sd, &mut rng);
            let loss = (apply(kind, &b, s2) - beta).norm_squared();
            let gram = match side {
                IdentitySide::Ecov => b.tr_mul(&b),
                IdentitySide::Edata => &b * b.transpose(),
            };
            // ‖β̂^†‖²_F = tr((β̂ᵀβ̂)^{-1}) for a full-rank tall β̂ (and its transpose for EData).
            let pinv_sq = SpdFactor::new(&gram).map(|f| f.inverse().trace()).unwrap_or(f64::INFINITY);
            let formula = s2 * l * s - s2 * s2 * l * (l - 2.0 - 2.0 * s) * pinv_sq;
            (loss, formula)
        })
        .collect();
    let left: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (lm, ls) = mean_sem(&left);
    let (rm, rs) = mean_sem(&right);
    let (_, ps) = mean_sem(&diffs);
    let combined = (ls * ls + rs * rs).sqrt();
    Ok(RiskIdentityReport {
        side,
        covariates: d,
        tasks: q,
        replicates,
        empirical_loss_mean: lm,
        empirical_loss_sem: ls,
        formula_mean: rm,
        formula_sem: rs,
        discrepancy: lm - rm,
        combined_sem: combined,
        paired_sem: ps,
        within_three_sem: (lm - rm).abs() <= 3.0 * combined,
    })
}

/// One paired comparison: mean of loss(worse) − loss(better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub name: String,
    pub beta_index: usize,
    pub mean_difference: f64,
    pub paired_sem: f64,
    /// mean_difference > 3 · paired_sem.
    pub holds: bool,
}

/// Comparisons run by [`dominance_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// loss(ls) − loss(ecov_mm) > 0, needs D > 2Q + 2.
    EcovMmBeatsLs,
    /// loss(ecov_mm) − loss(ecov_mle) > 0, needs D > Q + 1.
    PositivePart,
    /// loss(edata_mm) − loss(ls) > 0, needs Q/2 − 1 < D ≤ Q.
    LsBeatsEdataMm,
    /// loss(ls) − loss(edata_mm) > 0, needs D < Q/2 − 1.
    EdataMmBeatsLs,
}

impl Claim {
    pub fn name(self) -> &'static str {
        match self {
            Claim::EcovMmBeatsLs => "ls_minus_ecov_mm",
            Claim::PositivePart => "ecov_mm_minus_ecov_mle",
            Claim::LsBeatsEdataMm => "edata_mm_minus_ls",
            Claim::EdataMmBeatsLs => "ls_minus_edata_mm",
        }
    }

    pub fn applies(self, d: usize, q: usize) -> bool {
        let (df, qf) = (d as f64, q as f64);
        match self {
            Claim::EcovMmBeatsLs => d > 2 * q + 2,
            Claim::PositivePart => d > q + 1,
            Claim::LsBeatsEdataMm => df > qf / 2.0 - 1.0 && d <= q,
            Claim::EdataMmBeatsLs => df < qf / 2.0 - 1.0,
        }
    }

    fn pair(self) -> (RiskEstimator, RiskEstimator) {
        match self {
            Claim::EcovMmBeatsLs => (RiskEstimator::Ls, RiskEstimator::EcovMm),
            Claim::PositivePart => (RiskEstimator::EcovMm, RiskEstimator::EcovMle),
            Claim::LsBeatsEdataMm => (RiskEstimator::EdataMm, RiskEstimator::Ls),
            Claim::EdataMmBeatsLs => (RiskEstimator::Ls, RiskEstimator::EdataMm),
        }
    }

    pub const ALL: [Claim; 4] = [Claim::EcovMmBeatsLs, Claim::PositivePart, Claim::LsBeatsEdataMm, Claim::EdataMmBeatsLs];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub covariates: usize,
    pub tasks: usize,
    pub replicates: usize,
    pub comparisons: Vec<PairedComparison>,
}

impl DominanceReport {
    pub fn all_hold(&self) -> bool {
        self.comparisons.iter().all(|c| c.holds)
    }
}

/// Paired Monte Carlo dominance comparisons for every β in the grid.
///
/// `claims` selects the comparisons; those whose (D, Q) regime does not apply
/// are skipped, and an error is raised if none applies.
pub fn dominance_check(
    beta_grid: &[EffectsMatrix],
    d: usize,
    q: usize,
    shared_variance: f64,
    replicates: usize,
    seed: u64,
    claims: &[Claim],
) -> Result<DominanceReport> {
    check_common(shared_variance, replicates, 2)?;
    let active: Vec<Claim> = claims.iter().copied().filter(|c| c.applies(d, q)).collect();
    if active.is_empty() {
        return Err(Error::Regime(format!("no requested dominance claim applies at D={d}, Q={q}")));
    }
    let mut kinds: Vec<RiskEstimator> = Vec::new();
    for c in &active {
        let (a, b) = c.pair();
        for k in [a, b] {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
    }
    let mut comparisons = Vec::new();
    for (i, beta) in beta_grid.iter().enumerate() {
        if beta.covariate_count() != d || beta.task_count() != q {
            return Err(Error::Shape(format!("grid entry {i} is not {d}x{q}")));
        }
        let losses = paired_losses(&kinds, beta.values(), shared_variance, replicates, seed.wrapping_add(i as u64))?;
        for c in &active {
            let (worse, better) = c.pair();
            let wi = kinds.iter().position(|&k| k == worse).expect("kind present");
            let bi = kinds.iter().position(|&k| k == better).expect("kind present");
            let diffs: Vec<f64> = losses[wi].iter().zip(&losses[bi]).map(|(w, b)| w - b).collect();
            let (mean, sem) = mean_sem(&diffs);
            comparisons.push(PairedComparison {
                name: c.name().to_string(),
                beta_index: i,
                mean_difference: mean,
                paired_sem: sem,
                holds: mean > 3.0 * sem,
            });
        }
    }
    Ok(DominanceReport {
        covariates: d,
        tasks: q,
        replicates,
        comparisons,
    })
}

/// The β grid {0, unit Frobenius norm, iid N(0, 100²)} used by the dominance checks.
pub fn standard_beta_grid(d: usize, q: usize, seed: u64) -> Vec<EffectsMatrix> {
    let mut rng = substream(seed, &[0x4752_4944], 0);
    let unit = standard_normal_matrix(&mut rng, d, q);
    let unit = &unit / unit.norm();
    let big = standard_normal_matrix(&mut rng, d, q) * 100.0;
    vec![
        EffectsMatrix::zeros(d, q),
        EffectsMatrix::new(unit).expect("finite"),
        EffectsMatrix::new(big).expect("finite"),
    ]
}

/// Asymptotic gain of joint over per-dataset estimation, with its bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    #[serde(skip)]
    pub effect_covariance: DMatrix<f64>,
    pub shared_variance: f64,
    pub eigenvalues_desc: Vec<f64>,
    pub diagonals_desc: Vec<f64>,
    pub gain: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// (4κ²λ_min/σ², 4κ²σ²/λ_min); +∞ when λ_min = 0.
    pub snr_upper_bounds: (f64, f64),
    /// λ_max / λ_min; +∞ when λ_min = 0.
    pub condition_number: f64,
    pub majorization_holds: bool,
}

/// Gain σ²Q^{-1}[Σ(λ_q + σ²)^{-1} − Σ(Σ̃_qq + σ²)^{-1}] and its bounds.
pub fn gain(effect_covariance: &TaskCovariance, shared_variance: f64) -> Result<GainReport> {
    check_common(shared_variance, 2, 2)?;
    let m = effect_covariance.matrix();
    let q = m.nrows();
    let mut diag: Vec<f64> = (0..q).map(|i| m[(i, i)]).collect();
    diag.sort_by(|a, b| b.total_cmp(a));
    let is_diagonal = (0..q).all(|i| (0..q).all(|j| i == j || m[(i, j)] == 0.0));
    let eig: Vec<f64> = if is_diagonal {
        diag.clone()
    } else {
        sym_eigen_desc(m).0.into_iter().map(|v| v.max(0.0)).collect()
    };
    let s2 = shared_variance;
    let qf = q as f64;
    let gain = s2 / qf * (eig.iter().map(|l| 1.0 / (l + s2)).sum::<f64>() - diag.iter().map(|l| 1.0 / (l + s2)).sum::<f64>());
    let gap = eig.iter().zip(&diag).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let lnorm = eig.iter().map(|l| l * l).sum::<f64>().sqrt();
    let lmin = eig[q - 1];
    let lmax = eig[0];
    let upper_bound = 2.0 * s2 / qf * lnorm * gap / (lmin + s2).powi(3);
    let lower_bound = s2 / qf * gap * gap / (lmax + s2).powi(3);
    let (condition_number, snr_upper_bounds) = if lmin > 0.0 {
        let k = lmax / lmin;
        (k, (4.0 * k * k * lmin / s2, 4.0 * k * k * s2 / lmin))
    } else {
        (f64::INFINITY, (f64::INFINITY, f64::INFINITY))
    };
    let total_tol = 1e-10 * diag.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let mut majorization_holds = true;
    let (mut se, mut sd) = (0.0, 0.0);
    for i in 0..q {
        se += eig[i];
        sd += diag[i];
        if se < sd - total_tol {
            majorization_holds = false;
        }
    }
    if (se - sd).abs() > total_tol {
        majorization_holds = false;
    }
    Ok(GainReport {
        effect_covariance: m.clone(),
        shared_variance: s2,
        eigenvalues_desc: eig,
        diagonals_desc: diag,
        gain,
        lower_bound,
        upper_bound,
        snr_upper_bounds,
        condition_number,
        majorization_holds,
    })
}

/// Normalized Bayes-risk gap at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub dimension: usize,
    pub normalized_gap: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConvergenceReport {
    pub trajectory: Vec<GainPoint>,
    pub asymptotic_gain: f64,
    pub terminal_gap: f64,
    pub terminal_sem: f64,
    /// |terminal_gap − gain| / gain (NaN when gain = 0).
    pub terminal_relative_error: f64,
    pub replicates: usize,
}

/// (σ²DQ)^{-1}[loss(id) − loss(ecov_mle)] averaged over β_d iid N(0, Σ̃), for each D.
pub fn gain_convergence_check(
    effect_covariance: &TaskCovariance,
    shared_variance: f64,
    dims: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<GainConvergenceReport> {
    check_common(shared_variance, replicates, 2)?;
    let q = effect_covariance.dim();
    if dims.is_empty() || dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("dims must be non-empty and strictly increasing".into()));
    }
    if let Some(&d) = dims.iter().find(|&&d| d <= q + 1) {
        return Err(Error::Regime(format!("every D must exceed Q + 1 (got D={d}, Q={q})")));
    }
    let root = crate::linalg::sym_apply(effect_covariance.matrix(), |l| l.max(0.0).sqrt());
    let s2 = shared_variance;
    let sd = s2.sqrt();
    let mut trajectory = Vec::with_capacity(dims.len());
    for &d in dims {
        let norm = s2 * (d * q) as f64;
        let gaps: Vec<f64> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(seed, &[0x4741_494e, d as u64], r);
                let beta = standard_normal_matrix(&mut rng, d, q) * &root;
                let b = draw(&beta, sd, &mut rng);
                let id = (id_orthogonal(&b, s2) - &beta).norm_squared();
                let ecov = (ecov_mle_orthogonal(&b, s2) - &beta).norm_squared();
                (id - ecov) / norm
            })
            .collect();
        let (m, s) = mean_sem(&gaps);
        trajectory.push(GainPoint {
            dimension: d,
            normalized_gap: m,
            sem: s,
        });
    }
    let g = gain(effect_covariance, s2)?.gain;
    let last = trajectory.last().expect("non-empty dims").clone();
    Ok(GainConvergenceReport {
        asymptotic_gain: g,
        terminal_gap: last.normalized_gap,
        terminal_sem: last.sem,
        terminal_relative_error: if g != 0.0 { (last.normalized_gap - g).abs() / g.abs() } else { f64::NAN },
        trajectory,
        replicates,
    })
}

/// Random PSD matrix Σ̃ = U diag(λ) Uᵀ with log-uniform λ in [1e-2, 1e2] (one eigenvalue zero with probability 1/10).
pub fn random_psd(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
    use rand::Rng;
    let u = random_orthonormal_columns(rng, q, q);
    let zero_one: bool = rng.random_bool(0.1);
    let lam: Vec<f64> = (0..q)
        .map(|i| if zero_one && i == 0 { 0.0 } else { 10f64.powf(rng.random_range(-2.0..2.0)) })
        .collect();
    let m = DMatrix::from_fn(q, q, |i, j| u[(i, j)] * lam[j]) * u.transpose();
    crate::linalg::symmetrize(&m)
}

impl RiskIdentityReport {
    pub fn to_table(&self) -> Table {
        Table::new(
            &["side", "d", "q", "replicates", "empirical_loss", "empirical_sem", "formula", "formula_sem", "discrepancy", "combined_sem", "paired_sem", "within_three_sem"],
            vec![vec![
                format!("{:?}", self.side).to_lowercase(),
                self.covariates.to_string(),
                self.tasks.to_string(),
                self.replicates.to_string(),
                self.empirical_loss_mean.to_string(),
                self.empirical_loss_sem.to_string(),
                self.formula_mean.to_string(),
                self.formula_sem.to_string(),
                self.discrepancy.to_string(),
                self.combined_sem.to_string(),
                self.paired_sem.to_string(),
                self.within_three_sem.to_string(),
            ]],
        )
    }
}

impl DominanceReport {
    pub fn to_table(&self) -> Table {
        Table::new(
            &["comparison", "beta_index", "d", "q", "replicates", "mean_difference", "paired_sem", "holds"],
            self.comparisons
                .iter()
                .map(|c| {
                    vec![
                        c.name.clone(),
                        c.beta_index.to_string(),
                        self.covariates.to_string(),
                        self.tasks.to_string(),
                        self.replicates.to_string(),
                        c.mean_difference.to_string(),
                        c.paired_sem.to_string(),
                        c.holds.to_string(),
                    ]
                })
                .collect(),
        )
    }
}

impl GainReport {
    pub fn to_table(&self) -> Table {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        Table::new(
            &["gain", "lower_bound", "upper_bound", "snr_bound_signal", "snr_bound_noise", "condition_number", "eigenvalues_desc", "diagonals_desc", "majorization_holds"],
            vec![vec![
                self.gain.to_string(),
                self.lower_bound.to_string(),
                self.upper_bound.to_string(),
                self.snr_upper_bounds.0.to_string(),
                self.snr_upper_bounds.1.to_string(),
                self.condition_number.to_string(),
                join(&self.eigenvalues_desc),
                join(&self.diagonals_desc),
                self.majorization_holds.to_string(),
            ]],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_gain_example() {
        let s = TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        let g = gain(&s, 1.0).unwrap();
        assert_relative_eq!(g.gain, 1.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(g.eigenvalues_desc[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.diagonals_desc[1], 1.0, epsilon = 1e-12);
        assert!(g.lower_bound <= g.gain && g.gain <= g.upper_bound);
        assert!(g.condition_number.is_infinite());
    }

    #[test]
    fn diagonal_gain_is_exactly_zero() {
        let s = TaskCovariance::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 0.5, 1.0]))).unwrap();
        assert_eq!(gain(&s, 0.7).unwrap().gain, 0.0);
    }

    #[test]
    fn closed_forms_agree_when_no_truncation() {
        let mut rng = substream(3, &[], 0);
        let b = standard_normal_matrix(&mut rng, 8, 3) * 10.0;
        assert_relative_eq!(ecov_mle_orthogonal(&b, 1.0), ecov_mm_orthogonal(&b, 1.0), epsilon = 1e-9);
        let mle = crate::estimators::mle_sigma_orthogonal(&EffectsMatrix::new(b.clone()).unwrap(), 1.0).unwrap();
        assert_relative_eq!(ecov_mle_orthogonal(&b, 1.0), mle.beta_hat.values().clone(), epsilon = 1e-9);
    }

    #[test]
    fn regimes_are_enforced() {
        let b = EffectsMatrix::zeros(4, 3);
        let err = risk_identity_check(&b, 1.0, IdentitySide::Ecov, 10, 1).unwrap_err();
        assert!(err.to_string().contains("infinite-risk regime"));
        assert_eq!(mc_risk(RiskEstimator::EdataMm, &b, 1.0, 100, 1).unwrap_err().code(), "infinite_risk");
        assert!(mc_risk(RiskEstimator::Ls, &b, 1.0, 10, 1).is_err());
    }

    #[test]
    fn mc_risk_is_deterministic() {
        let b = EffectsMatrix::zeros(5, 2);
        let a = mc_risk(RiskEstimator::EcovMle, &b, 1.0, 200, 9).unwrap();
        let c = mc_risk(RiskEstimator::EcovMle, &b, 1.0, 200, 9).unwrap();
        assert_eq!(a, c);
    }
}
