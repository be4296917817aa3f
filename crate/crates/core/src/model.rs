//! Domain types for multi-dataset regression and their validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{relative_asymmetry, sym_eigenvalues, symmetrize};

/// Response distribution of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Gaussian,
    Binary,
}

/// One dataset: an N×D design, N responses and an optional known noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    design: DMatrix<f64>,
    responses: DVector<f64>,
    noise_variance: Option<f64>,
    kind: ResponseKind,
}

impl RegressionDataset {
    pub fn new(
        design: DMatrix<f64>,
        responses: DVector<f64>,
        noise_variance: Option<f64>,
        kind: ResponseKind,
    ) -> Result<Self> {
        if design.nrows() != responses.len() {
            return Err(Error::RowCountMismatch {
                dataset: 0,
                rows: design.nrows(),
                responses: responses.len(),
            });
        }
        if let Some((i, j)) = first_non_finite(&design) {
            return Err(Error::NonFinite {
                dataset: 0,
                location: format!("design row {i}, column {j}"),
            });
        }
        if let Some(i) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                dataset: 0,
                location: format!("response row {i}"),
            });
        }
        match kind {
            ResponseKind::Binary => {
                if noise_variance.is_some() {
                    return Err(Error::NoiseOnBinary { dataset: 0 });
                }
                if let Some(row) = responses.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::NonBinaryResponse {
                        dataset: 0,
                        row,
                        value: responses[row],
                    });
                }
            }
            ResponseKind::Gaussian => {
                if let Some(v) = noise_variance {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::InvalidNoiseVariance { dataset: 0, value: v });
                    }
                }
            }
        }
        Ok(Self {
            design,
            responses,
            noise_variance,
            kind,
        })
    }

    pub fn gaussian(design: DMatrix<f64>, responses: DVector<f64>, noise_variance: Option<f64>) -> Result<Self> {
        Self::new(design, responses, noise_variance, ResponseKind::Gaussian)
    }

    pub fn binary(design: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        Self::new(design, responses, None, ResponseKind::Binary)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn noise_variance(&self) -> Option<f64> {
        self.noise_variance
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn covariates(&self) -> usize {
        self.design.ncols()
    }

    /// Same design and noise, new responses.
    pub fn with_responses(&self, responses: DVector<f64>) -> Result<Self> {
        Self::new(self.design.clone(), responses, self.noise_variance, self.kind)
    }

    pub fn with_noise_variance(&self, noise_variance: Option<f64>) -> Result<Self> {
        Self::new(self.design.clone(), self.responses.clone(), noise_variance, self.kind)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            design: self.design.select_rows(rows.iter()),
            responses: self.responses.select_rows(rows.iter()),
            noise_variance: self.noise_variance,
            kind: self.kind,
        }
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// Q ≥ 1 datasets sharing D covariates and a response kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCollection {
    datasets: Vec<RegressionDataset>,
    covariate_count: usize,
}

impl DatasetCollection {
    pub fn new(datasets: Vec<RegressionDataset>) -> Result<Self> {
        check_shared_structure(&datasets)?;
        let covariate_count = datasets[0].covariates();
        Ok(Self {
            datasets,
            covariate_count,
        })
    }

    /// Builds and validates datasets from raw parts, reporting the failing index.
    pub fn from_parts(
        parts: Vec<(DMatrix<f64>, DVector<f64>, Option<f64>)>,
        kind: ResponseKind,
    ) -> Result<Self> {
        let datasets = parts
            .into_iter()
            .enumerate()
            .map(|(i, (x, y, s))| RegressionDataset::new(x, y, s, kind).map_err(|e| e.at_dataset(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(datasets)
    }

    pub fn datasets(&self) -> &[RegressionDataset] {
        &self.datasets
    }

    pub fn dataset(&self, q: usize) -> &RegressionDataset {
        &self.datasets[q]
    }

    pub fn task_count(&self) -> usize {
        self.datasets.len()
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_count
    }

    pub fn kind(&self) -> ResponseKind {
        self.datasets[0].kind()
    }

    pub fn require_kind(&self, kind: ResponseKind) -> Result<()> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(Error::WrongKind {
                expected: match kind {
                    ResponseKind::Gaussian => "gaussian",
                    ResponseKind::Binary => "binary",
                },
            })
        }
    }

    /// Collection made of dataset `q` alone.
    pub fn single(&self, q: usize) -> Self {
        Self {
            datasets: vec![self.datasets[q].clone()],
            covariate_count: self.covariate_count,
        }
    }
}

fn check_shared_structure(datasets: &[RegressionDataset]) -> Result<()> {
    let first = datasets.first().ok_or(Error::EmptyCollection)?;
    for (i, ds) in datasets.iter().enumerate() {
        if ds.covariates() != first.covariates() {
            return Err(Error::CovariateMismatch {
                dataset: i,
                expected: first.covariates(),
                found: ds.covariates(),
            });
        }
        if ds.kind() != first.kind() {
            return Err(Error::MixedKinds { dataset: i });
        }
    }
    if first.covariates() == 0 {
        return Err(Error::InvalidArgument("covariate count must be positive".into()));
    }
    Ok(())
}

/// Re-checks every invariant of a collection, reporting the first violation with its dataset index.
pub fn validate_collection(collection: &DatasetCollection) -> Result<()> {
    for (i, ds) in collection.datasets().iter().enumerate() {
        RegressionDataset::new(ds.design.clone(), ds.responses.clone(), ds.noise_variance, ds.kind)
            .map_err(|e| e.at_dataset(i))?;
    }
    check_shared_structure(collection.datasets())
}

/// D×Q matrix of effects; column q holds dataset q's coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectsMatrix(DMatrix<f64>);

impl EffectsMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some((i, j)) = first_non_finite(&values) {
            return Err(Error::NonFinite {
                dataset: j,
                location: format!("effects row {i}, column {j}"),
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize, q: usize) -> Self {
        Self(DMatrix::zeros(d, q))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn covariate_count(&self) -> usize {
        self.0.nrows()
    }

    pub fn task_count(&self) -> usize {
        self.0.ncols()
    }

    /// Squared Frobenius distance to another matrix of the same shape.
    pub fn squared_error(&self, truth: &EffectsMatrix) -> f64 {
        (&self.0 - &truth.0).norm_squared()
    }
}

fn validate_psd(matrix: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
        return Err(Error::Shape(format!(
            "covariance must be square and non-empty, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if first_non_finite(&matrix).is_some() {
        return Err(Error::NonFinite {
            dataset: 0,
            location: "covariance matrix".into(),
        });
    }
    let asym = relative_asymmetry(&matrix);
    if asym > 1e-12 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let m = symmetrize(&matrix);
    let n = m.nrows() as f64;
    let slack = 1e-10 * (m.trace() / n).max(0.0);
    let min_eig = sym_eigenvalues(&m)[0];
    if min_eig < -slack {
        return Err(Error::NotPsd { min_eigenvalue: min_eig });
    }
    Ok((m, min_eig))
}

/// Q×Q task covariance Σ of the exchangeable-covariate prior.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCovariance(DMatrix<f64>);

impl TaskCovariance {
    /// Validates symmetry and positive semidefiniteness (with slack 1e-10·trace/Q).
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        validate_psd(matrix).map(|(m, _)| Self(m))
    }

    pub fn identity(q: usize) -> Self {
        Self(DMatrix::identity(q, q))
    }

    pub fn scaled_identity(q: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(q, q) * scale)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// D×D covariate covariance Γ of the exchangeable-dataset prior.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateCovariance(DMatrix<f64>);

impl CovariateCovariance {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        validate_psd(matrix).map(|(m, _)| Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Where noise variances came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    UserSupplied,
    Estimated,
}

/// Per-dataset noise variances σ_q².
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variances: Vec<f64>,
    source: NoiseSource,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>, source: NoiseSource) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::EmptyCollection);
        }
        for (q, &v) in variances.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidNoiseVariance { dataset: q, value: v });
            }
        }
        Ok(Self { variances, source })
    }

    pub fn shared(variance: f64, q: usize) -> Result<Self> {
        Self::new(vec![variance; q], NoiseSource::UserSupplied)
    }

    /// Noise variances carried by the datasets themselves.
    pub fn from_collection(collection: &DatasetCollection) -> Result<Self> {
        let variances = collection
            .datasets()
            .iter()
            .enumerate()
            .map(|(q, ds)| {
                ds.noise_variance().ok_or(Error::NoiseRequired {
                    dataset: q,
                    reason: "no noise variance attached".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(variances, NoiseSource::UserSupplied)
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn variance(&self, q: usize) -> f64 {
        self.variances[q]
    }

    pub fn source(&self) -> NoiseSource {
        self.source
    }

    pub(crate) fn check_len(&self, q: usize) -> Result<()> {
        if self.variances.len() != q {
            return Err(Error::Shape(format!(
                "noise model has {} variances for {} datasets",
                self.variances.len(),
                q
            )));
        }
        Ok(())
    }
}

/// Least-squares fit of one dataset via the singular value decomposition.
pub fn least_squares_single(ds: &RegressionDataset) -> Result<DVector<f64>> {
    let (n, d) = ds.design.shape();
    if n < d {
        return Err(Error::TooFewRows {
            dataset: 0,
            rows: n,
            needed: d,
        });
    }
    let svd = crate::linalg::to_faer(&ds.design).thin_svd().map_err(|_| Error::Singular("SVD did not converge".into()))?;
    let s: Vec<f64> = (0..d).map(|k| svd.S()[k]).collect();
    let smax = s.iter().copied().fold(0.0, f64::max);
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= smax * (n.max(d) as f64) * f64::EPSILON * 16.0 || smax == 0.0 {
        return Err(Error::RankDeficient {
            dataset: 0,
            smallest_singular_value: smin,
        });
    }
    let u = crate::linalg::from_faer(svd.U());
    let v = crate::linalg::from_faer(svd.V());
    let uty = u.tr_mul(&ds.responses);
    let scaled = DVector::from_fn(d, |k, _| uty[k] / s[k]);
    Ok(v * scaled)
}

/// Per-dataset ordinary least squares, stacked as a D×Q effects matrix.
pub fn least_squares(collection: &DatasetCollection) -> Result<EffectsMatrix> {
    collection.require_kind(ResponseKind::Gaussian)?;
    let (d, q) = (collection.covariate_count(), collection.task_count());
    let mut beta = DMatrix::zeros(d, q);
    for (i, ds) in collection.datasets().iter().enumerate() {
        let b = least_squares_single(ds).map_err(|e| e.at_dataset(i))?;
        beta.set_column(i, &b);
    }
    EffectsMatrix::new(beta)
}

/// Gram matrices, cross products and least-squares estimates of a Gaussian collection.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// X^{q⊤}X^q per dataset.
    pub grams: Vec<DMatrix<f64>>,
    /// X^{q⊤}Y^q per dataset.
    pub cross: Vec<DVector<f64>>,
    /// (X^{q⊤}X^q)^{-1} per dataset.
    pub gram_inverses: Vec<DMatrix<f64>>,
    pub beta_ls: DMatrix<f64>,
}

impl SufficientStats {
    pub fn new(collection: &DatasetCollection) -> Result<Self> {
        collection.require_kind(ResponseKind::Gaussian)?;
        let beta_ls = least_squares(collection)?.into_inner();
        let mut grams = Vec::new();
        let mut cross = Vec::new();
        let mut gram_inverses = Vec::new();
        for (i, ds) in collection.datasets().iter().enumerate() {
            let g = symmetrize(&(ds.design.transpose() * &ds.design));
            let inv = crate::linalg::SpdFactor::new(&g)
                .map_err(|_| {
                    Error::RankDeficient {
                        dataset: i,
                        smallest_singular_value: 0.0,
                    }
                })?
                .inverse();
            cross.push(ds.design.tr_mul(&ds.responses));
            grams.push(g);
            gram_inverses.push(inv);
        }
        Ok(Self {
            grams,
            cross,
            gram_inverses,
            beta_ls,
        })
    }

    pub fn covariates(&self) -> usize {
        self.beta_ls.nrows()
    }

    pub fn tasks(&self) -> usize {
        self.beta_ls.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ds(rows: usize, cols: usize) -> RegressionDataset {
        let x = DMatrix::from_fn(rows, cols, |i, j| ((i * 3 + j * 7) % 5) as f64 + (i == j) as u8 as f64);
        let y = DVector::from_fn(rows, |i, _| i as f64);
        RegressionDataset::gaussian(x, y, None).unwrap()
    }

    #[test]
    fn two_gaussian_datasets_validate() {
        let c = DatasetCollection::new(vec![ds(5, 3), ds(6, 3)]).unwrap();
        validate_collection(&c).unwrap();
        assert_eq!(c.task_count(), 2);
        assert_eq!(c.covariate_count(), 3);
    }

    #[test]
    fn covariate_count_mismatch_is_rejected() {
        let err = DatasetCollection::new(vec![ds(5, 3), ds(6, 4)]).unwrap_err();
        assert_eq!(err.code(), "covariate_mismatch");
        assert!(err.to_string().contains("covariate count mismatch"));
        assert!(err.to_string().contains("dataset 1"));
    }

    #[test]
    fn non_binary_response_is_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let err = DatasetCollection::from_parts(
            vec![(x.clone(), DVector::from_vec(vec![0.0, 1.0]), None), (x, y, None)],
            ResponseKind::Binary,
        )
        .unwrap_err();
        assert_eq!(err.code(), "non_binary_response");
        assert!(err.to_string().contains("non-binary response"));
        assert!(err.to_string().contains("dataset 1"));
    }

    #[test]
    fn mixed_kinds_and_bad_noise_are_rejected() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let g = RegressionDataset::gaussian(x.clone(), DVector::from_vec(vec![0.5, 1.0]), None).unwrap();
        let b = RegressionDataset::binary(x.clone(), DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(DatasetCollection::new(vec![g, b]).unwrap_err().code(), "mixed_kinds");
        let err = RegressionDataset::gaussian(x.clone(), DVector::from_vec(vec![0.5, 1.0]), Some(-1.0)).unwrap_err();
        assert_eq!(err.code(), "invalid_noise_variance");
        let err = RegressionDataset::new(x.clone(), DVector::from_vec(vec![0.0, 1.0]), Some(1.0), ResponseKind::Binary)
            .unwrap_err();
        assert_eq!(err.code(), "noise_on_binary");
        let err = RegressionDataset::gaussian(x, DVector::from_vec(vec![f64::NAN, 1.0]), None).unwrap_err();
        assert_eq!(err.code(), "non_finite");
    }

    #[test]
    fn least_squares_zero_responses() {
        let d = ds(6, 3);
        let z = d.with_responses(DVector::zeros(6)).unwrap();
        let c = DatasetCollection::new(vec![z.clone(), z]).unwrap();
        assert_eq!(least_squares(&c).unwrap().values(), &DMatrix::zeros(3, 2));
    }

    #[test]
    fn least_squares_identity_design() {
        let ds = RegressionDataset::gaussian(DMatrix::identity(2, 2), DVector::from_vec(vec![3.0, -1.0]), None).unwrap();
        let c = DatasetCollection::new(vec![ds]).unwrap();
        let b = least_squares(&c).unwrap();
        assert_relative_eq!(b.values()[(0, 0)], 3.0, epsilon = 1e-14);
        assert_relative_eq!(b.values()[(1, 0)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_matches_explicit_two_by_two_solve() {
        let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.3, 0.5, -1.2, 2.0, 0.7, -0.4, 1.1, 0.9, 0.0, 1.5, -0.8]);
        let y = DVector::from_vec(vec![0.2, -1.0, 1.7, 0.4, 0.8, 2.1]);
        let c = DatasetCollection::new(vec![RegressionDataset::gaussian(x.clone(), y.clone(), None).unwrap()]).unwrap();
        let b = least_squares(&c).unwrap();
        // Cramer's rule on the 2x2 normal equations.
        let (a11, a12, a22) = (
            x.column(0).dot(&x.column(0)),
            x.column(0).dot(&x.column(1)),
            x.column(1).dot(&x.column(1)),
        );
        let (r1, r2) = (x.column(0).dot(&y), x.column(1).dot(&y));
        let det = a11 * a22 - a12 * a12;
        assert_relative_eq!(b.values()[(0, 0)], (r1 * a22 - a12 * r2) / det, epsilon = 1e-12);
        assert_relative_eq!(b.values()[(1, 0)], (a11 * r2 - a12 * r1) / det, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_rank_and_row_checks() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let c = DatasetCollection::new(vec![RegressionDataset::gaussian(x, DVector::zeros(3), None).unwrap()]).unwrap();
        assert_eq!(least_squares(&c).unwrap_err().code(), "rank_deficient");
        let c = DatasetCollection::new(vec![ds(2, 3)]).unwrap();
        assert_eq!(least_squares(&c).unwrap_err().code(), "too_few_rows");
    }

    #[test]
    fn covariance_validation() {
        assert!(TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_ok());
        assert_eq!(
            TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap_err().code(),
            "not_psd"
        );
        assert_eq!(
            TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).unwrap_err().code(),
            "not_symmetric"
        );
        assert!(TaskCovariance::new(DMatrix::zeros(2, 2)).is_ok());
        assert_eq!(NoiseModel::new(vec![1.0, 0.0], NoiseSource::Estimated).unwrap_err().code(), "invalid_noise_variance");
    }
}
