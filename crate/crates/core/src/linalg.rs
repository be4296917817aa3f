//! Dense linear-algebra helpers.
//!
//! Large symmetric positive definite systems go through faer's Cholesky; small
//! eigen and singular value problems use nalgebra directly.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub(crate) fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!("{}x{} is not square", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite entry in matrix to factor".into()));
        }
        let llt = to_faer(a)
            .llt(Side::Lower)
            .map_err(|_| Error::Singular(format!("{}x{} matrix is not positive definite", a.nrows(), a.ncols())))?;
        Ok(Self { llt, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        from_faer(self.llt.solve(to_faer(b)).as_ref())
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.llt.solve_in_place(rhs.as_mut());
        DVector::from_fn(b.len(), |i, _| rhs[(i, 0)])
    }

    /// Symmetric inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = from_faer(self.llt.inverse().as_ref());
        symmetrize(&inv)
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }
}

/// LU factorization with partial pivoting for general square systems.
pub struct LuFactor {
    lu: faer::linalg::solvers::PartialPivLu<f64>,
}

impl LuFactor {
    /// Factors `a`, rejecting it as singular when the smallest pivot is tiny
    /// relative to the largest.
    pub fn new(a: &DMatrix<f64>, pivot_ratio: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!("{}x{} is not square", a.nrows(), a.ncols())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite entry in matrix to factor".into()));
        }
        let lu = to_faer(a).partial_piv_lu();
        let u = lu.U();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..a.nrows() {
            let p = u[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if a.nrows() > 0 && (hi == 0.0 || lo <= pivot_ratio * hi) {
            return Err(Error::Singular(format!(
                "pivot ratio {:e} below {:e}",
                if hi == 0.0 { 0.0 } else { lo / hi },
                pivot_ratio
            )));
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        from_faer(self.lu.solve(to_faer(b)).as_ref())
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
        DVector::from_column_slice(x.as_slice())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        from_faer(self.lu.inverse().as_ref())
    }
}

/// (A + Aᵀ)/2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
///
/// Ties keep the solver's original order. Each eigenvector is sign-fixed so its
/// largest-magnitude entry is positive.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive. Returns true if flipped.
pub(crate) fn fix_sign(v: &mut [f64]) -> bool {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// U diag(f(λ)) Uᵀ for a symmetric matrix.
pub fn sym_apply(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(a);
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    symmetrize(&(scaled * vecs.transpose()))
}

/// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * (r.max(c) as f64) * f64::EPSILON;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest |A_ij − A_ji| relative to the largest |A_ij| (zero for the zero matrix).
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}
