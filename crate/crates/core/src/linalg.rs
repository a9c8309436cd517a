//! Dense complex linear algebra shared by every other module.
//!
//! Matrices are stored row-major as `Complex64`. Heavy kernels (Hermitian
//! eigendecomposition, SVD, matrix products) are delegated to `faer`; all
//! matrix functions used in this crate are evaluated through the Hermitian
//! eigendecomposition `M = V diag(λ) V†`, so `f(M) = V diag(f(λ)) V†`.

use faer::{Mat, Side};
use num_complex::Complex64;
use thiserror::Error;

/// Tolerances used across the crate, all relative to the largest absolute
/// entry of the matrix they are applied to unless stated otherwise.
pub mod tolerances {
    /// `max|M - M†| <= HERMITIAN_REL * max|M|` for Hermitian-flagged values.
    pub const HERMITIAN_REL: f64 = 1e-12;
    /// `max|M - V Λ V†| <= RECONSTRUCTION_REL * max|M|`.
    pub const RECONSTRUCTION_REL: f64 = 1e-10;
    /// Columns of an eigenvector matrix are orthonormal to this absolute level.
    pub const ORTHONORMAL_ABS: f64 = 1e-10;
    /// Semigroup property of heat operators.
    pub const SEMIGROUP_REL: f64 = 1e-8;
    /// Singular values below this are treated as zero by index counts.
    pub const SVD_ZERO: f64 = 1e-7;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not Hermitian: max|M - M^dagger| = {deviation:e} (max|M| = {scale:e})")]
    NotHermitian { deviation: f64, scale: f64 },
    #[error("matrix must be flagged Hermitian before calling {0}")]
    NotFlaggedHermitian(&'static str),
    #[error("{routine} failed to converge on a {dimension}x{dimension} matrix")]
    NoConvergence {
        routine: &'static str,
        dimension: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
    hermitian: bool,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
            hermitian: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m.hermitian = true;
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            data,
            hermitian: false,
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Shape("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            hermitian: false,
        })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = Complex64::new(d, 0.0);
        }
        m.hermitian = true;
        m
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Checks `max|M - M†| <= 1e-12 max|M|` and flags the matrix Hermitian.
    pub fn into_hermitian(mut self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(LinalgError::Shape(format!(
                "Hermitian matrix must be square, got {}x{}",
                self.rows, self.cols
            )));
        }
        let deviation = self.hermitian_deviation();
        let scale = self.max_abs();
        if deviation > tolerances::HERMITIAN_REL * scale {
            return Err(LinalgError::NotHermitian { deviation, scale });
        }
        self.hermitian = true;
        Ok(self)
    }

    /// Replaces the matrix by `(M + M†)/2` and flags it Hermitian. For values
    /// that are Hermitian up to rounding of an assembly such as `D D†`.
    pub fn symmetrize(mut self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(LinalgError::Shape("symmetrize needs a square matrix".into()));
        }
        let n = self.rows;
        for i in 0..n {
            for j in i..n {
                let a = self.data[i * n + j];
                let b = self.data[j * n + i].conj();
                let avg = (a + b) * 0.5;
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg.conj();
            }
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        dev
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    /// Writing an entry clears the Hermitian flag.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.hermitian = false;
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }

    pub fn adjoint(&self) -> DenseMatrix {
        let mut out = Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj());
        out.hermitian = self.hermitian;
        out
    }

    pub fn scale(&self, s: Complex64) -> DenseMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        out.hermitian = self.hermitian && s.im == 0.0;
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
            hermitian: false,
        })
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let prod = self.to_faer() * other.to_faer();
        Ok(Self::from_faer(&prod))
    }

    pub fn matvec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols {
            return Err(LinalgError::Shape(format!(
                "vector of length {} against {} columns",
                v.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    /// Kronecker product `self ⊗ other`, row index `i * other.rows + k`.
    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let (r1, c1, r2, c2) = (self.rows, self.cols, other.rows, other.cols);
        let mut out = Self::zeros(r1 * r2, c1 * c2);
        for i in 0..r1 {
            for j in 0..c1 {
                let a = self.get(i, j);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..r2 {
                    for l in 0..c2 {
                        out.data[(i * r2 + k) * (c1 * c2) + j * c2 + l] = a * other.get(k, l);
                    }
                }
            }
        }
        out.hermitian = self.hermitian && other.hermitian;
        out
    }

    fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub(crate) fn to_faer(&self) -> Mat<Complex64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub(crate) fn from_faer(m: &Mat<Complex64>) -> DenseMatrix {
        DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Eigenvalues in ascending order with a unitary eigenvector matrix whose
/// columns are the corresponding eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(λ)) V†`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.dim();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = self.eigenvectors.to_faer();
        let vf = Mat::from_fn(n, n, |i, j| v[(i, j)] * fl[j]);
        let out = vf * v.adjoint();
        let mut m = DenseMatrix::from_faer(&out);
        // f(λ) real: the result is Hermitian up to rounding of the product.
        m = m.symmetrize().expect("square by construction");
        m
    }

    /// `V diag(f(λ)) V†` for complex-valued `f`; not Hermitian in general.
    pub fn apply_complex(&self, f: impl Fn(f64) -> Complex64) -> DenseMatrix {
        let n = self.dim();
        let fl: Vec<Complex64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let v = self.eigenvectors.to_faer();
        let vf = Mat::from_fn(n, n, |i, j| v[(i, j)] * fl[j]);
        DenseMatrix::from_faer(&(vf * v.adjoint()))
    }

    /// Diagonal of `V diag(f(λ)) V†` in O(n²).
    pub fn diagonal_of(&self, f: impl Fn(f64) -> f64) -> Vec<Complex64> {
        let n = self.dim();
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        let v = self.eigenvectors.get(i, k);
                        v * fl[k] * v.conj()
                    })
                    .sum()
            })
            .collect()
    }

    /// `max|M - V Λ V†|`.
    pub fn reconstruction_residual(&self, m: &DenseMatrix) -> f64 {
        self.apply(|l| l)
            .max_abs_diff(m)
            .unwrap_or(f64::INFINITY)
    }

    /// `max|V†V - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let v = &self.eigenvectors;
        let gram = v.adjoint().matmul(v).expect("square");
        gram.max_abs_diff(&DenseMatrix::identity(self.dim())).expect("same shape")
    }
}

pub fn herm_eig(m: &DenseMatrix) -> Result<EigenSystem> {
    if !m.is_hermitian() {
        return Err(LinalgError::NotFlaggedHermitian("herm_eig"));
    }
    let n = m.rows();
    let evd = m
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| LinalgError::NoConvergence {
            routine: "Hermitian eigensolver",
            dimension: n,
        })?;
    let s = evd.S();
    let eigenvalues: Vec<f64> = s.column_vector().iter().map(|z| z.re).collect();
    let u = evd.U();
    let eigenvectors = DenseMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// `e^{-tM}` for Hermitian `M`.
pub fn heat_operator(m: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    if !(t > 0.0) {
        return Err(LinalgError::InvalidArgument(format!("heat time must be positive, got {t}")));
    }
    let eig = herm_eig(m)?;
    Ok(eig.apply(|l| (-t * l).exp()))
}

pub fn trace(m: &DenseMatrix) -> Result<Complex64> {
    if !m.is_square() {
        return Err(LinalgError::Shape(format!(
            "trace of a non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.diagonal().into_iter().sum())
}

/// Singular values in descending order, `min(rows, cols)` of them.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    let mut sv = m
        .to_faer()
        .singular_values()
        .map_err(|_| LinalgError::NoConvergence {
            routine: "SVD",
            dimension: m.rows().max(m.cols()),
        })?;
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sv)
}
