//! Dense linear algebra on a truncated Fock space.
//!
//! Every operator in the engine is a [`FockMatrix`]: a square complex matrix
//! that remembers its cutoff and refuses arithmetic with a matrix of a
//! different cutoff. Conventions follow `a = (q + i p)/sqrt(2)` with hbar = 1.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Maximum tolerated anti-Hermitian part for inputs to spectral functions.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Relative eigenvalue floor used for pseudo-inverses and support detection.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Square complex matrix on a Fock space truncated at `dim` levels.
#[derive(Clone, Debug, PartialEq)]
pub struct FockMatrix {
    m: DMatrix<C64>,
}

impl FockMatrix {
    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { left: m.nrows(), right: m.ncols() });
        }
        check_dim(m.nrows())?;
        Ok(Self { m })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { m: DMatrix::zeros(dim, dim) })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { m: DMatrix::identity(dim, dim) })
    }

    pub fn from_diagonal(diag: &[C64]) -> Result<Self> {
        check_dim(diag.len())?;
        Ok(Self { m: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) })
    }

    /// Pure-state density `|psi><psi|`.
    pub fn projector(psi: &DVector<C64>) -> Result<Self> {
        check_dim(psi.len())?;
        Ok(Self { m: psi * psi.adjoint() })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { m: &self.m * s }
    }

    fn same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self { m: &self.m * &other.m })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self { m: &self.m + &other.m })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self { m: &self.m - &other.m })
    }

    pub fn apply(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: v.len() });
        }
        Ok(&self.m * v)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_dim(other)?;
        Ok(max_abs(&(&self.m - &other.m)))
    }

    /// Largest entrywise modulus of `H - H^dag`.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.m - self.m.adjoint()))
    }

    /// Hilbert-Schmidt inner product `Tr(A^dag B)`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        self.same_dim(other)?;
        Ok(self.m.iter().zip(other.m.iter()).map(|(a, b)| a.conj() * b).sum())
    }

    /// `Tr(n rho)` using the diagonal of the number operator directly.
    pub fn mean_photon(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.m[(n, n)].re).sum()
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    Ok(())
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Lowering operator with `<n-1|a|n> = sqrt(n)`.
pub fn annihilation(dim: usize) -> Result<FockMatrix> {
    check_dim(dim)?;
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(FockMatrix { m })
}

pub fn creation(dim: usize) -> Result<FockMatrix> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number_operator(dim: usize) -> Result<FockMatrix> {
    let diag: Vec<C64> = (0..dim).map(|n| C64::new(n as f64, 0.0)).collect();
    FockMatrix::from_diagonal(&diag)
}

/// Photon-number parity `(-1)^n`.
pub fn parity_operator(dim: usize) -> Result<FockMatrix> {
    let diag: Vec<C64> = (0..dim)
        .map(|n| C64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    FockMatrix::from_diagonal(&diag)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermitianSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl HermitianSpectrum {
    /// Decomposes the Hermitian part of `h`; callers validate Hermiticity.
    pub fn new(h: &DMatrix<C64>) -> Self {
        let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = nalgebra::linalg::SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(h.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Self { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// `U f(Lambda) U^dag` for a real spectral function.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
        let n = self.vectors.nrows();
        let mut scaled = self.vectors.clone();
        for (c, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            scaled.column_mut(c).scale_mut(s);
        }
        let mut out = DMatrix::zeros(n, n);
        out.gemm(C64::new(1.0, 0.0), &scaled, &self.vectors.adjoint(), C64::new(0.0, 0.0));
        out
    }

    /// Orthogonal projector onto eigenvectors with eigenvalue above `floor`.
    pub fn support_projector(&self, floor: f64) -> DMatrix<C64> {
        self.map(|lam| if lam > floor { 1.0 } else { 0.0 })
    }

    /// `(H + eps I)^(-1/2)` for `eps > 0`, otherwise the pseudo-inverse square
    /// root on the support (relative floor [`EIGEN_FLOOR`]).
    pub fn inv_sqrt(&self, epsilon: f64) -> DMatrix<C64> {
        if epsilon > 0.0 {
            self.map(|lam| 1.0 / (lam.max(0.0) + epsilon).sqrt())
        } else {
            let floor = EIGEN_FLOOR * self.max().max(0.0);
            self.map(|lam| if lam > floor { 1.0 / lam.sqrt() } else { 0.0 })
        }
    }

    /// `(H + eps I)^(-1/2)` compressed to the support of `H`: eigenvalues at or
    /// below the relative floor map to zero. With `eps = 0` this is the
    /// pseudo-inverse square root.
    pub fn inv_sqrt_on_support(&self, epsilon: f64) -> DMatrix<C64> {
        let floor = EIGEN_FLOOR * self.max().max(0.0);
        self.map(|lam| if lam > floor { 1.0 / (lam + epsilon).sqrt() } else { 0.0 })
    }
}

/// Validates that `h` is Hermitian and numerically PSD, returning its spectrum.
pub(crate) fn psd_spectrum(h: &DMatrix<C64>) -> Result<HermitianSpectrum> {
    let scale = max_abs(h).max(1.0);
    let defect = max_abs(&(h - h.adjoint()));
    if defect > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(defect));
    }
    let spec = HermitianSpectrum::new(h);
    let norm = spec.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if spec.min() < -HERMITIAN_TOL * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(spec.min()));
    }
    Ok(spec)
}

/// Inverse square root of a positive semidefinite matrix.
///
/// With `epsilon > 0` this is `(H + epsilon I)^(-1/2)`; with `epsilon == 0`
/// eigenvalues under `1e-12 * lambda_max` are treated as outside the support
/// and mapped to zero.
pub fn psd_inv_sqrt(h: &FockMatrix, epsilon: f64) -> Result<FockMatrix> {
    if !(epsilon >= 0.0) {
        return Err(Error::Parameter(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let spec = psd_spectrum(h.matrix())?;
    Ok(FockMatrix { m: spec.inv_sqrt(epsilon) })
}

/// Displacement `D(alpha) = exp(alpha a^dag - alpha* a)` on the truncated space,
/// computed by diagonalising the Hermitian generator `-i (alpha a^dag - alpha* a)`.
pub fn displacement(alpha: C64, dim: usize) -> Result<FockMatrix> {
    let a = annihilation(dim)?;
    let ad = a.adjoint();
    let gen = ad.matrix() * alpha - a.matrix() * alpha.conj();
    let herm = &gen * C64::new(0.0, -1.0);
    let spec = HermitianSpectrum::new(&herm);
    // exp(i H) = U exp(i lambda) U^dag
    let n = dim;
    let mut scaled = spec.vectors.clone();
    for (c, &lam) in spec.values.iter().enumerate() {
        let phase = C64::from_polar(1.0, lam);
        scaled.column_mut(c).iter_mut().for_each(|z| *z *= phase);
    }
    let mut out = DMatrix::zeros(n, n);
    out.gemm(C64::new(1.0, 0.0), &scaled, &spec.vectors.adjoint(), C64::new(0.0, 0.0));
    Ok(FockMatrix { m: out })
}

/// Smallest cutoff that contains a coherent state of amplitude `|alpha|`.
pub fn coherent_cutoff(alpha_abs: f64) -> f64 {
    alpha_abs * alpha_abs + 6.0 * alpha_abs + 10.0
}

/// Coherent state `|alpha>` in the Fock basis.
///
/// Requires `|alpha|^2 + 6|alpha| + 10 <= dim` so the discarded tail is
/// negligible.
pub fn coherent_state(alpha: C64, dim: usize) -> Result<DVector<C64>> {
    check_dim(dim)?;
    let need = coherent_cutoff(alpha.norm());
    if need > dim as f64 {
        return Err(Error::CutoffTooSmall {
            dim,
            reason: format!("coherent amplitude |alpha| = {:.4} needs at least {:.0} levels", alpha.norm(), need.ceil()),
        });
    }
    Ok(coherent_projection(alpha, dim))
}

/// Projection of `|alpha>` onto the first `dim` Fock levels, without any
/// containment check. Amplitudes are built in log space so that centers far
/// outside the truncation underflow cleanly to zero instead of overflowing.
pub(crate) fn coherent_projection(alpha: C64, dim: usize) -> DVector<C64> {
    let r = alpha.norm();
    let mut v = DVector::zeros(dim);
    if r == 0.0 {
        v[0] = C64::new(1.0, 0.0);
        return v;
    }
    let unit = alpha / r;
    let ln_r = r.ln();
    let mut log_mag = -0.5 * r * r;
    let mut phase = C64::new(1.0, 0.0);
    for n in 0..dim {
        if n > 0 {
            log_mag += ln_r - 0.5 * (n as f64).ln();
            phase *= unit;
        }
        if log_mag > -745.0 {
            v[n] = phase * log_mag.exp();
        }
    }
    v
}

/// Upper bound (log scale) on the largest component of the projected coherent
/// state; used to skip lattice terms that cannot reach the truncated space.
pub(crate) fn coherent_log_peak(alpha_abs: f64, dim: usize) -> f64 {
    if alpha_abs == 0.0 {
        return 0.0;
    }
    let r2 = alpha_abs * alpha_abs;
    let n_peak = (r2.floor() as usize).min(dim - 1);
    let ln_r = alpha_abs.ln();
    let mut log_mag = -0.5 * r2;
    for n in 1..=n_peak {
        log_mag += ln_r - 0.5 * (n as f64).ln();
    }
    log_mag
}
