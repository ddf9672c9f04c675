//! Pure-loss channel and its Petz recovery, both in Kraus form.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fock::{check_dim, max_abs, FockMatrix, HermitianSpectrum, EIGEN_FLOOR, C64};
use crate::gkp::GkpCode;

/// Default Petz regularisation, relative to the largest eigenvalue of `N(P_L)`.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// One Kraus operator, stored in whichever form keeps its action cheap.
#[derive(Clone, Debug)]
pub enum KrausOp {
    /// `K = sum_m diag[m] |m><m + offset|` (a single super-diagonal).
    Shift { offset: usize, diag: Vec<f64> },
    /// `K = left * right` with a shared `dim x r` left factor.
    Factored { left: Arc<DMatrix<C64>>, right: DMatrix<C64> },
    Dense(FockMatrix),
}

impl KrausOp {
    pub fn dim(&self) -> usize {
        match self {
            KrausOp::Shift { diag, offset } => diag.len() + offset,
            KrausOp::Factored { left, .. } => left.nrows(),
            KrausOp::Dense(m) => m.dim(),
        }
    }

    pub fn to_dense(&self) -> FockMatrix {
        let dim = self.dim();
        let m = match self {
            KrausOp::Shift { offset, diag } => {
                let mut m = DMatrix::zeros(dim, dim);
                for (k, &d) in diag.iter().enumerate() {
                    m[(k, k + offset)] = C64::new(d, 0.0);
                }
                m
            }
            KrausOp::Factored { left, right } => left.as_ref() * right,
            KrausOp::Dense(m) => m.matrix().clone(),
        };
        FockMatrix::from_matrix(m).expect("Kraus operators are square")
    }

    /// `K v`.
    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        match self {
            KrausOp::Shift { offset, diag } => {
                let mut out = DVector::zeros(v.len());
                for (k, &d) in diag.iter().enumerate() {
                    out[k] = v[k + offset] * d;
                }
                out
            }
            KrausOp::Factored { left, right } => left.as_ref() * (right * v),
            KrausOp::Dense(m) => m.matrix() * v,
        }
    }

    /// `K^dag v`.
    pub fn apply_adjoint(&self, v: &DVector<C64>) -> DVector<C64> {
        match self {
            KrausOp::Shift { offset, diag } => {
                let mut out = DVector::zeros(v.len());
                for (k, &d) in diag.iter().enumerate() {
                    out[k + offset] = v[k] * d;
                }
                out
            }
            KrausOp::Factored { left, right } => right.adjoint() * (left.adjoint() * v),
            KrausOp::Dense(m) => m.matrix().adjoint() * v,
        }
    }

    /// Adds `K rho K^dag` into `acc`.
    fn sandwich_into(&self, rho: &DMatrix<C64>, acc: &mut DMatrix<C64>) {
        match self {
            KrausOp::Shift { offset, diag } => {
                let n = diag.len();
                for c in 0..n {
                    let dc = diag[c];
                    if dc == 0.0 {
                        continue;
                    }
                    for r in 0..n {
                        acc[(r, c)] += rho[(r + offset, c + offset)] * (diag[r] * dc);
                    }
                }
            }
            KrausOp::Factored { left, right } => {
                let core = right * rho * right.adjoint();
                *acc += left.as_ref() * core * left.adjoint();
            }
            KrausOp::Dense(m) => {
                *acc += m.matrix() * rho * m.matrix().adjoint();
            }
        }
    }

    /// Adds `K^dag x K` into `acc`.
    fn adjoint_sandwich_into(&self, x: &DMatrix<C64>, acc: &mut DMatrix<C64>) {
        match self {
            KrausOp::Shift { offset, diag } => {
                let n = diag.len();
                for c in 0..n {
                    let dc = diag[c];
                    if dc == 0.0 {
                        continue;
                    }
                    for r in 0..n {
                        acc[(r + offset, c + offset)] += x[(r, c)] * (diag[r] * dc);
                    }
                }
            }
            KrausOp::Factored { left, right } => {
                let core = left.adjoint() * x * left.as_ref();
                *acc += right.adjoint() * core * right;
            }
            KrausOp::Dense(m) => {
                *acc += m.matrix().adjoint() * x * m.matrix();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Loss,
    Petz,
}

/// Ordered Kraus operators of one channel plus its metadata.
#[derive(Clone, Debug)]
pub struct KrausSet {
    dim: usize,
    ops: Vec<KrausOp>,
    pub eta: f64,
    pub kind: ChannelKind,
    /// Regularisation used for Petz sets.
    pub epsilon: Option<f64>,
}

impl KrausSet {
    pub fn new(ops: Vec<KrausOp>, eta: f64, kind: ChannelKind, epsilon: Option<f64>) -> Result<Self> {
        let dim = ops.first().map(KrausOp::dim).ok_or_else(|| Error::Parameter("empty Kraus set".into()))?;
        check_dim(dim)?;
        if let Some(bad) = ops.iter().find(|k| k.dim() != dim) {
            return Err(Error::DimensionMismatch { left: dim, right: bad.dim() });
        }
        Ok(Self { dim, ops, eta, kind, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ops(&self) -> &[KrausOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Loss depth `x = -ln(eta)`.
    pub fn depth(&self) -> f64 {
        -self.eta.ln()
    }

    fn check(&self, m: &FockMatrix) -> Result<()> {
        if m.dim() != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: m.dim() });
        }
        Ok(())
    }

    /// `sum_k K rho K^dag`. Factored operators sharing a left factor are
    /// accumulated in the small core space before being expanded once.
    pub(crate) fn apply_matrix(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        let mut pending: Option<(Arc<DMatrix<C64>>, DMatrix<C64>)> = None;
        let flush = |pending: &mut Option<(Arc<DMatrix<C64>>, DMatrix<C64>)>, acc: &mut DMatrix<C64>| {
            if let Some((left, core)) = pending.take() {
                *acc += left.as_ref() * core * left.adjoint();
            }
        };
        for op in &self.ops {
            match op {
                KrausOp::Factored { left, right } => {
                    let core = right * rho * right.adjoint();
                    match &mut pending {
                        Some((l, c)) if Arc::ptr_eq(l, left) => *c += core,
                        _ => {
                            flush(&mut pending, &mut acc);
                            pending = Some((left.clone(), core));
                        }
                    }
                }
                other => other.sandwich_into(rho, &mut acc),
            }
        }
        flush(&mut pending, &mut acc);
        acc
    }

    pub(crate) fn apply_adjoint_matrix(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for op in &self.ops {
            op.adjoint_sandwich_into(x, &mut acc);
        }
        acc
    }

    /// `sum_k (V^dag K) rho (V^dag K)^dag` for an isometry `V`, i.e. the channel
    /// followed by compression onto the range of `V`, without forming the
    /// full output.
    pub(crate) fn apply_compressed(&self, rho: &DMatrix<C64>, iso: &DMatrix<C64>) -> DMatrix<C64> {
        let r = iso.ncols();
        let mut acc = DMatrix::zeros(r, r);
        for op in &self.ops {
            let w = match op {
                KrausOp::Factored { left, right } => (iso.adjoint() * left.as_ref()) * right,
                other => {
                    let cols: Vec<DVector<C64>> =
                        iso.column_iter().map(|c| other.apply_adjoint(&c.into_owned())).collect();
                    DMatrix::from_columns(&cols).adjoint()
                }
            };
            acc += &w * rho * w.adjoint();
        }
        acc
    }

    /// Rows `V^dag K_k` for every operator, stacked into a `(r * len) x dim`
    /// matrix.
    pub(crate) fn compressed_rows(&self, iso: &DMatrix<C64>) -> DMatrix<C64> {
        let r = iso.ncols();
        let mut out = DMatrix::zeros(r * self.ops.len(), self.dim);
        for (k, op) in self.ops.iter().enumerate() {
            let w = match op {
                KrausOp::Factored { left, right } => (iso.adjoint() * left.as_ref()) * right,
                other => {
                    let cols: Vec<DVector<C64>> =
                        iso.column_iter().map(|c| other.apply_adjoint(&c.into_owned())).collect();
                    DMatrix::from_columns(&cols).adjoint()
                }
            };
            out.rows_mut(k * r, r).copy_from(&w);
        }
        out
    }

    /// Columns `K_k V` for every operator, side by side in a `dim x (r * len)`
    /// matrix.
    pub(crate) fn applied_columns(&self, iso: &DMatrix<C64>) -> DMatrix<C64> {
        let r = iso.ncols();
        let mut out = DMatrix::zeros(self.dim, r * self.ops.len());
        for (k, op) in self.ops.iter().enumerate() {
            for (c, col) in iso.column_iter().enumerate() {
                out.set_column(k * r + c, &op.apply(&col.into_owned()));
            }
        }
        out
    }

    /// `sum_k K^dag K`.
    pub fn completeness(&self) -> FockMatrix {
        let id = DMatrix::identity(self.dim, self.dim);
        FockMatrix::from_matrix(self.apply_adjoint_matrix(&id)).expect("square")
    }

    /// `max |I - sum_k K^dag K|`.
    pub fn completeness_defect(&self) -> f64 {
        let sum = self.completeness();
        max_abs(&(DMatrix::identity(self.dim, self.dim) - sum.matrix()))
    }

    /// Largest eigenvalue of `sum_k K^dag K`; at most one for trace-non-increasing sets.
    pub fn completeness_norm(&self) -> f64 {
        HermitianSpectrum::new(self.completeness().matrix()).max()
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// Pure-loss Kraus operators
/// `E_l = (gamma/(1-gamma))^(l/2) a^l / sqrt(l!) (1-gamma)^(n/2)`, `l = 0..dim-1`.
///
/// In the Fock basis `<m|E_l|m+l> = sqrt(C(m+l, l) gamma^l eta^m)`, which is
/// evaluated in log space.
pub fn loss_kraus(eta: f64, dim: usize) -> Result<KrausSet> {
    check_dim(dim)?;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Parameter(format!("transmissivity must lie in (0, 1], got {eta}")));
    }
    let gamma = 1.0 - eta;
    let lnf = ln_factorials(dim);
    let ln_eta = eta.ln();
    let mut diags: Vec<Vec<f64>> = (0..dim)
        .map(|l| {
            (0..dim - l)
                .map(|m| {
                    if l > 0 && gamma == 0.0 {
                        return 0.0;
                    }
                    let ln_gamma_part = if l == 0 { 0.0 } else { l as f64 * gamma.ln() };
                    let log_amp = 0.5 * (lnf[m + l] - lnf[m] - lnf[l] + ln_gamma_part + m as f64 * ln_eta);
                    log_amp.exp()
                })
                .collect()
        })
        .collect();
    // The weights leaving level n are a binomial distribution; log-gamma
    // rounding lets their sum drift by ~1e-12 at a few hundred levels, so
    // renormalise each input level.
    for n in 0..dim {
        let total: f64 = (0..=n).map(|l| diags[l][n - l].powi(2)).sum();
        let fix = total.sqrt().recip();
        for l in 0..=n {
            diags[l][n - l] *= fix;
        }
    }
    let ops = diags.into_iter().enumerate().map(|(l, diag)| KrausOp::Shift { offset: l, diag }).collect();
    KrausSet::new(ops, eta, ChannelKind::Loss, None)
}

/// Loss channel at depth `x = -ln(eta)`.
pub fn loss_kraus_depth(x: f64, dim: usize) -> Result<KrausSet> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Parameter(format!("loss depth must be finite and nonnegative, got {x}")));
    }
    loss_kraus((-x).exp(), dim)
}

/// `sum_k K rho K^dag`.
pub fn apply_channel(k: &KrausSet, rho: &FockMatrix) -> Result<FockMatrix> {
    k.check(rho)?;
    FockMatrix::from_matrix(k.apply_matrix(rho.matrix()))
}

/// Heisenberg-picture action `sum_k K^dag X K`.
pub fn apply_adjoint(k: &KrausSet, x: &FockMatrix) -> Result<FockMatrix> {
    k.check(x)?;
    FockMatrix::from_matrix(k.apply_adjoint_matrix(x.matrix()))
}

/// Petz recovery of `loss` with respect to the code projector:
/// `R_l = P_L E_l^dag S`, `S = (N_L + epsilon lambda_max I)^(-1/2)` on the
/// support of `N_L = N(P_L)`; `epsilon = 0` gives the pseudo-inverse.
///
/// Each operator is stored as `E (E^dag E_l^dag S)` so that `R_l` never has
/// to be formed densely.
pub fn petz_recovery(loss: &KrausSet, code: &GkpCode, epsilon: f64) -> Result<KrausSet> {
    Ok(petz_with_spectrum(loss, code, epsilon)?.0)
}

/// Petz set plus the spectrum of `N(P_L)` it was built from.
pub(crate) fn petz_with_spectrum(
    loss: &KrausSet,
    code: &GkpCode,
    epsilon: f64,
) -> Result<(KrausSet, HermitianSpectrum)> {
    if loss.dim() != code.dim {
        return Err(Error::DimensionMismatch { left: loss.dim(), right: code.dim });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Parameter(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let n_l = loss.apply_matrix(code.projector.matrix());
    let spec = crate::fock::psd_spectrum(&n_l)?;
    // Directions outside the support of N(P_L) are annihilated by P_L E_l^dag
    // exactly; dropping them keeps the 1/sqrt(eps) amplification of rounding
    // noise out of the Kraus operators.
    let s = spec.inv_sqrt_on_support(epsilon * spec.max());
    let e = Arc::new(code.isometry.clone());
    let mut ops = Vec::with_capacity(loss.len());
    for op in loss.ops() {
        // columns E_l |phi_mu>
        let cols: Vec<DVector<C64>> = code.codewords.iter().map(|phi| op.apply(phi)).collect();
        let moved = DMatrix::from_columns(&cols);
        let right = (&s * moved).adjoint();
        ops.push(KrausOp::Factored { left: e.clone(), right });
    }
    let set = KrausSet::new(ops, loss.eta, ChannelKind::Petz, Some(epsilon))?;
    Ok((set, spec))
}

/// Projector onto the support of `N(P_L)` using the shared eigenvalue floor.
pub fn loss_support_projector(loss: &KrausSet, code: &GkpCode) -> Result<FockMatrix> {
    let n_l = loss.apply_matrix(code.projector.matrix());
    let spec = crate::fock::psd_spectrum(&n_l)?;
    FockMatrix::from_matrix(spec.support_projector(EIGEN_FLOOR * spec.max()))
}
