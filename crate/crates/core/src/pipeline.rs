//! Encode, lose, recover, decode: the single-qubit logical pipeline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use crate::channel::KrausSet;
use crate::error::{Error, Result};
use crate::fock::{FockMatrix, C64};
use crate::gkp::GkpCode;

/// Tolerance on the physical bounds `0 <= w <= 1` and `|<O>_cond| <= 1`.
pub const BOUNDS_TOL: f64 = 1e-8;
/// Most negative eigenvalue tolerated in an intermediate density.
pub const PSD_TOL: f64 = 1e-8;
/// Weights at or below this leave the conditional expectation undefined.
pub const MIN_WEIGHT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn matrix(self) -> Matrix2<C64> {
        let o = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Pauli::I => Matrix2::new(one, o, o, one),
            Pauli::X => Matrix2::new(o, one, one, o),
            Pauli::Y => Matrix2::new(o, -i, i, o),
            Pauli::Z => Matrix2::new(one, o, o, -one),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pauli::I => "I",
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Pauli {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "0" => Ok(Pauli::I),
            "X" | "x" => Ok(Pauli::X),
            "Y" | "y" => Ok(Pauli::Y),
            "Z" | "z" => Ok(Pauli::Z),
            other => Err(Error::Parameter(format!("unknown Pauli label {other:?}"))),
        }
    }
}

fn max_abs2(m: &Matrix2<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

fn eigenvalues2(m: &Matrix2<C64>) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)].norm();
    let mid = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mid - r, mid + r)
}

/// A 2x2 logical density, possibly trace-deficient after leakage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogicalDensity {
    block: Matrix2<C64>,
}

impl LogicalDensity {
    pub fn new(block: Matrix2<C64>) -> Result<Self> {
        let defect = max_abs2(&(block - block.adjoint()));
        if defect > 1e-10 {
            return Err(Error::NotHermitian(defect));
        }
        let (lo, _) = eigenvalues2(&block);
        if lo < -1e-9 {
            return Err(Error::NotPsd(lo));
        }
        let w = block.trace().re;
        if w > 1.0 + 1e-9 {
            return Err(Error::InvalidState(format!("weight {w} exceeds one")));
        }
        Ok(Self { block })
    }

    /// `|psi><psi|` for a normalised logical vector.
    pub fn pure(psi: Vector2<C64>) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("state vector has norm {n}")));
        }
        Self::new(psi * psi.adjoint())
    }

    pub fn zero() -> Self {
        Self::pure(Vector2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))).expect("valid state")
    }

    pub fn plus() -> Self {
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::pure(Vector2::new(h, h)).expect("valid state")
    }

    pub fn maximally_mixed() -> Self {
        Self::new(Matrix2::identity() * C64::new(0.5, 0.0)).expect("valid state")
    }

    pub fn block(&self) -> &Matrix2<C64> {
        &self.block
    }

    /// Survival weight `Tr rho_L`.
    pub fn weight(&self) -> f64 {
        self.block.trace().re
    }

    /// Block with eigenvalues in `(-1e-9, 0)` clipped to zero, rescaled to the
    /// original weight. For reporting only.
    pub fn clipped(&self) -> Matrix2<C64> {
        let eig = self.block.symmetric_eigen();
        let w = self.weight();
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        let total = vals.sum();
        if total <= 0.0 {
            return self.block;
        }
        let d = Matrix2::from_diagonal(&vals.map(|v| C64::new(v * w / total, 0.0)));
        eig.eigenvectors * d * eig.eigenvectors.adjoint()
    }
}

/// Leak-aware and conditional expectation of one observable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Expectation {
    pub leak: f64,
    /// `leak / weight`; absent when the weight is numerically zero.
    pub conditional: Option<f64>,
    pub weight: f64,
}

/// `Tr(O rho_L)`, its post-selected counterpart, and the weight.
pub fn expectations(rho: &LogicalDensity, obs: Pauli) -> Result<Expectation> {
    let weight = rho.weight();
    let leak = (obs.matrix() * rho.block()).trace().re;
    let conditional = (weight > MIN_WEIGHT).then(|| leak / weight);
    if let Some(c) = conditional {
        if c.abs() > 1.0 + BOUNDS_TOL {
            return Err(Error::BoundsViolation(format!("conditional <{obs}> = {c}")));
        }
    }
    Ok(Expectation { leak, conditional, weight })
}

fn check_setup(code: &GkpCode, loss: &KrausSet, recovery: &KrausSet) -> Result<()> {
    for d in [loss.dim(), recovery.dim()] {
        if d != code.dim {
            return Err(Error::DimensionMismatch { left: code.dim, right: d });
        }
    }
    Ok(())
}

fn check_input(rho: &LogicalDensity) -> Result<()> {
    let w = rho.weight();
    if (w - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidState(format!("input weight must be 1, got {w}")));
    }
    Ok(())
}

fn check_psd(stage: &str, m: &FockMatrix) -> Result<()> {
    let dim = m.dim();
    let shifted = m.matrix() + nalgebra::DMatrix::<C64>::identity(dim, dim) * C64::new(PSD_TOL, 0.0);
    if shifted.cholesky().is_none() {
        let lo = crate::fock::HermitianSpectrum::new(m.matrix()).min();
        return Err(Error::NumericalInstability(format!("{stage} state has eigenvalue {lo:.3e}")));
    }
    Ok(())
}

fn check_weight(out: &Matrix2<C64>) -> Result<()> {
    let w = out.trace().re;
    if !(-BOUNDS_TOL..=1.0 + BOUNDS_TOL).contains(&w) {
        return Err(Error::BoundsViolation(format!("survival weight {w}")));
    }
    Ok(())
}

/// Every intermediate of one pipeline run, kept for phase-space plots.
#[derive(Clone, Debug)]
pub struct PipelineStages {
    pub encoded: FockMatrix,
    pub lossy: FockMatrix,
    pub recovered: FockMatrix,
    pub output: LogicalDensity,
}

/// Runs the pipeline and keeps the oscillator state after each stage.
pub fn run_pipeline_stages(
    rho_in: &LogicalDensity,
    code: &GkpCode,
    loss: &KrausSet,
    recovery: &KrausSet,
) -> Result<PipelineStages> {
    check_setup(code, loss, recovery)?;
    check_input(rho_in)?;
    let encoded = code.encode(rho_in.block())?;
    let lossy = crate::channel::apply_channel(loss, &encoded)?;
    check_psd("post-loss", &lossy)?;
    let recovered = crate::channel::apply_channel(recovery, &lossy)?;
    check_psd("recovered", &recovered)?;
    let out = code.decode(&recovered)?;
    check_weight(&out)?;
    let output = LogicalDensity::new(out)?;
    Ok(PipelineStages { encoded, lossy, recovered, output })
}

/// `E^dag R(N(E rho E^dag)) E`.
pub fn run_pipeline(rho_in: &LogicalDensity, code: &GkpCode, loss: &KrausSet, recovery: &KrausSet) -> Result<LogicalDensity> {
    check_setup(code, loss, recovery)?;
    check_input(rho_in)?;
    let encoded = code.encode(rho_in.block())?;
    let lossy = crate::channel::apply_channel(loss, &encoded)?;
    check_psd("post-loss", &lossy)?;
    let out = compress(recovery, lossy.matrix(), code);
    check_weight(&out)?;
    LogicalDensity::new(out)
}

fn compress(recovery: &KrausSet, lossy: &nalgebra::DMatrix<C64>, code: &GkpCode) -> Matrix2<C64> {
    let m = recovery.apply_compressed(lossy, &code.isometry);
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// The effective logical map applied to an arbitrary 2x2 operator. Every stage
/// is linear, so no positivity is assumed or checked.
pub fn logical_map(op: &Matrix2<C64>, code: &GkpCode, loss: &KrausSet, recovery: &KrausSet) -> Result<Matrix2<C64>> {
    check_setup(code, loss, recovery)?;
    let encoded = code.encode(op)?;
    let lossy = loss.apply_matrix(encoded.matrix());
    Ok(compress(recovery, &lossy, code))
}

/// Pauli transfer matrix `chi_ij = Tr[s_i L(s_j)] / 2` with its context.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ptm {
    pub chi: Matrix4<f64>,
    pub eta: f64,
    pub nbar: f64,
}

impl Ptm {
    pub fn identity(nbar: f64) -> Self {
        Self { chi: Matrix4::identity(), eta: 1.0, nbar }
    }

    pub fn get(&self, out: Pauli, input: Pauli) -> f64 {
        self.chi[(out.index(), input.index())]
    }

    /// Rebuilds `L(rho)` from the transfer matrix.
    pub fn apply(&self, rho: &Matrix2<C64>) -> Matrix2<C64> {
        let mut acc = Matrix2::zeros();
        for j in Pauli::ALL {
            let r = (j.matrix() * rho).trace();
            for i in Pauli::ALL {
                acc += i.matrix() * (r * 0.5 * self.get(i, j));
            }
        }
        acc
    }
}

/// The whole pipeline as 2x2 Kraus operators `E^dag R_m K_l E`, all pairs
/// obtained from one product of the stacked recovery rows and loss columns.
pub fn logical_kraus(code: &GkpCode, loss: &KrausSet, recovery: &KrausSet) -> Result<Vec<Matrix2<C64>>> {
    check_setup(code, loss, recovery)?;
    let rows = recovery.compressed_rows(&code.isometry);
    let cols = loss.applied_columns(&code.isometry);
    let g = rows * cols;
    let mut ops = Vec::with_capacity(recovery.len() * loss.len());
    for m in 0..recovery.len() {
        for l in 0..loss.len() {
            let b = g.fixed_view::<2, 2>(2 * m, 2 * l).into_owned();
            if b.iter().any(|z| z.norm_sqr() > 0.0) {
                ops.push(b);
            }
        }
    }
    Ok(ops)
}

/// Transfer matrix of the full logical pipeline.
pub fn single_qubit_ptm(code: &GkpCode, loss: &KrausSet, recovery: &KrausSet) -> Result<Ptm> {
    let ops = logical_kraus(code, loss, recovery)?;
    let mut chi = Matrix4::zeros();
    for j in Pauli::ALL {
        let s = j.matrix();
        let image: Matrix2<C64> = ops.iter().map(|k| k * s * k.adjoint()).sum();
        for i in Pauli::ALL {
            let v = (i.matrix() * image).trace() * 0.5;
            if v.im.abs() > 1e-9 {
                return Err(Error::NumericalInstability(format!(
                    "transfer matrix entry ({i},{j}) has imaginary part {:.3e}",
                    v.im
                )));
            }
            if v.re.abs() > 1.0 + BOUNDS_TOL {
                return Err(Error::BoundsViolation(format!("transfer matrix entry ({i},{j}) = {}", v.re)));
            }
            chi[(i.index(), j.index())] = v.re;
        }
    }
    Ok(Ptm { chi, eta: loss.eta, nbar: code.nbar })
}
