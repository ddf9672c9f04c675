//! Finite-energy square-lattice GKP codes.
//!
//! Raw codewords are Gaussian-weighted sums of coherent states centred on the
//! lattice `sqrt(pi/2) [(2 n1 + mu) + i n2]`. The pair is Löwdin
//! orthonormalised, packed into the encoding isometry `E` (dim x 2), and the
//! envelope width is tuned by bisection so that `Tr(n P_L)/2` hits a target.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{check_dim, coherent_log_peak, coherent_projection, FockMatrix, C64};

/// Envelope weight below which lattice terms are dropped.
pub const DEFAULT_LATTICE_TOL: f64 = 1e-12;

/// Largest fraction of a raw codeword's norm that may fall outside the cutoff.
pub const MAX_TAIL_FRACTION: f64 = 1e-2;

/// Bisection bracket for the envelope width.
pub const DELTA_BRACKET: (f64, f64) = (0.05, 1.4);
const DELTA_BRACKET_WIDE: (f64, f64) = (0.025, 1.5);

/// Lattice terms whose projected amplitude cannot exceed `e^-60` are skipped.
const NEGLIGIBLE_LOG_AMPLITUDE: f64 = -60.0;

/// Default Fock cutoff for a target mean photon number.
///
/// The photon-number distribution of a finite-energy grid state decays
/// roughly like `exp(-n / nbar)` with a prefactor growing in `n`, so the
/// truncated norm at `16 nbar + 40` levels is around `1e-6`, and conditional
/// expectations move by well under `1e-6` when the cutoff is doubled.
pub fn default_cutoff(nbar: f64) -> usize {
    let scaled = (CUTOFF_PER_PHOTON * nbar + CUTOFF_OFFSET).ceil() as usize;
    scaled.max(CUTOFF_FLOOR)
}

pub const CUTOFF_FLOOR: usize = 80;
pub const CUTOFF_PER_PHOTON: f64 = 16.0;
pub const CUTOFF_OFFSET: f64 = 40.0;

/// `n_Delta = 1 / (exp(2 Delta^2) - 1)`.
pub fn envelope_energy(delta: f64) -> f64 {
    1.0 / (2.0 * delta * delta).exp_m1()
}

/// Inverse of [`envelope_energy`]: `Delta = sqrt(ln(1 + 1/n) / 2)`.
pub fn envelope_delta(nbar: f64) -> f64 {
    (0.5 * (1.0 / nbar).ln_1p()).sqrt()
}

/// Unit-norm raw codeword and its bookkeeping.
#[derive(Clone, Debug)]
pub struct RawCodeword {
    pub state: DVector<C64>,
    /// Lattice terms that passed the envelope cut.
    pub terms: usize,
    /// Fraction of the untruncated norm lying outside the cutoff.
    pub tail_fraction: f64,
}

struct LatticeTerm {
    a: i64,
    b: i64,
    coeff: C64,
    alpha: C64,
}

fn lattice_terms(delta: f64, mu: u8, tol: f64) -> Vec<LatticeTerm> {
    let s = (PI / 2.0).sqrt();
    // weight = exp(-(pi/2) delta^2 (a^2 + b^2)) >= tol
    let radius2 = -tol.ln() / (PI / 2.0 * delta * delta);
    let radius = radius2.max(0.0).sqrt();
    let rmax = radius.floor() as i64 + 1;
    let mut terms = Vec::new();
    for a in -rmax..=rmax {
        if (a - mu as i64).rem_euclid(2) != 0 {
            continue;
        }
        for b in -rmax..=rmax {
            let r2 = (a * a + b * b) as f64;
            let weight = (-(PI / 2.0) * delta * delta * r2).exp();
            if weight < tol {
                continue;
            }
            // exp(-i pi a b / 2) is the phase picked up when the centre is reached
            // as a product of the stabilizer D(sqrt(2 pi)) and the logical
            // displacements, so each codeword is a +1 eigenstate of the group
            let phase = C64::from_polar(1.0, -PI / 2.0 * (a * b) as f64);
            terms.push(LatticeTerm { a, b, coeff: phase * weight, alpha: C64::new(a as f64, b as f64) * s });
        }
    }
    terms
}

/// `sum_jk c_j* c_k <alpha_j|alpha_k>` over the untruncated space. Coherent
/// overlaps decay like `exp(-|alpha_j - alpha_k|^2 / 2)`, so only lattice
/// neighbours within a fixed index radius contribute.
fn untruncated_norm2(terms: &[LatticeTerm]) -> f64 {
    let index: HashMap<(i64, i64), usize> = terms.iter().enumerate().map(|(i, t)| ((t.a, t.b), i)).collect();
    // (pi/2)(da^2 + db^2)/2 > 80  =>  overlap < e^-80
    let reach = ((160.0 / PI).sqrt()).ceil() as i64 + 1;
    let mut acc = C64::new(0.0, 0.0);
    for tj in terms {
        for da in (-reach..=reach).filter(|d| d % 2 == 0) {
            for db in -reach..=reach {
                let Some(&k) = index.get(&(tj.a + da, tj.b + db)) else { continue };
                let tk = &terms[k];
                let log_overlap = -0.5 * tj.alpha.norm_sqr() - 0.5 * tk.alpha.norm_sqr() + tj.alpha.conj() * tk.alpha;
                acc += tj.coeff.conj() * tk.coeff * log_overlap.exp();
            }
        }
    }
    acc.re
}

fn raw_codeword_parts(delta: f64, mu: u8, dim: usize, tol: f64, with_tail: bool) -> Result<RawCodeword> {
    check_dim(dim)?;
    if !(delta > 0.0 && delta <= 1.5) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1.5], got {delta}")));
    }
    if mu > 1 {
        return Err(Error::Parameter(format!("logical index must be 0 or 1, got {mu}")));
    }
    if !(tol > 0.0 && tol <= 1.0) {
        return Err(Error::Parameter(format!("lattice_tol must lie in (0, 1], got {tol}")));
    }
    let terms = lattice_terms(delta, mu, tol);
    if terms.is_empty() {
        return Err(Error::DegenerateEnvelope { delta, tol });
    }
    let mut state = DVector::zeros(dim);
    for t in &terms {
        if coherent_log_peak(t.alpha.norm(), dim) + t.coeff.norm().ln() < NEGLIGIBLE_LOG_AMPLITUDE {
            continue;
        }
        state.axpy(t.coeff, &coherent_projection(t.alpha, dim), C64::new(1.0, 0.0));
    }
    let kept = state.norm_squared();
    let tail_fraction = if with_tail {
        let full = untruncated_norm2(&terms);
        ((full - kept) / full).max(0.0)
    } else {
        0.0
    };
    if kept <= 0.0 || !kept.is_finite() {
        return Err(Error::CutoffTooSmall { dim, reason: "no lattice term reaches the truncated space".into() });
    }
    if tail_fraction > MAX_TAIL_FRACTION {
        return Err(Error::CutoffTooSmall {
            dim,
            reason: format!("{tail_fraction:.3e} of the codeword norm lies above the cutoff (limit {MAX_TAIL_FRACTION:e})"),
        });
    }
    state.unscale_mut(kept.sqrt());
    Ok(RawCodeword { state, terms: terms.len(), tail_fraction })
}

/// Normalised finite-energy codeword `|phi~_mu(Delta)>` truncated at `dim`.
pub fn raw_codeword(delta: f64, mu: u8, dim: usize, lattice_tol: f64) -> Result<RawCodeword> {
    raw_codeword_parts(delta, mu, dim, lattice_tol, true)
}

/// Gram matrix `G_{mu nu} = <phi~_mu|phi~_nu>` of two unit vectors.
pub fn gram_matrix(raw0: &DVector<C64>, raw1: &DVector<C64>) -> Result<Matrix2<C64>> {
    if raw0.len() != raw1.len() {
        return Err(Error::DimensionMismatch { left: raw0.len(), right: raw1.len() });
    }
    let off = raw0.dotc(raw1);
    let g = Matrix2::new(raw0.dotc(raw0), off, off.conj(), raw1.dotc(raw1));
    let lo = smallest_eigenvalue_2x2(&g);
    if lo < 1e-12 {
        return Err(Error::CodewordsCollinear(lo));
    }
    Ok(g)
}

fn smallest_eigenvalue_2x2(g: &Matrix2<C64>) -> f64 {
    let a = g[(0, 0)].re;
    let d = g[(1, 1)].re;
    let b = g[(0, 1)].norm();
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

/// Symmetric orthonormalisation `|phi_mu> = sum_nu |phi~_nu> (G^-1/2)_{nu mu}`.
pub fn lowdin_orthonormalize(
    raw0: &DVector<C64>,
    raw1: &DVector<C64>,
    gram: &Matrix2<C64>,
) -> Result<(DVector<C64>, DVector<C64>)> {
    let g = DMatrix::from_fn(2, 2, |i, j| gram[(i, j)]);
    let spec = crate::fock::psd_spectrum(&g)?;
    if spec.min() <= 0.0 {
        return Err(Error::CodewordsCollinear(spec.min()));
    }
    let s = spec.inv_sqrt(0.0);
    let phi0 = raw0 * s[(0, 0)] + raw1 * s[(1, 0)];
    let phi1 = raw0 * s[(0, 1)] + raw1 * s[(1, 1)];
    Ok((phi0, phi1))
}

/// `Tr(n P_L) / 2`.
pub fn mean_photon_of_projector(projector: &FockMatrix) -> f64 {
    projector.mean_photon() / 2.0
}

fn mean_photon_of_pair(phi0: &DVector<C64>, phi1: &DVector<C64>) -> f64 {
    let mean = |v: &DVector<C64>| -> f64 { v.iter().enumerate().map(|(n, z)| n as f64 * z.norm_sqr()).sum() };
    0.5 * (mean(phi0) + mean(phi1))
}

/// Calibrated code bundle.
#[derive(Clone, Debug)]
pub struct GkpCode {
    pub delta: f64,
    pub target_nbar: f64,
    pub nbar: f64,
    pub dim: usize,
    pub lattice_tol: f64,
    pub lattice_terms: usize,
    pub tail_fraction: f64,
    pub codewords: [DVector<C64>; 2],
    /// Encoding isometry, `dim x 2`, columns are the codewords.
    pub isometry: DMatrix<C64>,
    pub projector: FockMatrix,
}

/// JSON summary of a calibrated code.
#[derive(Clone, Debug, Serialize)]
pub struct CodeSummary {
    pub target_nbar: f64,
    pub delta: f64,
    pub realized_nbar: f64,
    pub dim: usize,
    pub lattice_terms_retained: usize,
}

impl GkpCode {
    /// Builds the orthonormal code at a fixed envelope width.
    pub fn build(delta: f64, dim: usize, lattice_tol: f64) -> Result<Self> {
        Self::build_inner(delta, dim, lattice_tol, true)
    }

    fn build_inner(delta: f64, dim: usize, lattice_tol: f64, with_tail: bool) -> Result<Self> {
        let r0 = raw_codeword_parts(delta, 0, dim, lattice_tol, with_tail)?;
        let r1 = raw_codeword_parts(delta, 1, dim, lattice_tol, with_tail)?;
        let g = gram_matrix(&r0.state, &r1.state)?;
        let (phi0, phi1) = lowdin_orthonormalize(&r0.state, &r1.state, &g)?;
        let isometry = DMatrix::from_columns(&[phi0.clone(), phi1.clone()]);
        let projector = FockMatrix::from_matrix(&isometry * isometry.adjoint())?;
        let nbar = mean_photon_of_pair(&phi0, &phi1);
        Ok(Self {
            delta,
            target_nbar: nbar,
            nbar,
            dim,
            lattice_tol,
            lattice_terms: r0.terms + r1.terms,
            tail_fraction: r0.tail_fraction.max(r1.tail_fraction),
            codewords: [phi0, phi1],
            isometry,
            projector,
        })
    }

    /// Mean photon number at width `delta` without assembling the projector.
    fn nbar_at(delta: f64, dim: usize, lattice_tol: f64) -> Result<f64> {
        let r0 = raw_codeword_parts(delta, 0, dim, lattice_tol, false)?;
        let r1 = raw_codeword_parts(delta, 1, dim, lattice_tol, false)?;
        let g = gram_matrix(&r0.state, &r1.state)?;
        let (phi0, phi1) = lowdin_orthonormalize(&r0.state, &r1.state, &g)?;
        Ok(mean_photon_of_pair(&phi0, &phi1))
    }

    pub fn summary(&self) -> CodeSummary {
        CodeSummary {
            target_nbar: self.target_nbar,
            delta: self.delta,
            realized_nbar: self.nbar,
            dim: self.dim,
            lattice_terms_retained: self.lattice_terms,
        }
    }

    /// Encodes a 2x2 logical operator: `E rho E^dag`.
    pub fn encode(&self, logical: &Matrix2<C64>) -> Result<FockMatrix> {
        let l = DMatrix::from_fn(2, 2, |i, j| logical[(i, j)]);
        FockMatrix::from_matrix(&self.isometry * l * self.isometry.adjoint())
    }

    /// `E^dag P_L rho P_L E`, which equals `E^dag rho E` since `P_L E = E`.
    pub fn decode(&self, rho: &FockMatrix) -> Result<Matrix2<C64>> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: rho.dim() });
        }
        let m = self.isometry.adjoint() * rho.matrix() * &self.isometry;
        Ok(Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]))
    }
}

/// Options controlling code construction.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationOptions {
    pub dim: Option<usize>,
    pub lattice_tol: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { dim: None, lattice_tol: DEFAULT_LATTICE_TOL }
    }
}

/// Golden-section search for the width of least code energy on `[a, b]`.
fn minimize_energy(mut a: f64, mut b: f64, residual: &impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (residual(c)?, residual(d)?);
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            (d, fd) = (c, fc);
            c = b - ratio * (b - a);
            fc = residual(c)?;
        } else {
            a = c;
            (c, fc) = (d, fd);
            d = a + ratio * (b - a);
            fd = residual(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

/// Finds the envelope width whose code has `Tr(n P_L)/2 = target_nbar`.
pub fn calibrate_code(target_nbar: f64, dim_hint: Option<usize>) -> Result<GkpCode> {
    calibrate_code_with(target_nbar, CalibrationOptions { dim: dim_hint, ..Default::default() })
}

pub fn calibrate_code_with(target_nbar: f64, opts: CalibrationOptions) -> Result<GkpCode> {
    if !(0.5..=200.0).contains(&target_nbar) {
        return Err(Error::Parameter(format!("target nbar must lie in [0.5, 200], got {target_nbar}")));
    }
    let dim = opts.dim.unwrap_or_else(|| default_cutoff(target_nbar));
    let tol = opts.lattice_tol;
    let tolerance = 1e-6 * target_nbar.max(1.0);
    let residual = |delta: f64| -> Result<f64> { Ok(GkpCode::nbar_at(delta, dim, tol)? - target_nbar) };

    // n(delta) decreases in delta up to a turning point near delta = 1, after
    // which the orthonormalised pair gains energy again; the upper end of the
    // bracket is pulled back to that minimum when needed.
    let (mut lo, mut hi) = DELTA_BRACKET;
    let (mut r_lo, mut r_hi) = (residual(lo)?, residual(hi)?);
    if r_lo < 0.0 {
        lo = DELTA_BRACKET_WIDE.0;
        r_lo = residual(lo)?;
    }
    if r_hi > 0.0 {
        let wide = DELTA_BRACKET_WIDE.1;
        let r_wide = residual(wide)?;
        if r_wide <= 0.0 {
            (hi, r_hi) = (wide, r_wide);
        } else {
            let (d_min, r_min) = minimize_energy(lo.max(0.5), wide, &residual)?;
            (hi, r_hi) = (d_min, r_min);
        }
    }
    if !(r_lo >= 0.0 && r_hi <= 0.0) {
        return Err(Error::CalibrationFailed {
            target: target_nbar,
            reason: format!(
                "not bracketed: nbar({lo:.4}) - target = {r_lo:.4e}, nbar({hi:.4}) - target = {r_hi:.4e}; \
                 reachable energies are about [{:.4}, {:.4}] at this cutoff",
                target_nbar + r_hi,
                target_nbar + r_lo
            ),
        });
    }

    let mut best = if r_lo.abs() < r_hi.abs() { (lo, r_lo) } else { (hi, r_hi) };
    let guess = envelope_delta(target_nbar);
    if guess > lo && guess < hi {
        let r = residual(guess)?;
        if r.abs() < best.1.abs() {
            best = (guess, r);
        }
        if r > 0.0 {
            lo = guess;
        } else {
            hi = guess;
        }
    }
    let mut iterations = 0;
    while best.1.abs() > tolerance {
        iterations += 1;
        if iterations > 200 || hi - lo < 1e-15 {
            return Err(Error::CalibrationFailed {
                target: target_nbar,
                reason: format!("bisection stalled at delta = {} with residual {:.3e}", best.0, best.1),
            });
        }
        let mid = 0.5 * (lo + hi);
        let r = residual(mid)?;
        if r.abs() < best.1.abs() {
            best = (mid, r);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut code = GkpCode::build(best.0, dim, tol)?;
    code.target_nbar = target_nbar;
    log::debug!(
        "calibrated nbar {target_nbar}: delta {:.10}, realized {:.10}, dim {dim}, {iterations} bisection steps",
        code.delta,
        code.nbar
    );
    Ok(code)
}
