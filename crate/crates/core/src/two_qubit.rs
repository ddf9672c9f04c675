//! Two logical qubits under independent single-mode channels.
//!
//! A product channel acts on Pauli coefficients mode by mode, so any two-qubit
//! correlator follows from the input's 4x4 coefficient table and the two
//! single-qubit transfer matrices.

use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::extrapolate::EnergySchedule;
use crate::fock::C64;
use crate::pipeline::{Pauli, Ptm, BOUNDS_TOL, MIN_WEIGHT};

/// Observables averaged by the coherence metric.
pub const COHERENCE_OBSERVABLES: [(Pauli, Pauli); 3] = [(Pauli::X, Pauli::X), (Pauli::Y, Pauli::Y), (Pauli::Z, Pauli::Z)];
pub const DEFAULT_TRIALS: usize = 50;

const STATE_TOL: f64 = 1e-9;

pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

fn pauli_pair(mu: Pauli, nu: Pauli) -> Matrix4<C64> {
    kron2(&mu.matrix(), &nu.matrix())
}

/// Real Pauli coefficients `A[mu][nu] = Tr[(s_mu x s_nu) rho]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PauliCoeffs {
    pub a: Matrix4<f64>,
}

impl PauliCoeffs {
    pub fn get(&self, mu: Pauli, nu: Pauli) -> f64 {
        self.a[(mu.index(), nu.index())]
    }

    /// `rho = 1/4 sum A[mu][nu] s_mu x s_nu`.
    pub fn reconstruct(&self) -> Matrix4<C64> {
        let mut rho = Matrix4::zeros();
        for mu in Pauli::ALL {
            for nu in Pauli::ALL {
                rho += pauli_pair(mu, nu) * C64::new(0.25 * self.get(mu, nu), 0.0);
            }
        }
        rho
    }
}

/// Validates a two-qubit density and expands it in the Pauli basis.
pub fn pauli_coeffs(rho: &Matrix4<C64>) -> Result<PauliCoeffs> {
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > STATE_TOL {
        return Err(Error::InvalidState(format!("not Hermitian (defect {herm:.3e})")));
    }
    let tr = rho.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > STATE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let least = sym.symmetric_eigenvalues().min();
    if least < -STATE_TOL {
        return Err(Error::InvalidState(format!("negative eigenvalue {least:.3e}")));
    }
    let mut a = Matrix4::zeros();
    for mu in Pauli::ALL {
        for nu in Pauli::ALL {
            let v = (pauli_pair(mu, nu) * rho).trace();
            if v.im.abs() > 1e-10 {
                return Err(Error::NumericalInstability(format!("coefficient {mu}{nu} has imaginary part {:.3e}", v.im)));
            }
            a[(mu.index(), nu.index())] = v.re;
        }
    }
    Ok(PauliCoeffs { a })
}

/// `|Phi+> = (|00> + |11>) / sqrt 2`.
pub fn phi_plus() -> Matrix4<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = Vector4::new(C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0));
    psi * psi.adjoint()
}

/// Pure state from a normalised vector of eight standard normal draws
/// (real, imaginary per amplitude) from a `Pcg64` seeded with `seed`.
pub fn haar_random_state(seed: u64) -> Matrix4<C64> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut psi = Vector4::from_fn(|_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(re, im)
    });
    psi /= C64::new(psi.norm(), 0.0);
    psi * psi.adjoint()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoQubitExpectation {
    pub leak: f64,
    pub weight: f64,
    pub conditional: Option<f64>,
}

/// `<s_a x s_b>` after independent channels with transfer matrices `chi_a`,
/// `chi_b`, by contracting `sum A[mu][nu] chi_a[a][mu] chi_b[b][nu]`.
pub fn product_expectation(coeffs: &PauliCoeffs, chi_a: &Ptm, chi_b: &Ptm, a: Pauli, b: Pauli) -> Result<TwoQubitExpectation> {
    let contract = |a: Pauli, b: Pauli| -> f64 {
        let row_a = chi_a.chi.row(a.index());
        let row_b = chi_b.chi.row(b.index());
        (row_a * coeffs.a * row_b.transpose())[(0, 0)]
    };
    let leak = contract(a, b);
    let weight = contract(Pauli::I, Pauli::I);
    if !(-BOUNDS_TOL..=1.0 + BOUNDS_TOL).contains(&weight) {
        return Err(Error::BoundsViolation(format!("two-qubit weight {weight}")));
    }
    let conditional = (weight > MIN_WEIGHT).then(|| leak / weight);
    if let Some(c) = conditional {
        if c.abs() > 1.0 + BOUNDS_TOL {
            return Err(Error::BoundsViolation(format!("conditional {a}{b} = {c}")));
        }
    }
    Ok(TwoQubitExpectation { leak, weight, conditional })
}

/// One point of a correlator sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelatorPoint {
    pub nbar: f64,
    pub x: f64,
    pub value: TwoQubitExpectation,
}

/// `<s_a x s_b>` for a fixed input across an energy ladder, both modes alike.
pub fn correlator_sweep(
    engine: &Engine,
    rho: &Matrix4<C64>,
    obs: (Pauli, Pauli),
    schedule: &EnergySchedule,
    x: f64,
) -> Result<Vec<CorrelatorPoint>> {
    let coeffs = pauli_coeffs(rho)?;
    schedule
        .points()
        .iter()
        .map(|&nbar| {
            let ptm = engine.ptm(nbar, x)?;
            let value = product_expectation(&coeffs, &ptm, &ptm, obs.0, obs.1)?;
            Ok(CorrelatorPoint { nbar, x, value })
        })
        .collect()
}

/// Per-trial, per-observable record of the coherence benchmark.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub nbar: f64,
    pub x: f64,
    pub obs: String,
    pub leak: f64,
    pub cond: Option<f64>,
    pub ideal: Option<f64>,
}

/// Trial-averaged coherence error at one energy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoherenceRow {
    pub nbar: f64,
    pub x: f64,
    /// `None` when every trial was excluded.
    pub mean_delta_e: Option<f64>,
    pub excluded_trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub rows: Vec<CoherenceRow>,
    pub trials: Vec<TrialRecord>,
}

/// Mean over Haar-random trials (trial `i` seeded with `seed0 + i`) of the
/// observable-averaged `|<O>_cond(x) - <O>_cond(0)|`, per energy.
///
/// A trial whose conditional value is undefined at some energy is left out of
/// that energy's mean and counted.
pub fn coherence_error(engine: &Engine, trials: usize, schedule: &EnergySchedule, x: f64, seed0: u64) -> Result<CoherenceReport> {
    if trials == 0 {
        return Err(Error::Parameter("at least one trial is required".into()));
    }
    let states: Vec<(u64, PauliCoeffs)> = (0..trials)
        .map(|i| {
            let seed = seed0.wrapping_add(i as u64);
            Ok((seed, pauli_coeffs(&haar_random_state(seed))?))
        })
        .collect::<Result<_>>()?;
    let mut report = CoherenceReport::default();
    for &nbar in schedule.points() {
        let noisy = engine.ptm(nbar, x)?;
        let ideal = engine.ptm(nbar, 0.0)?;
        let mut sum = 0.0;
        let mut used = 0;
        for (trial, (seed, coeffs)) in states.iter().enumerate() {
            let mut delta = 0.0;
            let mut defined = true;
            for (a, b) in COHERENCE_OBSERVABLES {
                let e = product_expectation(coeffs, &noisy, &noisy, a, b)?;
                let r = product_expectation(coeffs, &ideal, &ideal, a, b)?;
                match (e.conditional, r.conditional) {
                    (Some(c), Some(i)) => delta += (c - i).abs(),
                    _ => defined = false,
                }
                report.trials.push(TrialRecord {
                    trial,
                    seed: *seed,
                    nbar,
                    x,
                    obs: format!("{a}{b}"),
                    leak: e.leak,
                    cond: e.conditional,
                    ideal: r.conditional,
                });
            }
            if defined {
                sum += delta / COHERENCE_OBSERVABLES.len() as f64;
                used += 1;
            }
        }
        let excluded = trials - used;
        if excluded > 0 {
            log::warn!("nbar {nbar}, x {x}: {excluded} trials excluded for undefined conditionals");
        }
        report.rows.push(CoherenceRow { nbar, x, mean_delta_e: (used > 0).then(|| sum / used as f64), excluded_trials: excluded });
    }
    Ok(report)
}
