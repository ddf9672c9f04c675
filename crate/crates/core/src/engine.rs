//! Shared cache of calibrated codes and single-qubit transfer matrices.
//!
//! Every later stage (sweeps, two-qubit contraction, random-state trials) asks
//! for the logical response at some `(nbar, x)`; computing it once and handing
//! out copies keeps those workloads cheap and their answers identical.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::channel::{loss_kraus_depth, petz_recovery, DEFAULT_EPSILON};
use crate::error::Result;
use crate::gkp::{calibrate_code_with, CalibrationOptions, CodeSummary, GkpCode, DEFAULT_LATTICE_TOL};
use crate::pipeline::{single_qubit_ptm, Ptm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    /// Petz regularisation, relative to the largest eigenvalue of `N(P_L)`.
    pub epsilon: f64,
    /// Fixed Fock cutoff; `None` uses the energy-dependent default.
    pub dim: Option<usize>,
    pub lattice_tol: f64,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, dim: None, lattice_tol: DEFAULT_LATTICE_TOL }
    }
}

/// Logical response of one `(nbar, x)` cell.
#[derive(Clone, Debug)]
pub struct Cell {
    pub code: CodeSummary,
    pub ptm: Ptm,
}

type Key = (u64, u64);

#[derive(Debug, Default)]
pub struct Engine {
    settings: EngineSettings,
    codes: Mutex<HashMap<u64, Arc<GkpCode>>>,
    cells: Mutex<HashMap<Key, Cell>>,
}

impl Engine {
    pub fn new(settings: EngineSettings) -> Self {
        Self { settings, ..Default::default() }
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    /// Calibrated code at the target energy. Failures are not cached.
    pub fn code(&self, nbar: f64) -> Result<Arc<GkpCode>> {
        if let Some(c) = self.codes.lock().expect("code cache").get(&nbar.to_bits()) {
            return Ok(c.clone());
        }
        let opts = CalibrationOptions { dim: self.settings.dim, lattice_tol: self.settings.lattice_tol };
        let code = Arc::new(calibrate_code_with(nbar, opts)?);
        // two threads may race here; both computed the same code
        Ok(self.codes.lock().expect("code cache").entry(nbar.to_bits()).or_insert(code).clone())
    }

    /// Transfer matrix and code metadata at `(nbar, x)`.
    pub fn cell(&self, nbar: f64, x: f64) -> Result<Cell> {
        let key = (nbar.to_bits(), x.to_bits());
        if let Some(c) = self.cells.lock().expect("cell cache").get(&key) {
            return Ok(c.clone());
        }
        let code = self.code(nbar)?;
        // without loss the pipeline is the identity up to rounding; use it exactly
        let ptm = if x == 0.0 {
            Ptm::identity(code.nbar)
        } else {
            let loss = loss_kraus_depth(x, code.dim)?;
            let recovery = petz_recovery(&loss, &code, self.settings.epsilon)?;
            single_qubit_ptm(&code, &loss, &recovery)?
        };
        let cell = Cell { code: code.summary(), ptm };
        log::debug!("cell nbar {nbar} x {x}: dim {}, delta {:.6}", code.dim, code.delta);
        Ok(self.cells.lock().expect("cell cache").entry(key).or_insert(cell).clone())
    }

    pub fn ptm(&self, nbar: f64, x: f64) -> Result<Ptm> {
        Ok(self.cell(nbar, x)?.ptm)
    }

    /// Seeds the cache with a previously computed cell.
    pub fn insert_cell(&self, nbar: f64, x: f64, cell: Cell) {
        self.cells.lock().expect("cell cache").insert((nbar.to_bits(), x.to_bits()), cell);
    }

    pub fn is_cached(&self, nbar: f64, x: f64) -> bool {
        self.cells.lock().expect("cell cache").contains_key(&(nbar.to_bits(), x.to_bits()))
    }

    pub fn cached_cells(&self) -> usize {
        self.cells.lock().expect("cell cache").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{expectations, run_pipeline, LogicalDensity, Pauli};

    #[test]
    fn cached_cells_are_bitwise_identical() {
        let engine = Engine::default();
        let a = engine.ptm(2.0, 0.2).unwrap();
        let b = engine.ptm(2.0, 0.2).unwrap();
        assert_eq!(a.chi, b.chi);
        assert_eq!(engine.cached_cells(), 1);
        let fresh = Engine::default().ptm(2.0, 0.2).unwrap();
        assert_eq!(a.chi, fresh.chi);
    }

    #[test]
    fn cell_matches_direct_pipeline() {
        let engine = Engine::default();
        let cell = engine.cell(3.0, 0.3).unwrap();
        let code = engine.code(3.0).unwrap();
        let loss = loss_kraus_depth(0.3, code.dim).unwrap();
        let rec = petz_recovery(&loss, &code, DEFAULT_EPSILON).unwrap();
        let out = run_pipeline(&LogicalDensity::plus(), &code, &loss, &rec).unwrap();
        let direct = expectations(&out, Pauli::X).unwrap();
        // |+> has Pauli vector (1, 1, 0, 0); the trace row of the map is (chi_00, chi_0X)
        let w = cell.ptm.get(Pauli::I, Pauli::I) + cell.ptm.get(Pauli::I, Pauli::X);
        let leak = cell.ptm.get(Pauli::X, Pauli::I) + cell.ptm.get(Pauli::X, Pauli::X);
        assert!((leak / w - direct.conditional.unwrap()).abs() < 1e-10);
        assert!((w - direct.weight).abs() < 1e-10);
        assert!((cell.code.realized_nbar - 3.0).abs() < 1e-5);
    }

    #[test]
    fn lossless_cell_is_the_identity() {
        let engine = Engine::default();
        assert_eq!(engine.ptm(2.0, 0.0).unwrap().chi, nalgebra::Matrix4::identity());
        let code = engine.code(2.0).unwrap();
        let loss = loss_kraus_depth(0.0, code.dim).unwrap();
        let rec = petz_recovery(&loss, &code, DEFAULT_EPSILON).unwrap();
        let computed = single_qubit_ptm(&code, &loss, &rec).unwrap();
        assert!((computed.chi - nalgebra::Matrix4::identity()).amax() < 1e-10);
    }

    #[test]
    fn calibration_failures_surface() {
        let engine = Engine::default();
        assert!(engine.code(1.0).is_err());
        assert!(engine.cell(1.0, 0.2).is_err());
    }
}
