//! wasm-bindgen surface for the static page in `www/`.
//!
//! The exported functions are thin wrappers; the work happens in the `*_impl`
//! functions so native tests can exercise it.

use eszne::channel::{loss_kraus, petz_recovery, DEFAULT_EPSILON};
use eszne::engine::Engine;
use eszne::extrapolate::{asymptotic_infidelity, fit_power_law};
use eszne::fock::{FockMatrix, C64};
use eszne::gkp::calibrate_code;
use eszne::pipeline::{expectations, run_pipeline_stages, LogicalDensity, Pauli};
use eszne::wigner::{wigner, Axis};
use wasm_bindgen::prelude::*;

/// Highest energy the page will compute; beyond this a browser tab stalls.
pub const MAX_NBAR: f64 = 12.0;
const MAX_POINTS: usize = 161;

fn js(e: eszne::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Four Wigner grids stored back to back, each `points x points`, q-major.
#[wasm_bindgen]
pub struct WignerStages {
    points: usize,
    extent: f64,
    values: Vec<f64>,
    realized_nbar: f64,
}

#[wasm_bindgen]
impl WignerStages {
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> usize {
        self.points
    }

    #[wasm_bindgen(getter)]
    pub fn extent(&self) -> f64 {
        self.extent
    }

    #[wasm_bindgen(getter, js_name = realizedNbar)]
    pub fn realized_nbar(&self) -> f64 {
        self.realized_nbar
    }

    /// Stage 0 is the code space, then encoded `|+>`, after loss, after recovery.
    pub fn stage(&self, index: usize) -> Vec<f64> {
        let n = self.points * self.points;
        self.values.get(index * n..(index + 1) * n).map(<[f64]>::to_vec).unwrap_or_default()
    }
}

pub fn wigner_stages_impl(nbar: f64, eta: f64, extent: f64, points: usize) -> eszne::Result<WignerStages> {
    if !(nbar <= MAX_NBAR) {
        return Err(eszne::Error::Parameter(format!("energy capped at {MAX_NBAR} in the browser")));
    }
    if points > MAX_POINTS {
        return Err(eszne::Error::Parameter(format!("at most {MAX_POINTS} points per axis")));
    }
    let code = calibrate_code(nbar, None)?;
    let loss = loss_kraus(eta, code.dim)?;
    let recovery = petz_recovery(&loss, &code, DEFAULT_EPSILON)?;
    let stages = run_pipeline_stages(&LogicalDensity::plus(), &code, &loss, &recovery)?;
    let codespace = FockMatrix::from_matrix(code.projector.matrix() * C64::new(0.5, 0.0))?;
    let axis = Axis::new(-extent, extent, points)?;
    let mut values = Vec::with_capacity(4 * points * points);
    for rho in [&codespace, &stages.encoded, &stages.lossy, &stages.recovered] {
        let grid = wigner(rho, &axis, &axis)?;
        values.extend(grid.values.transpose().iter());
    }
    Ok(WignerStages { points, extent, values, realized_nbar: code.nbar })
}

#[wasm_bindgen(js_name = wignerStages)]
pub fn wigner_stages(nbar: f64, eta: f64, extent: f64, points: usize) -> Result<WignerStages, JsError> {
    wigner_stages_impl(nbar, eta, extent, points).map_err(js)
}

/// Conditional `<X>` of `|+>` along an energy ladder and its power-law limit.
#[wasm_bindgen]
pub struct Sweep {
    nbar: Vec<f64>,
    values: Vec<f64>,
    limit: Option<f64>,
    coefficient: Option<f64>,
    exponent: Option<f64>,
}

#[wasm_bindgen]
impl Sweep {
    pub fn nbar(&self) -> Vec<f64> {
        self.nbar.clone()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Absent when fewer than four points were reachable or the fit failed.
    #[wasm_bindgen(getter)]
    pub fn limit(&self) -> Option<f64> {
        self.limit
    }

    #[wasm_bindgen(getter)]
    pub fn coefficient(&self) -> Option<f64> {
        self.coefficient
    }

    #[wasm_bindgen(getter)]
    pub fn exponent(&self) -> Option<f64> {
        self.exponent
    }
}

pub fn sweep_impl(x: f64, nbar_min: f64, nbar_max: f64, step: f64) -> eszne::Result<Sweep> {
    if !(nbar_max <= MAX_NBAR) || !(step > 0.0) || !(nbar_min <= nbar_max) {
        return Err(eszne::Error::Parameter(format!("need nbar_min <= nbar_max <= {MAX_NBAR} and step > 0")));
    }
    let engine = Engine::default();
    let mut out = Sweep { nbar: Vec::new(), values: Vec::new(), limit: None, coefficient: None, exponent: None };
    let count = ((nbar_max - nbar_min) / step + 1e-9).floor() as usize + 1;
    for i in 0..count {
        let n = nbar_min + step * i as f64;
        let cell = match engine.cell(n, x) {
            Ok(c) => c,
            // the lowest energies are out of reach of the code family
            Err(eszne::Error::CalibrationFailed { .. }) => continue,
            Err(e) => return Err(e),
        };
        let rho = LogicalDensity::new(cell.ptm.apply(LogicalDensity::plus().block()))?;
        if let Some(v) = expectations(&rho, Pauli::X)?.conditional {
            out.nbar.push(n);
            out.values.push(v);
        }
    }
    let data: Vec<(f64, f64)> = out.nbar.iter().copied().zip(out.values.iter().copied()).collect();
    if let Ok(fit) = fit_power_law(&data) {
        if fit.converged {
            out.limit = Some(fit.l);
            out.coefficient = Some(fit.c);
            out.exponent = Some(fit.p);
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = sweepPlusX)]
pub fn sweep_plus_x(x: f64, nbar_min: f64, nbar_max: f64, step: f64) -> Result<Sweep, JsError> {
    sweep_impl(x, nbar_min, nbar_max, step).map_err(js)
}

/// `[bound, leading term]` of the infinite-energy infidelity for a qubit.
#[wasm_bindgen(js_name = asymptoticBound)]
pub fn asymptotic_bound(gamma: f64, radius: usize) -> Result<Vec<f64>, JsError> {
    let b = asymptotic_infidelity(gamma, 2, radius).map_err(js)?;
    Ok(vec![b.bound, b.leading_term])
}
