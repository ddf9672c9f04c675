//! Run configuration: one TOML file, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::EngineSettings;
use crate::error::{Error, Result};
use crate::extrapolate::{build_schedule, EnergySchedule, DEFAULT_BOOTSTRAP};
use crate::fock::C64;
use crate::pipeline::{LogicalDensity, Pauli};
use crate::two_qubit::DEFAULT_TRIALS;
use crate::wigner::Axis;

/// The defaults, annotated. `Config::default()` parses to the same values.
pub const DEFAULT_CONFIG: &str = r#"# Base seed for bootstrap resampling and random trial states.
seed = 2024
# Worker threads for independent (x, nbar) cells.
jobs = 1
# Output directory.
out = "results"

[engine]
# Petz regularisation, relative to the largest eigenvalue of N(P_L).
epsilon = 1e-12
# Relative amplitude below which lattice terms are dropped.
lattice_tol = 1e-12
# Fixed Fock cutoff; leave unset for max(80, ceil(16 nbar + 40)).
# dim = 200

[schedule]
# Decreasing ladder nbar_j = n0 - j dn, j = 0..count.
n0 = 30.0
dn = 1.0
count = 30

[fit]
# Bootstrap resamples per fit (at least 100).
bootstrap = 1000

[sweep]
x = [0.2]
# zero | one | plus | minus | plus_i | minus_i | mixed
state = "plus"
observable = "X"

[threshold]
# Empty means 25 log-spaced depths in [0.05, 0.7].
x = []
state = "plus"
observable = "X"
# Raw finite-energy values reported next to each extrapolation.
comparison_nbar = [4.0, 10.0]

[two_qubit]
x = [0.2, 0.4]
observable = "XX"

[coherence]
x = [0.2, 0.4]
trials = 50
# Extrapolation cutoffs for the parity analysis; empty means every ladder
# energy with at least four points at or below it.
cutoffs = []

[wigner]
nbar = 4.0
eta = 0.82
q = { min = -6.0, max = 6.0, points = 121 }
p = { min = -6.0, max = 6.0, points = 121 }
"#;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalState {
    Zero,
    One,
    Plus,
    Minus,
    PlusI,
    MinusI,
    Mixed,
}

impl LogicalState {
    pub fn density(self) -> LogicalDensity {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| C64::new(re, im);
        let pure = |a: C64, b: C64| LogicalDensity::pure(nalgebra::Vector2::new(a, b)).expect("normalised");
        match self {
            LogicalState::Zero => LogicalDensity::zero(),
            LogicalState::One => pure(c(0.0, 0.0), c(1.0, 0.0)),
            LogicalState::Plus => LogicalDensity::plus(),
            LogicalState::Minus => pure(c(s, 0.0), c(-s, 0.0)),
            LogicalState::PlusI => pure(c(s, 0.0), c(0.0, s)),
            LogicalState::MinusI => pure(c(s, 0.0), c(0.0, -s)),
            LogicalState::Mixed => LogicalDensity::maximally_mixed(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub n0: f64,
    pub dn: f64,
    pub count: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { n0: 30.0, dn: 1.0, count: 30 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<EnergySchedule> {
        build_schedule(self.n0, self.dn, self.count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub bootstrap: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { bootstrap: DEFAULT_BOOTSTRAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub x: Vec<f64>,
    pub state: LogicalState,
    pub observable: Pauli,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { x: vec![0.2], state: LogicalState::Plus, observable: Pauli::X }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub x: Vec<f64>,
    pub state: LogicalState,
    pub observable: Pauli,
    pub comparison_nbar: Vec<f64>,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self { x: Vec::new(), state: LogicalState::Plus, observable: Pauli::X, comparison_nbar: vec![4.0, 10.0] }
    }
}

impl ThresholdSection {
    pub fn grid(&self) -> Vec<f64> {
        if self.x.is_empty() { log_grid(0.05, 0.7, 25) } else { self.x.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoQubitSection {
    pub x: Vec<f64>,
    pub observable: String,
}

impl Default for TwoQubitSection {
    fn default() -> Self {
        Self { x: vec![0.2, 0.4], observable: "XX".into() }
    }
}

impl TwoQubitSection {
    pub fn observable(&self) -> Result<(Pauli, Pauli)> {
        parse_pair(&self.observable)
    }
}

/// `"XZ"` to `(X, Z)`.
pub fn parse_pair(s: &str) -> Result<(Pauli, Pauli)> {
    let mut chars = s.trim().chars();
    let (Some(a), Some(b), None) = (chars.next(), chars.next(), chars.next()) else {
        return Err(Error::Config(format!("two-qubit observable must be two Pauli letters, got {s:?}")));
    };
    let p = |c: char| c.to_string().parse::<Pauli>().map_err(|_| Error::Config(format!("unknown Pauli {c:?} in {s:?}")));
    Ok((p(a)?, p(b)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceSection {
    pub x: Vec<f64>,
    pub trials: usize,
    pub cutoffs: Vec<f64>,
}

impl Default for CoherenceSection {
    fn default() -> Self {
        Self { x: vec![0.2, 0.4], trials: DEFAULT_TRIALS, cutoffs: Vec::new() }
    }
}

impl CoherenceSection {
    pub fn cutoffs(&self, schedule: &EnergySchedule) -> Vec<f64> {
        if !self.cutoffs.is_empty() {
            return self.cutoffs.clone();
        }
        let mut pts = schedule.points().to_vec();
        pts.sort_by(f64::total_cmp);
        pts.into_iter().skip(3).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerSection {
    pub nbar: f64,
    pub eta: f64,
    pub q: Axis,
    pub p: Axis,
}

impl Default for WignerSection {
    fn default() -> Self {
        let axis = Axis { min: -6.0, max: 6.0, points: 121 };
        Self { nbar: 4.0, eta: 0.82, q: axis, p: axis }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub engine: EngineSettings,
    pub schedule: ScheduleConfig,
    pub fit: FitConfig,
    pub sweep: SweepSection,
    pub threshold: ThresholdSection,
    pub two_qubit: TwoQubitSection,
    pub coherence: CoherenceSection,
    pub wigner: WignerSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 2024,
            jobs: 1,
            out: PathBuf::from("results"),
            engine: EngineSettings::default(),
            schedule: ScheduleConfig::default(),
            fit: FitConfig::default(),
            sweep: SweepSection::default(),
            threshold: ThresholdSection::default(),
            two_qubit: TwoQubitSection::default(),
            coherence: CoherenceSection::default(),
            wigner: WignerSection::default(),
        }
    }
}

/// `count` points spaced evenly in `ln x` from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| if i == 0 { lo } else if i + 1 == count { hi } else { (a + (b - a) * i as f64 / (count - 1) as f64).exp() })
        .collect()
}

fn check_depths(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Config(format!("{name}: loss depth {x} must be finite and non-negative")));
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.schedule.build().map_err(cfg_err)?;
        check_depths("sweep", &self.sweep.x)?;
        check_depths("threshold", &self.threshold.x)?;
        check_depths("two_qubit", &self.two_qubit.x)?;
        check_depths("coherence", &self.coherence.x)?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.fit.bootstrap < 100 {
            return Err(Error::Config(format!("fit.bootstrap must be at least 100, got {}", self.fit.bootstrap)));
        }
        if self.coherence.trials == 0 {
            return Err(Error::Config("coherence.trials must be at least 1".into()));
        }
        if !(self.engine.epsilon >= 0.0) || !(self.engine.lattice_tol > 0.0 && self.engine.lattice_tol < 1.0) {
            return Err(Error::Config("engine.epsilon must be >= 0 and engine.lattice_tol in (0, 1)".into()));
        }
        if let Some(d) = self.engine.dim {
            if d < 2 {
                return Err(Error::Config(format!("engine.dim must be at least 2, got {d}")));
            }
        }
        self.two_qubit.observable()?;
        if !(self.wigner.eta > 0.0 && self.wigner.eta <= 1.0) {
            return Err(Error::Config(format!("wigner.eta must lie in (0, 1], got {}", self.wigner.eta)));
        }
        if !(self.wigner.nbar >= 0.5) {
            return Err(Error::Config(format!("wigner.nbar must be at least 0.5, got {}", self.wigner.nbar)));
        }
        self.wigner.q.validate().map_err(cfg_err)?;
        self.wigner.p.validate().map_err(cfg_err)?;
        if let Some(n) = self.threshold.comparison_nbar.iter().find(|n| !(**n >= 0.5)) {
            return Err(Error::Config(format!("threshold.comparison_nbar entry {n} is below 0.5")));
        }
        Ok(())
    }
}
