//! Command orchestration behind the `eszne` binary.
//!
//! Every command first makes sure the `(nbar, x)` cells it needs are in the
//! engine cache. Freshly computed cells are appended to `cells.csv` in the
//! output directory as they finish, which is what `--resume` reloads. The
//! result files are then derived from the cache in canonical order, so they do
//! not depend on scheduling or on which cells came from disk.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::Matrix4;
use serde::Serialize;

use crate::channel::{loss_kraus, petz_recovery};
use crate::config::{Config, LogicalState};
use crate::engine::{Cell, Engine};
use crate::error::{Error, Result};
use crate::extrapolate::{fit_with_bootstrap, parity_analysis, residual_diagnostic, EnergySchedule, ParityMode};
use crate::fock::{FockMatrix, C64};
use crate::gkp::CodeSummary;
use crate::io::{fmt_f64, fmt_opt};
use crate::pipeline::{expectations, run_pipeline_stages, Expectation, LogicalDensity, Pauli, Ptm};
use crate::two_qubit::{coherence_error, pauli_coeffs, phi_plus, product_expectation};
use crate::wigner::wigner;

/// Capacity threshold of the pure-loss channel for one qubit per mode.
pub fn capacity_threshold() -> f64 {
    -(2.0f64 / 3.0).ln()
}

const CELLS_FILE: &str = "cells.csv";
const CELLS_META: &str = "cells.meta.json";
const TIMING_FILE: &str = "timing.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// The target energy lies below what the code family can reach.
    Unreachable,
    /// Survival weight too small for a conditional value.
    Undefined,
    Failed,
    Violation,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Unreachable => "unreachable",
            Status::Undefined => "undefined",
            Status::Failed => "failed",
            Status::Violation => "violation",
        }
    }

    fn of_error(e: &Error) -> Self {
        match e {
            Error::CalibrationFailed { .. } => Status::Unreachable,
            Error::BoundsViolation(_) | Error::NotPsd(_) | Error::InvalidState(_) => Status::Violation,
            _ => Status::Failed,
        }
    }
}

/// What a command produced and how it should exit.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub violations: usize,
    pub numerical_failures: usize,
    pub fit_failures: usize,
}

impl Outcome {
    /// 0 ok, 2 numerical or fit failure, 3 physical-bounds violation.
    pub fn exit_code(&self) -> i32 {
        if self.violations > 0 {
            3
        } else if self.numerical_failures + self.fit_failures > 0 {
            2
        } else {
            0
        }
    }

    fn note(&mut self, status: Status) {
        match status {
            Status::Violation => self.violations += 1,
            Status::Failed => self.numerical_failures += 1,
            _ => {}
        }
    }
}

type Key = (u64, u64);

fn key(nbar: f64, x: f64) -> Key {
    (nbar.to_bits(), x.to_bits())
}

struct Sink {
    cells: csv::Writer<File>,
    timing: csv::Writer<File>,
}

pub struct Runner {
    cfg: Config,
    engine: Engine,
    out: PathBuf,
    sink: Mutex<Sink>,
    failures: Mutex<HashMap<Key, (Status, String)>>,
}

const CHI_COLUMNS: usize = 16;

fn cell_header() -> Vec<String> {
    let mut h: Vec<String> = ["nbar_target", "x", "delta", "nbar_realized", "dim", "lattice_terms"].map(String::from).to_vec();
    for i in 0..4 {
        for j in 0..4 {
            h.push(format!("chi_{i}{j}"));
        }
    }
    h
}

fn open_csv(path: &Path, header: &[String], append: bool) -> Result<csv::Writer<File>> {
    let fresh = !append || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header).map_err(csv_err)?;
        w.flush()?;
    }
    Ok(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("{}: malformed field {i} in {:?}", path.display(), rec)))
}

fn load_cells(engine: &Engine, path: &Path) -> Result<usize> {
    if !path.exists() {
        return Ok(0);
    }
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut n = 0;
    for rec in reader.records() {
        // a run killed mid-write can leave a truncated last line
        let Ok(rec) = rec else { break };
        if rec.len() != 6 + CHI_COLUMNS {
            break;
        }
        let nbar: f64 = parse_field(&rec, 0, path)?;
        let x: f64 = parse_field(&rec, 1, path)?;
        let code = CodeSummary {
            target_nbar: nbar,
            delta: parse_field(&rec, 2, path)?,
            realized_nbar: parse_field(&rec, 3, path)?,
            dim: parse_field(&rec, 4, path)?,
            lattice_terms_retained: parse_field(&rec, 5, path)?,
        };
        let mut chi = Matrix4::zeros();
        for k in 0..CHI_COLUMNS {
            chi[(k / 4, k % 4)] = parse_field(&rec, 6 + k, path)?;
        }
        let ptm = Ptm { chi, eta: (-x).exp(), nbar: code.realized_nbar };
        engine.insert_cell(nbar, x, Cell { code, ptm });
        n += 1;
    }
    Ok(n)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(_jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    Ok(items.iter().map(f).collect())
}

/// One single-qubit or correlator row.
struct Row {
    x: f64,
    nbar: f64,
    status: Status,
    code: Option<CodeSummary>,
    value: Option<Expectation>,
}

const ROW_HEADER: [&str; 9] = ["x", "nbar_target", "status", "delta", "nbar_realized", "dim", "weight", "leak", "cond"];

fn write_rows(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(ROW_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.x),
            fmt_f64(r.nbar),
            r.status.as_str().to_string(),
            fmt_opt(r.code.as_ref().map(|c| c.delta)),
            fmt_opt(r.code.as_ref().map(|c| c.realized_nbar)),
            r.code.as_ref().map(|c| c.dim.to_string()).unwrap_or_default(),
            fmt_opt(r.value.map(|v| v.weight)),
            fmt_opt(r.value.map(|v| v.leak)),
            fmt_opt(r.value.and_then(|v| v.conditional)),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Fit export for one dataset.
#[derive(Clone, Debug, Serialize)]
pub struct FitRecord {
    pub x: f64,
    pub status: &'static str,
    pub error: Option<String>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    #[serde(rename = "se_L")]
    pub se_l: Option<f64>,
    pub se_p: Option<f64>,
    pub rss: Option<f64>,
    pub converged: bool,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub n_points: usize,
    pub residual_slope: Option<f64>,
    pub residual_r2: Option<f64>,
    pub bootstrap_failures: Option<usize>,
    pub warning: Option<String>,
    pub weighting: &'static str,
}

impl FitRecord {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Power-law fit with bootstrap errors and the residual diagnostic.
pub fn fit_dataset(x: f64, data: &[(f64, f64)], bootstrap: usize, seed: u64) -> FitRecord {
    let mut rec = FitRecord {
        x,
        status: "failed",
        error: None,
        l: None,
        c: None,
        p: None,
        se_l: None,
        se_p: None,
        rss: None,
        converged: false,
        b: bootstrap,
        seed,
        n_points: data.len(),
        residual_slope: None,
        residual_r2: None,
        bootstrap_failures: None,
        warning: None,
        weighting: "uniform",
    };
    match fit_with_bootstrap(data, bootstrap, seed) {
        Err(e) => rec.error = Some(e.to_string()),
        Ok((fit, boot)) => {
            rec.l = Some(fit.l);
            rec.c = Some(fit.c);
            rec.p = Some(fit.p);
            rec.rss = Some(fit.rss);
            rec.converged = fit.converged;
            rec.se_l = fit.se_l;
            rec.se_p = fit.se_p;
            if let Some(b) = boot {
                rec.bootstrap_failures = Some(b.failures);
                rec.warning = b.warning;
            }
            if fit.converged {
                rec.status = "ok";
                if let Ok(d) = residual_diagnostic(data, &fit) {
                    rec.residual_slope = d.slope;
                    rec.residual_r2 = d.r2;
                }
            } else {
                rec.status = "unconverged";
                rec.error = Some(format!("no convergence after {} iterations", fit.iterations));
            }
        }
    }
    rec
}

impl Runner {
    /// Prepares the output directory. Without `resume` any cached cells there
    /// are discarded.
    pub fn new(cfg: Config, resume: bool) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out.clone();
        fs::create_dir_all(&out)?;
        let engine = Engine::new(cfg.engine);
        let meta = out.join(CELLS_META);
        let cells_path = out.join(CELLS_FILE);
        if resume {
            if meta.exists() {
                let text = fs::read_to_string(&meta)?;
                let stored: crate::engine::EngineSettings =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", meta.display())))?;
                if stored != cfg.engine {
                    return Err(Error::Config(format!(
                        "{} was computed with different engine settings; rerun without --resume",
                        cells_path.display()
                    )));
                }
            }
            let n = load_cells(&engine, &cells_path)?;
            log::info!("resumed {n} cells from {}", cells_path.display());
        }
        write_json(&meta, &cfg.engine)?;
        let n_loaded = engine.cached_cells();
        let cells = open_csv(&cells_path, &cell_header(), resume)?;
        let timing_header: Vec<String> = ["nbar_target", "x", "seconds"].map(String::from).to_vec();
        let timing = open_csv(&out.join(TIMING_FILE), &timing_header, resume && n_loaded > 0)?;
        Ok(Self { cfg, engine, out, sink: Mutex::new(Sink { cells, timing }), failures: Mutex::default() })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn record(&self, nbar: f64, x: f64, cell: &Cell, seconds: f64) -> Result<()> {
        let mut fields = vec![
            fmt_f64(nbar),
            fmt_f64(x),
            fmt_f64(cell.code.delta),
            fmt_f64(cell.code.realized_nbar),
            cell.code.dim.to_string(),
            cell.code.lattice_terms_retained.to_string(),
        ];
        fields.extend(cell.ptm.chi.transpose().iter().map(|v| fmt_f64(*v)));
        let mut sink = self.sink.lock().expect("sink");
        sink.cells.write_record(&fields).map_err(csv_err)?;
        sink.cells.flush()?;
        sink.timing.write_record([fmt_f64(nbar), fmt_f64(x), format!("{seconds:.3}")]).map_err(csv_err)?;
        sink.timing.flush()?;
        Ok(())
    }

    /// Computes every missing cell, most expensive first.
    pub fn ensure_cells(&self, pairs: &[(f64, f64)]) -> Result<()> {
        let mut todo: Vec<(f64, f64)> = Vec::new();
        for &(n, x) in pairs {
            let k = key(n, x);
            let known = self.failures.lock().expect("failures").contains_key(&k);
            if !known && !self.engine.is_cached(n, x) && !todo.iter().any(|&(a, b)| key(a, b) == k) {
                todo.push((n, x));
            }
        }
        todo.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        if !todo.is_empty() {
            log::info!("computing {} cells on {} thread(s)", todo.len(), self.cfg.jobs);
        }
        let results = par_map(self.cfg.jobs, &todo, |&(n, x)| -> Result<()> {
            let t = Instant::now();
            match self.engine.cell(n, x) {
                Ok(cell) => {
                    let s = t.elapsed().as_secs_f64();
                    log::info!("cell nbar {n} x {x}: {s:.2}s");
                    self.record(n, x, &cell, s)
                }
                Err(e) => {
                    let status = Status::of_error(&e);
                    log::warn!("cell nbar {n} x {x}: {} ({e})", status.as_str());
                    self.failures.lock().expect("failures").insert(key(n, x), (status, e.to_string()));
                    Ok(())
                }
            }
        })?;
        results.into_iter().collect()
    }

    fn lookup(&self, nbar: f64, x: f64) -> std::result::Result<Cell, (Status, String)> {
        if let Some(f) = self.failures.lock().expect("failures").get(&key(nbar, x)) {
            return Err(f.clone());
        }
        self.engine.cell(nbar, x).map_err(|e| (Status::of_error(&e), e.to_string()))
    }

    fn grid(xs: &[f64], schedule: &EnergySchedule) -> Vec<(f64, f64)> {
        xs.iter().flat_map(|&x| schedule.points().iter().map(move |&n| (n, x))).collect()
    }

    fn sorted(xs: &[f64]) -> Vec<f64> {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn single_rows(&self, x: f64, schedule: &EnergySchedule, state: LogicalState, obs: Pauli, outcome: &mut Outcome) -> Vec<Row> {
        let rho = state.density();
        schedule
            .points()
            .iter()
            .map(|&nbar| {
                let (status, code, value) = match self.lookup(nbar, x) {
                    Err((s, _)) => (s, None, None),
                    Ok(cell) => {
                        let value = LogicalDensity::new(cell.ptm.apply(rho.block())).and_then(|out| expectations(&out, obs));
                        match value {
                            Ok(v) if v.conditional.is_none() => (Status::Undefined, Some(cell.code), Some(v)),
                            Ok(v) => (Status::Ok, Some(cell.code), Some(v)),
                            Err(e) => (Status::of_error(&e), Some(cell.code), None),
                        }
                    }
                };
                outcome.note(status);
                Row { x, nbar, status, code, value }
            })
            .collect()
    }

    fn fit_rows(&self, x: f64, rows: &[Row], outcome: &mut Outcome) -> FitRecord {
        let data: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.status == Status::Ok)
            .filter_map(|r| r.value.and_then(|v| v.conditional).map(|c| (r.nbar, c)))
            .collect();
        let fit = fit_dataset(x, &data, self.cfg.fit.bootstrap, self.cfg.seed);
        if !fit.ok() {
            log::warn!("fit at x = {x}: {}", fit.error.as_deref().unwrap_or(fit.status));
            outcome.fit_failures += 1;
        }
        fit
    }

    /// Single-qubit sweeps and fits: `sweep.csv`, `fits.json`.
    pub fn sweep(&self) -> Result<Outcome> {
        let schedule = self.cfg.schedule.build()?;
        let xs = Self::sorted(&self.cfg.sweep.x);
        self.ensure_cells(&Self::grid(&xs, &schedule))?;
        let mut outcome = Outcome::default();
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        for &x in &xs {
            let r = self.single_rows(x, &schedule, self.cfg.sweep.state, self.cfg.sweep.observable, &mut outcome);
            fits.push(self.fit_rows(x, &r, &mut outcome));
            rows.extend(r);
        }
        let csv_path = self.out.join("sweep.csv");
        write_rows(&csv_path, &rows)?;
        let json_path = self.out.join("fits.json");
        write_json(&json_path, &fits)?;
        outcome.files = vec![csv_path, json_path];
        Ok(outcome)
    }

    /// Extrapolated limit against loss depth: `threshold.csv`, `threshold.json`.
    pub fn threshold(&self) -> Result<Outcome> {
        let schedule = self.cfg.schedule.build()?;
        let sec = &self.cfg.threshold;
        let xs = Self::sorted(&sec.grid());
        let mut pairs = Self::grid(&xs, &schedule);
        for &x in &xs {
            pairs.extend(sec.comparison_nbar.iter().map(|&n| (n, x)));
        }
        self.ensure_cells(&pairs)?;
        let mut outcome = Outcome::default();
        let compare = EnergySchedule::from_points(Self::sorted(&sec.comparison_nbar))
            .ok()
            .map(|s| s.points().to_vec())
            .unwrap_or_default();
        let mut header: Vec<String> = ["x", "L", "se_L", "p", "se_p", "converged"].map(String::from).to_vec();
        header.extend(compare.iter().map(|n| format!("cond_n{n}")));
        let csv_path = self.out.join("threshold.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        w.write_record(&header).map_err(csv_err)?;
        let mut fits = Vec::new();
        for &x in &xs {
            let rows = self.single_rows(x, &schedule, sec.state, sec.observable, &mut outcome);
            let fit = self.fit_rows(x, &rows, &mut outcome);
            let mut fields =
                vec![fmt_f64(x), fmt_opt(fit.l), fmt_opt(fit.se_l), fmt_opt(fit.p), fmt_opt(fit.se_p), fit.converged.to_string()];
            let cmp_schedule = EnergySchedule::from_points(compare.clone());
            let cmp_rows = match &cmp_schedule {
                Ok(s) => self.single_rows(x, s, sec.state, sec.observable, &mut Outcome::default()),
                Err(_) => Vec::new(),
            };
            fields.extend(cmp_rows.iter().map(|r| fmt_opt(r.value.and_then(|v| v.conditional))));
            w.write_record(&fields).map_err(csv_err)?;
            fits.push(fit);
        }
        w.flush()?;
        #[derive(Serialize)]
        struct Meta<'a> {
            x_crit: f64,
            state: LogicalState,
            observable: Pauli,
            comparison_nbar: &'a [f64],
            fits: &'a [FitRecord],
        }
        let json_path = self.out.join("threshold.json");
        write_json(
            &json_path,
            &Meta { x_crit: capacity_threshold(), state: sec.state, observable: sec.observable, comparison_nbar: &compare, fits: &fits },
        )?;
        outcome.files = vec![csv_path, json_path];
        Ok(outcome)
    }

    /// `|Phi+>` correlator sweeps and fits: `two_qubit.csv`, `two_qubit_fits.json`.
    pub fn two_qubit(&self) -> Result<Outcome> {
        let schedule = self.cfg.schedule.build()?;
        let xs = Self::sorted(&self.cfg.two_qubit.x);
        let (a, b) = self.cfg.two_qubit.observable()?;
        self.ensure_cells(&Self::grid(&xs, &schedule))?;
        let coeffs = pauli_coeffs(&phi_plus())?;
        let mut outcome = Outcome::default();
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        for &x in &xs {
            let r: Vec<Row> = schedule
                .points()
                .iter()
                .map(|&nbar| {
                    let (status, code, value) = match self.lookup(nbar, x) {
                        Err((s, _)) => (s, None, None),
                        Ok(cell) => match product_expectation(&coeffs, &cell.ptm, &cell.ptm, a, b) {
                            Ok(v) => {
                                let e = Expectation { leak: v.leak, conditional: v.conditional, weight: v.weight };
                                let s = if v.conditional.is_some() { Status::Ok } else { Status::Undefined };
                                (s, Some(cell.code), Some(e))
                            }
                            Err(e) => (Status::of_error(&e), Some(cell.code), None),
                        },
                    };
                    outcome.note(status);
                    Row { x, nbar, status, code, value }
                })
                .collect();
            fits.push(self.fit_rows(x, &r, &mut outcome));
            rows.extend(r);
        }
        let csv_path = self.out.join("two_qubit.csv");
        write_rows(&csv_path, &rows)?;
        let json_path = self.out.join("two_qubit_fits.json");
        write_json(&json_path, &fits)?;
        outcome.files = vec![csv_path, json_path];
        Ok(outcome)
    }

    fn coherence_tables(&self, write_trials: bool, outcome: &mut Outcome) -> Result<Vec<(f64, Vec<(f64, f64)>)>> {
        let schedule = self.cfg.schedule.build()?;
        let sec = &self.cfg.coherence;
        let xs = Self::sorted(&sec.x);
        let mut pairs = Self::grid(&xs, &schedule);
        pairs.extend(schedule.points().iter().map(|&n| (n, 0.0)));
        self.ensure_cells(&pairs)?;

        let mut trial_w = if write_trials {
            let p = self.out.join("coherence_trials.csv");
            let mut w = csv::Writer::from_path(&p).map_err(csv_err)?;
            w.write_record(["trial", "seed", "nbar", "x", "obs", "leak", "cond", "ideal"]).map_err(csv_err)?;
            outcome.files.push(p);
            Some(w)
        } else {
            None
        };
        let agg_path = self.out.join("coherence.csv");
        let mut agg = csv::Writer::from_path(&agg_path).map_err(csv_err)?;
        agg.write_record(["nbar", "x", "mean_delta_e", "excluded_trials", "status"]).map_err(csv_err)?;
        outcome.files.push(agg_path);

        let mut series = Vec::new();
        for &x in &xs {
            let mut usable = Vec::new();
            let mut statuses = Vec::new();
            for &n in schedule.points() {
                let s = match (self.lookup(n, x), self.lookup(n, 0.0)) {
                    (Ok(_), Ok(_)) => Status::Ok,
                    (Err((s, _)), _) | (_, Err((s, _))) => s,
                };
                outcome.note(s);
                if s == Status::Ok {
                    usable.push(n);
                }
                statuses.push((n, s));
            }
            let report = if usable.is_empty() {
                None
            } else {
                Some(coherence_error(&self.engine, sec.trials, &EnergySchedule::from_points(usable)?, x, self.cfg.seed)?)
            };
            let mut data = Vec::new();
            for (n, s) in statuses {
                let row = report.as_ref().and_then(|r| r.rows.iter().find(|row| row.nbar == n));
                let (mean, excl, s) = match row {
                    Some(r) if r.mean_delta_e.is_none() => (None, r.excluded_trials, Status::Undefined),
                    Some(r) => (r.mean_delta_e, r.excluded_trials, s),
                    None => (None, 0, s),
                };
                if let Some(m) = mean {
                    data.push((n, m));
                }
                agg.write_record([fmt_f64(n), fmt_f64(x), fmt_opt(mean), excl.to_string(), s.as_str().to_string()])
                    .map_err(csv_err)?;
            }
            if let (Some(w), Some(r)) = (trial_w.as_mut(), report.as_ref()) {
                for t in &r.trials {
                    w.write_record([
                        t.trial.to_string(),
                        t.seed.to_string(),
                        fmt_f64(t.nbar),
                        fmt_f64(t.x),
                        t.obs.clone(),
                        fmt_f64(t.leak),
                        fmt_opt(t.cond),
                        fmt_opt(t.ideal),
                    ])
                    .map_err(csv_err)?;
                }
            }
            series.push((x, data));
        }
        agg.flush()?;
        if let Some(mut w) = trial_w {
            w.flush()?;
        }
        Ok(series)
    }

    fn parity_files(&self, series: &[(f64, Vec<(f64, f64)>)], outcome: &mut Outcome) -> Result<()> {
        let path = self.out.join("parity.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(["x", "n_cut", "n_points", "L", "converged", "raw_benchmark"]).map_err(csv_err)?;
        #[derive(Serialize)]
        struct ParityMeta {
            x: f64,
            raw_nbar: Option<f64>,
            raw_benchmark: Option<f64>,
            parity_point: Option<f64>,
            error: Option<String>,
        }
        let mut meta = Vec::new();
        for (x, data) in series {
            let Some(&(raw_n, raw)) = data.iter().max_by(|a, b| a.0.total_cmp(&b.0)) else {
                meta.push(ParityMeta { x: *x, raw_nbar: None, raw_benchmark: None, parity_point: None, error: Some("no data".into()) });
                outcome.fit_failures += 1;
                continue;
            };
            let schedule = EnergySchedule::from_points({
                let mut n: Vec<f64> = data.iter().map(|d| d.0).collect();
                n.sort_by(f64::total_cmp);
                n
            })?;
            let cutoffs = self.cfg.coherence.cutoffs(&schedule);
            match parity_analysis(data, raw, &cutoffs, ParityMode::AbsoluteError) {
                Ok(res) => {
                    for p in &res.curve {
                        w.write_record([
                            fmt_f64(*x),
                            fmt_f64(p.n_cut),
                            p.n_points.to_string(),
                            fmt_opt(p.l),
                            p.converged.to_string(),
                            fmt_f64(raw),
                        ])
                        .map_err(csv_err)?;
                    }
                    meta.push(ParityMeta { x: *x, raw_nbar: Some(raw_n), raw_benchmark: Some(raw), parity_point: res.parity_point, error: None });
                }
                Err(e) => {
                    outcome.fit_failures += 1;
                    meta.push(ParityMeta { x: *x, raw_nbar: Some(raw_n), raw_benchmark: Some(raw), parity_point: None, error: Some(e.to_string()) });
                }
            }
        }
        w.flush()?;
        let json_path = self.out.join("parity.json");
        write_json(&json_path, &meta)?;
        outcome.files.push(path);
        outcome.files.push(json_path);
        Ok(())
    }

    /// Haar-random coherence error, its extrapolation and the parity analysis.
    pub fn random_coherence(&self) -> Result<Outcome> {
        let mut outcome = Outcome::default();
        let series = self.coherence_tables(true, &mut outcome)?;
        let fits: Vec<FitRecord> = series
            .iter()
            .map(|(x, data)| {
                let fit = fit_dataset(*x, data, self.cfg.fit.bootstrap, self.cfg.seed);
                if !fit.ok() {
                    outcome.fit_failures += 1;
                }
                fit
            })
            .collect();
        let json_path = self.out.join("coherence_fits.json");
        write_json(&json_path, &fits)?;
        outcome.files.push(json_path);
        self.parity_files(&series, &mut outcome)?;
        Ok(outcome)
    }

    /// Parity analysis of the coherence error alone.
    pub fn parity(&self) -> Result<Outcome> {
        let mut outcome = Outcome::default();
        let series = self.coherence_tables(false, &mut outcome)?;
        self.parity_files(&series, &mut outcome)?;
        Ok(outcome)
    }

    /// Wigner grids of the four pipeline stages for `|+>`.
    pub fn wigner(&self) -> Result<Outcome> {
        let sec = &self.cfg.wigner;
        let code = self.engine.code(sec.nbar)?;
        let loss = loss_kraus(sec.eta, code.dim)?;
        let recovery = petz_recovery(&loss, &code, self.cfg.engine.epsilon)?;
        let stages = run_pipeline_stages(&LogicalDensity::plus(), &code, &loss, &recovery)?;
        let codespace = FockMatrix::from_matrix(code.projector.matrix() * C64::new(0.5, 0.0))?;
        let mut outcome = Outcome::default();
        #[derive(Serialize)]
        struct StageMeta {
            stage: &'static str,
            file: String,
            min: f64,
            max: f64,
            integral: f64,
        }
        let mut meta = Vec::new();
        for (stage, rho) in
            [("codespace", &codespace), ("encoded", &stages.encoded), ("lossy", &stages.lossy), ("recovered", &stages.recovered)]
        {
            let grid = wigner(rho, &sec.q, &sec.p)?;
            let name = format!("wigner_{stage}.csv");
            let path = self.out.join(&name);
            let mut f = std::io::BufWriter::new(File::create(&path)?);
            grid.write_csv(&mut f)?;
            f.flush()?;
            meta.push(StageMeta { stage, file: name, min: grid.min(), max: grid.max(), integral: grid.integral() });
            outcome.files.push(path);
        }
        #[derive(Serialize)]
        struct Meta {
            eta: f64,
            code: CodeSummary,
            stages: Vec<StageMeta>,
        }
        let json_path = self.out.join("wigner.json");
        write_json(&json_path, &Meta { eta: sec.eta, code: code.summary(), stages: meta })?;
        outcome.files.push(json_path);
        Ok(outcome)
    }
}
