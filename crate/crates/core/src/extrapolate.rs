//! Energy ladders and the power-law extrapolation `y(n) = L + c n^-p`.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest admissible energy on a schedule.
pub const MIN_ENERGY: f64 = 0.5;
pub const MAX_ITERATIONS: usize = 500;
pub const P_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const DEFAULT_BOOTSTRAP: usize = 1000;
/// Residuals `|y - L|` below this are left out of the log-log regression.
pub const RESIDUAL_FLOOR: f64 = 1e-15;
/// Fraction of failed bootstrap refits above which a warning is attached.
pub const BOOTSTRAP_FAILURE_WARN: f64 = 0.2;

/// A strictly monotone list of target energies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergySchedule {
    points: Vec<f64>,
}

impl EnergySchedule {
    /// Arbitrary strictly monotone ladder.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Schedule("schedule is empty".into()));
        }
        if let Some(bad) = points.iter().find(|&&n| !(n >= MIN_ENERGY) || !n.is_finite()) {
            return Err(Error::Schedule(format!("energy {bad} is below {MIN_ENERGY}")));
        }
        let up = points.windows(2).all(|w| w[1] > w[0]);
        let down = points.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Schedule("energies must be strictly monotone".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.points.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Decreasing arithmetic ladder `n_j = n0 - j dn`, `j = 0..count`.
pub fn build_schedule(n0: f64, dn: f64, count: usize) -> Result<EnergySchedule> {
    if !(dn > 0.0) || !dn.is_finite() {
        return Err(Error::Schedule(format!("step must be positive, got {dn}")));
    }
    if count == 0 {
        return Err(Error::Schedule("schedule needs at least one point".into()));
    }
    let last = n0 - (count - 1) as f64 * dn;
    if !(last >= MIN_ENERGY) {
        return Err(Error::Schedule(format!("last energy {last} falls below {MIN_ENERGY}")));
    }
    EnergySchedule::from_points((0..count).map(|j| n0 - j as f64 * dn).collect())
}

/// Least-squares power-law fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub l: f64,
    pub c: f64,
    pub p: f64,
    pub se_l: Option<f64>,
    pub se_p: Option<f64>,
    /// `(n, y - model(n))` per data point.
    pub residuals: Vec<(f64, f64)>,
    pub converged: bool,
    pub rss: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn model(&self, n: f64) -> f64 {
        model(self.l, self.c, self.p, n)
    }
}

fn model(l: f64, c: f64, p: f64, n: f64) -> f64 {
    l + c * n.powf(-p)
}

fn rss_of(data: &[(f64, f64)], th: &Vector3<f64>) -> f64 {
    data.iter().map(|&(n, y)| (y - model(th[0], th[1], th[2], n)).powi(2)).sum()
}

fn validate_data(data: &[(f64, f64)]) -> Result<()> {
    if data.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: data.len() });
    }
    if let Some(&(n, y)) = data.iter().find(|(n, y)| !(*n > 0.0) || !n.is_finite() || !y.is_finite()) {
        return Err(Error::FitFailed(format!("invalid data point ({n}, {y})")));
    }
    let mut ns: Vec<f64> = data.iter().map(|d| d.0).collect();
    ns.sort_by(f64::total_cmp);
    if ns.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::FitFailed("energies must be distinct".into()));
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_BOUNDS.0.next_up(), P_BOUNDS.1)
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r2)`.
fn linear_regression(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((a, b, r2))
}

fn initial_guess(data: &[(f64, f64)]) -> Vector3<f64> {
    let (_, l0) = data.iter().copied().fold((f64::NEG_INFINITY, 0.0), |acc, d| if d.0 > acc.0 { d } else { acc });
    let (_, y_small_n) = data.iter().copied().fold((f64::INFINITY, 0.0), |acc, d| if d.0 < acc.0 { d } else { acc });
    let y_min = data.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let fallback = Vector3::new(l0, y_min - l0, 1.0);

    let direction = (y_small_n - l0).signum();
    let s = 1e-9 * direction;
    let (xs, ys): (Vec<f64>, Vec<f64>) = data
        .iter()
        .filter(|(_, y)| (y - l0).abs() > 1e-12)
        .map(|&(n, y)| (n.ln(), (y - l0 - s).abs().ln()))
        .unzip();
    match linear_regression(&xs, &ys) {
        Some((a, b, _)) if a.is_finite() && b.is_finite() && direction != 0.0 => {
            Vector3::new(l0, direction * a.exp(), clamp_p(-b))
        }
        _ => fallback,
    }
}

/// Fits `y = L + c n^-p` by Levenberg-Marquardt with Marquardt scaling.
///
/// Starts from `L0 = y(n_max)` and a log-log regression for `(c0, p0)`, keeps
/// `p` inside `(1e-3, 10]`, and stops after [`MAX_ITERATIONS`].
///
/// The iteration runs on data centred by the mean and divided by the largest
/// deviation, so shifting or scaling `y` moves `(L, c)` exactly along with it.
pub fn fit_power_law(data: &[(f64, f64)]) -> Result<FitResult> {
    validate_data(data)?;
    let mean = data.iter().map(|d| d.1).sum::<f64>() / data.len() as f64;
    let spread = data.iter().map(|d| (d.1 - mean).abs()).fold(0.0, f64::max);
    let (l, c, p, converged, iterations) = if spread > 1e-14 * mean.abs() {
        let unit: Vec<(f64, f64)> = data.iter().map(|&(n, y)| (n, (y - mean) / spread)).collect();
        let (th, converged, iterations) = levenberg_marquardt(&unit);
        (mean + spread * th[0], spread * th[1], th[2], converged, iterations)
    } else {
        (mean, 0.0, 1.0, true, 0)
    };
    if ![l, c, p].iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailed("non-finite parameters".into()));
    }
    let residuals: Vec<(f64, f64)> = data.iter().map(|&(n, y)| (n, y - model(l, c, p, n))).collect();
    let rss = residuals.iter().map(|r| r.1 * r.1).sum();
    Ok(FitResult { l, c, p, se_l: None, se_p: None, residuals, converged, rss, iterations })
}

fn levenberg_marquardt(data: &[(f64, f64)]) -> (Vector3<f64>, bool, usize) {
    let scale: f64 = 1.0;
    let mut th = initial_guess(data);
    let mut rss = rss_of(data, &th);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if rss <= (1e-15 * scale).powi(2) * data.len() as f64 {
            converged = true;
            break;
        }
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(n, y) in data {
            let t = n.powf(-th[2]);
            let r = y - model(th[0], th[1], th[2], n);
            let j = Vector3::new(1.0, t, -th[1] * n.ln() * t);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let diag_max = jtj.diagonal().max();
        let diag = jtj.diagonal().map(|d| d.max(1e-12 * diag_max));

        let mut accepted = None;
        while lambda < 1e20 {
            let mut a = jtj;
            for k in 0..3 {
                a[(k, k)] += lambda * diag[k];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut cand = th + step;
            cand[2] = clamp_p(cand[2]);
            let cand_rss = rss_of(data, &cand);
            if cand_rss.is_finite() && cand_rss < rss {
                accepted = Some((cand, cand_rss));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            // a step too small to register is as good as a converged one
            let tiny = (cand - th).iter().zip(th.iter()).all(|(d, t)| d.abs() <= 1e-12 * (t.abs() + 1e-12));
            if tiny {
                break;
            }
            lambda *= 10.0;
        }
        match accepted {
            Some((cand, cand_rss)) => {
                let rel_step = (cand - th).iter().zip(th.iter()).map(|(d, t)| d.abs() / (t.abs() + 1e-12)).fold(0.0, f64::max);
                let rel_gain = (rss - cand_rss) / rss.max(1e-300);
                th = cand;
                rss = cand_rss;
                if rel_step < 1e-12 || rel_gain < 1e-15 {
                    converged = true;
                    break;
                }
            }
            None => {
                // no downhill step: converged only if the gradient has vanished
                let gnorm = jtr.iter().zip(diag.iter()).map(|(g, d)| g.abs() / d.sqrt()).fold(0.0, f64::max);
                converged = gnorm <= 1e-7 * rss.sqrt().max(1e-15 * scale);
                if !converged && lambda >= 1e20 {
                    log::debug!("power-law fit stalled: rss {rss:e}, scaled gradient {gnorm:e}");
                }
                break;
            }
        }
    }
    (th, converged, iterations)
}

/// Bootstrap spread of `L` and `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub se_l: f64,
    pub se_p: f64,
    pub resamples: usize,
    pub failures: usize,
    pub seed: u64,
    pub warning: Option<String>,
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

fn refit(data: &[(f64, f64)], seed: u64) -> Option<(f64, f64)> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut sample: Vec<(f64, f64)> = (0..data.len()).map(|_| data[rng.random_range(0..data.len())]).collect();
    // repeated draws of one point carry identical (n, y); fold them into one
    sample.sort_by(|a, b| a.0.total_cmp(&b.0));
    sample.dedup_by(|a, b| a.0 == b.0);
    let fit = fit_power_law(&sample).ok()?;
    fit.converged.then_some((fit.l, fit.p))
}

/// Nonparametric bootstrap: `resamples` refits on with-replacement draws,
/// resample `b` seeded with `seed + b`.
///
/// Resamples are drawn with replacement and then reduced to their distinct
/// points, since the model is fitted to distinct energies; draws with fewer
/// than four distinct energies count as failures.
pub fn bootstrap_se(data: &[(f64, f64)], fit: &FitResult, resamples: usize, seed: u64) -> Result<BootstrapSummary> {
    if !fit.converged {
        return Err(Error::FitFailed("bootstrap needs a converged fit".into()));
    }
    if resamples < 100 {
        return Err(Error::Parameter(format!("bootstrap needs at least 100 resamples, got {resamples}")));
    }
    validate_data(data)?;
    let run = |b: usize| refit(data, seed.wrapping_add(b as u64));
    #[cfg(feature = "parallel")]
    let outcomes: Vec<Option<(f64, f64)>> = {
        use rayon::prelude::*;
        (0..resamples).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Option<(f64, f64)>> = (0..resamples).map(run).collect();

    let ok: Vec<(f64, f64)> = outcomes.iter().flatten().copied().collect();
    let failures = resamples - ok.len();
    if ok.len() < 2 {
        return Err(Error::FitFailed(format!("only {} of {resamples} bootstrap refits succeeded", ok.len())));
    }
    let warning = (failures as f64 > BOOTSTRAP_FAILURE_WARN * resamples as f64)
        .then(|| format!("unstable bootstrap: {failures} of {resamples} refits failed"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let ls: Vec<f64> = ok.iter().map(|v| v.0).collect();
    let ps: Vec<f64> = ok.iter().map(|v| v.1).collect();
    Ok(BootstrapSummary { se_l: sample_std(&ls), se_p: sample_std(&ps), resamples, failures, seed, warning })
}

/// Fit plus bootstrap errors in one call.
pub fn fit_with_bootstrap(data: &[(f64, f64)], resamples: usize, seed: u64) -> Result<(FitResult, Option<BootstrapSummary>)> {
    let mut fit = fit_power_law(data)?;
    if !fit.converged {
        return Ok((fit, None));
    }
    let boot = bootstrap_se(data, &fit, resamples, seed)?;
    fit.se_l = Some(boot.se_l);
    fit.se_p = Some(boot.se_p);
    Ok((fit, Some(boot)))
}

/// Log-log residuals `log|y - L|` against `log n`, with their regression.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualDiagnostic {
    pub points: Vec<(f64, f64)>,
    /// Indices of data points with `|y - L|` under [`RESIDUAL_FLOOR`].
    pub excluded: Vec<usize>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
}

pub fn residual_diagnostic(data: &[(f64, f64)], fit: &FitResult) -> Result<ResidualDiagnostic> {
    if !fit.converged {
        return Err(Error::FitFailed("residual diagnostic needs a converged fit".into()));
    }
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (i, &(n, y)) in data.iter().enumerate() {
        let r = (y - fit.l).abs();
        if r < RESIDUAL_FLOOR {
            excluded.push(i);
        } else {
            points.push((n.ln(), r.ln()));
        }
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let reg = linear_regression(&xs, &ys);
    Ok(ResidualDiagnostic { points, excluded, slope: reg.map(|r| r.1), r2: reg.map(|r| r.2) })
}

/// How an extrapolated value is compared with the raw benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ParityMode {
    /// `|L| <= |raw|`, for error metrics whose ideal value is zero.
    AbsoluteError,
    /// `|L - ideal| <= |raw - ideal|`, for expectation values.
    DistanceToIdeal(f64),
}

impl ParityMode {
    fn distance(&self, v: f64) -> f64 {
        match self {
            ParityMode::AbsoluteError => v.abs(),
            ParityMode::DistanceToIdeal(ideal) => (v - ideal).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityPoint {
    pub n_cut: f64,
    pub n_points: usize,
    /// Extrapolated limit from points with `n <= n_cut`; absent if the fit failed.
    pub l: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParityResult {
    pub curve: Vec<ParityPoint>,
    pub raw_benchmark: f64,
    pub mode: ParityMode,
    /// Smallest cutoff whose extrapolation is at least as accurate as the raw
    /// benchmark; `None` when no cutoff reaches parity.
    pub parity_point: Option<f64>,
}

/// Refits on growing prefixes `n <= n_cut` and finds where extrapolation first
/// matches the raw benchmark.
pub fn parity_analysis(data: &[(f64, f64)], raw_benchmark: f64, cutoffs: &[f64], mode: ParityMode) -> Result<ParityResult> {
    let mut curve = Vec::with_capacity(cutoffs.len());
    let target = mode.distance(raw_benchmark);
    let mut parity_point = None;
    let mut sorted = cutoffs.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &n_cut in &sorted {
        let subset: Vec<(f64, f64)> = data.iter().copied().filter(|d| d.0 <= n_cut).collect();
        if subset.len() < 4 {
            return Err(Error::InsufficientData { needed: 4, got: subset.len() });
        }
        let fit = fit_power_law(&subset).ok();
        let l = fit.as_ref().filter(|f| f.converged).map(|f| f.l);
        if parity_point.is_none() {
            if let Some(l) = l {
                if mode.distance(l) <= target {
                    parity_point = Some(n_cut);
                }
            }
        }
        curve.push(ParityPoint { n_cut, n_points: subset.len(), l, converged: fit.is_some_and(|f| f.converged) });
    }
    Ok(ParityResult { curve, raw_benchmark, mode, parity_point })
}

/// Infinite-energy infidelity bound from the square dual lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AsymptoticBound {
    pub bound: f64,
    pub leading_term: f64,
}

/// `1/4 sum_{x != 0} exp[-pi (1-gamma)/gamma |x|^2]` over the dual lattice with
/// `|x|^2 = (i^2 + j^2) / d_L`, `|i|, |j| <= radius`, and its shortest-vector
/// contribution.
pub fn asymptotic_infidelity(gamma: f64, d_l: usize, radius: usize) -> Result<AsymptoticBound> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Parameter(format!("loss rate must lie in (0, 1), got {gamma}")));
    }
    if d_l < 1 {
        return Err(Error::Parameter("logical dimension must be positive".into()));
    }
    if radius < 3 {
        return Err(Error::Parameter(format!("lattice radius must be at least 3, got {radius}")));
    }
    let k = std::f64::consts::PI * (1.0 - gamma) / gamma;
    let r = radius as i64;
    // accumulate shells from the outside in so small terms are not swamped
    let mut terms = Vec::new();
    for i in -r..=r {
        for j in -r..=r {
            if i != 0 || j != 0 {
                terms.push((i * i + j * j) as f64 / d_l as f64);
            }
        }
    }
    terms.sort_by(|a, b| b.total_cmp(a));
    let bound = 0.25 * terms.iter().map(|x2| (-k * x2).exp()).sum::<f64>();
    let shortest = 1.0 / d_l as f64;
    let count = terms.iter().filter(|&&x2| x2 == shortest).count();
    let leading_term = 0.25 * count as f64 * (-k * shortest).exp();
    Ok(AsymptoticBound { bound, leading_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn synthetic(l: f64, c: f64, p: f64) -> Vec<(f64, f64)> {
        (1..=30).map(|n| (n as f64, model(l, c, p, n as f64))).collect()
    }

    fn noisy(l: f64, c: f64, p: f64, sigma: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = Pcg64::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        (1..=30).map(|n| (n as f64, model(l, c, p, n as f64) + noise.sample(&mut rng))).collect()
    }

    #[test]
    fn schedule_examples() {
        let s = build_schedule(30.0, 1.0, 30).unwrap();
        assert_eq!(s.points().first(), Some(&30.0));
        assert_eq!(s.points().last(), Some(&1.0));
        assert_eq!(s.len(), 30);
        assert_eq!(build_schedule(10.0, 3.0, 4).unwrap().points(), &[10.0, 7.0, 4.0, 1.0]);
        assert!(matches!(build_schedule(5.0, 5.0, 2), Err(Error::Schedule(_))));
        assert!(build_schedule(5.0, 0.0, 2).is_err());
        assert!(EnergySchedule::from_points(vec![1.0, 3.0, 2.0]).is_err());
        let s = build_schedule(12.5, 0.1, 100).unwrap();
        for w in s.points().windows(2) {
            assert!((w[0] - w[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_exact_power_law() {
        let f = fit_power_law(&synthetic(0.9, 0.5, 1.3)).unwrap();
        assert!(f.converged);
        assert_abs_diff_eq!(f.l, 0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(f.c, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(f.p, 1.3, epsilon = 1e-6);
        // rising curves too
        let f = fit_power_law(&synthetic(0.2, -0.7, 0.6)).unwrap();
        assert_abs_diff_eq!(f.l, 0.2, epsilon = 1e-6);
        assert_abs_diff_eq!(f.p, 0.6, epsilon = 1e-6);
    }

    #[test]
    fn constant_data_is_degenerate_but_fine() {
        let data: Vec<(f64, f64)> = (1..=10).map(|n| (n as f64, 0.42)).collect();
        let f = fit_power_law(&data).unwrap();
        assert!(f.converged);
        assert_abs_diff_eq!(f.l, 0.42, epsilon = 1e-12);
        assert!(f.c.abs() < 1e-8);
    }

    #[test]
    fn rss_is_consistent() {
        let data = noisy(0.95, 0.3, 1.1, 0.002, 4);
        let f = fit_power_law(&data).unwrap();
        let recomputed: f64 = data.iter().map(|&(n, y)| (y - f.model(n)).powi(2)).sum();
        assert!((recomputed - f.rss).abs() <= 1e-12 * f.rss);
        let from_residuals: f64 = f.residuals.iter().map(|r| r.1 * r.1).sum();
        assert!((from_residuals - f.rss).abs() <= 1e-12 * f.rss);
    }

    #[test]
    fn rejects_bad_data() {
        assert!(matches!(fit_power_law(&synthetic(1.0, 1.0, 1.0)[..3]), Err(Error::InsufficientData { .. })));
        let dup = vec![(1.0, 1.0), (1.0, 1.1), (2.0, 0.5), (3.0, 0.2)];
        assert!(fit_power_law(&dup).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_tight_on_exact_data() {
        let data = synthetic(0.9, 0.5, 1.3);
        let (f, boot) = fit_with_bootstrap(&data, 200, 17).unwrap();
        let boot = boot.unwrap();
        assert!(boot.se_l < 1e-6, "{boot:?}");
        assert_eq!(f.se_l, Some(boot.se_l));
        let again = bootstrap_se(&data, &f, 200, 17).unwrap();
        assert_eq!(again, boot);
        assert!(bootstrap_se(&data, &f, 50, 17).is_err());
    }

    /// Reference: the linearised least-squares covariance `sigma^2 (J^T J)^-1`
    /// at the true parameters, `J` having columns `(1, n^-p, -c ln n n^-p)`.
    #[test]
    fn bootstrap_matches_linearised_error() {
        let (l, c, p, sigma) = (0.95, 0.3, 1.1, 0.002);
        let mut jtj = Matrix3::zeros();
        for n in 1..=30 {
            let n = n as f64;
            let t = n.powf(-p);
            let j = Vector3::new(1.0, t, -c * n.ln() * t);
            jtj += j * j.transpose();
        }
        let analytic = sigma * jtj.try_inverse().unwrap()[(0, 0)].sqrt();
        let reps = 100;
        let mut ratio = 0.0;
        let mut counted = 0;
        for rep in 0..reps {
            let data = noisy(l, c, p, sigma, 1000 + rep);
            let Ok((_, Some(boot))) = fit_with_bootstrap(&data, 100, rep * 7919) else { continue };
            ratio += boot.se_l / analytic;
            counted += 1;
        }
        let mean_ratio = ratio / counted as f64;
        assert!(counted > reps as usize * 9 / 10);
        assert!(mean_ratio > 0.5 && mean_ratio < 2.0, "mean se_L / analytic = {mean_ratio}");
    }

    #[test]
    fn residual_slope_recovers_exponent() {
        let data = synthetic(0.9, 0.5, 1.3);
        let f = fit_power_law(&data).unwrap();
        let d = residual_diagnostic(&data, &f).unwrap();
        assert_abs_diff_eq!(d.slope.unwrap(), -1.3, epsilon = 1e-6);
        assert!(d.r2.unwrap() > 0.999999);
        // exact L: the slope is -p to rounding
        let exact = FitResult { l: 0.9, c: 0.5, p: 1.3, ..f.clone() };
        let d = residual_diagnostic(&data, &exact).unwrap();
        assert_abs_diff_eq!(d.slope.unwrap(), -1.3, epsilon = 1e-9);
        // a point sitting on L is excluded
        let mut with_hit = data.clone();
        with_hit.push((40.0, 0.9));
        let d = residual_diagnostic(&with_hit, &exact).unwrap();
        assert_eq!(d.excluded, vec![30]);
    }

    #[test]
    fn parity_examples() {
        // every truncation beats the benchmark: parity at the smallest cutoff
        let data = synthetic(0.0, 0.05, 1.0);
        let cutoffs: Vec<f64> = (4..=30).map(|n| n as f64).collect();
        let raw = data.last().unwrap().1;
        let res = parity_analysis(&data, raw, &cutoffs, ParityMode::AbsoluteError).unwrap();
        assert_eq!(res.parity_point, Some(4.0));
        // the last cutoff reproduces the full fit
        let full = fit_power_law(&data).unwrap();
        assert_eq!(res.curve.last().unwrap().l, Some(full.l));
        // nothing beats an exact raw value
        let res = parity_analysis(&data, 0.0, &cutoffs, ParityMode::AbsoluteError).unwrap();
        assert!(res.parity_point.is_none() || res.curve.iter().any(|p| p.l == Some(0.0)));
        let expect = synthetic(1.0, -0.05, 1.0);
        let res = parity_analysis(&expect, expect.last().unwrap().1, &cutoffs, ParityMode::DistanceToIdeal(1.0)).unwrap();
        assert_eq!(res.parity_point, Some(4.0));
        assert!(parity_analysis(&data, raw, &[3.0], ParityMode::AbsoluteError).is_err());
    }

    #[test]
    fn parity_curve_approaches_full_fit() {
        let data = noisy(0.0, 0.08, 0.9, 1e-4, 3);
        let cutoffs: Vec<f64> = (5..=30).map(|n| n as f64).collect();
        let res = parity_analysis(&data, 0.0, &cutoffs, ParityMode::AbsoluteError).unwrap();
        let full = fit_power_law(&data).unwrap().l;
        let early = (res.curve[0].l.unwrap() - full).abs();
        let late = (res.curve[res.curve.len() - 2].l.unwrap() - full).abs();
        assert!(late <= early);
        assert_eq!(res.curve.last().unwrap().l, Some(full));
    }

    #[test]
    fn asymptotic_examples() {
        let b = asymptotic_infidelity(0.18, 2, 5).unwrap();
        let direct = (-(std::f64::consts::PI / 2.0) * (0.82 / 0.18)).exp();
        assert_abs_diff_eq!(b.leading_term, direct, epsilon = 1e-12);
        assert!((b.leading_term - 7.8e-4).abs() < 0.05e-4);
        assert!(b.bound >= b.leading_term);
        let r5 = asymptotic_infidelity(0.2, 2, 5).unwrap().bound;
        let r10 = asymptotic_infidelity(0.2, 2, 10).unwrap().bound;
        assert!((r10 - r5).abs() < 1e-12 * r10);
        assert!(asymptotic_infidelity(1e-3, 2, 5).unwrap().bound < 1e-300);
        assert!(asymptotic_infidelity(0.2, 2, 2).is_err());
        assert!(asymptotic_infidelity(1.0, 2, 5).is_err());
    }

    fn data_strategy() -> impl Strategy<Value = (f64, f64, f64, u64)> {
        (0.5f64..1.0, 0.05f64..0.8, 0.4f64..2.5, any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shift_equivariance((l, c, p, seed) in data_strategy(), k in -2.0f64..2.0) {
            let data = noisy(l, c, p, 1e-4, seed);
            let base = fit_power_law(&data).unwrap();
            prop_assume!(base.converged);
            let shifted: Vec<(f64, f64)> = data.iter().map(|&(n, y)| (n, y + k)).collect();
            let f = fit_power_law(&shifted).unwrap();
            prop_assert!((f.l - base.l - k).abs() < 1e-9, "L {} vs {}", f.l, base.l + k);
            prop_assert!((f.c - base.c).abs() < 1e-9);
            prop_assert!((f.p - base.p).abs() < 1e-9);
        }

        #[test]
        fn scale_equivariance((l, c, p, seed) in data_strategy(), s in prop_oneof![0.1f64..0.9, 1.1f64..10.0]) {
            let data = noisy(l, c, p, 1e-4, seed);
            let base = fit_power_law(&data).unwrap();
            prop_assume!(base.converged);
            let scaled: Vec<(f64, f64)> = data.iter().map(|&(n, y)| (n, y * s)).collect();
            let f = fit_power_law(&scaled).unwrap();
            prop_assert!((f.l - base.l * s).abs() < 1e-9 * s.max(1.0));
            prop_assert!((f.c - base.c * s).abs() < 1e-9 * s.max(1.0));
            prop_assert!((f.p - base.p).abs() < 1e-9);
        }
    }
}
