//! Wigner functions on rectangular phase-space grids.
//!
//! Uses the position representation,
//! `W(q, p) = (1/pi) int <q+y|rho|q-y> exp(-2 i p y) dy`,
//! with `alpha = (q + i p)/sqrt(2)` so the vacuum is `exp(-q^2 - p^2)/pi`.
//! `rho` is first split into its eigenvectors, each eigenvector becomes a wave
//! function through the normalised Hermite-function recurrence (stable for
//! any cutoff), and the `y` integral is a trapezoid sum. The integrand is
//! smooth and decays like a Gaussian beyond the classical turning point, so the
//! sum converges spectrally once the step resolves the fastest oscillation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fock::{FockMatrix, C64};
use crate::io::fmt_f64;

/// Uniform sampling of one phase-space quadrature.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        let axis = Self { min, max, points };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 2 || !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Parameter(format!(
                "axis needs points >= 2 and max > min, got [{}, {}] x {}",
                self.min, self.max, self.points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.points - 1) as f64
    }

    pub fn samples(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.max } else { self.min + h * i as f64 })
            .collect()
    }
}

/// Sampled Wigner function; `values[(i, j)]` is `W(q_axis[i], p_axis[j])`.
#[derive(Clone, Debug)]
pub struct WignerGrid {
    pub q_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl WignerGrid {
    /// Two-dimensional trapezoidal integral of `W`.
    pub fn integral(&self) -> f64 {
        let wq = trapezoid_weights(&self.q_axis);
        let wp = trapezoid_weights(&self.p_axis);
        let mut acc = 0.0;
        for (i, a) in wq.iter().enumerate() {
            for (j, b) in wp.iter().enumerate() {
                acc += a * b * self.values[(i, j)];
            }
        }
        acc
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }

    /// Grid coordinates of the largest value.
    pub fn argmax(&self) -> (f64, f64) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..self.q_axis.len() {
            for j in 0..self.p_axis.len() {
                if self.values[(i, j)] > best_v {
                    best_v = self.values[(i, j)];
                    best = (i, j);
                }
            }
        }
        (self.q_axis[best.0], self.p_axis[best.1])
    }

    /// CSV export with header `q,p,w`, rows ordered q-major.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "q,p,w")?;
        for (i, q) in self.q_axis.iter().enumerate() {
            for (j, p) in self.p_axis.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(*q), fmt_f64(*p), fmt_f64(self.values[(i, j)]))?;
            }
        }
        Ok(())
    }
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Eigenvalues below this fraction of the largest are dropped.
const RANK_CUT: f64 = 1e-15;

/// Normalised Hermite functions `psi_n(x)` for `n < dim`, one column per `x`.
fn hermite_functions(dim: usize, xs: &[f64]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dim, xs.len());
    let c0 = std::f64::consts::PI.powf(-0.25);
    for (k, &x) in xs.iter().enumerate() {
        h[(0, k)] = c0 * (-0.5 * x * x).exp();
        if dim > 1 {
            h[(1, k)] = std::f64::consts::SQRT_2 * x * h[(0, k)];
        }
        for n in 2..dim {
            let nf = n as f64;
            h[(n, k)] = (2.0 / nf).sqrt() * x * h[(n - 1, k)] - ((nf - 1.0) / nf).sqrt() * h[(n - 2, k)];
        }
    }
    h
}

/// Samples the Wigner function of `rho` on the grid `q x p`.
pub fn wigner(rho: &FockMatrix, q: &Axis, p: &Axis) -> Result<WignerGrid> {
    q.validate()?;
    p.validate()?;
    let scale = crate::fock::max_abs(rho.matrix()).max(1e-300);
    let defect = rho.hermiticity_defect();
    if defect > 1e-10 * scale.max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let dim = rho.dim();
    let q_axis = q.samples();
    let p_axis = p.samples();

    let herm = (rho.matrix() + rho.matrix().adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i].abs() > RANK_CUT * top).collect();
    let weights: Vec<f64> = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    // rows are eigenvectors, so `vecs * psi` gives their wave functions
    let vecs = DMatrix::from_fn(keep.len(), dim, |r, m| eig.eigenvectors[(m, keep[r])]);

    let turning = (2.0 * dim as f64 + 1.0).sqrt();
    let p_max = p.min.abs().max(p.max.abs());
    let step = std::f64::consts::PI / (2.0 * (2.0 * turning + 2.0 * p_max) + 8.0);
    let half = ((turning + 8.0) / step).ceil() as usize;
    let ys: Vec<f64> = (0..=2 * half).map(|k| (k as f64 - half as f64) * step).collect();
    let phases = DMatrix::from_fn(p_axis.len(), ys.len(), |j, k| {
        let t = -2.0 * p_axis[j] * ys[k];
        C64::new(t.cos(), t.sin())
    });

    let mut values = DMatrix::zeros(q_axis.len(), p_axis.len());
    let mut worst_imag: f64 = 0.0;
    let mut xs = vec![0.0; ys.len()];
    for (i, &qq) in q_axis.iter().enumerate() {
        for (x, y) in xs.iter_mut().zip(&ys) {
            *x = qq + y;
        }
        let waves = &vecs * hermite_functions(dim, &xs).map(|v| C64::new(v, 0.0));
        let n = ys.len();
        // <q+y|rho|q-y>; column n-1-k of `waves` sits at q - y_k
        let f = DVector::from_fn(n, |k, _| {
            let mut s = C64::new(0.0, 0.0);
            for (r, w) in weights.iter().enumerate() {
                s += waves[(r, k)] * waves[(r, n - 1 - k)].conj() * *w;
            }
            s
        });
        let row = &phases * f * C64::new(step / std::f64::consts::PI, 0.0);
        for j in 0..p_axis.len() {
            worst_imag = worst_imag.max(row[j].im.abs());
            values[(i, j)] = row[j].re;
        }
    }
    if worst_imag > 1e-10 * scale.max(1.0) {
        return Err(Error::NumericalInstability(format!("Wigner function has imaginary residue {worst_imag:.3e}")));
    }
    Ok(WignerGrid { q_axis, p_axis, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{displacement, parity_operator};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn fock_state(n: usize, dim: usize) -> FockMatrix {
        let mut v = DVector::zeros(dim);
        v[n] = C64::new(1.0, 0.0);
        FockMatrix::projector(&v).unwrap()
    }

    fn point(rho: &FockMatrix, q: f64, p: f64) -> f64 {
        let ax = |c: f64| Axis::new(c, c + 1.0, 2).unwrap();
        wigner(rho, &ax(q), &ax(p)).unwrap().values[(0, 0)]
    }

    #[test]
    fn origin_values() {
        assert_abs_diff_eq!(point(&fock_state(0, 10), 0.0, 0.0), 1.0 / PI, epsilon = 1e-12);
        assert_abs_diff_eq!(point(&fock_state(1, 10), 0.0, 0.0), -1.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn vacuum_integrates_to_one() {
        let ax = Axis::new(-5.0, 5.0, 201).unwrap();
        let grid = wigner(&fock_state(0, 8), &ax, &ax).unwrap();
        assert_abs_diff_eq!(grid.integral(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn vacuum_is_gaussian() {
        // W_0(q, p) = exp(-q^2 - p^2) / pi
        let rho = fock_state(0, 6);
        for &(q, p) in &[(0.3, -1.2), (2.0, 1.0), (-3.5, 0.5)] {
            assert_abs_diff_eq!(point(&rho, q, p), (-(q * q) - p * p).exp() / PI, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_truncated_displacement_for_low_photon_states() {
        let dim = 90;
        let mut psi = DVector::zeros(dim);
        psi[0] = C64::new(0.6, 0.0);
        psi[3] = C64::new(0.0, 0.64);
        psi[5] = C64::new(0.48, 0.0);
        let rho = FockMatrix::projector(&psi).unwrap();
        let par = parity_operator(dim).unwrap();
        for &(q, p) in &[(0.5, 0.2), (-1.3, 2.1)] {
            let alpha = C64::new(q, p) / 2f64.sqrt();
            let d = displacement(alpha, dim).unwrap();
            let op = d.mul(&par).unwrap().mul(&d.adjoint()).unwrap();
            let direct = rho.mul(&op).unwrap().trace().re / PI;
            assert_abs_diff_eq!(point(&rho, q, p), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn high_cutoff_code_state_matches_padded_displacement() {
        let code = crate::gkp::calibrate_code(4.0, None).unwrap();
        let rho = FockMatrix::projector(&code.codewords[0]).unwrap();
        let ax = Axis::new(-8.0, 8.0, 161).unwrap();
        let grid = wigner(&rho, &ax, &ax).unwrap();
        assert_abs_diff_eq!(grid.integral(), 1.0, epsilon = 1e-3);
        assert!(grid.max() <= 1.0 / PI + 1e-9 && grid.min() >= -1.0 / PI - 1e-9);

        // oracle: parity around a displacement, evaluated with 200 spare levels
        let big = code.dim + 200;
        let mut padded = DVector::zeros(big);
        padded.rows_mut(0, code.dim).copy_from(&code.codewords[0]);
        let rho_big = FockMatrix::projector(&padded).unwrap();
        let par = parity_operator(big).unwrap();
        for &(q, p) in &[(0.0, 0.0), (1.7, -0.4), (-2.6, 3.1)] {
            let d = displacement(C64::new(q, p) / 2f64.sqrt(), big).unwrap();
            let op = d.mul(&par).unwrap().mul(&d.adjoint()).unwrap();
            let direct = rho_big.mul(&op).unwrap().trace().re / PI;
            assert_abs_diff_eq!(point(&rho, q, p), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn csv_layout() {
        let ax = Axis::new(-1.0, 1.0, 3).unwrap();
        let grid = wigner(&fock_state(0, 4), &ax, &ax).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "q,p,w");
        assert_eq!(lines.len(), 10);
        assert!(lines[1].starts_with("-1.0000000000000000e0,-1.0000000000000000e0,"));
    }

    #[test]
    fn bad_axis_rejected() {
        assert!(Axis::new(1.0, 1.0, 10).is_err());
        assert!(Axis::new(0.0, 1.0, 1).is_err());
    }
}
