//! Wigner functions on phase-space grids.
//!
//! Quadratures follow `x = (a + a^dagger)/sqrt(2)`, `p = (a - a^dagger)/(i sqrt(2))`,
//! so a coherent state `|alpha>` peaks at `(sqrt(2) Re alpha, sqrt(2) Im alpha)`
//! with height `1/pi`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::fock::{DensityOperator, C64};

/// Relative normalization error above which a warning is logged.
const NORMALIZATION_WARNING: f64 = 0.05;

/// Uniformly spaced coordinates `min, min + step, ..., max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        let axis = Self { min, max, n };
        axis.validate()?;
        Ok(axis)
    }

    /// `n` points spanning `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(usage("axis bounds must be finite"));
        }
        if self.n < 2 {
            return Err(usage(format!(
                "an axis needs at least 2 points, got {}",
                self.n
            )));
        }
        if !(self.max > self.min) {
            return Err(usage(format!(
                "axis max {} must exceed min {}",
                self.max, self.min
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    fn scaled(&self, factor: f64) -> Self {
        let (a, b) = (self.min * factor, self.max * factor);
        Self {
            min: a.min(b),
            max: a.max(b),
            n: self.n,
        }
    }

    /// Recovers an axis from explicit coordinates, rejecting non-uniform spacing.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        let axis = Self::new(
            points[0],
            *points.last().unwrap_or(&points[0]),
            points.len(),
        )?;
        let tol = 1e-6 * axis.step().max(1e-300) + 1e-9 * axis.max.abs().max(axis.min.abs());
        for (i, &v) in points.iter().enumerate() {
            if (v - axis.point(i)).abs() > tol.max(1e-6 * axis.step()) {
                return Err(Error::Format(format!(
                    "axis is not uniformly spaced at index {i}"
                )));
            }
        }
        Ok(axis)
    }
}

impl Default for Axis {
    fn default() -> Self {
        Self {
            min: -6.0,
            max: 6.0,
            n: 201,
        }
    }
}

/// Real phase-space function sampled on a rectangular grid, `values[(i, j)] = W(x_i, p_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WignerGrid {
    pub x: Axis,
    pub p: Axis,
    pub values: DMatrix<f64>,
}

impl WignerGrid {
    pub fn new(x: Axis, p: Axis, values: DMatrix<f64>) -> Result<Self> {
        x.validate()?;
        p.validate()?;
        if values.nrows() != x.n || values.ncols() != p.n {
            return Err(usage(format!(
                "grid values are {}x{} but axes are {}x{}",
                values.nrows(),
                values.ncols(),
                x.n,
                p.n
            )));
        }
        Ok(Self { x, p, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn cell_area(&self) -> f64 {
        self.x.step() * self.p.step()
    }

    /// Riemann sum of `W dx dp`.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.cell_area()
    }

    /// `2 pi sum W^2 dx dp`, which equals `Tr(rho^2)` for a well-resolved grid.
    pub fn purity_estimate(&self) -> f64 {
        2.0 * PI * self.values.iter().map(|w| w * w).sum::<f64>() * self.cell_area()
    }

    /// Largest `|W(x, p) - W(-p, x)|`; the grid must map onto itself under a quarter turn.
    pub fn rotation_residual(&self) -> Result<f64> {
        let n = self.x.n;
        let symmetric = |a: &Axis| (a.min + a.max).abs() <= 1e-12 * a.max.abs().max(1.0);
        if self.x != self.p || !symmetric(&self.x) {
            return Err(usage(
                "quarter-turn residual needs identical axes symmetric about 0",
            ));
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.values[(i, j)] - self.values[(n - 1 - j, i)]).abs());
            }
        }
        Ok(worst)
    }

    /// Maps coordinates `x -> factor x`, `p -> factor p` and divides values by
    /// `factor^2` so the integral is unchanged. `factor = sqrt(2)` converts to
    /// the homodyne convention `x = a + a^dagger`.
    pub fn rescale_axes(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(usage(format!(
                "axis scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            x: self.x.scaled(factor),
            p: self.p.scaled(factor),
            values: self.values.map(|w| w / (factor * factor)),
        })
    }

    /// CSV layout: a header `x\p,p_0,...,p_{m-1}` then one row `x_i,W_i0,...` per x.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::from("x\\p");
        for v in self.p.points() {
            write!(line, ",{v}").unwrap();
        }
        writeln!(out, "{line}")?;
        for (i, xv) in self.x.points().into_iter().enumerate() {
            line.clear();
            write!(line, "{xv}").unwrap();
            for j in 0..self.p.n {
                write!(line, ",{}", self.values[(i, j)]).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("cannot parse {what} '{s}'")))
        };
        let mut lines = input
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty grid file".into()))??;
        let p_points = header
            .split(',')
            .skip(1)
            .map(|s| parse(s, "p coordinate"))
            .collect::<Result<Vec<_>>>()?;
        let mut x_points = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            let line = line?;
            let mut cells = line.split(',');
            x_points.push(parse(cells.next().unwrap_or(""), "x coordinate")?);
            let row = cells
                .map(|s| parse(s, "grid value"))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != p_points.len() {
                return Err(Error::Format(format!(
                    "row {} has {} values, expected {}",
                    rows.len(),
                    row.len(),
                    p_points.len()
                )));
            }
            rows.push(row);
        }
        if x_points.len() < 2 || p_points.len() < 2 {
            return Err(Error::Format("grid needs at least 2x2 points".into()));
        }
        let x = Axis::from_points(&x_points)?;
        let p = Axis::from_points(&p_points)?;
        let values = DMatrix::from_fn(x.n, p.n, |i, j| rows[i][j]);
        Self::new(x, p, values)
    }

    pub fn to_json(&self) -> WignerJson {
        WignerJson {
            kind: "wigner".into(),
            x: self.x,
            p: self.p,
            values: (0..self.x.n)
                .map(|i| (0..self.p.n).map(|j| self.values[(i, j)]).collect())
                .collect(),
        }
    }

    pub fn from_json(json: &WignerJson) -> Result<Self> {
        if json.kind != "wigner" {
            return Err(Error::Format(format!(
                "expected kind 'wigner', got '{}'",
                json.kind
            )));
        }
        if json.values.len() != json.x.n || json.values.iter().any(|r| r.len() != json.p.n) {
            return Err(Error::Format("grid values do not match the axes".into()));
        }
        Self::new(
            json.x,
            json.p,
            DMatrix::from_fn(json.x.n, json.p.n, |i, j| json.values[i][j]),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WignerJson {
    pub kind: String,
    pub x: Axis,
    pub p: Axis,
    /// One row per x coordinate.
    pub values: Vec<Vec<f64>>,
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Wigner function of a density operator on the given axes.
///
/// Uses `W = (1/pi) sum_{m,n} rho_mn W_mn` with the cross-Wigner kernels
/// written as Gaussians times associated Laguerre polynomials in `y = 2(x^2 + p^2)`,
/// evaluated by a scaled three-term recurrence.
pub fn wigner_of_density(rho: &DensityOperator, x: Axis, p: Axis) -> Result<WignerGrid> {
    x.validate()?;
    p.validate()?;
    let d = rho.dim();
    // diagonals[k][n] = (-1)^n rho_{n+k, n}
    let diagonals: Vec<Vec<C64>> = (0..d)
        .map(|k| {
            (0..d - k)
                .map(|n| {
                    let v = rho.get(n + k, n);
                    if n % 2 == 0 {
                        v
                    } else {
                        -v
                    }
                })
                .collect::<Vec<_>>()
        })
        .map(|mut diag: Vec<C64>| {
            while diag.last().is_some_and(|c| c.norm() == 0.0) {
                diag.pop();
            }
            diag
        })
        .collect();
    let ln_fact: Vec<f64> = (0..d).map(ln_factorial).collect();
    let xs = x.points();
    let ps = p.points();
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&xv| {
            ps.iter()
                .map(|&pv| wigner_point(&diagonals, &ln_fact, xv, pv))
                .collect()
        })
        .collect();
    let grid = WignerGrid::new(x, p, DMatrix::from_fn(x.n, p.n, |i, j| rows[i][j]))?;
    let norm = grid.integral();
    if (norm - rho.trace()).abs() > NORMALIZATION_WARNING * rho.trace().abs() {
        log::warn!(
            "Wigner grid integrates to {norm:.4} instead of {:.4}; widen or refine the axes",
            rho.trace()
        );
    }
    Ok(grid)
}

fn wigner_point(diagonals: &[Vec<C64>], ln_fact: &[f64], x: f64, p: f64) -> f64 {
    let y = 2.0 * (x * x + p * p);
    let r = y.sqrt();
    // rotation e^{-i theta} with theta = arg(x + i p)
    let modulus = x.hypot(p);
    let rot = if modulus > 0.0 {
        C64::new(x / modulus, -p / modulus)
    } else {
        C64::new(1.0, 0.0)
    };
    let ln_r = r.ln();
    let mut total = 0.0;
    let mut phase = C64::new(1.0, 0.0);
    for (k, diag) in diagonals.iter().enumerate() {
        if k > 0 {
            phase *= rot;
            if r == 0.0 {
                break;
            }
        }
        let kf = k as f64;
        let ln_s0 = if k == 0 {
            -0.5 * y
        } else {
            kf * ln_r - 0.5 * ln_fact[k] - 0.5 * y
        };
        let mut t_prev = 0.0;
        let mut t = ln_s0.exp();
        let mut rho_prev = 0.0;
        let mut acc = C64::new(0.0, 0.0);
        for (n, &entry) in diag.iter().enumerate() {
            acc += entry * t;
            let nf = n as f64;
            let rho_n = ((nf + 1.0) / (nf + kf + 1.0)).sqrt();
            let next = rho_n * ((2.0 * nf + 1.0 + kf - y) * t - (nf + kf) * rho_prev * t_prev)
                / (nf + 1.0);
            t_prev = t;
            t = next;
            rho_prev = rho_n;
        }
        let contribution = (acc * phase).re;
        total += if k == 0 {
            contribution
        } else {
            2.0 * contribution
        };
    }
    total / PI
}

/// Scalar summaries of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerMetrics {
    pub w_min: f64,
    pub argmin: (f64, f64),
    pub w_max: f64,
    pub argmax: (f64, f64),
    /// `|w_min / w_max|`
    pub visibility: f64,
    /// Sum of `|W| dx dp` over negative cells.
    pub negativity_volume: f64,
}

pub fn wigner_metrics(grid: &WignerGrid) -> WignerMetrics {
    let (mut imin, mut imax) = ((0, 0), (0, 0));
    let (mut w_min, mut w_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut negative = 0.0;
    for i in 0..grid.x.n {
        for j in 0..grid.p.n {
            let w = grid.values[(i, j)];
            if w < w_min {
                w_min = w;
                imin = (i, j);
            }
            if w > w_max {
                w_max = w;
                imax = (i, j);
            }
            if w < 0.0 {
                negative -= w;
            }
        }
    }
    WignerMetrics {
        w_min,
        argmin: (grid.x.point(imin.0), grid.p.point(imin.1)),
        w_max,
        argmax: (grid.x.point(imax.0), grid.p.point(imax.1)),
        visibility: if w_max != 0.0 {
            (w_min / w_max).abs()
        } else {
            0.0
        },
        negativity_volume: negative * grid.cell_area(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, purity, CoherentAmplitude, Ket};
    use approx::assert_abs_diff_eq;

    fn fock_density(n: usize, cutoff: usize) -> DensityOperator {
        Ket::fock(n, cutoff).unwrap().density()
    }

    fn laguerre(n: usize, k: usize, y: f64) -> f64 {
        let (mut a, mut b) = (1.0, 1.0 + k as f64 - y);
        if n == 0 {
            return a;
        }
        for m in 1..n {
            let mf = m as f64;
            let c = ((2.0 * mf + 1.0 + k as f64 - y) * b - (mf + k as f64) * a) / (mf + 1.0);
            a = b;
            b = c;
        }
        b
    }

    /// Textbook Wigner function with factorial ratios, fine for small dimensions.
    fn direct(rho: &DensityOperator, x: f64, p: f64) -> f64 {
        let y = 2.0 * (x * x + p * p);
        let beta = C64::new(x, p) / 2f64.sqrt();
        let mut w = 0.0;
        for m in 0..rho.dim() {
            for n in 0..=m {
                let k = m - n;
                let fact: f64 = ((n + 1)..=m).map(|v| v as f64).product();
                let kernel = (2.0 * beta.conj()).powu(k as u32) / fact.sqrt()
                    * laguerre(n, k, y)
                    * (-y / 2.0).exp();
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                let term = sign * (rho.get(m, n) * kernel).re;
                w += if k == 0 { term } else { 2.0 * term };
            }
        }
        w / PI
    }

    #[test]
    fn recurrence_matches_factorial_form() {
        let psi = Ket::new(
            (0..8)
                .map(|n| C64::new((n as f64 * 0.7).sin(), (n as f64 * 1.3).cos()))
                .collect(),
        )
        .unwrap()
        .normalized()
        .unwrap();
        let mut rho = psi.density();
        rho = rho
            .scaled(0.7)
            .add(&fock_density(3, 7).scaled(0.3))
            .unwrap();
        let axis = Axis::symmetric(3.0, 13).unwrap();
        let grid = wigner_of_density(&rho, axis, axis).unwrap();
        for (i, x) in axis.points().into_iter().enumerate() {
            for (j, p) in axis.points().into_iter().enumerate() {
                assert_abs_diff_eq!(grid.get(i, j), direct(&rho, x, p), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn vacuum_and_one_photon() {
        let axis = Axis::symmetric(1.0, 3).unwrap();
        let vac = wigner_of_density(&fock_density(0, 3), axis, axis).unwrap();
        assert_abs_diff_eq!(vac.get(1, 1), 1.0 / PI, epsilon = 1e-14);
        let one = wigner_of_density(&fock_density(1, 3), axis, axis).unwrap();
        assert_abs_diff_eq!(one.get(1, 1), -1.0 / PI, epsilon = 1e-14);
    }

    #[test]
    fn coherent_peak_location() {
        let rho = coherent_state(CoherentAmplitude::real(1.2), 30)
            .unwrap()
            .density();
        let x = Axis::new(1.2 * 2f64.sqrt() - 0.5, 1.2 * 2f64.sqrt() + 0.5, 11).unwrap();
        let p = Axis::symmetric(0.5, 11).unwrap();
        let m = wigner_metrics(&wigner_of_density(&rho, x, p).unwrap());
        assert_abs_diff_eq!(m.w_max, 1.0 / PI, epsilon = 1e-8);
        assert_abs_diff_eq!(m.argmax.0, 1.697056274847714, epsilon = 1e-12);
        assert_abs_diff_eq!(m.argmax.1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn imaginary_amplitude_peaks_on_p_axis() {
        let rho = coherent_state(CoherentAmplitude::new(0.0, 1.0), 30)
            .unwrap()
            .density();
        let axis = Axis::symmetric(3.0, 61).unwrap();
        let m = wigner_metrics(&wigner_of_density(&rho, axis, axis).unwrap());
        assert_abs_diff_eq!(m.argmax.0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.argmax.1, 1.4, epsilon = 1e-12);
    }

    #[test]
    fn translation_covariance() {
        let a = C64::new(0.6, -0.4);
        let rho = coherent_state(CoherentAmplitude(a), 40).unwrap().density();
        let (dx, dp) = (2f64.sqrt() * a.re, 2f64.sqrt() * a.im);
        let axis = Axis::symmetric(4.0, 41).unwrap();
        let shifted_x = Axis::new(-4.0 + dx, 4.0 + dx, 41).unwrap();
        let shifted_p = Axis::new(-4.0 + dp, 4.0 + dp, 41).unwrap();
        let vac = wigner_of_density(&fock_density(0, 5), axis, axis).unwrap();
        let coh = wigner_of_density(&rho, shifted_x, shifted_p).unwrap();
        assert!((vac.values - coh.values).amax() < 1e-8);
    }

    #[test]
    fn normalization_and_purity() {
        let rho = coherent_state(CoherentAmplitude::new(0.5, 0.3), 30)
            .unwrap()
            .density();
        let mix = rho
            .scaled(0.5)
            .add(&fock_density(2, 30).scaled(0.5))
            .unwrap();
        let grid = wigner_of_density(&mix, Axis::default(), Axis::default()).unwrap();
        assert_abs_diff_eq!(grid.integral(), 1.0, epsilon = 1e-6);
        assert!((grid.purity_estimate() - purity(&mix)).abs() < 0.02 * purity(&mix));
    }

    #[test]
    fn diagonal_states_are_rotation_symmetric() {
        let rho = DensityOperator::diagonal(&[0.2, 0.5, 0.0, 0.3]).unwrap();
        let grid = wigner_of_density(&rho, Axis::default(), Axis::default()).unwrap();
        assert!(grid.rotation_residual().unwrap() < 1e-6);
        let coh = coherent_state(CoherentAmplitude::real(1.0), 30)
            .unwrap()
            .density();
        let grid = wigner_of_density(&coh, Axis::default(), Axis::default()).unwrap();
        assert!(grid.rotation_residual().unwrap() > 1e-3);
    }

    #[test]
    fn bounded_by_inverse_pi() {
        for n in 0..6 {
            let axis = Axis::symmetric(4.0, 41).unwrap();
            let grid = wigner_of_density(&fock_density(n, 8), axis, axis).unwrap();
            assert!(grid.values.amax() <= 1.0 / PI + 1e-8);
        }
    }

    #[test]
    fn high_fock_levels_stay_finite() {
        let grid =
            wigner_of_density(&fock_density(180, 200), Axis::default(), Axis::default()).unwrap();
        assert!(grid.values.iter().all(|w| w.is_finite()));
        assert!(grid.values.amax() <= 1.0 / PI + 1e-8);
        assert_abs_diff_eq!(grid.get(100, 100), 1.0 / PI, epsilon = 1e-10);
    }

    #[test]
    fn metrics_of_vacuum() {
        let grid =
            wigner_of_density(&fock_density(0, 4), Axis::default(), Axis::default()).unwrap();
        let m = wigner_metrics(&grid);
        assert!(m.w_min >= 0.0);
        assert!(m.visibility < 1e-10);
        assert_eq!(m.negativity_volume, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let rho = fock_density(1, 3);
        let axis = Axis::new(-2.0, 2.5, 7).unwrap();
        let p = Axis::symmetric(1.5, 5).unwrap();
        let grid = wigner_of_density(&rho, axis, p).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let back = WignerGrid::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, grid.values);
        assert_abs_diff_eq!(back.x.step(), grid.x.step(), epsilon = 1e-12);
        assert!(WignerGrid::read_csv("x\\p,0,1\n0,1,2\n0.5,3\n".as_bytes()).is_err());
        assert!(WignerGrid::read_csv("x\\p,0,1,3\n0,1,2,3\n1,3,4,5\n".as_bytes()).is_err());
    }

    #[test]
    fn rescale_keeps_integral() {
        let grid =
            wigner_of_density(&fock_density(1, 3), Axis::default(), Axis::default()).unwrap();
        let scaled = grid.rescale_axes(2f64.sqrt()).unwrap();
        assert_abs_diff_eq!(scaled.integral(), grid.integral(), epsilon = 1e-12);
        assert_abs_diff_eq!(scaled.x.max, 6.0 * 2f64.sqrt(), epsilon = 1e-12);
    }
}
