//! Truncated Fock-space linear algebra.
//!
//! Every mode is truncated at a cutoff `N`, giving a basis `|0>, ..., |N>` of
//! dimension `N + 1`. Multimode states are stored flat in row-major order over
//! the layout: the last mode varies fastest, so for dims `(d0, d1, d2)` the
//! occupation `(n0, n1, n2)` lives at `n0 * d1 * d2 + n1 * d2 + n2`.

use std::collections::HashSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

pub type C64 = Complex64;

/// Largest probability mass a truncated coherent state may lose before it is
/// rejected.
pub const DEFAULT_TRUNCATION_TOLERANCE: f64 = 1e-6;

const HERMITIAN_TOLERANCE: f64 = 1e-10;
const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Complex field amplitude of a coherent state (alpha, delta alpha, chi_q, beta...).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentAmplitude(pub C64);

impl CoherentAmplitude {
    pub fn new(re: f64, im: f64) -> Self {
        Self(C64::new(re, im))
    }

    pub fn real(re: f64) -> Self {
        Self(C64::new(re, 0.0))
    }

    pub fn value(self) -> C64 {
        self.0
    }

    pub fn norm(self) -> f64 {
        self.0.norm()
    }

    /// `|alpha|^2`
    pub fn mean_photon_number(self) -> f64 {
        self.0.norm_sqr()
    }

    pub fn is_finite(self) -> bool {
        self.0.re.is_finite() && self.0.im.is_finite()
    }
}

impl From<f64> for CoherentAmplitude {
    fn from(re: f64) -> Self {
        Self::real(re)
    }
}

impl From<C64> for CoherentAmplitude {
    fn from(z: C64) -> Self {
        Self(z)
    }
}

/// Cutoff that keeps the Poisson tail of `|alpha>` well below 1e-6 for the
/// amplitudes used here (`|alpha|^2 + 6|alpha| + 10`).
pub fn suggested_cutoff(amplitude: CoherentAmplitude) -> usize {
    let a = amplitude.norm();
    (a * a + 6.0 * a + 10.0).ceil() as usize
}

/// Single-mode pure state in a truncated Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amplitudes: Vec<C64>,
}

impl Ket {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(usage("a ket needs at least one Fock amplitude"));
        }
        Ok(Self { amplitudes })
    }

    /// The Fock state `|n>` in a space of the given cutoff.
    pub fn fock(n: usize, cutoff: usize) -> Result<Self> {
        if n > cutoff {
            return Err(usage(format!("Fock level {n} exceeds cutoff {cutoff}")));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); cutoff + 1];
        amplitudes[n] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn cutoff(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if !(norm > 1e-300) {
            return Err(Error::DegenerateState { norm });
        }
        Ok(Self {
            amplitudes: self.amplitudes.iter().map(|c| c / norm).collect(),
        })
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum::<f64>()
            / self.norm_sqr()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(usage(format!(
                "ket dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|self><self|`
    pub fn density(&self) -> DensityOperator {
        let v = &self.amplitudes;
        DensityOperator {
            matrix: DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()),
        }
    }
}

/// Raw coherent-state amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)` for `n = 0..=cutoff`,
/// evaluated in log space so large amplitudes do not underflow.
pub(crate) fn coherent_amplitudes(amplitude: C64, cutoff: usize) -> Vec<C64> {
    let r = amplitude.norm();
    let mut out = vec![C64::new(0.0, 0.0); cutoff + 1];
    if r == 0.0 {
        out[0] = C64::new(1.0, 0.0);
        return out;
    }
    let theta = amplitude.arg();
    let ln_r = r.ln();
    let mut log_mag = -0.5 * r * r;
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            log_mag += ln_r - 0.5 * (n as f64).ln();
        }
        *slot = C64::from_polar(log_mag.exp(), theta * n as f64);
    }
    out
}

/// Smallest cutoff whose Poisson tail for mean `|a|^2` is at most `tolerance`.
fn required_cutoff(amplitude: C64, tolerance: f64) -> usize {
    let mean = amplitude.norm_sqr();
    if mean == 0.0 {
        return 0;
    }
    let mut log_p = -mean;
    let mut cumulative = 0.0;
    let mut n = 0usize;
    loop {
        cumulative += log_p.exp();
        if 1.0 - cumulative <= tolerance || n > 100_000 {
            return n;
        }
        n += 1;
        log_p += mean.ln() - (n as f64).ln();
    }
}

/// Truncated coherent state `|alpha>` renormalized after truncation, together
/// with the truncation deficit `1 - sum |c_n|^2` measured before renormalizing.
pub fn coherent_state_checked(
    amplitude: CoherentAmplitude,
    cutoff: usize,
    tolerance: f64,
) -> Result<(Ket, f64)> {
    if cutoff < 1 {
        return Err(usage("coherent state cutoff must be at least 1"));
    }
    if !amplitude.is_finite() {
        return Err(usage("coherent amplitude must be finite"));
    }
    let raw = coherent_amplitudes(amplitude.value(), cutoff);
    let kept: f64 = raw.iter().map(|c| c.norm_sqr()).sum();
    let deficit = (1.0 - kept).max(0.0);
    if deficit > tolerance {
        return Err(Error::Truncation {
            deficit,
            tolerance,
            cutoff,
            required_cutoff: required_cutoff(amplitude.value(), tolerance),
        });
    }
    let ket = Ket { amplitudes: raw }.normalized()?;
    Ok((ket, deficit))
}

/// [`coherent_state_checked`] at the default truncation tolerance.
pub fn coherent_state(amplitude: CoherentAmplitude, cutoff: usize) -> Result<Ket> {
    coherent_state_checked(amplitude, cutoff, DEFAULT_TRUNCATION_TOLERANCE).map(|(k, _)| k)
}

/// Ordered set of modes with their Fock dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeLayout {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl ModeLayout {
    pub fn new<S: Into<String>>(modes: impl IntoIterator<Item = (S, usize)>) -> Result<Self> {
        let (labels, dims): (Vec<String>, Vec<usize>) =
            modes.into_iter().map(|(l, d)| (l.into(), d)).unzip();
        if dims.is_empty() {
            return Err(usage("a mode layout needs at least one mode"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(usage(format!("mode '{}' has zero dimension", labels[i])));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(usage(format!("duplicate mode label '{l}'")));
            }
        }
        Ok(Self { dims, labels })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| usage(format!("unknown mode label '{label}'")))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.position(label)?])
    }

    /// Row-major strides: the last mode has stride 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }

    pub fn flat_index(&self, occupation: &[usize]) -> Result<usize> {
        if occupation.len() != self.dims.len() {
            return Err(usage(format!(
                "occupation has {} entries for {} modes",
                occupation.len(),
                self.dims.len()
            )));
        }
        let mut index = 0;
        for (k, (&n, &d)) in occupation.iter().zip(&self.dims).enumerate() {
            if n >= d {
                return Err(usage(format!(
                    "occupation {n} exceeds cutoff {} of mode '{}'",
                    d - 1,
                    self.labels[k]
                )));
            }
            index = index * d + n;
        }
        Ok(index)
    }

    pub fn occupation(&self, mut flat: usize) -> Result<Vec<usize>> {
        if flat >= self.total_dim() {
            return Err(usage(format!(
                "flat index {flat} outside tensor dimension {}",
                self.total_dim()
            )));
        }
        let mut occ = vec![0; self.dims.len()];
        for (slot, &d) in occ.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
        Ok(occ)
    }
}

/// Pure state on a tensor product of truncated Fock spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModeState {
    layout: ModeLayout,
    amplitudes: Vec<C64>,
}

impl MultiModeState {
    pub fn new(layout: ModeLayout, amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(usage(format!(
                "{} amplitudes supplied for tensor dimension {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { layout, amplitudes })
    }

    pub fn layout(&self) -> &ModeLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, occupation: &[usize]) -> Result<C64> {
        Ok(self.amplitudes[self.layout.flat_index(occupation)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn to_json(&self) -> StateJson {
        StateJson {
            kind: "state".into(),
            labels: self.layout.labels.clone(),
            dims: self.layout.dims.clone(),
            data: self.amplitudes.iter().map(|c| [c.re, c.im]).collect(),
        }
    }

    pub fn from_json(json: &StateJson) -> Result<Self> {
        if json.kind != "state" {
            return Err(Error::Format(format!(
                "expected kind 'state', got '{}'",
                json.kind
            )));
        }
        let layout = ModeLayout::new(json.labels.iter().cloned().zip(json.dims.iter().copied()))?;
        let amplitudes = json
            .data
            .iter()
            .map(|[re, im]| C64::new(*re, *im))
            .collect();
        Self::new(layout, amplitudes)
    }
}

/// Tensor product of labelled single-mode kets, in the given order.
pub fn tensor(factors: &[(&str, &Ket)]) -> Result<MultiModeState> {
    if factors.is_empty() {
        return Err(usage("tensor product needs at least one factor"));
    }
    let layout = ModeLayout::new(factors.iter().map(|(l, k)| (*l, k.dim())))?;
    let mut amplitudes = vec![C64::new(1.0, 0.0)];
    for (_, ket) in factors {
        amplitudes = amplitudes
            .iter()
            .flat_map(|a| ket.amplitudes().iter().map(move |b| a * b))
            .collect();
    }
    MultiModeState::new(layout, amplitudes)
}

/// Reduced operator on mode `keep`, tracing out every other mode.
///
/// Not normalized: its trace equals the squared norm of the input.
pub fn partial_trace(state: &MultiModeState, keep: &str) -> Result<DensityOperator> {
    let layout = state.layout();
    let k = layout.position(keep)?;
    let d = layout.dims()[k];
    let stride = layout.strides()[k];
    let rest = layout.total_dim() / d;
    // Row `a` of `m` holds psi(a, rest...) with the kept mode pulled out.
    let mut m = DMatrix::<C64>::zeros(d, rest);
    for (i, amp) in state.amplitudes().iter().enumerate() {
        let a = (i / stride) % d;
        let r = (i / (stride * d)) * stride + i % stride;
        m[(a, r)] = *amp;
    }
    let matrix = &m * m.adjoint();
    Ok(DensityOperator { matrix })
}

/// Hermitian operator on a single truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(usage(format!(
                "density operator must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix })
    }

    /// Diagonal operator `sum_n p_n |n><n|`.
    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        let d = populations.len();
        Self::from_matrix(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(populations[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|c| c.re).collect()
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::DegenerateState { norm: tr });
        }
        Ok(Self {
            matrix: self.matrix.map(|c| c / tr),
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.map(|c| c * factor),
        }
    }

    /// Entrywise sum; dimensions must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(usage(format!(
                "cannot add operators of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self {
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// `max |rho - rho^dagger|` entrywise.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    worst = worst.max(self.matrix[(i, j)].norm());
                }
            }
        }
        worst
    }

    /// Ascending eigenvalues of the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()).map(|c| c * 0.5);
        let mut ev: Vec<f64> = herm.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Checks Hermiticity, unit trace and positivity at the crate tolerances.
    pub fn validate(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > HERMITIAN_TOLERANCE {
            return Err(Error::Consistency(format!(
                "operator not Hermitian (error {h:.3e})"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::Consistency(format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues()[0];
        if min < -POSITIVITY_TOLERANCE {
            return Err(Error::Consistency(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    /// `<n>` for a trace-normalized operator.
    pub fn mean_photon_number(&self) -> f64 {
        self.populations()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    pub fn to_json(&self) -> DensityJson {
        let d = self.dim();
        let mut data = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let c = self.matrix[(i, j)];
                data.push([c.re, c.im]);
            }
        }
        DensityJson {
            kind: "density".into(),
            dims: vec![d],
            data,
        }
    }

    pub fn from_json(json: &DensityJson) -> Result<Self> {
        if json.kind != "density" {
            return Err(Error::Format(format!(
                "expected kind 'density', got '{}'",
                json.kind
            )));
        }
        let d = match json.dims.as_slice() {
            [d] => *d,
            other => {
                return Err(Error::Format(format!(
                    "density dims must have one entry, got {other:?}"
                )))
            }
        };
        if json.data.len() != d * d {
            return Err(Error::Format(format!(
                "density of dimension {d} needs {} entries, got {}",
                d * d,
                json.data.len()
            )));
        }
        Self::from_matrix(DMatrix::from_fn(d, d, |i, j| {
            let [re, im] = json.data[i * d + j];
            C64::new(re, im)
        }))
    }
}

/// `Tr(rho^2)`; for Hermitian input this is the squared Frobenius norm.
pub fn purity(rho: &DensityOperator) -> f64 {
    rho.matrix.iter().map(|c| c.norm_sqr()).sum()
}

/// `<psi|rho|psi>`
pub fn fidelity_with_pure(rho: &DensityOperator, psi: &Ket) -> Result<f64> {
    if rho.dim() != psi.dim() {
        return Err(usage(format!(
            "density dimension {} does not match state dimension {}",
            rho.dim(),
            psi.dim()
        )));
    }
    Ok(expectation_value(rho, psi.amplitudes()))
}

pub(crate) fn expectation_value(rho: &DensityOperator, v: &[C64]) -> f64 {
    let m = &rho.matrix;
    let d = v.len();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..d {
        if v[j] == C64::new(0.0, 0.0) {
            continue;
        }
        let mut col = C64::new(0.0, 0.0);
        for i in 0..d {
            col += v[i].conj() * m[(i, j)];
        }
        acc += col * v[j];
    }
    acc.re
}

/// JSON form of a density operator: `dims = [d]`, `data` row-major `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityJson {
    pub kind: String,
    pub dims: Vec<usize>,
    pub data: Vec<[f64; 2]>,
}

/// JSON form of a multimode pure state; `data` follows the row-major layout order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateJson {
    pub kind: String,
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
    pub data: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn vacuum_is_vacuum() {
        let k = coherent_state(CoherentAmplitude::real(0.0), 10).unwrap();
        assert_eq!(k.amplitudes()[0], C64::new(1.0, 0.0));
        assert!(k.amplitudes()[1..].iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn coherent_poisson_statistics() {
        let k = coherent_state(CoherentAmplitude::real(1.2), 30).unwrap();
        assert_abs_diff_eq!(
            k.amplitudes()[0].norm_sqr(),
            (-1.44f64).exp(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(k.mean_photon_number(), 1.44, epsilon = 1e-10);
    }

    #[test]
    fn large_amplitude_deficit() {
        let (k, deficit) = coherent_state_checked(
            CoherentAmplitude::real(9.0),
            150,
            DEFAULT_TRUNCATION_TOLERANCE,
        )
        .unwrap();
        assert!(deficit < 1e-6);
        assert!((k.mean_photon_number() - 81.0).abs() < 1e-4);
    }

    #[test]
    fn truncation_error_names_cutoff() {
        let err = coherent_state(CoherentAmplitude::real(3.0), 5).unwrap_err();
        match err {
            Error::Truncation {
                required_cutoff,
                cutoff,
                ..
            } => {
                assert_eq!(cutoff, 5);
                assert!(required_cutoff > 5);
                assert!(coherent_state(CoherentAmplitude::real(3.0), required_cutoff).is_ok());
                assert!(coherent_state(CoherentAmplitude::real(3.0), required_cutoff - 1).is_err());
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn complex_phase() {
        let a = C64::from_polar(0.8, 0.7);
        let k = coherent_state(CoherentAmplitude(a), 20).unwrap();
        let ratio = k.amplitudes()[3] / k.amplitudes()[2];
        assert_abs_diff_eq!(ratio.re, (a / 3f64.sqrt()).re, epsilon = 1e-12);
        assert_abs_diff_eq!(ratio.im, (a / 3f64.sqrt()).im, epsilon = 1e-12);
    }

    #[test]
    fn row_major_index() {
        let layout = ModeLayout::new([("t", 4), ("r", 3), ("q", 3)]).unwrap();
        assert_eq!(layout.flat_index(&[2, 1, 0]).unwrap(), 21);
        assert_eq!(layout.occupation(21).unwrap(), vec![2, 1, 0]);
        assert_eq!(layout.strides(), vec![9, 3, 1]);
    }

    #[test]
    fn layout_rejects_bad_input() {
        assert!(ModeLayout::new([("t", 2), ("t", 2)]).is_err());
        assert!(ModeLayout::new([("t", 0)]).is_err());
        assert!(ModeLayout::new(Vec::<(&str, usize)>::new()).is_err());
    }

    #[test]
    fn tensor_of_vacua() {
        let v = Ket::fock(0, 3).unwrap();
        let s = tensor(&[("a", &v), ("b", &v)]).unwrap();
        assert_eq!(s.amplitudes()[0], C64::new(1.0, 0.0));
        assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn tensor_amplitudes_are_products() {
        let a = coherent_state(CoherentAmplitude::real(0.7), 12).unwrap();
        let b = coherent_state(CoherentAmplitude::new(0.2, -0.4), 10).unwrap();
        let s = tensor(&[("a", &a), ("b", &b)]).unwrap();
        for (n, m) in [(0, 0), (3, 2), (12, 10), (5, 7)] {
            let got = s.amplitude(&[n, m]).unwrap();
            let want = a.amplitudes()[n] * b.amplitudes()[m];
            assert_abs_diff_eq!((got - want).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn product_state_trace_is_factor() {
        let a = coherent_state(CoherentAmplitude::real(0.9), 20).unwrap();
        let b = coherent_state(CoherentAmplitude::real(0.5), 15).unwrap();
        let s = tensor(&[("t", &a), ("r", &b)]).unwrap();
        let rho = partial_trace(&s, "t").unwrap();
        let want = a.density();
        assert!((rho.matrix() - want.matrix()).camax() < 1e-14);
    }

    #[test]
    fn bell_pair_reduces_to_identity_half() {
        let layout = ModeLayout::new([("a", 2), ("b", 2)]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = MultiModeState::new(
            layout,
            vec![
                C64::new(h, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(h, 0.0),
            ],
        )
        .unwrap();
        for keep in ["a", "b"] {
            let rho = partial_trace(&s, keep).unwrap();
            assert_abs_diff_eq!(rho.get(0, 0).re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(rho.get(1, 1).re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(rho.max_off_diagonal(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(purity(&rho), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn unknown_label() {
        let v = Ket::fock(0, 2).unwrap();
        let s = tensor(&[("t", &v)]).unwrap();
        assert!(matches!(partial_trace(&s, "x"), Err(Error::Usage(_))));
    }

    #[test]
    fn purity_cases() {
        let coh = coherent_state(CoherentAmplitude::real(1.3), 30)
            .unwrap()
            .density();
        assert_abs_diff_eq!(purity(&coh), 1.0, epsilon = 1e-10);
        let mix = DensityOperator::diagonal(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(purity(&mix), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn fidelity_cases() {
        let psi = coherent_state(CoherentAmplitude::real(0.8), 25).unwrap();
        assert_abs_diff_eq!(
            fidelity_with_pure(&psi.density(), &psi).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let vac = Ket::fock(0, 4).unwrap().density();
        assert_abs_diff_eq!(
            fidelity_with_pure(&vac, &Ket::fock(1, 4).unwrap()).unwrap(),
            0.0
        );

        let a = coherent_state(CoherentAmplitude::real(1.2), 40).unwrap();
        let b = coherent_state(CoherentAmplitude::real(1.2 + 1e-3), 40).unwrap();
        let f = fidelity_with_pure(&a.density(), &b).unwrap();
        assert_abs_diff_eq!(f, (-1e-6f64).exp(), epsilon = 1e-12);

        assert!(fidelity_with_pure(&vac, &psi).is_err());
    }

    #[test]
    fn validate_catches_violations() {
        let good = DensityOperator::diagonal(&[0.25, 0.75]).unwrap();
        assert!(good.validate().is_ok());
        let neg = DensityOperator::diagonal(&[1.5, -0.5]).unwrap();
        assert!(neg.validate().is_err());
        let mut m = DMatrix::from_element(2, 2, C64::new(0.5, 0.0));
        m[(0, 1)] = C64::new(0.0, 0.2);
        assert!(DensityOperator::from_matrix(m).unwrap().validate().is_err());
    }

    #[test]
    fn json_shapes() {
        let rho = coherent_state(CoherentAmplitude::new(0.3, 0.1), 5)
            .unwrap()
            .density();
        let json = serde_json::to_value(rho.to_json()).unwrap();
        assert_eq!(json["kind"], "density");
        assert_eq!(json["dims"], serde_json::json!([6]));
        assert_eq!(json["data"].as_array().unwrap().len(), 36);
        let back: DensityJson = serde_json::from_value(json).unwrap();
        assert_eq!(DensityOperator::from_json(&back).unwrap(), rho);

        let bad = DensityJson {
            kind: "density".into(),
            dims: vec![3],
            data: vec![[0.0, 0.0]; 4],
        };
        assert!(DensityOperator::from_json(&bad).is_err());
    }
}
