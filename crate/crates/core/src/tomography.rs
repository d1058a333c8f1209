//! Simulated homodyne detection and Wigner reconstruction by inverse Radon transform.
//!
//! Outcomes are eigenvalues of the truncated quadrature operator
//! `x(phi) = (a e^{-i phi} + a^dagger e^{i phi}) / sqrt(2) = x cos phi + p sin phi`,
//! so they share the phase-space convention of [`crate::wigner`].

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::fock::{DensityOperator, C64};
use crate::wigner::{Axis, WignerGrid};

const PROBABILITY_TOLERANCE: f64 = 1e-6;
/// Below this `|k_c z|` the kernel is evaluated from its Taylor series.
const SERIES_SWITCH: f64 = 0.5;

pub const INTERNAL_CONVENTION: &str = "x=(a+a^dagger)/sqrt(2)";

/// Eigen-decomposition of the quadrature operator at one phase.
#[derive(Clone, Debug)]
pub struct QuadratureEigensystem {
    pub phase: f64,
    /// Strictly increasing outcomes.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the eigenvector of `eigenvalues[i]`.
    pub eigenvectors: DMatrix<C64>,
}

/// Phase-independent part of the quadrature eigenproblem: `x(phi) = D x(0) D^dagger`
/// with `D = diag(e^{i phi n})`, so one real diagonalization serves every phase.
#[derive(Clone, Debug)]
pub struct QuadratureBasis {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
}

impl QuadratureBasis {
    pub fn new(cutoff: usize) -> Result<Self> {
        if cutoff < 1 {
            return Err(usage("quadrature cutoff must be at least 1"));
        }
        let d = cutoff + 1;
        let x0 = DMatrix::from_fn(d, d, |i, j| {
            if j == i + 1 {
                ((i + 1) as f64 / 2.0).sqrt()
            } else if i == j + 1 {
                ((j + 1) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(x0);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self {
            eigenvalues,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn at(&self, phase: f64) -> QuadratureEigensystem {
        let d = self.dim();
        QuadratureEigensystem {
            phase,
            eigenvalues: self.eigenvalues.clone(),
            eigenvectors: DMatrix::from_fn(d, d, |n, i| {
                C64::from_polar(self.vectors[(n, i)], phase * n as f64)
            }),
        }
    }

    /// `p_i = <v_i(phi)| rho |v_i(phi)>` for every outcome, clipped at zero.
    pub fn probabilities(&self, rho: &DensityOperator, phase: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        if rho.dim() != d {
            return Err(usage(format!(
                "density dimension {} does not match quadrature dimension {d}",
                rho.dim()
            )));
        }
        let rotated = DMatrix::from_fn(d, d, |m, n| {
            rho.get(m, n) * C64::from_polar(1.0, phase * (n as f64 - m as f64))
        });
        let u = self.vectors.map(|v| C64::new(v, 0.0));
        let projected = u.transpose() * rotated * &u;
        let probs: Vec<f64> = (0..d).map(|i| projected[(i, i)].re.max(0.0)).collect();
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::Consistency(format!(
                "quadrature probabilities at phase {phase} sum to {total}"
            )));
        }
        Ok(probs)
    }
}

pub fn quadrature_eigensystem(phase: f64, cutoff: usize) -> Result<QuadratureEigensystem> {
    Ok(QuadratureBasis::new(cutoff)?.at(phase))
}

/// `N` phases `pi m / N`, `m = 0..N`, covering `[0, pi)`.
pub fn uniform_phases(n_phi: usize) -> Vec<f64> {
    (0..n_phi).map(|m| PI * m as f64 / n_phi as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleRecord {
    pub angle_index: usize,
    pub phi: f64,
    pub outcomes: Vec<f64>,
}

impl AngleRecord {
    pub fn mean(&self) -> f64 {
        self.outcomes.iter().sum::<f64>() / self.outcomes.len() as f64
    }
}

/// Metadata stored alongside a trace's CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    pub state_descriptor: String,
    pub convention: String,
    pub n_phi: usize,
    pub n_shots: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomodyneTrace {
    pub seed: u64,
    pub state_descriptor: String,
    pub records: Vec<AngleRecord>,
}

impl HomodyneTrace {
    pub fn n_phi(&self) -> usize {
        self.records.len()
    }

    pub fn n_shots(&self) -> usize {
        self.records.first().map_or(0, |r| r.outcomes.len())
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader {
            seed: self.seed,
            state_descriptor: self.state_descriptor.clone(),
            convention: INTERNAL_CONVENTION.into(),
            n_phi: self.n_phi(),
            n_shots: self.n_shots(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() || self.n_shots() == 0 {
            return Err(usage("homodyne trace is empty"));
        }
        let n = self.n_shots();
        for r in &self.records {
            if r.outcomes.len() != n {
                return Err(Error::Format(format!(
                    "angle {} has {} shots, expected {n}",
                    r.angle_index,
                    r.outcomes.len()
                )));
            }
            if !(0.0..PI).contains(&r.phi) {
                return Err(Error::Format(format!("phase {} outside [0, pi)", r.phi)));
            }
        }
        Ok(())
    }

    /// Columns `angle_index,phi,shot_index,outcome`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle_index,phi,shot_index,outcome")?;
        for r in &self.records {
            for (s, v) in r.outcomes.iter().enumerate() {
                writeln!(out, "{},{},{},{}", r.angle_index, r.phi, s, v)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, header: &TraceHeader) -> Result<Self> {
        let mut records: Vec<AngleRecord> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Format(format!("malformed trace line {}: '{line}'", lineno + 1));
            if cells.len() != 4 {
                return Err(bad());
            }
            let angle_index: usize = cells[0].parse().map_err(|_| bad())?;
            let phi: f64 = cells[1].parse().map_err(|_| bad())?;
            let outcome: f64 = cells[3].parse().map_err(|_| bad())?;
            match records.last_mut() {
                Some(r) if r.angle_index == angle_index => r.outcomes.push(outcome),
                _ => records.push(AngleRecord {
                    angle_index,
                    phi,
                    outcomes: vec![outcome],
                }),
            }
        }
        let trace = Self {
            seed: header.seed,
            state_descriptor: header.state_descriptor.clone(),
            records,
        };
        trace.validate()?;
        Ok(trace)
    }
}

/// Draws `n_shots` quadrature outcomes per phase. Angle `m` uses its own
/// ChaCha stream of the master `seed`, so traces are reproducible and the
/// angles can be sampled in parallel.
pub fn sample_homodyne(
    rho: &DensityOperator,
    phases: &[f64],
    n_shots: usize,
    seed: u64,
    state_descriptor: &str,
) -> Result<HomodyneTrace> {
    if n_shots == 0 {
        return Err(usage("n_shots must be at least 1"));
    }
    if phases.is_empty() {
        return Err(usage("at least one phase is required"));
    }
    if let Some(phi) = phases.iter().find(|p| !(0.0..PI).contains(*p)) {
        return Err(usage(format!("phase {phi} outside [0, pi)")));
    }
    let tr = rho.trace();
    if (tr - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::Consistency(format!(
            "density operator has trace {tr}"
        )));
    }
    let basis = QuadratureBasis::new(rho.dim() - 1)?;
    let records = phases
        .par_iter()
        .enumerate()
        .map(|(m, &phi)| {
            let probs = basis.probabilities(rho, phi)?;
            let dist = WeightedIndex::new(&probs).map_err(|e| {
                Error::Consistency(format!("outcome distribution at phase {phi}: {e}"))
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let outcomes = (0..n_shots)
                .map(|_| basis.eigenvalues[dist.sample(&mut rng)])
                .collect();
            Ok(AngleRecord {
                angle_index: m,
                phi,
                outcomes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HomodyneTrace {
        seed,
        state_descriptor: state_descriptor.to_string(),
        records,
    })
}

/// `K(z) = 1/2 * integral_{-k_c}^{k_c} |xi| e^{i xi z} d xi
///       = (k_c z sin(k_c z) + cos(k_c z) - 1) / z^2`.
pub fn radon_kernel(z: f64, kc: f64) -> f64 {
    let u = kc * z;
    let f = if u.abs() < SERIES_SWITCH {
        // sum_j (-1)^j u^{2j} / ((2j)! (2j + 2))
        let u2 = u * u;
        let mut term = 1.0;
        let mut sum = 0.5;
        for j in 1..10 {
            let jf = j as f64;
            term *= -u2 / ((2.0 * jf - 1.0) * (2.0 * jf));
            sum += term / (2.0 * jf + 2.0);
        }
        sum
    } else {
        (u * u.sin() + u.cos() - 1.0) / (u * u)
    };
    kc * kc * f
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadonVariant {
    /// Every recorded outcome contributes a kernel term.
    PerSample,
    /// One kernel term per angle, centred on the mean outcome.
    PerAngleMean,
}

/// Which quadrature scale the kernel cutoff refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffConvention {
    /// `k_c` conjugate to `x = a + a^dagger`; applied internally as `sqrt(2) k_c`.
    Homodyne,
    /// `k_c` conjugate to `x = (a + a^dagger)/sqrt(2)`.
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadonConfig {
    pub kc: f64,
    pub x: Axis,
    pub p: Axis,
    pub variant: RadonVariant,
    pub convention: CutoffConvention,
}

impl RadonConfig {
    pub fn new(kc: f64) -> Self {
        Self {
            kc,
            x: Axis::default(),
            p: Axis::default(),
            variant: RadonVariant::PerSample,
            convention: CutoffConvention::Homodyne,
        }
    }

    pub fn internal_kc(&self) -> f64 {
        match self.convention {
            CutoffConvention::Homodyne => 2f64.sqrt() * self.kc,
            CutoffConvention::Internal => self.kc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kc.is_finite() && self.kc > 0.0) {
            return Err(usage(format!(
                "k_c must be finite and positive, got {}",
                self.kc
            )));
        }
        self.x.validate()?;
        self.p.validate()
    }
}

/// `(cos phi, sin phi, [(outcome, multiplicity)])`
type ProjectedAngle = (f64, f64, Vec<(f64, f64)>);

/// Filtered back-projection
/// `W(x, p) = 1/(2 pi N_phi N_shots) sum_{m,i} K(x cos phi_m + p sin phi_m - x_i^(m))`,
/// the angular integral of the inverse Radon transform discretized with weight
/// `pi / N_phi`. The per-angle-mean variant uses one term per angle with `N_shots = 1`.
pub fn inverse_radon(trace: &HomodyneTrace, config: &RadonConfig) -> Result<WignerGrid> {
    trace.validate()?;
    config.validate()?;
    let kc = config.internal_kc();
    let angles: Vec<ProjectedAngle> = trace
        .records
        .iter()
        .map(|r| {
            let groups = match config.variant {
                RadonVariant::PerSample => {
                    let mut sorted = r.outcomes.clone();
                    sorted.sort_by(f64::total_cmp);
                    let mut groups: Vec<(f64, f64)> = Vec::new();
                    for v in sorted {
                        match groups.last_mut() {
                            Some((g, c)) if g.to_bits() == v.to_bits() => *c += 1.0,
                            _ => groups.push((v, 1.0)),
                        }
                    }
                    groups
                }
                RadonVariant::PerAngleMean => vec![(r.mean(), 1.0)],
            };
            (r.phi.cos(), r.phi.sin(), groups)
        })
        .collect();
    let shots = match config.variant {
        RadonVariant::PerSample => trace.n_shots() as f64,
        RadonVariant::PerAngleMean => 1.0,
    };
    let prefactor = 1.0 / (2.0 * PI * trace.n_phi() as f64 * shots);
    let xs = config.x.points();
    let ps = config.p.points();
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            ps.iter()
                .map(|&p| {
                    let mut acc = 0.0;
                    for (c, s, groups) in &angles {
                        let proj = x * c + p * s;
                        for &(v, count) in groups {
                            acc += count * radon_kernel(proj - v, kc);
                        }
                    }
                    prefactor * acc
                })
                .collect()
        })
        .collect();
    WignerGrid::new(
        config.x,
        config.p,
        DMatrix::from_fn(config.x.n, config.p.n, |i, j| rows[i][j]),
    )
}

/// `<A/|A|, B/|B|>_F`
pub fn frobenius_similarity(a: &WignerGrid, b: &WignerGrid) -> Result<f64> {
    if a.values.shape() != b.values.shape() {
        return Err(usage(format!(
            "grid shapes differ: {:?} vs {:?}",
            a.values.shape(),
            b.values.shape()
        )));
    }
    let (na, nb) = (a.values.norm(), b.values.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(usage("similarity of a zero grid is undefined"));
    }
    Ok(a.values.dot(&b.values) / (na * nb))
}
