//! Studies built on the post-selection pipeline: cat-state fidelity search,
//! classical intensity fluctuations of the driving field, and shot-by-shot
//! IR/XUV correlation maps.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::fock::{
    coherent_amplitudes, expectation_value, suggested_cutoff, CoherentAmplitude, DensityOperator,
    Ket, C64, DEFAULT_TRUNCATION_TOLERANCE,
};
use crate::postselect::{postselect, HhgOutputSpec, PostSelectionSpec};

const DEGENERATE_NORM: f64 = 1e-8;

/// `(|beta + delta_beta> - xi |beta>) / N` with `xi = <0|delta_beta> = e^{-|delta_beta|^2/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatStateSpec {
    pub beta: CoherentAmplitude,
    pub delta_beta: CoherentAmplitude,
}

/// `<a|b>` for untruncated coherent states.
fn coherent_overlap(a: C64, b: C64) -> C64 {
    (-0.5 * a.norm_sqr() - 0.5 * b.norm_sqr() + a.conj() * b).exp()
}

impl CatStateSpec {
    pub fn new(
        beta: impl Into<CoherentAmplitude>,
        delta_beta: impl Into<CoherentAmplitude>,
    ) -> Self {
        Self {
            beta: beta.into(),
            delta_beta: delta_beta.into(),
        }
    }

    pub fn xi(&self) -> f64 {
        (-0.5 * self.delta_beta.mean_photon_number()).exp()
    }

    /// `N^2 = 1 + xi^2 - 2 xi Re<beta|beta + delta_beta>`, from untruncated overlaps.
    pub fn norm_sqr(&self) -> f64 {
        let b = self.beta.value();
        let xi = self.xi();
        (1.0 + xi * xi - 2.0 * xi * coherent_overlap(b, b + self.delta_beta.value()).re).max(0.0)
    }

    /// First `dim` Fock amplitudes of the exactly normalized cat.
    fn amplitudes(&self, dim: usize) -> Result<Vec<C64>> {
        let norm = self.norm_sqr().sqrt();
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateState { norm });
        }
        let b = self.beta.value();
        let shifted = coherent_amplitudes(b + self.delta_beta.value(), dim - 1);
        let base = coherent_amplitudes(b, dim - 1);
        let xi = self.xi();
        Ok(shifted
            .iter()
            .zip(&base)
            .map(|(s, c)| (s - c * xi) / norm)
            .collect())
    }
}

/// The cat state truncated at `cutoff`; each coherent component must fit
/// within the truncation tolerance.
pub fn cat_state(spec: &CatStateSpec, cutoff: usize) -> Result<Ket> {
    for amp in [
        spec.beta.value(),
        spec.beta.value() + spec.delta_beta.value(),
    ] {
        crate::fock::coherent_state_checked(
            CoherentAmplitude(amp),
            cutoff,
            DEFAULT_TRUNCATION_TOLERANCE,
        )?;
    }
    Ket::new(spec.amplitudes(cutoff + 1)?)
}

/// Evenly spaced values `min..=max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanAxis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl ScanAxis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(usage(format!(
                "scan resolution must be at least 2, got {n}"
            )));
        }
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(usage(format!("invalid scan range [{min}, {max}]")));
        }
        Ok(Self { min, max, n })
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i)).collect()
    }
}

impl Default for ScanAxis {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 3.0,
            n: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityScanResult {
    pub best_beta: f64,
    pub best_delta_beta: f64,
    pub best_fidelity: f64,
    pub beta_axis: ScanAxis,
    pub delta_beta_axis: ScanAxis,
}

/// Exhaustive search of `<psi(beta, delta_beta)| rho |psi(beta, delta_beta)>`
/// over real, positive `beta` and `delta_beta`. Ties go to the lexicographically
/// smaller `(beta, delta_beta)`.
///
/// The cat is normalized with untruncated overlaps and projected onto the
/// support of `rho`, so the fidelity is exact for any amplitude range.
pub fn fidelity_scan(
    rho: &DensityOperator,
    beta: ScanAxis,
    delta_beta: ScanAxis,
) -> Result<FidelityScanResult> {
    ScanAxis::new(beta.min, beta.max, beta.n)?;
    ScanAxis::new(delta_beta.min, delta_beta.max, delta_beta.n)?;
    let d = rho.dim();
    let rows: Vec<Vec<f64>> = beta
        .values()
        .par_iter()
        .map(|&b| {
            delta_beta
                .values()
                .iter()
                .map(|&db| {
                    CatStateSpec::new(b, db)
                        .amplitudes(d)
                        .map_or(f64::NEG_INFINITY, |psi| expectation_value(rho, &psi))
                })
                .collect()
        })
        .collect();
    let mut best = (0, 0, f64::NEG_INFINITY);
    for (i, row) in rows.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            if f > best.2 {
                best = (i, j, f);
            }
        }
    }
    if !best.2.is_finite() {
        return Err(Error::Consistency(
            "no cat state on the scan grid could be normalized".into(),
        ));
    }
    Ok(FidelityScanResult {
        best_beta: beta.value(best.0),
        best_delta_beta: delta_beta.value(best.1),
        best_fidelity: best.2,
        beta_axis: beta,
        delta_beta_axis: delta_beta,
    })
}

#[derive(Clone, Debug)]
pub struct FluctuationOutcome {
    pub rho: DensityOperator,
    /// `(|alpha|, weight)` per node; weights sum to 1.
    pub nodes: Vec<(f64, f64)>,
    /// Mixture-averaged success probability.
    pub success_probability: f64,
}

/// Post-selected state when the driving amplitude fluctuates from shot to shot
/// as `p(|alpha|) ~ exp(-(|alpha| - alpha0)^2 / (2 sigma^2))`.
///
/// `base.alpha` sets `alpha0` and its phase. Every node keeps `delta_alpha`,
/// the harmonic amplitudes and the selection rule `ps` fixed, since the
/// experimenter applies one rule to all shots. Nodes are weighted by their
/// prior weight times their success probability. With `nodes == 1` the
/// result is the deterministic pipeline at `alpha0`.
pub fn intensity_fluctuation_state(
    base: &HhgOutputSpec,
    ps: &PostSelectionSpec,
    sigma_tilde: f64,
    nodes: usize,
) -> Result<FluctuationOutcome> {
    if nodes == 0 {
        return Err(usage("at least one node is required"));
    }
    if nodes > 1 && !(sigma_tilde.is_finite() && sigma_tilde > 0.0) {
        return Err(usage(format!(
            "sigma_tilde must be positive, got {sigma_tilde}"
        )));
    }
    let alpha0 = base.alpha.norm();
    let phase = if alpha0 > 0.0 {
        base.alpha.value() / alpha0
    } else {
        C64::new(1.0, 0.0)
    };
    let grid: Vec<(f64, f64)> = if nodes == 1 {
        vec![(alpha0, 1.0)]
    } else {
        let lo = (alpha0 - 4.0 * sigma_tilde).max(0.0);
        let hi = alpha0 + 4.0 * sigma_tilde;
        (0..nodes)
            .map(|i| {
                let a = lo + (hi - lo) * i as f64 / (nodes - 1) as f64;
                let z = (a - alpha0) / sigma_tilde;
                (a, (-0.5 * z * z).exp())
            })
            .collect()
    };
    // Common cutoffs large enough for the strongest node.
    let widest = grid.iter().map(|g| g.0).fold(alpha0, f64::max);
    let ir = CoherentAmplitude((phase * widest + base.delta_alpha.value()) / 2f64.sqrt());
    let cutoff_t = base.cutoff_t.max(suggested_cutoff(ir));
    let cutoff_r = base.cutoff_r.max(suggested_cutoff(ir));
    let runs = grid
        .par_iter()
        .map(|&(a, w)| {
            let mut spec = base.clone().with_ir_cutoffs(cutoff_t, cutoff_r);
            spec.alpha = CoherentAmplitude(phase * a);
            match postselect(&spec, ps) {
                Ok(out) => Ok(Some((w, out))),
                Err(Error::EmptySelection { .. } | Error::DegenerateSelection) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total_prior: f64 = grid.iter().map(|g| g.1).sum();
    let mut acc: Option<DensityOperator> = None;
    let mut mass = 0.0;
    for (w, out) in runs.into_iter().flatten() {
        let weight = w * out.success_probability;
        let term = out.rho.scaled(weight);
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
        mass += weight;
    }
    let acc = acc.ok_or(Error::EmptySelection { dropped: 0 })?;
    if !(mass > 0.0) {
        return Err(Error::DegenerateSelection);
    }
    Ok(FluctuationOutcome {
        rho: acc.scaled(1.0 / mass),
        nodes: grid.iter().map(|&(a, w)| (a, w / total_prior)).collect(),
        success_probability: mass / total_prior,
    })
}

/// Band rule on measured counts: accept when `|n_r + sum kappa_q m_q - c| <= band`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalFilter {
    pub kappas: Vec<f64>,
    pub c: f64,
    pub band: f64,
}

impl DiagonalFilter {
    pub fn from_spec(ps: &PostSelectionSpec) -> Self {
        Self {
            kappas: ps.kappas.clone(),
            c: ps.c,
            band: ps.band,
        }
    }

    /// A filter whose diagonal passes through the mean counts of `hhg`.
    pub fn centered(hhg: &HhgOutputSpec, kappas: Vec<f64>, band: f64) -> Self {
        let c = hhg.ir_amplitude().mean_photon_number()
            + kappas
                .iter()
                .zip(&hhg.harmonics)
                .map(|(k, h)| k * h.chi.mean_photon_number())
                .sum::<f64>();
        Self { kappas, c, band }
    }

    pub fn accepts(&self, n_r: u64, m: &[u64]) -> bool {
        let s = n_r as f64
            + self
                .kappas
                .iter()
                .zip(m)
                .map(|(k, &mq)| k * mq as f64)
                .sum::<f64>();
        (s - self.c).abs() <= self.band
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: usize,
    pub n_r: u64,
    pub m: Vec<u64>,
    pub i_ir: f64,
    pub i_xuv: f64,
    pub accepted: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMap {
    pub orders: Vec<u32>,
    pub records: Vec<ShotRecord>,
    pub filters: Vec<DiagonalFilter>,
    /// Factor applied to `i_xuv`, `1` unless the axes were normalized.
    pub xuv_scale: f64,
}

impl CorrelationMap {
    pub fn mean_ir(&self) -> f64 {
        self.records.iter().map(|r| r.n_r as f64).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_m(&self, harmonic: usize) -> f64 {
        self.records
            .iter()
            .map(|r| r.m[harmonic] as f64)
            .sum::<f64>()
            / self.records.len() as f64
    }

    /// Least-squares slope and intercept of `I_IR` against `I_XUV` over the
    /// records accepted by filter `filter`.
    pub fn accepted_fit(&self, filter: usize) -> Option<(f64, f64)> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .records
            .iter()
            .filter(|r| r.accepted[filter])
            .map(|r| (r.i_xuv, r.i_ir))
            .unzip();
        linear_fit(&xs, &ys)
    }

    /// Columns `i,n_r,m_<q>...,I_IR,I_XUV,accepted_filter_<k>...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["i".to_string(), "n_r".to_string()];
        header.extend(self.orders.iter().map(|q| format!("m_{q}")));
        header.extend(["I_IR".to_string(), "I_XUV".to_string()]);
        header.extend((0..self.filters.len()).map(|k| format!("accepted_filter_{k}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut cells = vec![r.index.to_string(), r.n_r.to_string()];
            cells.extend(r.m.iter().map(u64::to_string));
            cells.extend([r.i_ir.to_string(), r.i_xuv.to_string()]);
            cells.extend(r.accepted.iter().map(|&a| u8::from(a).to_string()));
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn poisson_draw(dist: &Option<Poisson<f64>>, rng: &mut ChaCha8Rng) -> u64 {
    dist.as_ref().map_or(0, |d| d.sample(rng) as u64)
}

fn poisson(mean: f64) -> Result<Option<Poisson<f64>>> {
    if mean == 0.0 {
        return Ok(None);
    }
    Poisson::new(mean)
        .map(Some)
        .map_err(|e| usage(format!("invalid Poisson mean {mean}: {e}")))
}

/// Simulated shot-by-shot photon counts of the reflected IR mode and every
/// harmonic. `I_IR = n_r` and `I_XUV = sum_q m_q`; with `normalize_xuv` the
/// XUV intensities are multiplied by the ratio of the mean intensities.
pub fn correlation_map(
    hhg: &HhgOutputSpec,
    n_shots: usize,
    seed: u64,
    filters: &[DiagonalFilter],
    normalize_xuv: bool,
) -> Result<CorrelationMap> {
    hhg.validate()?;
    if n_shots == 0 {
        return Err(usage("n_shots must be at least 1"));
    }
    for (k, f) in filters.iter().enumerate() {
        if f.kappas.len() != hhg.harmonics.len() {
            return Err(usage(format!(
                "filter {k} has {} kappa values for {} harmonics",
                f.kappas.len(),
                hhg.harmonics.len()
            )));
        }
    }
    let ir = poisson(hhg.ir_amplitude().mean_photon_number())?;
    let xuv = hhg
        .harmonics
        .iter()
        .map(|h| poisson(h.chi.mean_photon_number()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<ShotRecord> = (0..n_shots)
        .map(|index| {
            let n_r = poisson_draw(&ir, &mut rng);
            let m: Vec<u64> = xuv.iter().map(|d| poisson_draw(d, &mut rng)).collect();
            let accepted = filters.iter().map(|f| f.accepts(n_r, &m)).collect();
            ShotRecord {
                index,
                n_r,
                i_ir: n_r as f64,
                i_xuv: m.iter().sum::<u64>() as f64,
                m,
                accepted,
            }
        })
        .collect();
    let mut xuv_scale = 1.0;
    if normalize_xuv {
        let mean_ir = records.iter().map(|r| r.i_ir).sum::<f64>();
        let mean_xuv = records.iter().map(|r| r.i_xuv).sum::<f64>();
        if mean_xuv > 0.0 {
            xuv_scale = mean_ir / mean_xuv;
            records.iter_mut().for_each(|r| r.i_xuv *= xuv_scale);
        }
    }
    Ok(CorrelationMap {
        orders: hhg.orders(),
        records,
        filters: filters.to_vec(),
        xuv_scale,
    })
}

/// Ordinary least squares `y = slope x + intercept`; `None` with fewer than two
/// distinct `x` values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
