//! Conditioning the transmitted IR mode on photon-number records of the
//! reflected IR mode and the harmonics.
//!
//! A record `(n_r, {m_q})` is admitted when its weighted count
//! `S = n_r + sum_q kappa_q m_q` lies in the closed band `|S - c| <= band`.
//! Each admitted record then selects transmitted photon numbers around the
//! energy balance `n_t = n0 - n_r - sum_q q m_q`, either a single rounded point
//! (exact mode) or a Gaussian profile of width `sigma` (fuzzy mode).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::fock::{
    coherent_state, suggested_cutoff, tensor, CoherentAmplitude, DensityOperator, Ket, ModeLayout,
    MultiModeState, C64,
};

pub const DEFAULT_BAND: f64 = 0.5;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-8;

/// One harmonic mode of order `q` with coherent amplitude `chi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub chi: CoherentAmplitude,
    pub cutoff: usize,
}

/// Parameters of the IR/XUV state after the generation step and the IR beam splitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HhgOutputSpec {
    pub alpha: CoherentAmplitude,
    pub delta_alpha: CoherentAmplitude,
    pub harmonics: Vec<Harmonic>,
    pub cutoff_t: usize,
    pub cutoff_r: usize,
}

impl HhgOutputSpec {
    /// Harmonic amplitudes default to `|delta_alpha| / sqrt(q)`; every cutoff
    /// defaults to [`suggested_cutoff`] of its mode amplitude.
    pub fn new(
        alpha: CoherentAmplitude,
        delta_alpha: CoherentAmplitude,
        orders: &[u32],
    ) -> Result<Self> {
        let chis = orders
            .iter()
            .map(|&q| CoherentAmplitude::real(delta_alpha.norm() / (q as f64).sqrt()))
            .collect::<Vec<_>>();
        Self::with_chis(alpha, delta_alpha, orders, &chis)
    }

    pub fn with_chis(
        alpha: CoherentAmplitude,
        delta_alpha: CoherentAmplitude,
        orders: &[u32],
        chis: &[CoherentAmplitude],
    ) -> Result<Self> {
        if orders.len() != chis.len() {
            return Err(usage(format!(
                "{} harmonic orders but {} harmonic amplitudes",
                orders.len(),
                chis.len()
            )));
        }
        let ir = Self::ir_amplitude_of(alpha, delta_alpha);
        let spec = Self {
            alpha,
            delta_alpha,
            harmonics: orders
                .iter()
                .zip(chis)
                .map(|(&order, &chi)| Harmonic {
                    order,
                    chi,
                    cutoff: suggested_cutoff(chi),
                })
                .collect(),
            cutoff_t: suggested_cutoff(ir),
            cutoff_r: suggested_cutoff(ir),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_ir_cutoffs(mut self, cutoff_t: usize, cutoff_r: usize) -> Self {
        self.cutoff_t = cutoff_t;
        self.cutoff_r = cutoff_r;
        self
    }

    pub fn with_harmonic_cutoffs(mut self, cutoff: usize) -> Self {
        for h in &mut self.harmonics {
            h.cutoff = cutoff;
        }
        self
    }

    fn ir_amplitude_of(
        alpha: CoherentAmplitude,
        delta_alpha: CoherentAmplitude,
    ) -> CoherentAmplitude {
        CoherentAmplitude((alpha.value() + delta_alpha.value()) / 2f64.sqrt())
    }

    /// `(alpha + delta_alpha) / sqrt(2)`, the amplitude on each beam-splitter output.
    pub fn ir_amplitude(&self) -> CoherentAmplitude {
        Self::ir_amplitude_of(self.alpha, self.delta_alpha)
    }

    /// `n0 = |alpha|^2`
    pub fn n0(&self) -> f64 {
        self.alpha.mean_photon_number()
    }

    pub fn orders(&self) -> Vec<u32> {
        self.harmonics.iter().map(|h| h.order).collect()
    }

    pub fn harmonic_label(order: u32) -> String {
        format!("q{order}")
    }

    /// Modes in the order `t, r, q...`.
    pub fn layout(&self) -> Result<ModeLayout> {
        let mut modes = vec![
            ("t".to_string(), self.cutoff_t + 1),
            ("r".to_string(), self.cutoff_r + 1),
        ];
        modes.extend(
            self.harmonics
                .iter()
                .map(|h| (Self::harmonic_label(h.order), h.cutoff + 1)),
        );
        ModeLayout::new(modes)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha", self.alpha), ("delta_alpha", self.delta_alpha)] {
            if !a.is_finite() {
                return Err(usage(format!("{name} must be finite")));
            }
        }
        for w in self.harmonics.windows(2) {
            if w[1].order <= w[0].order {
                return Err(usage("harmonic orders must be strictly increasing"));
            }
        }
        for h in &self.harmonics {
            if h.order == 0 {
                return Err(usage("harmonic order must be positive"));
            }
            if !h.chi.is_finite() {
                return Err(usage(format!(
                    "amplitude of harmonic {} must be finite",
                    h.order
                )));
            }
        }
        Ok(())
    }
}

/// Coherent product state `|a>_t |a>_r |chi_q1>... ` with `a = (alpha + delta_alpha)/sqrt(2)`.
pub fn build_hhg_state(spec: &HhgOutputSpec) -> Result<MultiModeState> {
    spec.validate()?;
    let ir = spec.ir_amplitude();
    let t = coherent_state(ir, spec.cutoff_t)?;
    let r = coherent_state(ir, spec.cutoff_r)?;
    let harmonics = spec
        .harmonics
        .iter()
        .map(|h| coherent_state(h.chi, h.cutoff))
        .collect::<Result<Vec<Ket>>>()?;
    let labels: Vec<String> = spec
        .harmonics
        .iter()
        .map(|h| HhgOutputSpec::harmonic_label(h.order))
        .collect();
    let mut factors: Vec<(&str, &Ket)> = vec![("t", &t), ("r", &r)];
    factors.extend(labels.iter().map(String::as_str).zip(harmonics.iter()));
    tensor(&factors)
}

/// How sharply the transmitted photon number is tied to the energy balance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SelectionWidth {
    Exact,
    Fuzzy { sigma: f64 },
}

/// Rule deciding which measurement records are kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionSpec {
    /// Slope of the diagonal for each harmonic, in harmonic order.
    pub kappas: Vec<f64>,
    pub c: f64,
    pub n0: f64,
    pub width: SelectionWidth,
    /// Detector efficiency already folded into `kappas`.
    pub efficiency: f64,
    /// Half-width of the admission band around `c`.
    pub band: f64,
    pub weight_floor: f64,
}

impl PostSelectionSpec {
    /// Exact selection on the energy-conserving diagonal: `kappa_q = q`, `c = n0 / 2`.
    pub fn for_hhg(hhg: &HhgOutputSpec) -> Self {
        let n0 = hhg.n0();
        Self {
            kappas: hhg.harmonics.iter().map(|h| h.order as f64).collect(),
            c: n0 / 2.0,
            n0,
            width: SelectionWidth::Exact,
            efficiency: 1.0,
            band: DEFAULT_BAND,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        }
    }

    pub fn fuzzy(mut self, sigma: f64) -> Self {
        self.width = SelectionWidth::Fuzzy { sigma };
        self
    }

    /// Fuzzy selection with `sigma^2 = n0 / 2`.
    pub fn fuzzy_default(self) -> Self {
        let sigma = (self.n0 / 2.0).sqrt();
        self.fuzzy(sigma)
    }

    pub fn with_kappas(mut self, kappas: Vec<f64>) -> Self {
        self.kappas = kappas;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = band;
        self
    }

    pub fn with_weight_floor(mut self, floor: f64) -> Self {
        self.weight_floor = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.kappas.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(usage(format!(
                "kappa must be finite and non-negative, got {k}"
            )));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(usage(format!(
                "c must be finite and non-negative, got {}",
                self.c
            )));
        }
        if !(self.n0.is_finite() && self.n0 >= 0.0) {
            return Err(usage(format!(
                "n0 must be finite and non-negative, got {}",
                self.n0
            )));
        }
        if let SelectionWidth::Fuzzy { sigma } = self.width {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(usage(format!(
                    "sigma must be finite and positive, got {sigma}"
                )));
            }
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(usage(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.band >= 0.0) {
            return Err(usage(format!(
                "band must be non-negative, got {}",
                self.band
            )));
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return Err(usage(format!(
                "weight_floor must lie in [0, 1), got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }

    /// `|S - c| <= band` with `S = n_r + sum kappa_q m_q`.
    pub fn admits(&self, n_r: usize, m: &[usize]) -> bool {
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

/// Scales every slope by the detector efficiency `eta`, leaving `c` unchanged.
pub fn apply_detector_efficiency(ps: &PostSelectionSpec, eta: f64) -> Result<PostSelectionSpec> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(usage(format!(
            "detector efficiency must lie in (0, 1], got {eta}"
        )));
    }
    let mut out = ps.clone();
    out.kappas.iter_mut().for_each(|k| *k *= eta);
    out.efficiency *= eta;
    Ok(out)
}

/// An admitted record and the transmitted photon numbers it selects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalTuple {
    pub n_r: usize,
    pub m: Vec<usize>,
    /// `(n_t, weight)` pairs in increasing `n_t`, every weight in `(0, 1]`.
    pub profile: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSet {
    pub tuples: Vec<DiagonalTuple>,
    /// Admitted records whose whole profile fell outside `[0, cutoff_t]`.
    pub dropped: usize,
    pub layout: ModeLayout,
}

impl DiagonalSet {
    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

fn transmitted_profile(
    hhg: &HhgOutputSpec,
    ps: &PostSelectionSpec,
    n_r: usize,
    m: &[usize],
) -> Vec<(usize, f64)> {
    let energy = n_r as f64
        + hhg
            .harmonics
            .iter()
            .zip(m)
            .map(|(h, &mq)| h.order as f64 * mq as f64)
            .sum::<f64>();
    let target = ps.n0 - energy;
    match ps.width {
        SelectionWidth::Exact => {
            let n = target.round();
            if n < 0.0 || n > hhg.cutoff_t as f64 {
                Vec::new()
            } else {
                vec![(n as usize, 1.0)]
            }
        }
        SelectionWidth::Fuzzy { sigma } => {
            let two_var = 2.0 * sigma * sigma;
            (0..=hhg.cutoff_t)
                .filter_map(|n| {
                    let d = n as f64 - target;
                    let w = (-d * d / two_var).exp();
                    (w >= ps.weight_floor && w > 0.0).then_some((n, w))
                })
                .collect()
        }
    }
}

/// All admitted records `(n_r, {m_q})` within the mode cutoffs, with their
/// transmitted-mode weight profiles. Records are listed in lexicographic
/// order of `(n_r, m_q1, m_q2, ...)`.
pub fn enumerate_diagonal(hhg: &HhgOutputSpec, ps: &PostSelectionSpec) -> Result<DiagonalSet> {
    hhg.validate()?;
    ps.validate()?;
    if ps.kappas.len() != hhg.harmonics.len() {
        return Err(usage(format!(
            "{} kappa values for {} harmonics",
            ps.kappas.len(),
            hhg.harmonics.len()
        )));
    }
    let cutoffs: Vec<usize> = hhg.harmonics.iter().map(|h| h.cutoff).collect();
    let upper = ps.c + ps.band;
    let mut tuples = Vec::new();
    let mut dropped = 0;
    let mut m = vec![0usize; cutoffs.len()];
    for n_r in 0..=hhg.cutoff_r {
        if n_r as f64 > upper {
            break;
        }
        // Odometer over harmonic occupations, pruning once the partial sum overshoots.
        'records: loop {
            if ps.admits(n_r, &m) {
                let profile = transmitted_profile(hhg, ps, n_r, &m);
                if profile.is_empty() {
                    dropped += 1;
                } else {
                    tuples.push(DiagonalTuple {
                        n_r,
                        m: m.clone(),
                        profile,
                    });
                }
            }
            let mut k = m.len();
            loop {
                if k == 0 {
                    m.iter_mut().for_each(|x| *x = 0);
                    break 'records;
                }
                k -= 1;
                m[k] += 1;
                let partial = n_r as f64
                    + ps.kappas[..=k]
                        .iter()
                        .zip(&m[..=k])
                        .map(|(kap, &mq)| kap * mq as f64)
                        .sum::<f64>();
                if m[k] <= cutoffs[k] && partial <= upper {
                    break;
                }
                m[k] = 0;
            }
        }
    }
    Ok(DiagonalSet {
        tuples,
        dropped,
        layout: hhg.layout()?,
    })
}

/// Reduced transmitted-mode state after post-selection.
#[derive(Clone, Debug)]
pub struct PostSelectionOutcome {
    pub rho: DensityOperator,
    /// Trace of the conditioned operator before normalization.
    pub success_probability: f64,
    pub tuples: usize,
    pub dropped: usize,
}

/// Applies the post-selection operator to `state` and traces out every mode but `t`.
///
/// Each admitted record contributes `|phi><phi|` with
/// `phi(n_t) = w(n_t) psi(n_t, n_r, m)`, so coherences between transmitted
/// photon numbers survive within a record but not across records.
pub fn apply_postselection(
    state: &MultiModeState,
    diag: &DiagonalSet,
) -> Result<PostSelectionOutcome> {
    if diag.is_empty() {
        return Err(Error::EmptySelection {
            dropped: diag.dropped,
        });
    }
    if state.layout() != &diag.layout {
        return Err(usage(
            "state layout does not match the diagonal's mode layout",
        ));
    }
    let dims = diag.layout.dims();
    let dim_t = dims[0];
    let stride_t = diag.layout.total_dim() / dim_t;
    let amps = state.amplitudes();
    let columns: Vec<Vec<C64>> = diag
        .tuples
        .par_iter()
        .map(|tuple| {
            let mut base = tuple.n_r;
            for (&mq, &d) in tuple.m.iter().zip(&dims[2..]) {
                base = base * d + mq;
            }
            let mut phi = vec![C64::new(0.0, 0.0); dim_t];
            for &(n_t, w) in &tuple.profile {
                phi[n_t] = amps[n_t * stride_t + base] * w;
            }
            phi
        })
        .collect();
    let phi = DMatrix::from_fn(dim_t, columns.len(), |i, j| columns[j][i]);
    let unnormalized = DensityOperator::from_matrix(&phi * phi.adjoint())?;
    let success_probability = unnormalized.trace();
    if !(success_probability > 0.0) {
        return Err(Error::DegenerateSelection);
    }
    Ok(PostSelectionOutcome {
        rho: unnormalized.scaled(1.0 / success_probability),
        success_probability,
        tuples: diag.tuples.len(),
        dropped: diag.dropped,
    })
}

/// Builds the product state, enumerates the diagonal and post-selects.
pub fn postselect(hhg: &HhgOutputSpec, ps: &PostSelectionSpec) -> Result<PostSelectionOutcome> {
    let state = build_hhg_state(hhg)?;
    let diag = enumerate_diagonal(hhg, ps)?;
    apply_postselection(&state, &diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity_with_pure, purity};
    use approx::assert_abs_diff_eq;

    fn records(diag: &DiagonalSet) -> Vec<(usize, Vec<usize>)> {
        diag.tuples.iter().map(|t| (t.n_r, t.m.clone())).collect()
    }

    fn small_spec(alpha: f64, dalpha: f64, orders: &[u32]) -> HhgOutputSpec {
        HhgOutputSpec::new(alpha.into(), dalpha.into(), orders).unwrap()
    }

    #[test]
    fn ir_amplitude_after_splitter() {
        let spec = small_spec(1.2, -0.3, &[13, 15]);
        assert_abs_diff_eq!(
            spec.ir_amplitude().value().re,
            0.9 / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(spec.layout().unwrap().labels(), &["t", "r", "q13", "q15"]);
    }

    #[test]
    fn default_harmonic_amplitude() {
        let spec = HhgOutputSpec::new(25.0.into(), (-15.0).into(), &[13]).unwrap();
        assert_abs_diff_eq!(
            spec.harmonics[0].chi.mean_photon_number(),
            225.0 / 13.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn orders_must_increase() {
        assert!(HhgOutputSpec::new(1.0.into(), 0.1.into(), &[15, 13]).is_err());
    }

    #[test]
    fn partitions_of_four() {
        let hhg = small_spec(2.0, -0.5, &[1])
            .with_ir_cutoffs(12, 12)
            .with_harmonic_cutoffs(6);
        let ps = PostSelectionSpec::for_hhg(&hhg)
            .with_kappas(vec![1.0])
            .with_c(4.0);
        let diag = enumerate_diagonal(&hhg, &ps).unwrap();
        let mut got = records(&diag);
        got.sort();
        assert_eq!(
            got,
            vec![
                (0, vec![4]),
                (1, vec![3]),
                (2, vec![2]),
                (3, vec![1]),
                (4, vec![0])
            ]
        );
    }

    #[test]
    fn steep_slope_keeps_boundary_only() {
        let hhg = small_spec(2.0, -0.5, &[13]).with_ir_cutoffs(12, 12);
        let ps = PostSelectionSpec::for_hhg(&hhg).with_c(4.0);
        assert_eq!(
            records(&enumerate_diagonal(&hhg, &ps).unwrap()),
            vec![(4, vec![0])]
        );
    }

    #[test]
    fn band_is_closed_on_both_sides() {
        let hhg = small_spec(3.0, -1.0, &[3]);
        let ps = PostSelectionSpec::for_hhg(&hhg);
        assert_eq!(ps.c, 4.5);
        let mut got = records(&enumerate_diagonal(&hhg, &ps).unwrap());
        got.sort();
        assert_eq!(
            got,
            vec![(1, vec![1]), (2, vec![1]), (4, vec![0]), (5, vec![0])]
        );
    }

    #[test]
    fn exact_targets_use_harmonic_order() {
        let hhg = small_spec(3.0, -1.0, &[3]);
        let ps = PostSelectionSpec::for_hhg(&hhg).with_kappas(vec![1.0]);
        let diag = enumerate_diagonal(&hhg, &ps).unwrap();
        for t in &diag.tuples {
            let want = 9 - t.n_r as i64 - 3 * t.m[0] as i64;
            assert_eq!(t.profile, vec![(want as usize, 1.0)]);
        }
    }

    #[test]
    fn negative_targets_are_dropped_and_counted() {
        let hhg = small_spec(1.0, -0.2, &[1]).with_harmonic_cutoffs(12);
        let ps = PostSelectionSpec::for_hhg(&hhg).with_c(6.0);
        let diag = enumerate_diagonal(&hhg, &ps).unwrap();
        assert!(diag.is_empty());
        assert_eq!(diag.dropped, 7);
        let state = build_hhg_state(&hhg).unwrap();
        assert!(matches!(
            apply_postselection(&state, &diag),
            Err(Error::EmptySelection { dropped: 7 })
        ));
    }

    #[test]
    fn exact_selection_is_fock_diagonal() {
        let hhg = small_spec(1.2, -0.3, &[13, 15]);
        let out = postselect(&hhg, &PostSelectionSpec::for_hhg(&hhg)).unwrap();
        assert!(out.rho.max_off_diagonal() < 1e-12);
        assert_abs_diff_eq!(out.rho.trace(), 1.0, epsilon = 1e-12);
        assert!(out.success_probability > 0.0 && out.success_probability < 1.0);
    }

    #[test]
    fn flat_weights_give_back_the_coherent_state() {
        let hhg = small_spec(3.0, -1.0, &[3]);
        let ps = PostSelectionSpec::for_hhg(&hhg).fuzzy(1e6);
        let out = postselect(&hhg, &ps).unwrap();
        let coh = coherent_state(hhg.ir_amplitude(), hhg.cutoff_t).unwrap();
        assert!(fidelity_with_pure(&out.rho, &coh).unwrap() > 1.0 - 1e-10);

        let all = ps.with_band(f64::INFINITY);
        let out = postselect(&hhg, &all).unwrap();
        assert_abs_diff_eq!(out.success_probability, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn wider_sigma_never_loses_records() {
        let hhg = small_spec(2.0, -0.7, &[3, 5]);
        let base = PostSelectionSpec::for_hhg(&hhg);
        let mut last = 0;
        for sigma in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let n = enumerate_diagonal(&hhg, &base.clone().fuzzy(sigma))
                .unwrap()
                .tuples
                .len();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn slope_matching_order_purifies() {
        let hhg = small_spec(3.0, -1.0, &[3, 5]);
        let at_q = postselect(&hhg, &PostSelectionSpec::for_hhg(&hhg).fuzzy_default()).unwrap();
        let at_one = postselect(
            &hhg,
            &PostSelectionSpec::for_hhg(&hhg)
                .with_kappas(vec![1.0, 1.0])
                .fuzzy_default(),
        )
        .unwrap();
        assert!(purity(&at_q.rho) >= purity(&at_one.rho));
    }

    #[test]
    fn efficiency_scales_slopes() {
        let hhg = small_spec(2.0, -0.5, &[5, 15]);
        let ps = PostSelectionSpec::for_hhg(&hhg);
        assert_eq!(apply_detector_efficiency(&ps, 1.0).unwrap(), ps);
        let scaled = apply_detector_efficiency(&ps, 0.2).unwrap();
        assert_abs_diff_eq!(scaled.kappas[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(scaled.kappas[1], 3.0, epsilon = 1e-15);
        assert_eq!(scaled.c, ps.c);
        assert!(apply_detector_efficiency(&ps, 0.0).is_err());
        assert!(apply_detector_efficiency(&ps, 1.2).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let hhg = small_spec(2.0, -0.5, &[3]);
        let ps = PostSelectionSpec::for_hhg(&hhg);
        assert!(enumerate_diagonal(&hhg, &ps.clone().fuzzy(0.0)).is_err());
        assert!(enumerate_diagonal(&hhg, &ps.clone().with_kappas(vec![1.0, 2.0])).is_err());
        assert!(enumerate_diagonal(&hhg, &ps.clone().with_c(-1.0)).is_err());
    }
}
