//! Flat run configuration shared by every experiment.

use catlight::analysis::{DiagonalFilter, ScanAxis};
use catlight::fock::CoherentAmplitude;
use catlight::postselect::{apply_detector_efficiency, HhgOutputSpec, PostSelectionSpec};
use catlight::tomography::{CutoffConvention, RadonConfig, RadonVariant};
use catlight::wigner::Axis;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    State,
    Wigner,
    DiagonalSweep,
    FidelityScan,
    Homodyne,
    Radon,
    KcSweep,
    ShotsSweep,
    Fluctuations,
    Correlate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Fuzzy,
}

/// Which density operator the tomography experiments measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The post-selected transmitted mode.
    Postselected,
    /// The coherent state `|alpha + i alpha_im>`.
    Coherent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Kappa,
    Sigma,
}

fn default_seed() -> u64 {
    1
}
fn default_out() -> String {
    "out".into()
}
fn default_format() -> OutputFormat {
    OutputFormat::Csv
}
fn default_mode() -> Mode {
    Mode::Exact
}
fn default_band() -> f64 {
    catlight::postselect::DEFAULT_BAND
}
fn default_one() -> f64 {
    1.0
}
fn default_floor() -> f64 {
    catlight::postselect::DEFAULT_WEIGHT_FLOOR
}
fn default_grid_min() -> f64 {
    -6.0
}
fn default_grid_max() -> f64 {
    6.0
}
fn default_grid_points() -> usize {
    201
}
fn default_target() -> Target {
    Target::Postselected
}
fn default_n_phi() -> usize {
    20
}
fn default_n_shots() -> usize {
    100
}
fn default_kc() -> f64 {
    2.0
}
fn default_variant() -> RadonVariant {
    RadonVariant::PerSample
}
fn default_convention() -> CutoffConvention {
    CutoffConvention::Homodyne
}
fn default_scan_min() -> f64 {
    1e-3
}
fn default_scan_max() -> f64 {
    3.0
}
fn default_scan_points() -> usize {
    100
}
fn default_nodes() -> usize {
    21
}

/// Every key is optional except `experiment`; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default = "default_format")]
    pub format: OutputFormat,

    // Driving field and harmonics.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub alpha_im: f64,
    #[serde(default)]
    pub delta_alpha: f64,
    #[serde(default)]
    pub delta_alpha_im: f64,
    #[serde(default)]
    pub harmonics: Vec<u32>,
    /// Real harmonic amplitudes; defaults to `|delta_alpha| / sqrt(q)`.
    pub chi: Option<Vec<f64>>,
    pub cutoff_t: Option<usize>,
    pub cutoff_r: Option<usize>,
    pub cutoff_q: Option<usize>,

    // Post-selection rule.
    pub kappa: Option<Vec<f64>>,
    pub c: Option<f64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Fuzzy width; defaults to `sqrt(n0 / 2)`.
    pub sigma: Option<f64>,
    #[serde(default = "default_band")]
    pub band: f64,
    #[serde(default = "default_one")]
    pub efficiency: f64,
    #[serde(default = "default_floor")]
    pub weight_floor: f64,

    // Phase-space grid.
    #[serde(default = "default_grid_min")]
    pub grid_min: f64,
    #[serde(default = "default_grid_max")]
    pub grid_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,

    // diagonal-sweep
    pub sweep: Option<SweepParameter>,
    #[serde(default)]
    pub sweep_values: Vec<f64>,

    // Tomography.
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default = "default_n_phi")]
    pub n_phi: usize,
    #[serde(default = "default_n_shots")]
    pub n_shots: usize,
    #[serde(default = "default_kc")]
    pub kc: f64,
    #[serde(default)]
    pub kc_values: Vec<f64>,
    #[serde(default)]
    pub shots_values: Vec<usize>,
    #[serde(default)]
    pub phi_values: Vec<usize>,
    #[serde(default = "default_variant")]
    pub variant: RadonVariant,
    #[serde(default = "default_convention")]
    pub kc_convention: CutoffConvention,

    // fidelity-scan
    #[serde(default = "default_scan_min")]
    pub scan_min: f64,
    #[serde(default = "default_scan_max")]
    pub scan_max: f64,
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,

    // fluctuations
    #[serde(default)]
    pub sigma_tilde_values: Vec<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,

    // correlate
    /// One slope list per filter.
    #[serde(default)]
    pub filter_kappas: Vec<Vec<f64>>,
    /// Per-filter diagonal constants; default centres each filter on the mean counts.
    pub filter_c: Option<Vec<f64>>,
    #[serde(default = "default_band")]
    pub filter_band: f64,
    #[serde(default)]
    pub normalize_xuv: bool,
}

/// Configuration problem, reported with the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: &'static str,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key '{}': {}", self.key, self.message)
    }
}

fn fail<T>(key: &'static str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        key,
        message: message.into(),
    })
}

fn finite(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        fail(key, format!("must be finite, got {v}"))
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        fail(key, format!("must be finite and positive, got {v}"))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    fn needs_state(&self) -> bool {
        !matches!(self.experiment, Experiment::Correlate)
            && !(self.target == Target::Coherent
                && matches!(
                    self.experiment,
                    Experiment::Homodyne
                        | Experiment::Radon
                        | Experiment::KcSweep
                        | Experiment::ShotsSweep
                ))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("alpha", self.alpha),
            ("alpha_im", self.alpha_im),
            ("delta_alpha", self.delta_alpha),
            ("delta_alpha_im", self.delta_alpha_im),
            ("grid_min", self.grid_min),
            ("grid_max", self.grid_max),
        ] {
            finite(key, v)?;
        }
        if self.harmonics.windows(2).any(|w| w[1] <= w[0]) || self.harmonics.contains(&0) {
            return fail(
                "harmonics",
                "orders must be positive and strictly increasing",
            );
        }
        if self.needs_state()
            && self.harmonics.is_empty()
            && self.experiment != Experiment::Correlate
        {
            return fail("harmonics", "at least one harmonic order is required");
        }
        if let Some(chi) = &self.chi {
            if chi.len() != self.harmonics.len() {
                return fail(
                    "chi",
                    format!(
                        "{} values for {} harmonics",
                        chi.len(),
                        self.harmonics.len()
                    ),
                );
            }
            for &v in chi {
                finite("chi", v)?;
            }
        }
        for (key, v) in [
            ("cutoff_t", self.cutoff_t),
            ("cutoff_r", self.cutoff_r),
            ("cutoff_q", self.cutoff_q),
        ] {
            if v == Some(0) {
                return fail(key, "cutoff must be at least 1");
            }
        }
        if let Some(k) = &self.kappa {
            if k.len() != self.harmonics.len() {
                return fail(
                    "kappa",
                    format!("{} values for {} harmonics", k.len(), self.harmonics.len()),
                );
            }
            if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return fail("kappa", "slopes must be finite and non-negative");
            }
        }
        if let Some(c) = self.c {
            if !(c.is_finite() && c >= 0.0) {
                return fail("c", format!("must be finite and non-negative, got {c}"));
            }
        }
        if let Some(s) = self.sigma {
            positive("sigma", s)?;
        }
        if !(self.band >= 0.0) {
            return fail("band", format!("must be non-negative, got {}", self.band));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return fail(
                "efficiency",
                format!("must lie in (0, 1], got {}", self.efficiency),
            );
        }
        if !(0.0..1.0).contains(&self.weight_floor) {
            return fail(
                "weight_floor",
                format!("must lie in [0, 1), got {}", self.weight_floor),
            );
        }
        if !(self.grid_max > self.grid_min) {
            return fail("grid_max", "must exceed grid_min");
        }
        if self.grid_points < 2 {
            return fail("grid_points", "must be at least 2");
        }
        if self.n_phi == 0 {
            return fail("n_phi", "must be at least 1");
        }
        if self.n_shots == 0 {
            return fail("n_shots", "must be at least 1");
        }
        positive("kc", self.kc)?;
        if self.scan_points < 2 {
            return fail("scan_points", "must be at least 2");
        }
        if !(self.scan_max > self.scan_min
            && self.scan_min.is_finite()
            && self.scan_max.is_finite())
        {
            return fail("scan_max", "must exceed scan_min");
        }
        if self.nodes == 0 {
            return fail("nodes", "must be at least 1");
        }
        match self.experiment {
            Experiment::DiagonalSweep => {
                let Some(param) = self.sweep else {
                    return fail(
                        "sweep",
                        "diagonal-sweep needs sweep = \"kappa\" or \"sigma\"",
                    );
                };
                if self.sweep_values.is_empty() {
                    return fail("sweep_values", "at least one value is required");
                }
                for &v in &self.sweep_values {
                    match param {
                        SweepParameter::Kappa if !(v.is_finite() && v >= 0.0) => {
                            return fail("sweep_values", format!("slope {v} must be non-negative"))
                        }
                        SweepParameter::Sigma => positive("sweep_values", v)?,
                        _ => {}
                    }
                }
            }
            Experiment::KcSweep => {
                if self.kc_values.is_empty() {
                    return fail("kc_values", "at least one value is required");
                }
                for &v in &self.kc_values {
                    positive("kc_values", v)?;
                }
            }
            Experiment::ShotsSweep => {
                if self.shots_values.is_empty() && self.phi_values.is_empty() {
                    return fail("shots_values", "shots_values or phi_values must be given");
                }
                if self.shots_values.contains(&0) {
                    return fail("shots_values", "values must be at least 1");
                }
                if self.phi_values.contains(&0) {
                    return fail("phi_values", "values must be at least 1");
                }
            }
            Experiment::Fluctuations => {
                if self.sigma_tilde_values.is_empty() {
                    return fail("sigma_tilde_values", "at least one value is required");
                }
                for &v in &self.sigma_tilde_values {
                    positive("sigma_tilde_values", v)?;
                }
            }
            Experiment::Correlate => {
                for k in &self.filter_kappas {
                    if k.len() != self.harmonics.len() {
                        return fail(
                            "filter_kappas",
                            format!("each filter needs {} slopes", self.harmonics.len()),
                        );
                    }
                    if k.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return fail("filter_kappas", "slopes must be finite and non-negative");
                    }
                }
                if let Some(c) = &self.filter_c {
                    if c.len() != self.filter_kappas.len() {
                        return fail("filter_c", "needs one value per filter");
                    }
                }
                if !(self.filter_band >= 0.0) {
                    return fail("filter_band", "must be non-negative");
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn alpha(&self) -> CoherentAmplitude {
        CoherentAmplitude::new(self.alpha, self.alpha_im)
    }

    pub fn hhg(&self) -> catlight::Result<HhgOutputSpec> {
        let dalpha = CoherentAmplitude::new(self.delta_alpha, self.delta_alpha_im);
        let mut spec = match &self.chi {
            Some(chi) => {
                let chis: Vec<CoherentAmplitude> =
                    chi.iter().map(|&v| CoherentAmplitude::real(v)).collect();
                HhgOutputSpec::with_chis(self.alpha(), dalpha, &self.harmonics, &chis)?
            }
            None => HhgOutputSpec::new(self.alpha(), dalpha, &self.harmonics)?,
        };
        if let Some(t) = self.cutoff_t {
            spec.cutoff_t = t;
        }
        if let Some(r) = self.cutoff_r {
            spec.cutoff_r = r;
        }
        if let Some(q) = self.cutoff_q {
            spec = spec.with_harmonic_cutoffs(q);
        }
        Ok(spec)
    }

    pub fn postselection(&self, hhg: &HhgOutputSpec) -> catlight::Result<PostSelectionSpec> {
        let mut ps = PostSelectionSpec::for_hhg(hhg)
            .with_band(self.band)
            .with_weight_floor(self.weight_floor);
        if let Some(k) = &self.kappa {
            ps = ps.with_kappas(k.clone());
        }
        if let Some(c) = self.c {
            ps = ps.with_c(c);
        }
        if self.mode == Mode::Fuzzy {
            ps = match self.sigma {
                Some(s) => ps.fuzzy(s),
                None => ps.fuzzy_default(),
            };
        }
        if self.efficiency < 1.0 {
            ps = apply_detector_efficiency(&ps, self.efficiency)?;
        }
        ps.validate()?;
        Ok(ps)
    }

    pub fn axis(&self) -> Axis {
        Axis {
            min: self.grid_min,
            max: self.grid_max,
            n: self.grid_points,
        }
    }

    pub fn radon(&self, kc: f64) -> RadonConfig {
        RadonConfig {
            kc,
            x: self.axis(),
            p: self.axis(),
            variant: self.variant,
            convention: self.kc_convention,
        }
    }

    pub fn scan_axis(&self) -> ScanAxis {
        ScanAxis {
            min: self.scan_min,
            max: self.scan_max,
            n: self.scan_points,
        }
    }

    /// Correlation filters with slopes scaled by the detector efficiency.
    pub fn filters(&self, hhg: &HhgOutputSpec) -> Vec<DiagonalFilter> {
        self.filter_kappas
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let kappas: Vec<f64> = k.iter().map(|v| v * self.efficiency).collect();
                match &self.filter_c {
                    Some(c) => DiagonalFilter {
                        kappas,
                        c: c[i],
                        band: self.filter_band,
                    },
                    None => DiagonalFilter::centered(hhg, kappas, self.filter_band),
                }
            })
            .collect()
    }
}
