//! Experiment drivers. Each one builds every artifact in memory; nothing is
//! written until the whole run has succeeded.

use crate::config::{Experiment, Mode, OutputFormat, RunConfig, SweepParameter, Target};
use catlight::analysis::{
    cat_state, correlation_map, fidelity_scan, intensity_fluctuation_state, CatStateSpec,
};
use catlight::fock::{coherent_state, purity, suggested_cutoff, DensityOperator};
use catlight::postselect::{
    postselect, HhgOutputSpec, PostSelectionOutcome, PostSelectionSpec, SelectionWidth,
};
use catlight::tomography::{
    frobenius_similarity, inverse_radon, sample_homodyne, uniform_phases, HomodyneTrace,
};
use catlight::wigner::{wigner_metrics, wigner_of_density, WignerGrid};
use catlight::Result;
use serde_json::{json, Value};

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
    /// Parameters derived from defaults, echoed in the manifest.
    pub derived: Value,
}

struct Builder<'a> {
    cfg: &'a RunConfig,
    artifacts: Vec<Artifact>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, bytes: Vec<u8>) {
        self.artifacts.push(Artifact { name, bytes });
    }

    fn json(&mut self, stem: &str, value: &impl serde::Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.push(format!("{stem}.json"), bytes);
        Ok(())
    }

    fn grid(&mut self, stem: &str, grid: &WignerGrid) -> Result<()> {
        match self.cfg.format {
            OutputFormat::Csv => {
                let mut bytes = Vec::new();
                grid.write_csv(&mut bytes)?;
                self.push(format!("{stem}.csv"), bytes);
                Ok(())
            }
            OutputFormat::Json => self.json(stem, &grid.to_json()),
        }
    }

    fn trace(&mut self, stem: &str, trace: &HomodyneTrace) -> Result<()> {
        match self.cfg.format {
            OutputFormat::Csv => {
                let mut bytes = Vec::new();
                trace.write_csv(&mut bytes)?;
                self.push(format!("{stem}.csv"), bytes);
                Ok(())
            }
            OutputFormat::Json => self.json(
                stem,
                &json!({ "header": trace.header(), "records": trace.records }),
            ),
        }
    }

    fn table(&mut self, stem: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        match self.cfg.format {
            OutputFormat::Csv => {
                let mut text = header.join(",");
                text.push('\n');
                for row in rows {
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                self.push(format!("{stem}.csv"), text.into_bytes());
                Ok(())
            }
            OutputFormat::Json => {
                let rows: Vec<Value> = rows
                    .iter()
                    .map(|r| {
                        let obj: serde_json::Map<String, Value> = header
                            .iter()
                            .zip(r)
                            .map(|(k, v)| {
                                let parsed = v
                                    .parse::<f64>()
                                    .map(Value::from)
                                    .unwrap_or_else(|_| Value::from(v.as_str()));
                                (k.clone(), parsed)
                            })
                            .collect();
                        Value::Object(obj)
                    })
                    .collect();
                self.json(stem, &rows)
            }
        }
    }
}

fn state_summary(outcome: &PostSelectionOutcome) -> Value {
    json!({
        "success_probability": outcome.success_probability,
        "tuples": outcome.tuples,
        "dropped": outcome.dropped,
        "purity": purity(&outcome.rho),
        "mean_photon_number": outcome.rho.mean_photon_number(),
        "max_off_diagonal": outcome.rho.max_off_diagonal(),
    })
}

fn selection_json(hhg: &HhgOutputSpec, ps: &PostSelectionSpec) -> Value {
    let sigma = match ps.width {
        SelectionWidth::Exact => None,
        SelectionWidth::Fuzzy { sigma } => Some(sigma),
    };
    json!({
        "n0": hhg.n0(),
        "chi": hhg.harmonics.iter().map(|h| h.chi.0.re).collect::<Vec<_>>(),
        "cutoff_t": hhg.cutoff_t,
        "cutoff_r": hhg.cutoff_r,
        "cutoff_q": hhg.harmonics.iter().map(|h| h.cutoff).collect::<Vec<_>>(),
        "kappa": ps.kappas,
        "c": ps.c,
        "sigma": sigma,
        "band": ps.band,
        "efficiency": ps.efficiency,
        "weight_floor": ps.weight_floor,
    })
}

fn descriptor(cfg: &RunConfig) -> String {
    match cfg.target {
        Target::Coherent => format!("coherent alpha={}+{}i", cfg.alpha, cfg.alpha_im),
        Target::Postselected => format!(
            "postselected alpha={} delta_alpha={} harmonics={:?} mode={}",
            cfg.alpha,
            cfg.delta_alpha,
            cfg.harmonics,
            match cfg.mode {
                Mode::Exact => "exact",
                Mode::Fuzzy => "fuzzy",
            }
        ),
    }
}

/// Density operator probed by the tomography experiments.
fn tomography_target(cfg: &RunConfig) -> Result<(DensityOperator, Value, Value)> {
    match cfg.target {
        Target::Coherent => {
            let amp = cfg.alpha();
            let cutoff = cfg.cutoff_t.unwrap_or_else(|| suggested_cutoff(amp));
            let rho = coherent_state(amp, cutoff)?.density();
            Ok((rho, json!({ "cutoff_t": cutoff }), json!({})))
        }
        Target::Postselected => {
            let hhg = cfg.hhg()?;
            let ps = cfg.postselection(&hhg)?;
            let outcome = postselect(&hhg, &ps)?;
            let summary = state_summary(&outcome);
            Ok((outcome.rho, selection_json(&hhg, &ps), summary))
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let mut b = Builder {
        cfg,
        artifacts: Vec::new(),
    };
    let (summary, derived) = match cfg.experiment {
        Experiment::State => state(&mut b)?,
        Experiment::Wigner => wigner(&mut b)?,
        Experiment::DiagonalSweep => diagonal_sweep(&mut b)?,
        Experiment::FidelityScan => scan(&mut b)?,
        Experiment::Homodyne => homodyne(&mut b)?,
        Experiment::Radon => radon(&mut b)?,
        Experiment::KcSweep => kc_sweep(&mut b)?,
        Experiment::ShotsSweep => shots_sweep(&mut b)?,
        Experiment::Fluctuations => fluctuations(&mut b)?,
        Experiment::Correlate => correlate(&mut b)?,
    };
    b.json("summary", &summary)?;
    Ok(RunOutput {
        artifacts: b.artifacts,
        summary,
        derived,
    })
}

type Step = Result<(Value, Value)>;

fn state(b: &mut Builder) -> Step {
    let hhg = b.cfg.hhg()?;
    let ps = b.cfg.postselection(&hhg)?;
    let outcome = postselect(&hhg, &ps)?;
    let rows: Vec<Vec<String>> = outcome
        .rho
        .populations()
        .iter()
        .enumerate()
        .map(|(n, p)| vec![n.to_string(), format!("{p:e}")])
        .collect();
    b.table("populations", &["n".into(), "p".into()], &rows)?;
    b.json("rho", &outcome.rho.to_json())?;
    Ok((state_summary(&outcome), selection_json(&hhg, &ps)))
}

fn wigner(b: &mut Builder) -> Step {
    let hhg = b.cfg.hhg()?;
    let ps = b.cfg.postselection(&hhg)?;
    let outcome = postselect(&hhg, &ps)?;
    let grid = wigner_of_density(&outcome.rho, b.cfg.axis(), b.cfg.axis())?;
    b.grid("wigner", &grid)?;
    let mut summary = state_summary(&outcome);
    summary["metrics"] = json!(wigner_metrics(&grid));
    summary["rotation_residual"] = json!(grid.rotation_residual()?);
    summary["integral"] = json!(grid.integral());
    Ok((summary, selection_json(&hhg, &ps)))
}

fn diagonal_sweep(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let hhg = cfg.hhg()?;
    let base = cfg.postselection(&hhg)?;
    let param = cfg.sweep.expect("validated");
    let mut points = Vec::new();
    for (i, &v) in cfg.sweep_values.iter().enumerate() {
        let ps = match param {
            SweepParameter::Kappa => {
                let k = vec![v * cfg.efficiency; hhg.harmonics.len()];
                base.clone().with_kappas(k)
            }
            SweepParameter::Sigma => base.clone().fuzzy(v),
        };
        let outcome = postselect(&hhg, &ps)?;
        let grid = wigner_of_density(&outcome.rho, cfg.axis(), cfg.axis())?;
        b.grid(&format!("wigner_{i}"), &grid)?;
        let mut s = state_summary(&outcome);
        s["value"] = json!(v);
        s["metrics"] = json!(wigner_metrics(&grid));
        s["rotation_residual"] = json!(grid.rotation_residual()?);
        points.push(s);
    }
    let summary = json!({
        "parameter": match param { SweepParameter::Kappa => "kappa", SweepParameter::Sigma => "sigma" },
        "points": points,
    });
    Ok((summary, selection_json(&hhg, &base)))
}

fn scan(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let hhg = cfg.hhg()?;
    let ps = cfg.postselection(&hhg)?;
    let outcome = postselect(&hhg, &ps)?;
    let result = fidelity_scan(&outcome.rho, cfg.scan_axis(), cfg.scan_axis())?;
    b.json("scan", &result)?;
    let state_grid = wigner_of_density(&outcome.rho, cfg.axis(), cfg.axis())?;
    let cat = CatStateSpec::new(result.best_beta, result.best_delta_beta);
    let model = cat_state(&cat, outcome.rho.dim() - 1)?.normalized()?;
    let model_grid = wigner_of_density(&model.density(), cfg.axis(), cfg.axis())?;
    b.grid("wigner_state", &state_grid)?;
    b.grid("wigner_model", &model_grid)?;
    let mut summary = state_summary(&outcome);
    summary["best_beta"] = json!(result.best_beta);
    summary["best_delta_beta"] = json!(result.best_delta_beta);
    summary["best_fidelity"] = json!(result.best_fidelity);
    summary["state_metrics"] = json!(wigner_metrics(&state_grid));
    summary["model_metrics"] = json!(wigner_metrics(&model_grid));
    summary["similarity"] = json!(frobenius_similarity(&state_grid, &model_grid)?);
    Ok((summary, selection_json(&hhg, &ps)))
}

fn sample(
    cfg: &RunConfig,
    rho: &DensityOperator,
    n_phi: usize,
    n_shots: usize,
) -> Result<HomodyneTrace> {
    sample_homodyne(
        rho,
        &uniform_phases(n_phi),
        n_shots,
        cfg.seed,
        &descriptor(cfg),
    )
}

fn homodyne(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let (rho, derived, mut summary) = tomography_target(cfg)?;
    let trace = sample(cfg, &rho, cfg.n_phi, cfg.n_shots)?;
    b.trace("trace", &trace)?;
    let rows: Vec<Vec<String>> = trace
        .records
        .iter()
        .map(|r| {
            vec![
                r.angle_index.to_string(),
                format!("{:e}", r.phi),
                format!("{:e}", r.mean()),
            ]
        })
        .collect();
    b.table(
        "angle_means",
        &["angle_index".into(), "phi".into(), "mean".into()],
        &rows,
    )?;
    summary["n_phi"] = json!(trace.n_phi());
    summary["n_shots"] = json!(trace.n_shots());
    Ok((summary, derived))
}

fn reconstruct(
    b: &mut Builder,
    stem: &str,
    trace: &HomodyneTrace,
    kc: f64,
    exact: &WignerGrid,
) -> Result<Value> {
    let grid = inverse_radon(trace, &b.cfg.radon(kc))?;
    b.grid(stem, &grid)?;
    Ok(json!({
        "kc": kc,
        "n_phi": trace.n_phi(),
        "n_shots": trace.n_shots(),
        "metrics": wigner_metrics(&grid),
        "similarity_to_exact": frobenius_similarity(&grid, exact)?,
    }))
}

fn exact_grid(b: &mut Builder, rho: &DensityOperator) -> Result<WignerGrid> {
    let grid = wigner_of_density(rho, b.cfg.axis(), b.cfg.axis())?;
    b.grid("wigner_exact", &grid)?;
    Ok(grid)
}

fn radon(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let (rho, derived, mut summary) = tomography_target(cfg)?;
    let exact = exact_grid(b, &rho)?;
    let trace = sample(cfg, &rho, cfg.n_phi, cfg.n_shots)?;
    b.trace("trace", &trace)?;
    summary["reconstruction"] = reconstruct(b, "reconstruction", &trace, cfg.kc, &exact)?;
    summary["exact_metrics"] = json!(wigner_metrics(&exact));
    Ok((summary, derived))
}

fn kc_sweep(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let (rho, derived, mut summary) = tomography_target(cfg)?;
    let exact = exact_grid(b, &rho)?;
    let trace = sample(cfg, &rho, cfg.n_phi, cfg.n_shots)?;
    b.trace("trace", &trace)?;
    let mut points = Vec::new();
    for (i, &kc) in cfg.kc_values.iter().enumerate() {
        points.push(reconstruct(
            b,
            &format!("reconstruction_{i}"),
            &trace,
            kc,
            &exact,
        )?);
    }
    summary["exact_metrics"] = json!(wigner_metrics(&exact));
    summary["points"] = json!(points);
    Ok((summary, derived))
}

fn shots_sweep(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let (rho, derived, mut summary) = tomography_target(cfg)?;
    let exact = exact_grid(b, &rho)?;
    let mut shots = Vec::new();
    for &n in &cfg.shots_values {
        let trace = sample(cfg, &rho, cfg.n_phi, n)?;
        shots.push(reconstruct(
            b,
            &format!("reconstruction_shots_{n}"),
            &trace,
            cfg.kc,
            &exact,
        )?);
    }
    let mut phis = Vec::new();
    for &n in &cfg.phi_values {
        let trace = sample(cfg, &rho, n, cfg.n_shots)?;
        phis.push(reconstruct(
            b,
            &format!("reconstruction_phi_{n}"),
            &trace,
            cfg.kc,
            &exact,
        )?);
    }
    summary["exact_metrics"] = json!(wigner_metrics(&exact));
    summary["shots_points"] = json!(shots);
    summary["phi_points"] = json!(phis);
    Ok((summary, derived))
}

fn fluctuations(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let hhg = cfg.hhg()?;
    let ps = cfg.postselection(&hhg)?;
    let mut points = Vec::new();
    for (i, &s) in cfg.sigma_tilde_values.iter().enumerate() {
        let outcome = intensity_fluctuation_state(&hhg, &ps, s, cfg.nodes)?;
        let grid = wigner_of_density(&outcome.rho, cfg.axis(), cfg.axis())?;
        b.grid(&format!("wigner_{i}"), &grid)?;
        points.push(json!({
            "sigma_tilde": s,
            "success_probability": outcome.success_probability,
            "purity": purity(&outcome.rho),
            "metrics": wigner_metrics(&grid),
            "nodes": outcome.nodes,
        }));
    }
    Ok((json!({ "points": points }), selection_json(&hhg, &ps)))
}

fn correlate(b: &mut Builder) -> Step {
    let cfg = b.cfg;
    let hhg = cfg.hhg()?;
    let filters = cfg.filters(&hhg);
    let map = correlation_map(&hhg, cfg.n_shots, cfg.seed, &filters, cfg.normalize_xuv)?;
    match cfg.format {
        OutputFormat::Csv => {
            let mut bytes = Vec::new();
            map.write_csv(&mut bytes)?;
            b.push("shots.csv".into(), bytes);
        }
        OutputFormat::Json => b.json(
            "shots",
            &json!({ "orders": map.orders, "records": map.records }),
        )?,
    }
    let fits: Vec<Value> = (0..filters.len())
        .map(|k| match map.accepted_fit(k) {
            Some((slope, intercept)) => json!({ "slope": slope, "intercept": intercept }),
            None => Value::Null,
        })
        .collect();
    let accepted: Vec<usize> = (0..filters.len())
        .map(|k| map.records.iter().filter(|r| r.accepted[k]).count())
        .collect();
    let summary = json!({
        "n_shots": map.records.len(),
        "mean_ir": map.mean_ir(),
        "mean_m": (0..map.orders.len()).map(|q| map.mean_m(q)).collect::<Vec<_>>(),
        "expected_mean_ir": hhg.ir_amplitude().mean_photon_number(),
        "expected_mean_m": hhg.harmonics.iter().map(|h| h.chi.mean_photon_number()).collect::<Vec<_>>(),
        "xuv_scale": map.xuv_scale,
        "accepted": accepted,
        "accepted_fits": fits,
    });
    let derived = json!({
        "chi": hhg.harmonics.iter().map(|h| h.chi.0.re).collect::<Vec<_>>(),
        "filters": filters,
    });
    Ok((summary, derived))
}
