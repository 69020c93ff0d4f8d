//! Sweep execution and result bundles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use natsim_core::dynamics::{port_spectrum, steady_transport, CorrelationGrid};
use natsim_core::fit::{lorentzian_doublet_fit, FitResult};
use natsim_core::rates::rate_transport;
use natsim_core::stochastic::{
    default_relaxation, modulated_transport, single_qubit_dephasing_demo, stochastic_spectra_with,
    stochastic_transport, DecayCurve, ModulationOptions, StochasticSystem,
};
use natsim_core::{HilbertSpace, NoiseKind, NoiseSpec, Port, RateParams, SpectrumResult, StochasticOptions, SystemParams, TransportSummary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{fmt, write_spectrum_csv};
use crate::scenario::{Engine, Experiment, Output, PointConfig, Scenario};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub port: &'static str,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub index: usize,
    pub value: f64,
    pub summary: TransportSummary,
    /// Standard error of the ensemble mean (zero for deterministic engines).
    pub p2_err: f64,
    pub p4_err: f64,
    pub gamma_phi_b: f64,
    pub coupling: f64,
    pub seed: u64,
    pub relax_us: Option<f64>,
    pub spectra: Option<(SpectrumResult, SpectrumResult)>,
    pub fits: Vec<FitRow>,
    pub decay: Option<DecayCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub points: Vec<PointResult>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub natsim_version: String,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub wall_time_s: f64,
    /// Values the run chose itself rather than reading from the scenario.
    pub engineering_defaults: BTreeMap<String, serde_json::Value>,
    pub files: Vec<String>,
}

fn doublet_window(p: &SystemParams) -> (f64, f64) {
    let m = p.single_excitation_modes();
    let c = 0.5 * (m[1].0 + m[2].0);
    (c - 0.1, c + 0.1)
}

fn fit_s4(p: &SystemParams, s4: &SpectrumResult) -> Vec<FitRow> {
    let (lo, hi) = doublet_window(p);
    match lorentzian_doublet_fit(&s4.crop(lo, hi), 2) {
        Ok(fit) => vec![FitRow { port: "S4", fit }],
        Err(_) => Vec::new(),
    }
}

fn stochastic_options(s: &Scenario, seed: u64) -> StochasticOptions {
    StochasticOptions {
        dt: s.stochastic.dt_us,
        relax: s.stochastic.relax_us,
        tau_span: s.stochastic.tau_span_us,
        resonator_dim: s.resonator_dim,
        n_traj: s.stochastic.n_traj,
        seed,
        ..StochasticOptions::default()
    }
}

/// One sweep point; every point shares the scenario seed so neighbouring
/// points see the same noise realizations.
pub fn run_point(s: &Scenario, index: usize, value: f64) -> CliResult<PointResult> {
    let pc: PointConfig = s.point(value)?;
    let mut out = PointResult {
        index,
        value,
        summary: TransportSummary::from_powers(0.0, 0.0),
        p2_err: 0.0,
        p4_err: 0.0,
        gamma_phi_b: pc.gamma_phi_b(),
        coupling: pc.coupling(),
        seed: s.seed,
        relax_us: None,
        spectra: None,
        fits: Vec::new(),
        decay: None,
    };
    if s.experiment == Experiment::SingleQubitDephasing {
        let d = s.dephasing.expect("validated");
        let curve = single_qubit_dephasing_demo(d.gamma, value, d.n_traj, s.seed)?;
        out.gamma_phi_b = curve.gamma;
        out.decay = Some(curve);
        return Ok(out);
    }
    let spectra = s.wants(Output::Spectra);
    match s.engine {
        Engine::Lindblad => {
            let p = pc.lindblad_params();
            let space = HilbertSpace::network(s.resonator_dim)?;
            out.summary = steady_transport(&p, &space)?.1;
            if spectra {
                let g = CorrelationGrid::default();
                let s2 = port_spectrum(&p, &space, Port::Waveguide2, true, &g)?;
                let s4 = port_spectrum(&p, &space, Port::Resonator4, true, &g)?;
                out.spectra = Some((s2, s4));
            }
        }
        Engine::RateEq => {
            out.summary = rate_transport(&RateParams::from_system(&pc.lindblad_params()))?;
        }
        Engine::Stochastic => {
            let kind = pc.noise.expect("validated");
            let spec = NoiseSpec::new(kind).with_seed(s.seed);
            let opts = stochastic_options(s, s.seed);
            out.relax_us = Some(opts.relax.unwrap_or_else(|| default_relaxation(&pc.params, &spec)));
            match kind {
                NoiseKind::CoherentTone { amplitude, frequency } if !spectra => {
                    let sys = StochasticSystem::new(&pc.params, s.resonator_dim)?;
                    let mo = ModulationOptions {
                        dt: s.stochastic.dt_us,
                        resonator_dim: s.resonator_dim,
                        block: s.stochastic.block_us,
                        ..ModulationOptions::default()
                    };
                    natsim_core::noise::check_wiener_step(frequency, 0.0, mo.dt / 2.0)?;
                    out.summary = modulated_transport(&sys, amplitude, frequency, &mo)?;
                    out.relax_us = None;
                }
                _ if spectra => {
                    let r = stochastic_spectra_with(&pc.params, &spec, &opts, None)?;
                    out.summary = r.summary;
                    out.p2_err = r.ensemble.power_std_err(Port::Waveguide2)?;
                    out.p4_err = r.ensemble.power_std_err(Port::Resonator4)?;
                    out.spectra = Some((r.s2, r.s4));
                }
                _ => {
                    let (sum, ens) = stochastic_transport(&pc.params, &spec, &opts)?;
                    out.summary = sum;
                    out.p2_err = ens.power_std_err(Port::Waveguide2)?;
                    out.p4_err = ens.power_std_err(Port::Resonator4)?;
                }
            }
        }
    }
    if s.wants(Output::Fits) {
        if let Some((_, s4)) = &out.spectra {
            out.fits = fit_s4(&pc.lindblad_params(), s4);
        }
    }
    Ok(out)
}

/// All sweep points on the rayon pool, returned in sweep order.
pub fn execute(s: &Scenario) -> CliResult<RunOutput> {
    s.validate()?;
    let start = Instant::now();
    let values = s.sweep.values()?;
    let points: Vec<PointResult> = values
        .par_iter()
        .enumerate()
        .map(|(i, v)| run_point(s, i, *v).map_err(|e| e.context(&format!("sweep point {i} ({} = {v})", s.sweep.variable))))
        .collect::<CliResult<_>>()?;
    Ok(RunOutput {
        scenario: s.clone(),
        points,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Numerical(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn summary_header(s: &Scenario) -> Vec<&'static str> {
    if s.experiment == Experiment::SingleQubitDephasing {
        vec!["index", "sweep_value", "gamma_MHz", "rms_deviation"]
    } else {
        vec!["index", "sweep_value", "P2", "P4", "eta", "gamma_phi_b_MHz", "K_MHz", "P2_stderr", "P4_stderr"]
    }
}

/// Writes the bundle; returns the relative paths of all files written.
pub fn write_bundle(run: &RunOutput, dir: &Path) -> CliResult<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let s = &run.scenario;
    let mut files = vec!["summary.csv".to_string()];
    let dephasing = s.experiment == Experiment::SingleQubitDephasing;
    write_csv(
        &dir.join("summary.csv"),
        &summary_header(s),
        run.points.iter().map(|p| {
            if let Some(d) = &p.decay {
                vec![p.index.to_string(), fmt(p.value), fmt(d.gamma), fmt(d.rms_deviation())]
            } else {
                let t = p.summary;
                vec![
                    p.index.to_string(),
                    fmt(p.value),
                    fmt(t.p2),
                    fmt(t.p4),
                    fmt(t.eta),
                    fmt(p.gamma_phi_b),
                    fmt(p.coupling),
                    fmt(p.p2_err),
                    fmt(p.p4_err),
                ]
            }
        }),
    )?;
    let any_spectra = run.points.iter().any(|p| p.spectra.is_some());
    if any_spectra {
        let sd = dir.join("spectra");
        std::fs::create_dir_all(&sd).map_err(|e| CliError::io(&sd, e))?;
        for p in &run.points {
            if let Some((s2, s4)) = &p.spectra {
                for (tag, spec) in [("S2", s2), ("S4", s4)] {
                    let name = format!("spectra/point_{:03}_{tag}.csv", p.index);
                    write_spectrum_csv(&dir.join(&name), spec)?;
                    files.push(name);
                }
            }
        }
    }
    if s.wants(Output::Fits) && !dephasing {
        let rows = run.points.iter().flat_map(|p| {
            p.fits.iter().flat_map(move |f| {
                f.fit.params.iter().map(move |prm| {
                    vec![
                        p.index.to_string(),
                        fmt(p.value),
                        f.port.to_string(),
                        f.fit.model.clone(),
                        prm.name.clone(),
                        fmt(prm.value),
                        fmt(prm.std_err),
                        fmt(f.fit.residual_norm),
                        f.fit.converged.to_string(),
                    ]
                })
            })
        });
        write_csv(
            &dir.join("fits.csv"),
            &["index", "sweep_value", "port", "model", "param", "value", "std_err", "residual_norm", "converged"],
            rows,
        )?;
        files.push("fits.csv".into());
    }
    if dephasing {
        let dd = dir.join("decay");
        std::fs::create_dir_all(&dd).map_err(|e| CliError::io(&dd, e))?;
        for p in &run.points {
            if let Some(d) = &p.decay {
                let name = format!("decay/point_{:03}_decay.csv", p.index);
                write_csv(
                    &dir.join(&name),
                    &["t_us", "sigma_x", "markov"],
                    d.t.iter()
                        .zip(&d.sigma_x)
                        .zip(&d.markov)
                        .map(|((t, x), m)| vec![fmt(*t), fmt(*x), fmt(*m)]),
                )?;
                files.push(name);
            }
        }
    }
    files.push("manifest.json".into());
    let mut defaults = BTreeMap::new();
    defaults.insert("resonator_dim".into(), serde_json::json!(s.resonator_dim));
    if s.engine == Engine::Lindblad && any_spectra {
        defaults.insert("correlation_grid".into(), serde_json::to_value(CorrelationGrid::default()).unwrap());
    }
    if s.engine == Engine::Stochastic && !dephasing {
        let relax: Vec<_> = run.points.iter().map(|p| serde_json::json!(p.relax_us)).collect();
        defaults.insert("relax_us_per_point".into(), serde_json::Value::Array(relax));
        defaults.insert("stochastic".into(), serde_json::to_value(StochasticOptions::default()).unwrap());
        defaults.insert("lag_window".into(), serde_json::json!("blackman"));
    }
    if any_spectra && s.wants(Output::Fits) {
        defaults.insert("fit_window_GHz".into(), serde_json::json!(doublet_window(&s.params)));
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        natsim_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: s.clone(),
        seeds: run.points.iter().map(|p| p.seed).collect(),
        wall_time_s: run.wall_time_s,
        engineering_defaults: defaults,
        files: files.clone(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(files)
}

pub fn default_out_dir(s: &Scenario) -> PathBuf {
    PathBuf::from("runs").join(&s.name)
}

/// Load a scenario (TOML) or a manifest (JSON), run it and write the bundle.
pub fn run_scenario(config: &Path, out: Option<&Path>) -> CliResult<(RunOutput, PathBuf)> {
    let s = Scenario::load(config)?;
    let run = execute(&s)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| default_out_dir(&s));
    write_bundle(&run, &dir)?;
    Ok((run, dir))
}
