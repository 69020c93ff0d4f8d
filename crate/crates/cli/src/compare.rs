//! Cross-checks between the Lindblad, rate-equation and stochastic engines.

use natsim_core::dynamics::{integrated_power, steady_transport};
use natsim_core::rates::rate_transport;
use natsim_core::stochastic::stochastic_spectra_with;
use natsim_core::{HilbertSpace, NoiseKind, NoiseSpec, RateParams, StochasticOptions, TransportSummary};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::scenario::{Excitation, Experiment, Scenario};

/// Relative argmax tolerance between the Lindblad and rate-model η curves.
pub const ARGMAX_TOL: f64 = 0.30;
/// Stochastic ξ0 = 0 against Lindblad: windowed spectral integral vs exact P4.
pub const WINDOW_TOL: f64 = 0.05;
pub const ZERO_P4: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub value: f64,
    pub lindblad: TransportSummary,
    pub rate_eq: TransportSummary,
    pub d_eta: f64,
    pub d_p4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub checks: Vec<Check>,
}

impl CompareReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Grid argmax refined by the vertex of the parabola through it and its neighbours.
pub fn argmax(values: &[f64], eta: &[f64]) -> f64 {
    let i = eta
        .iter()
        .enumerate()
        .fold(0, |best, (i, e)| if *e > eta[best] { i } else { best });
    if i == 0 || i + 1 == eta.len() {
        return values[i];
    }
    let (x1, x2, x3) = (values[i - 1], values[i], values[i + 1]);
    let (y1, y2, y3) = (eta[i - 1], eta[i], eta[i + 1]);
    let num = (x2 - x1).powi(2) * (y2 - y3) - (x2 - x3).powi(2) * (y2 - y1);
    let den = (x2 - x1) * (y2 - y3) - (x2 - x3) * (y2 - y1);
    if den == 0.0 {
        return x2;
    }
    (x2 - 0.5 * num / den).clamp(x1.min(x3), x1.max(x3))
}

pub fn compare_engines(s: &Scenario) -> CliResult<CompareReport> {
    s.validate()?;
    if s.experiment != Experiment::Network {
        return Err(CliError::invalid("experiment", "engine comparison needs the network experiment"));
    }
    if matches!(s.noise, Some(NoiseKind::Lorentzian { .. } | NoiseKind::CoherentTone { .. })) {
        return Err(CliError::invalid("noise", "rate_eq and lindblad cannot run lorentzian or coherent_tone noise"));
    }
    if matches!(s.excitation, Some(Excitation::Incoherent { .. })) {
        return Err(CliError::invalid("excitation", "rate_eq models coherent pumping only"));
    }
    let space = HilbertSpace::network(s.resonator_dim)?;
    let values = s.sweep.values()?;
    let rows: Vec<CompareRow> = values
        .par_iter()
        .enumerate()
        .map(|(i, v)| -> CliResult<CompareRow> {
            let p = s.point(*v)?.lindblad_params();
            let l = steady_transport(&p, &space)?.1;
            let r = rate_transport(&RateParams::from_system(&p))?;
            Ok(CompareRow {
                value: *v,
                lindblad: l,
                rate_eq: r,
                d_eta: r.eta - l.eta,
                d_p4: r.p4 - l.p4,
            })
            .map_err(|e: CliError| e.context(&format!("sweep point {i}")))
        })
        .collect::<CliResult<_>>()?;

    let mut checks = Vec::new();
    if values.len() >= 3 {
        let a = argmax(&values, &rows.iter().map(|r| r.lindblad.eta).collect::<Vec<_>>());
        let b = argmax(&values, &rows.iter().map(|r| r.rate_eq.eta).collect::<Vec<_>>());
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        checks.push(Check {
            name: "eta argmax lindblad vs rate_eq".into(),
            passed: rel <= ARGMAX_TOL,
            detail: format!("lindblad {a:.4}, rate_eq {b:.4}, relative difference {rel:.3} (tol {ARGMAX_TOL})"),
        });
    }

    let mut base = s.point(values[0])?.params;
    base.gamma_phi = 0.0;
    let exact = steady_transport(&base, &space)?.1;
    let opts = StochasticOptions {
        n_traj: 1,
        resonator_dim: s.resonator_dim,
        tau_span: s.stochastic.tau_span_us,
        seed: s.seed,
        ..StochasticOptions::default()
    };
    let spec = NoiseSpec::lorentzian(0.0, 190.0, 10.0);
    let st = stochastic_spectra_with(&base, &spec, &opts, None)?;
    let p4_window = integrated_power(&st.s4, None)?;
    let rel = (p4_window - exact.p4).abs() / exact.p4.abs().max(1e-300);
    checks.push(Check {
        name: "stochastic xi0=0 vs lindblad gamma_phi=0".into(),
        passed: rel <= WINDOW_TOL || (exact.p4.abs() < ZERO_P4 && p4_window.abs() < ZERO_P4),
        detail: format!("windowed P4 {p4_window:.6e}, exact {:.6e}, relative {rel:.4} (tol {WINDOW_TOL})", exact.p4),
    });

    let mut dark = s.point(values[0])?.lindblad_params();
    dark.omega_rabi = 0.0;
    dark.n_th = 0.0;
    let l0 = steady_transport(&dark, &space)?.1;
    let r0 = rate_transport(&RateParams::from_system(&dark))?;
    checks.push(Check {
        name: "no drive gives P4 = 0".into(),
        passed: l0.p4.abs() < ZERO_P4 && r0.p4.abs() < ZERO_P4,
        detail: format!("lindblad {:.3e}, rate_eq {:.3e}", l0.p4, r0.p4),
    });
    Ok(CompareReport { rows, checks })
}
