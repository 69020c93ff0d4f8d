//! Scenario runner and command-line tools for the transport simulator.

pub mod compare;
pub mod error;
pub mod io;
pub mod run;
pub mod scenario;

use std::path::Path;

use natsim_core::noise::{synthesize_fir, wiener_phase_process, NoiseSeries, DEFAULT_SAMPLE_RATE};
use natsim_core::{NoiseKind, NoiseSpec};
use serde::{Deserialize, Serialize};

pub use compare::{compare_engines, CompareReport};
pub use error::{CliError, CliResult};
pub use run::{execute, run_scenario, write_bundle, Manifest, RunOutput};
pub use scenario::Scenario;

pub const WORKERS_ENV: &str = "NATSIM_WORKERS";

/// Size the global rayon pool from `NATSIM_WORKERS` if set.
pub fn init_workers() -> CliResult<()> {
    let Ok(v) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::invalid(WORKERS_ENV, "must be a positive integer"))?;
    // a second initialization in the same process is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMethod {
    #[default]
    Fir,
    Wiener,
}

/// Input of `noise-gen`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseGenConfig {
    #[serde(default)]
    pub method: GenMethod,
    pub duration_us: f64,
    #[serde(default = "default_rate")]
    #[serde(rename = "sample_rate_MHz")]
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
    pub noise: NoiseKind,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE
}

pub fn generate_noise(cfg: &NoiseGenConfig) -> CliResult<NoiseSeries> {
    let spec = NoiseSpec::new(cfg.noise)
        .with_sample_rate(cfg.sample_rate)
        .with_seed(cfg.seed);
    spec.validate()?;
    if !(cfg.duration_us > 0.0) {
        return Err(CliError::invalid("duration_us", "must be positive"));
    }
    let n = (cfg.duration_us * cfg.sample_rate).round() as usize;
    let series = match cfg.method {
        GenMethod::Fir => synthesize_fir(&spec, n, cfg.seed)?,
        GenMethod::Wiener => match cfg.noise {
            NoiseKind::Lorentzian { amplitude, center, fwhm } => {
                let xi0 = (amplitude * fwhm / 2.0).sqrt();
                let mut s = wiener_phase_process(xi0, center, fwhm, 1.0 / cfg.sample_rate, n, cfg.seed)?;
                s.spec = spec;
                s
            }
            _ => return Err(CliError::invalid("method", "wiener synthesis needs lorentzian noise")),
        },
    };
    Ok(series)
}

/// `noise-gen`: CSV unless the output ends in `.bin`.
pub fn noise_gen(config: &Path, out: &Path) -> CliResult<NoiseSeries> {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    let cfg: NoiseGenConfig = toml::from_str(&text).map_err(|e| CliError::invalid("noise-gen", e.message().to_string()))?;
    let s = generate_noise(&cfg)?;
    if out.extension().is_some_and(|e| e == "bin") {
        io::write_series_bin(out, &s)?;
    } else {
        io::write_series_csv(out, &s)?;
    }
    Ok(s)
}
