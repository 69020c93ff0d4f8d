//! Scenario files: TOML with unit-suffixed keys, unknown keys rejected.

use std::path::Path;

use natsim_core::noise::{expected_variance, xi0_for_coupling, NoiseKind, NoiseSpec};
use natsim_core::SystemParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Lindblad,
    Stochastic,
    RateEq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    #[default]
    Network,
    SingleQubitDephasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Excitation {
    Coherent {
        #[serde(rename = "Omega_R_MHz")]
        omega_rabi: f64,
    },
    Incoherent { n_th: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Powers,
    Efficiency,
    Spectra,
    Fits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
}

impl Sweep {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        let v = match (&self.grid, self.start, self.stop, self.points) {
            (Some(g), None, None, None) => g.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n == 0 {
                    return Err(CliError::invalid("sweep.points", "must be at least 1"));
                }
                if n == 1 {
                    vec![a]
                } else {
                    match self.spacing {
                        Spacing::Linear => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
                        Spacing::Log => {
                            if !(a > 0.0 && b > 0.0) {
                                return Err(CliError::invalid("sweep.start", "log spacing needs positive bounds"));
                            }
                            let (la, lb) = (a.ln(), b.ln());
                            (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
                        }
                    }
                }
            }
            _ => {
                return Err(CliError::invalid(
                    "sweep.grid",
                    "give either `grid` or all of `start`, `stop`, `points`",
                ))
            }
        };
        if v.is_empty() {
            return Err(CliError::invalid("sweep.grid", "must not be empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::invalid("sweep.grid", "values must be finite"));
        }
        let up = v.windows(2).all(|w| w[1] > w[0]);
        let down = v.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(CliError::invalid("sweep.grid", "must be strictly monotone"));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticConfig {
    pub n_traj: usize,
    pub tau_span_us: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_us: Option<f64>,
    pub dt_us: f64,
    /// Averaging block for coherent-tone periodic steady states.
    pub block_us: f64,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            n_traj: 200,
            tau_span_us: 1.0,
            relax_us: None,
            dt_us: 2e-4,
            block_us: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingConfig {
    #[serde(rename = "gamma_MHz")]
    pub gamma: f64,
    #[serde(default = "default_demo_traj")]
    pub n_traj: usize,
}

fn default_demo_traj() -> usize {
    4000
}

/// Reference values for this scenario; informational, never enforced.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expected {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub experiment: Experiment,
    pub engine: Engine,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_resonator_dim")]
    pub resonator_dim: usize,
    #[serde(default)]
    pub params: SystemParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<Excitation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    pub sweep: Sweep,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<Output>,
    #[serde(default)]
    pub stochastic: StochasticConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing: Option<DephasingConfig>,
    #[serde(default)]
    pub expected: Expected,
}

fn default_seed() -> u64 {
    1
}
fn default_resonator_dim() -> usize {
    3
}
fn default_outputs() -> Vec<Output> {
    vec![Output::Powers, Output::Efficiency]
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepVariable {
    GammaPhiB,
    NoiseAmplitude,
    NoiseCenter,
    NoiseFwhm,
    /// RMS qubit-frequency excursion K, MHz.
    Coupling,
    Xi0,
    /// Any `[params]` key.
    Param(String),
}

impl SweepVariable {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "gamma_phi_b_MHz" => Self::GammaPhiB,
            "noise_amplitude_MHz" => Self::NoiseAmplitude,
            "noise_center_MHz" => Self::NoiseCenter,
            "noise_fwhm_MHz" => Self::NoiseFwhm,
            "K_MHz" => Self::Coupling,
            "xi0_MHz" => Self::Xi0,
            other => {
                let mut t = param_table(&SystemParams::default())?;
                if !t.contains_key(other) {
                    return Err(CliError::invalid("sweep.variable", format!("unknown variable `{other}`")));
                }
                t.insert(other.into(), toml::Value::Float(0.0));
                Self::Param(other.into())
            }
        })
    }
}

fn param_table(p: &SystemParams) -> CliResult<toml::Table> {
    toml::Table::try_from(p).map_err(|e| CliError::Numerical(e.to_string()))
}

/// Fully resolved inputs of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointConfig {
    pub params: SystemParams,
    pub noise: Option<NoiseKind>,
}

impl PointConfig {
    /// γφ handed to the Lindblad and rate engines: the params value plus 2A for white noise.
    pub fn lindblad_params(&self) -> SystemParams {
        let mut p = self.params;
        if let Some(NoiseKind::White { amplitude, .. }) = self.noise {
            p.gamma_phi += 2.0 * amplitude;
        }
        p
    }

    pub fn gamma_phi_b(&self) -> f64 {
        self.lindblad_params().gamma_phi_b()
    }

    /// K = RMS of the frequency excursion 2ξ.
    pub fn coupling(&self) -> f64 {
        match self.noise {
            Some(kind) => 2.0 * expected_variance(&NoiseSpec::new(kind)).sqrt(),
            None => 0.0,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::invalid(toml_path(&e), e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: crate::run::Manifest =
                serde_json::from_str(&text).map_err(|e| CliError::invalid("manifest", e.to_string()))?;
            m.scenario.validate()?;
            return Ok(m.scenario);
        }
        Self::from_toml_str(&text)
    }

    pub fn wants(&self, o: Output) -> bool {
        self.outputs.contains(&o)
    }

    pub fn sweep_variable(&self) -> CliResult<SweepVariable> {
        SweepVariable::parse(&self.sweep.variable)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(CliError::invalid("name", "must be a plain, non-empty file name"));
        }
        let values = self.sweep.values()?;
        let var = self.sweep_variable()?;
        if self.wants(Output::Fits) && !self.wants(Output::Spectra) {
            return Err(CliError::invalid("outputs", "`fits` needs `spectra`"));
        }
        if self.experiment == Experiment::SingleQubitDephasing {
            let Some(d) = self.dephasing else {
                return Err(CliError::invalid("dephasing", "required for the single-qubit experiment"));
            };
            if !(d.gamma >= 0.0) || d.n_traj == 0 {
                return Err(CliError::invalid("dephasing.gamma_MHz", "needs γ ≥ 0 and n_traj ≥ 1"));
            }
            if var != SweepVariable::NoiseFwhm {
                return Err(CliError::invalid("sweep.variable", "single-qubit demo sweeps noise_fwhm_MHz"));
            }
            if self.engine != Engine::Stochastic {
                return Err(CliError::invalid("engine", "single-qubit demo is a stochastic experiment"));
            }
            if values.iter().any(|v| *v <= 0.0) {
                return Err(CliError::invalid("sweep.grid", "bandwidths must be positive"));
            }
            return Ok(());
        }
        match (self.engine, self.noise) {
            (Engine::Stochastic, Some(NoiseKind::Lorentzian { .. } | NoiseKind::CoherentTone { .. })) => {}
            (Engine::Stochastic, _) => {
                return Err(CliError::invalid("noise", "stochastic engine needs lorentzian or coherent_tone noise"))
            }
            (_, Some(NoiseKind::Lorentzian { .. } | NoiseKind::CoherentTone { .. })) => {
                return Err(CliError::invalid("engine", "lorentzian and coherent_tone noise need the stochastic engine"))
            }
            _ => {}
        }
        if self.engine == Engine::RateEq {
            if self.wants(Output::Spectra) {
                return Err(CliError::invalid("outputs", "rate_eq produces no spectra"));
            }
            if matches!(self.excitation, Some(Excitation::Incoherent { .. })) {
                return Err(CliError::invalid("excitation", "rate_eq models coherent pumping only"));
            }
        }
        match var {
            SweepVariable::NoiseAmplitude | SweepVariable::NoiseCenter | SweepVariable::NoiseFwhm => {
                if self.noise.is_none() {
                    return Err(CliError::invalid("noise", "sweep variable needs a [noise] section"));
                }
            }
            SweepVariable::Coupling | SweepVariable::Xi0 => {
                if !matches!(self.noise, Some(NoiseKind::Lorentzian { .. } | NoiseKind::CoherentTone { .. })) {
                    return Err(CliError::invalid("noise", "K and ξ0 sweeps need lorentzian or coherent_tone noise"));
                }
            }
            _ => {}
        }
        if self.stochastic.n_traj == 0 {
            return Err(CliError::invalid("stochastic.n_traj", "must be at least 1"));
        }
        for (i, v) in values.iter().enumerate() {
            let pc = self.point(*v).map_err(|e| e.context(&format!("sweep.grid[{i}]")))?;
            pc.lindblad_params()
                .validate()
                .map_err(|e| CliError::from(e).context(&format!("sweep.grid[{i}]")))?;
            if let Some(kind) = pc.noise {
                NoiseSpec::new(kind)
                    .validate()
                    .map_err(|e| CliError::from(e).context(&format!("sweep.grid[{i}]")))?;
            }
        }
        Ok(())
    }

    /// Params and noise at one sweep value.
    pub fn point(&self, value: f64) -> CliResult<PointConfig> {
        let mut params = self.params;
        match self.excitation {
            Some(Excitation::Coherent { omega_rabi }) => {
                params.omega_rabi = omega_rabi;
            }
            Some(Excitation::Incoherent { n_th }) => {
                params.omega_rabi = 0.0;
                params.n_th = n_th;
            }
            None => {}
        }
        let mut noise = self.noise;
        match self.sweep_variable()? {
            SweepVariable::GammaPhiB => params.gamma_phi = 2.0 * value,
            SweepVariable::NoiseAmplitude => set_noise(&mut noise, |k| match k {
                NoiseKind::White { amplitude, .. }
                | NoiseKind::Lorentzian { amplitude, .. }
                | NoiseKind::CoherentTone { amplitude, .. } => *amplitude = value,
            }),
            SweepVariable::NoiseCenter => set_noise(&mut noise, |k| match k {
                NoiseKind::Lorentzian { center, .. } => *center = value,
                NoiseKind::CoherentTone { frequency, .. } => *frequency = value,
                NoiseKind::White { cutoff, .. } => *cutoff = value,
            }),
            SweepVariable::NoiseFwhm => set_noise(&mut noise, |k| match k {
                NoiseKind::Lorentzian { fwhm, .. } => *fwhm = value,
                NoiseKind::White { width, .. } => *width = value,
                NoiseKind::CoherentTone { .. } => {}
            }),
            SweepVariable::Coupling | SweepVariable::Xi0 => {
                let xi0 = match self.sweep_variable()? {
                    SweepVariable::Coupling => xi0_for_coupling(value),
                    _ => value,
                };
                set_noise(&mut noise, |k| match k {
                    NoiseKind::Lorentzian { amplitude, fwhm, .. } => *amplitude = 2.0 * xi0 * xi0 / *fwhm,
                    NoiseKind::CoherentTone { amplitude, .. } => *amplitude = xi0,
                    NoiseKind::White { .. } => {}
                })
            }
            SweepVariable::Param(key) => {
                let mut t = param_table(&params)?;
                t.insert(key, toml::Value::Float(value));
                params = t
                    .try_into()
                    .map_err(|e: toml::de::Error| CliError::invalid("params", e.message().to_string()))?;
            }
        }
        Ok(PointConfig { params, noise })
    }
}

fn set_noise(noise: &mut Option<NoiseKind>, f: impl FnOnce(&mut NoiseKind)) {
    if let Some(k) = noise.as_mut() {
        f(k)
    }
}

fn toml_path(e: &toml::de::Error) -> String {
    let m = e.message();
    if let Some(rest) = m.strip_prefix("unknown field `") {
        return rest.split('`').next().unwrap_or("config").to_string();
    }
    if let Some(rest) = m.strip_prefix("missing field `") {
        return rest.split('`').next().unwrap_or("config").to_string();
    }
    "config".to_string()
}
