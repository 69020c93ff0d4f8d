//! Classical frequency-noise environments for qubit 2.
//!
//! A noise sample ξ (MHz) enters the Hamiltonian as ξ·σ2z, so the qubit
//! transition frequency moves by 2ξ. Spectra are often quoted in angular
//! units; here every spectrum is given in ν-units (MHz) with
//! S_ang(ω) = 2π·S(ω/2π), so the Markov dephasing rate is γφ = 2·S(0) and
//! var(ξ) = (1/2π)∫S(ν)dν over both signs of ν.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Port, SpectrumResult};
use crate::fit::{flux_tune_derivative, FluxTuneParams};
use crate::{Result, SimError};

const TWO_PI: f64 = 2.0 * PI;

pub const DEFAULT_CUTOFF_MHZ: f64 = 325.0;
pub const DEFAULT_CUTOFF_WIDTH_MHZ: f64 = 5.44;
pub const DEFAULT_LORENTZ_FWHM_MHZ: f64 = 10.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 2500.0;
pub const DEFAULT_TAPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// A/(1 + e^{(ν−νc)/Δ})
    White {
        #[serde(rename = "amplitude_MHz")]
        amplitude: f64,
        #[serde(rename = "cutoff_MHz", default = "default_cutoff")]
        cutoff: f64,
        #[serde(rename = "cutoff_width_MHz", default = "default_cutoff_width")]
        width: f64,
    },
    /// A/(1 + ((ν−νL)/(Δν/2))²)
    Lorentzian {
        #[serde(rename = "amplitude_MHz")]
        amplitude: f64,
        #[serde(rename = "center_MHz")]
        center: f64,
        #[serde(rename = "fwhm_MHz", default = "default_fwhm")]
        fwhm: f64,
    },
    /// ξ0·cos(2πν_c t + φ0)
    CoherentTone {
        #[serde(rename = "amplitude_MHz")]
        amplitude: f64,
        #[serde(rename = "frequency_MHz")]
        frequency: f64,
    },
}

fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF_MHZ
}
fn default_cutoff_width() -> f64 {
    DEFAULT_CUTOFF_WIDTH_MHZ
}
fn default_fwhm() -> f64 {
    DEFAULT_LORENTZ_FWHM_MHZ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// samples per µs
    pub sample_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind) -> Self {
        Self {
            kind,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }

    pub fn white(amplitude: f64) -> Self {
        Self::new(NoiseKind::White {
            amplitude,
            cutoff: DEFAULT_CUTOFF_MHZ,
            width: DEFAULT_CUTOFF_WIDTH_MHZ,
        })
    }

    pub fn lorentzian(amplitude: f64, center: f64, fwhm: f64) -> Self {
        Self::new(NoiseKind::Lorentzian {
            amplitude,
            center,
            fwhm,
        })
    }

    /// Lorentzian whose Wiener-phase realization has amplitude ξ0.
    pub fn lorentzian_from_xi0(xi0: f64, center: f64, fwhm: f64) -> Self {
        if fwhm == 0.0 {
            return Self::tone(xi0, center);
        }
        Self::lorentzian(2.0 * xi0 * xi0 / fwhm, center, fwhm)
    }

    pub fn tone(amplitude: f64, frequency: f64) -> Self {
        Self::new(NoiseKind::CoherentTone {
            amplitude,
            frequency,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sample_rate(mut self, rate: f64) -> Self {
        self.sample_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let vals: Vec<(&str, f64)> = match self.kind {
            NoiseKind::White { amplitude, cutoff, width } => {
                vec![("amplitude_MHz", amplitude), ("cutoff_MHz", cutoff), ("cutoff_width_MHz", width)]
            }
            NoiseKind::Lorentzian { amplitude, center, fwhm } => {
                vec![("amplitude_MHz", amplitude), ("center_MHz", center), ("fwhm_MHz", fwhm)]
            }
            NoiseKind::CoherentTone { amplitude, frequency } => {
                vec![("amplitude_MHz", amplitude), ("frequency_MHz", frequency)]
            }
        };
        for (name, v) in vals {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::invalid(name, "must be finite and non-negative"));
            }
        }
        if let NoiseKind::White { width, .. } = self.kind {
            if width <= 0.0 {
                return Err(SimError::invalid("cutoff_width_MHz", "must be positive"));
            }
        }
        if !(self.sample_rate > 0.0) {
            return Err(SimError::invalid("sample_rate", "must be positive"));
        }
        let content = self.highest_content();
        if self.sample_rate <= 2.0 * content {
            return Err(SimError::Nyquist {
                content_mhz: content,
                rate: self.sample_rate,
            });
        }
        Ok(())
    }

    /// Frequency above which the spectrum is negligible, MHz.
    pub fn highest_content(&self) -> f64 {
        match self.kind {
            NoiseKind::White { cutoff, width, .. } => cutoff + 10.0 * width,
            NoiseKind::Lorentzian { center, fwhm, .. } => center + 20.0 * fwhm,
            NoiseKind::CoherentTone { frequency, .. } => frequency,
        }
    }
}

/// Target spectrum at ν ≥ 0 (MHz), as in the kind's doc formula. A coherent tone has no
/// density; it returns 0.
pub fn target_psd(spec: &NoiseSpec, nu: f64) -> f64 {
    match spec.kind {
        NoiseKind::White { amplitude, cutoff, width } => amplitude * fermi(nu, cutoff, width),
        NoiseKind::Lorentzian { amplitude, center, fwhm } => amplitude * lor(nu - center, fwhm),
        NoiseKind::CoherentTone { .. } => 0.0,
    }
}

/// Symmetric two-sided spectrum used for synthesis and dephasing, MHz.
/// White: A·FD(|ν|). Lorentzian: (A/2)[L(ν−νL) + L(ν+νL)].
pub fn two_sided_psd(spec: &NoiseSpec, nu: f64) -> f64 {
    match spec.kind {
        NoiseKind::White { amplitude, cutoff, width } => amplitude * fermi(nu.abs(), cutoff, width),
        NoiseKind::Lorentzian { amplitude, center, fwhm } => {
            0.5 * amplitude * (lor(nu - center, fwhm) + lor(nu + center, fwhm))
        }
        NoiseKind::CoherentTone { .. } => 0.0,
    }
}

fn fermi(nu: f64, c: f64, w: f64) -> f64 {
    let x = (nu - c) / w;
    if x > 700.0 {
        0.0
    } else {
        1.0 / (1.0 + x.exp())
    }
}

fn lor(x: f64, fwhm: f64) -> f64 {
    if fwhm == 0.0 {
        return if x == 0.0 { 1.0 } else { 0.0 };
    }
    let u = 2.0 * x / fwhm;
    1.0 / (1.0 + u * u)
}

/// Expected variance of ξ (MHz²).
pub fn expected_variance(spec: &NoiseSpec) -> f64 {
    match spec.kind {
        NoiseKind::White { amplitude, cutoff, width } => {
            // (1/π)∫₀^∞ A·FD = (A/π)·Δ·ln(1 + e^{νc/Δ})
            let x = cutoff / width;
            let ln = if x > 30.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
            amplitude / PI * width * ln
        }
        NoiseKind::Lorentzian { amplitude, center, fwhm } => {
            // (A/2π)·∫L over both terms on the full line, exact
            let _ = center;
            amplitude * fwhm / 4.0
        }
        NoiseKind::CoherentTone { amplitude, .. } => amplitude * amplitude / 2.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSeries {
    /// ξ(t) in MHz
    pub samples: Vec<f64>,
    /// µs
    pub dt: f64,
    pub spec: NoiseSpec,
}

impl NoiseSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.samples.len() as f64
    }

    /// |mean| < 3σ/√N
    pub fn zero_mean_ok(&self) -> bool {
        let n = self.samples.len() as f64;
        self.mean().abs() <= 3.0 * self.variance().sqrt() / n.sqrt()
    }

    /// Running integral ∫₀^t ξ dt' by the trapezoid rule (MHz·µs).
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.samples.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in self.samples.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * self.dt;
            out.push(acc);
        }
        out.truncate(self.samples.len());
        out
    }
}

/// Zero-phase frequency-sampled FIR taps realizing |H|² = fs·S/(2π), Hann-windowed.
pub fn design_fir(spec: &NoiseSpec, taps: usize) -> Vec<f64> {
    let fs = spec.sample_rate;
    let mut h: Vec<Complex64> = (0..taps)
        .map(|k| {
            let kk = if k <= taps / 2 { k as f64 } else { k as f64 - taps as f64 };
            let nu = kk * fs / taps as f64;
            Complex64::new((fs * two_sided_psd(spec, nu) / TWO_PI).sqrt(), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(taps).process(&mut h);
    (0..taps)
        .map(|i| {
            let src = (i + taps / 2) % taps;
            let w = 0.5 - 0.5 * (TWO_PI * i as f64 / taps as f64).cos();
            h[src].re / taps as f64 * w
        })
        .collect()
}

fn rng_for(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Gaussian noise with the spectrum of `spec`, by filtering unit white noise.
pub fn synthesize_fir(spec: &NoiseSpec, n_samples: usize, seed: u64) -> Result<NoiseSeries> {
    synthesize_fir_with_taps(spec, n_samples, seed, DEFAULT_TAPS)
}

pub fn synthesize_fir_with_taps(spec: &NoiseSpec, n_samples: usize, seed: u64, taps: usize) -> Result<NoiseSeries> {
    spec.validate()?;
    if n_samples < 8 * taps {
        return Err(SimError::invalid(
            "n_samples",
            format!("must be at least 8 x filter length ({})", 8 * taps),
        ));
    }
    let dt = 1.0 / spec.sample_rate;
    let mut spec_out = *spec;
    spec_out.seed = seed;
    let mut rng = rng_for(seed);
    if let NoiseKind::CoherentTone { amplitude, frequency } = spec.kind {
        let phi0 = rng.random::<f64>() * TWO_PI;
        let samples = (0..n_samples)
            .map(|k| amplitude * (TWO_PI * frequency * k as f64 * dt + phi0).cos())
            .collect();
        return Ok(NoiseSeries { samples, dt, spec: spec_out });
    }
    let h = design_fir(spec, taps);
    if h.iter().all(|x| *x == 0.0) {
        return Ok(NoiseSeries {
            samples: vec![0.0; n_samples],
            dt,
            spec: spec_out,
        });
    }
    let total = n_samples + taps - 1;
    let white: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
    let samples = convolve_valid(&white, &h);
    Ok(NoiseSeries {
        samples,
        dt,
        spec: spec_out,
    })
}

/// Valid part of the linear convolution, via one FFT.
fn convolve_valid(x: &[f64], h: &[f64]) -> Vec<f64> {
    let m = (x.len() + h.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut a: Vec<Complex64> = (0..m).map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    let mut b: Vec<Complex64> = (0..m).map(|i| Complex64::new(h.get(i).copied().unwrap_or(0.0), 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let start = h.len() - 1;
    (start..x.len()).map(|i| a[i].re / m as f64).collect()
}

/// Brownian phase φ with ⟨φ(t)²⟩ = 2πΔν·t, starting at a uniform random phase.
pub fn wiener_phase<R: Rng>(fwhm: f64, dt: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let sd = (TWO_PI * fwhm * dt).sqrt();
    let mut phi = Vec::with_capacity(n);
    let mut p = rng.random::<f64>() * TWO_PI;
    for _ in 0..n {
        phi.push(p);
        let z: f64 = rng.sample(StandardNormal);
        p += sd * z;
    }
    phi
}

/// ξ(t) = ξ0·cos(2πνL t + φ(t)) with diffusing phase. Its spectrum is the
/// Lorentzian of FWHM Δν around νL with amplitude 2ξ0²/Δν.
pub fn wiener_phase_process(xi0: f64, center: f64, fwhm: f64, dt: f64, n: usize, seed: u64) -> Result<NoiseSeries> {
    Ok(wiener_phase_process_with_phase(xi0, center, fwhm, dt, n, seed)?.0)
}

pub fn wiener_phase_process_with_phase(
    xi0: f64,
    center: f64,
    fwhm: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<(NoiseSeries, Vec<f64>)> {
    check_wiener_step(center, fwhm, dt)?;
    if !(xi0 >= 0.0) {
        return Err(SimError::invalid("xi0", "must be non-negative"));
    }
    let mut rng = rng_for(seed);
    let phi = wiener_phase(fwhm, dt, n, &mut rng);
    let samples = phi
        .iter()
        .enumerate()
        .map(|(k, p)| xi0 * (TWO_PI * center * k as f64 * dt + p).cos())
        .collect();
    let spec = NoiseSpec::lorentzian_from_xi0(xi0, center, fwhm)
        .with_sample_rate(1.0 / dt)
        .with_seed(seed);
    Ok((NoiseSeries { samples, dt, spec }, phi))
}

pub fn check_wiener_step(center: f64, fwhm: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(SimError::invalid("dt", "must be positive"));
    }
    if center < 0.0 || fwhm < 0.0 {
        return Err(SimError::invalid("center", "frequencies must be non-negative"));
    }
    if TWO_PI * center.max(fwhm) * dt > 0.5 {
        return Err(SimError::invalid("dt", "needs 2π·max(νL, Δν)·dt ≤ 0.5"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rect,
    Hann,
    Blackman,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = TWO_PI * i as f64 / n as f64;
                match self {
                    Window::Rect => 1.0,
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                }
            })
            .collect()
    }
}

/// Welch estimate (50% overlap) of the one-sided density of ξ in MHz²/MHz on
/// [0, fs/2]; its integral over frequency equals the variance.
pub fn estimate_psd(series: &NoiseSeries, segment_length: usize, window: Window) -> Result<SpectrumResult> {
    let n = series.samples.len();
    if segment_length < 2 || segment_length > n / 4 {
        return Err(SimError::invalid("segment_length", "must be in 2..=n_samples/4"));
    }
    let l = segment_length;
    let w = window.weights(l);
    let wpow: f64 = w.iter().map(|x| x * x).sum();
    let fs = 1.0 / series.dt;
    let fft = FftPlanner::new().plan_fft_forward(l);
    let mut acc = vec![0.0; l / 2 + 1];
    let mut count = 0usize;
    let step = l / 2;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    while start + l <= n {
        for i in 0..l {
            buf[i] = Complex64::new(series.samples[start + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        count += 1;
        start += step;
    }
    let df = fs / l as f64;
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
            one_sided * a / (count as f64 * wpow * fs)
        })
        .collect();
    Ok(SpectrumResult {
        freq_grid: (0..psd.len()).map(|k| k as f64 * df / 1000.0).collect(),
        psd,
        port: Port::NoiseInput,
        rayleigh_removed: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingRate {
    /// MHz
    pub rate: f64,
    pub markov_valid: bool,
}

/// Markov dephasing rate 2·S(0): 2A for white noise, 2A·(Δν/2)²/(νL² + (Δν/2)²)
/// for a Lorentzian.
pub fn dephasing_rate_markov(spec: &NoiseSpec) -> DephasingRate {
    let rate = 2.0 * two_sided_psd(spec, 0.0);
    let markov_valid = match spec.kind {
        NoiseKind::White { cutoff, .. } => rate < cutoff / 20.0,
        NoiseKind::Lorentzian { fwhm, .. } => fwhm > 10.0 * rate,
        NoiseKind::CoherentTone { amplitude, .. } => amplitude == 0.0,
    };
    DephasingRate { rate, markov_valid }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceDecay {
    /// µs
    pub t: Vec<f64>,
    pub sigma_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DephasingFit {
    /// Fitted exponential rate, MHz.
    pub rate: f64,
    /// RMS of ⟨σx⟩ minus the fitted exponential over the fit window.
    pub residual: f64,
    pub markov_rate: f64,
    pub decay: CoherenceDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteCutoffOptions {
    /// Number of independent windows averaged.
    pub windows: usize,
    /// Samples per µs.
    pub sample_rate: f64,
    pub seed: u64,
    /// Fit region: ⟨σx⟩ ≥ e^{−depth}.
    pub depth: f64,
    /// Largest residual accepted as an exponential decay.
    pub max_residual: f64,
}

impl Default for FiniteCutoffOptions {
    fn default() -> Self {
        Self {
            windows: 12_000,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 7,
            depth: 2.0,
            max_residual: 0.2,
        }
    }
}

/// Coherence of a single qubit under H = ξ(t)σz averaged over many FIR noise
/// windows, with an exponential fitted to ⟨σx(t)⟩.
pub fn dephasing_rate_finite_cutoff(spec: &NoiseSpec, opts: &FiniteCutoffOptions) -> Result<DephasingFit> {
    let NoiseKind::White { amplitude, .. } = spec.kind else {
        return Err(SimError::invalid("kind", "finite-cutoff rate is defined for white noise"));
    };
    let markov = 2.0 * amplitude;
    if amplitude == 0.0 {
        return Ok(DephasingFit {
            rate: 0.0,
            residual: 0.0,
            markov_rate: 0.0,
            decay: CoherenceDecay { t: vec![0.0], sigma_x: vec![1.0] },
        });
    }
    let spec = spec.with_sample_rate(opts.sample_rate);
    let dt = 1.0 / opts.sample_rate;
    // horizon long enough for e^{−depth} even if the true rate is well below 2A
    let horizon = 3.0 * opts.depth / (TWO_PI * markov);
    let points = 200usize;
    let t: Vec<f64> = (0..=points).map(|j| j as f64 * horizon / points as f64).collect();
    let n_h = ((horizon / dt).ceil() as usize + 1).max(4);
    let n_total = (opts.windows * n_h).max(8 * DEFAULT_TAPS + n_h);
    // chunked so memory stays bounded for long horizons
    let chunk = (1usize << 22).max(2 * n_h + 8 * DEFAULT_TAPS);
    let mut sums = vec![0.0; points + 1];
    let mut used = 0usize;
    let mut produced = 0usize;
    let mut k = 0u64;
    while used < opts.windows && produced < 4 * n_total {
        let series = synthesize_fir(&spec, chunk, opts.seed.wrapping_add(k))?;
        k += 1;
        produced += chunk;
        let phase = series.cumulative_integral();
        let xi = &series.samples;
        // cubic Hermite on (phase, ξ = phase'), so the horizon may span only a few samples
        let phase_at = |s: usize, tau: f64| -> f64 {
            let x = tau / dt;
            let i = (x.floor() as usize).min(n_h - 2);
            let u = x - i as f64;
            let (p0, p1) = (phase[s + i], phase[s + i + 1]);
            let (m0, m1) = (xi[s + i] * dt, xi[s + i + 1] * dt);
            let (u2, u3) = (u * u, u * u * u);
            (2.0 * u3 - 3.0 * u2 + 1.0) * p0 + (u3 - 2.0 * u2 + u) * m0 + (-2.0 * u3 + 3.0 * u2) * p1 + (u3 - u2) * m1
        };
        let mut s = 0;
        while s + n_h < phase.len() && used < opts.windows {
            for (tj, sum) in t.iter().zip(sums.iter_mut()) {
                let phi = 2.0 * TWO_PI * (phase_at(s, *tj) - phase[s]);
                *sum += phi.cos();
            }
            used += 1;
            s += n_h;
        }
    }
    let sx: Vec<f64> = sums.iter().map(|v| v / used as f64).collect();
    let floor = (-opts.depth).exp();
    let (mut num, mut den) = (0.0, 0.0);
    let mut fit_idx = Vec::new();
    for j in 1..sx.len() {
        if sx[j] < floor {
            break;
        }
        num += t[j] * (-sx[j].ln());
        den += t[j] * t[j];
        fit_idx.push(j);
    }
    if fit_idx.len() < 3 {
        return Err(SimError::FitFailed { residual: f64::NAN });
    }
    let rate = num / den / TWO_PI;
    let residual = (fit_idx
        .iter()
        .map(|&j| (sx[j] - (-TWO_PI * rate * t[j]).exp()).powi(2))
        .sum::<f64>()
        / fit_idx.len() as f64)
        .sqrt();
    if !rate.is_finite() || residual > opts.max_residual {
        return Err(SimError::FitFailed { residual });
    }
    Ok(DephasingFit {
        rate,
        residual,
        markov_rate: markov,
        decay: CoherenceDecay { t, sigma_x: sx },
    })
}

/// Maps flux-noise quantities to frequency noise for presentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// dω/dΦ at the operating point, MHz per mWb (ν-units).
    pub flux_to_freq_slope: f64,
    /// A = gain·Φ² + offset, Φ² in pWb², A in MHz.
    pub power_gain: f64,
    pub power_offset: f64,
}

impl CalibrationMap {
    /// Slope from the flux-tuning curve; `phi0_mwb` is the flux quantum in mWb
    /// and `phi` the operating point in units of Φ0.
    pub fn from_flux_tune(ft: &FluxTuneParams, phi: f64, phi0_mwb: f64, power_gain: f64) -> Result<Self> {
        let slope = flux_tune_derivative(&FluxTuneParams { phi0: 1.0, ..*ft }, phi) * 1000.0 / phi0_mwb;
        if !slope.is_finite() || slope == 0.0 {
            return Err(SimError::invalid("phi", "slope vanishes or diverges at this operating point"));
        }
        Ok(Self {
            flux_to_freq_slope: slope,
            power_gain,
            power_offset: 0.0,
        })
    }

    pub fn amplitude_for_flux_power(&self, phi2_pwb2: f64) -> f64 {
        self.power_gain * phi2_pwb2 + self.power_offset
    }

    pub fn flux_power_for_amplitude(&self, amplitude: f64) -> f64 {
        (amplitude - self.power_offset) / self.power_gain
    }

    /// RMS flux (mWb) producing an RMS frequency excursion K (MHz).
    pub fn flux_rms_for(&self, k_mhz: f64) -> f64 {
        k_mhz / self.flux_to_freq_slope.abs()
    }
}

/// K: RMS of the qubit-frequency excursion 2ξ, MHz.
pub fn effective_coupling(series: &NoiseSeries) -> f64 {
    if series.samples.is_empty() {
        return 0.0;
    }
    2.0 * series.variance().sqrt()
}

/// Tone amplitude ξ0 or Lorentzian amplitude realizing a target K.
pub fn xi0_for_coupling(k_mhz: f64) -> f64 {
    // K = 2·ξ0/√2
    k_mhz / std::f64::consts::SQRT_2
}
