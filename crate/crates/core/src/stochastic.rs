//! Master-equation trajectories with a classical, time-dependent ω2(t).
//!
//! Each trajectory evolves dρ/dt = 2π(L0 + ξ(t)·Z)ρ, with Z the commutator
//! superoperator of −iσ2z (diagonal in the column-stacked basis). Dissipation
//! stays in Lindblad form; only the qubit-2 frequency is random.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    emission_spectrum_windowed, port_operators, steady_state, Correlation, LagWindow, Port, SpectrumResult,
    TransportSummary,
};
use crate::model::{network_liouvillian, vec, SystemParams};
use crate::noise::{check_wiener_step, dephasing_rate_markov, wiener_phase, NoiseKind, NoiseSpec};
use crate::ode::Rk4;
use crate::space::{embed_qubit_operator, pauli, HilbertSpace};
use crate::sparse::CsrMatrix;
use crate::{CMat, Complex64, Result, SimError};

const TWO_PI: f64 = 2.0 * PI;
const PORTS: [Port; 2] = [Port::Waveguide2, Port::Resonator4];
const CHECKPOINT_MAGIC: &[u8; 4] = b"NSEN";
const CHECKPOINT_VERSION: u32 = 1;

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticOptions {
    /// RK4 step, µs.
    pub dt: f64,
    /// Relaxation before sampling, µs; `None` uses the default horizon.
    pub relax: Option<f64>,
    /// Correlation span, µs.
    pub tau_span: f64,
    /// Steps between recorded lags.
    pub record_every: usize,
    pub resonator_dim: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// Trajectories per checkpoint batch.
    pub batch: usize,
}

impl Default for StochasticOptions {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            relax: None,
            tau_span: 1.0,
            record_every: 5,
            resonator_dim: 3,
            n_traj: 200,
            seed: 1,
            batch: 32,
        }
    }
}

impl StochasticOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(SimError::invalid("dt", "must be positive"));
        }
        if !(self.tau_span > 0.0) {
            return Err(SimError::invalid("tau_span", "must be positive"));
        }
        if self.record_every == 0 || self.batch == 0 {
            return Err(SimError::invalid("record_every", "must be at least 1"));
        }
        if self.n_traj == 0 {
            return Err(SimError::invalid("n_traj", "must be at least 1"));
        }
        if let Some(r) = self.relax {
            if !(r >= 0.0) {
                return Err(SimError::invalid("relax", "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// 10 × the slowest of 1/γb, 1/κ and the slowest single-excitation mode,
/// with the noise's Markov dephasing included.
pub fn default_relaxation(params: &SystemParams, spec: &NoiseSpec) -> f64 {
    let mut p = *params;
    p.gamma_phi += dephasing_rate_markov(spec).rate;
    let t = p
        .slowest_decay_time()
        .max(1.0 / (TWO_PI * params.gamma_b))
        .max(1.0 / (TWO_PI * params.kappa));
    10.0 * t
}

/// SplitMix64 mixing of (base seed, trajectory index).
pub fn trajectory_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PortVecs {
    /// vec(Aᵀ), so Tr(A X) = at·vec(X)
    at: Vec<Complex64>,
    /// vec((AB)ᵀ)
    nt: Vec<Complex64>,
    /// vec(Bᵀ)
    bt: Vec<Complex64>,
    b: CMat,
    rate: f64,
}

/// Everything a trajectory needs, built once per parameter point.
pub struct StochasticSystem {
    pub params: SystemParams,
    pub space: HilbertSpace,
    csr: CsrMatrix,
    zdiag: Vec<Complex64>,
    rho0: CMat,
    ports: Vec<PortVecs>,
}

fn dot(a: &[Complex64], x: &[Complex64]) -> Complex64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

impl StochasticSystem {
    pub fn new(params: &SystemParams, resonator_dim: usize) -> Result<Self> {
        let space = HilbertSpace::network(resonator_dim)?;
        let l = network_liouvillian(params, &space)?;
        let rho0 = steady_state(&l)?.entries;
        let z = embed_qubit_operator(&space, &pauli::sigma_z(), 2)?.entries;
        let d = space.dim();
        let mut zdiag = Vec::with_capacity(d * d);
        for j in 0..d {
            for i in 0..d {
                zdiag.push(Complex64::new(0.0, -(z[(i, i)].re - z[(j, j)].re)));
            }
        }
        let mut ports = Vec::new();
        for port in PORTS {
            let (a, b, rate) = port_operators(params, &space, port)?;
            let n = &a.entries * &b.entries;
            ports.push(PortVecs {
                at: vec(&a.entries.transpose()).as_slice().to_vec(),
                nt: vec(&n.transpose()).as_slice().to_vec(),
                bt: vec(&b.entries.transpose()).as_slice().to_vec(),
                b: b.entries,
                rate,
            });
        }
        Ok(Self {
            params: *params,
            space,
            csr: l.to_csr(),
            zdiag,
            rho0,
            ports,
        })
    }

    fn n(&self) -> usize {
        self.zdiag.len()
    }

    /// out = 2π(L0 + ξZ)x, applied blockwise to stacked vectors.
    fn rhs(&self, xi: f64, x: &[Complex64], out: &mut [Complex64]) {
        let n = self.n();
        for (xb, ob) in x.chunks(n).zip(out.chunks_mut(n)) {
            self.csr.matvec_scaled(TWO_PI, xb, ob);
            let s = TWO_PI * xi;
            for ((o, z), v) in ob.iter_mut().zip(&self.zdiag).zip(xb) {
                *o += z * v * s;
            }
        }
    }

    fn trace(&self, v: &[Complex64]) -> Complex64 {
        let d = self.space.dim();
        (0..d).map(|i| v[i * d + i]).sum()
    }
}

/// ξ sampled at half steps over a trajectory.
#[derive(Debug, Clone)]
struct NoisePath {
    xi: Vec<f64>,
}

fn noise_path(spec: &NoiseSpec, h: f64, steps: usize, seed: u64) -> Result<NoisePath> {
    let dt = h / 2.0;
    let n = 2 * steps + 1;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let xi = match spec.kind {
        NoiseKind::Lorentzian { amplitude, center, fwhm } => {
            check_wiener_step(center, fwhm, dt)?;
            let xi0 = (amplitude * fwhm / 2.0).sqrt();
            let phi = wiener_phase(fwhm, dt, n, &mut rng);
            phi.iter()
                .enumerate()
                .map(|(k, p)| xi0 * (TWO_PI * center * k as f64 * dt + p).cos())
                .collect()
        }
        NoiseKind::CoherentTone { amplitude, frequency } => {
            check_wiener_step(frequency, 0.0, dt)?;
            let p: f64 = rng.random::<f64>() * TWO_PI;
            (0..n)
                .map(|k| amplitude * (TWO_PI * frequency * k as f64 * dt + p).cos())
                .collect()
        }
        NoiseKind::White { .. } => {
            return Err(SimError::invalid(
                "kind",
                "white noise is handled by the Lindblad dephasing term, not by trajectories",
            ))
        }
    };
    Ok(NoisePath { xi })
}

/// Result of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// Tr(A X(τ)) per port, X(0) = Bρ(t0).
    pub corr: [Vec<Complex64>; 2],
    /// Time-averaged ⟨AB⟩ per port.
    pub nbar: [f64; 2],
    /// Time-averaged ⟨B⟩ per port.
    pub bmean: [Complex64; 2],
    pub trace_error: f64,
}

fn run_trajectory_with_step(
    sys: &StochasticSystem,
    spec: &NoiseSpec,
    opts: &StochasticOptions,
    relax: f64,
    seed: u64,
    h: f64,
    record_every: usize,
    with_corr: bool,
) -> Result<TrajectoryRecord> {
    let n = sys.n();
    let relax_steps = (relax / h).round() as usize;
    let n_tau = (opts.tau_span / (h * record_every as f64)).round() as usize;
    let span_steps = n_tau * record_every;
    let noise = noise_path(spec, h, relax_steps + span_steps, seed)?;
    let xi = &noise.xi;

    let mut rho: Vec<Complex64> = sys.rho0.as_slice().to_vec();
    let mut rk = Rk4::new(n);
    let mut trace_error: f64 = 0.0;
    let mut k0 = 0usize;
    for _ in 0..relax_steps {
        let base = 2 * k0;
        let mut f = |stage: usize, x: &[Complex64], out: &mut [Complex64]| {
            let s = [0, 1, 1, 2][stage];
            sys.rhs(xi[base + s], x, out)
        };
        rk.step(&mut f, &mut rho, h);
        k0 += 1;
    }
    check_state(sys, &rho, &mut trace_error)?;

    // stacked [ρ, B2ρ, B4ρ]
    let blocks = if with_corr { 3 } else { 1 };
    let mut state = vec![c0(); blocks * n];
    state[..n].copy_from_slice(&rho);
    if with_corr {
        let d = sys.space.dim();
        let r = CMat::from_column_slice(d, d, &rho);
        for (p, pv) in sys.ports.iter().enumerate() {
            let x = &pv.b * &r;
            state[(p + 1) * n..(p + 2) * n].copy_from_slice(x.as_slice());
        }
    }
    let mut corr: [Vec<Complex64>; 2] = [Vec::new(), Vec::new()];
    let mut nbar = [0.0; 2];
    let mut bmean = [c0(); 2];
    let mut samples = 0usize;
    let record = |state: &[Complex64], corr: &mut [Vec<Complex64>; 2], nbar: &mut [f64; 2], bmean: &mut [Complex64; 2]| {
        let rho = &state[..n];
        for (p, pv) in sys.ports.iter().enumerate() {
            nbar[p] += dot(&pv.nt, rho).re;
            bmean[p] += dot(&pv.bt, rho);
            if with_corr {
                corr[p].push(dot(&pv.at, &state[(p + 1) * n..(p + 2) * n]));
            }
        }
    };
    record(&state, &mut corr, &mut nbar, &mut bmean);
    samples += 1;
    let mut rk = Rk4::new(blocks * n);
    for step in 0..span_steps {
        let base = 2 * k0;
        let mut f = |stage: usize, x: &[Complex64], out: &mut [Complex64]| {
            let s = [0, 1, 1, 2][stage];
            sys.rhs(xi[base + s], x, out)
        };
        rk.step(&mut f, &mut state, h);
        k0 += 1;
        if (step + 1) % record_every == 0 {
            check_state(sys, &state[..n], &mut trace_error)?;
            if (step + 1) / record_every < n_tau {
                record(&state, &mut corr, &mut nbar, &mut bmean);
                samples += 1;
            }
        }
    }
    for p in 0..2 {
        nbar[p] /= samples as f64;
        bmean[p] /= samples as f64;
    }
    Ok(TrajectoryRecord {
        corr,
        nbar,
        bmean,
        trace_error,
    })
}

fn check_state(sys: &StochasticSystem, rho: &[Complex64], trace_error: &mut f64) -> Result<()> {
    let tr = sys.trace(rho);
    let err = (tr - Complex64::new(1.0, 0.0)).norm();
    if !err.is_finite() || rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) || err > 1e-6 {
        return Err(SimError::Numerical(format!("trajectory diverged (trace error {err:e})")));
    }
    *trace_error = trace_error.max(err);
    Ok(())
}

/// One trajectory; on failure it is retried once with half the step.
pub fn run_trajectory(
    sys: &StochasticSystem,
    spec: &NoiseSpec,
    opts: &StochasticOptions,
    relax: f64,
    index: u64,
    with_corr: bool,
) -> Result<TrajectoryRecord> {
    let seed = trajectory_seed(opts.seed, index);
    run_trajectory_with_step(sys, spec, opts, relax, seed, opts.dt, opts.record_every, with_corr).or_else(|e| {
        if e.is_validation() {
            return Err(e);
        }
        run_trajectory_with_step(sys, spec, opts, relax, seed, opts.dt / 2.0, 2 * opts.record_every, with_corr)
    })
}

/// Sums over completed trajectories; merging is plain addition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    pub count: u64,
    pub excluded: u64,
    /// Index of the next trajectory to run.
    pub next_index: u64,
    pub corr_sum: [Vec<Complex64>; 2],
    pub corr_sq_sum: [Vec<f64>; 2],
    pub psd_sum: [Vec<f64>; 2],
    pub psd_sq_sum: [Vec<f64>; 2],
    pub nbar_sum: [f64; 2],
    pub nbar_sq_sum: [f64; 2],
    pub bmean_sum: [Complex64; 2],
    pub max_trace_error: f64,
}

impl EnsembleAccumulator {
    pub fn new(n_tau: usize) -> Self {
        let z = || vec![c0(); n_tau];
        let r = |m: usize| vec![0.0; m];
        Self {
            count: 0,
            excluded: 0,
            next_index: 0,
            corr_sum: [z(), z()],
            corr_sq_sum: [r(n_tau), r(n_tau)],
            psd_sum: [r(2 * n_tau), r(2 * n_tau)],
            psd_sq_sum: [r(2 * n_tau), r(2 * n_tau)],
            nbar_sum: [0.0; 2],
            nbar_sq_sum: [0.0; 2],
            bmean_sum: [c0(); 2],
            max_trace_error: 0.0,
        }
    }

    pub fn n_tau(&self) -> usize {
        self.corr_sum[0].len()
    }

    pub fn push(&mut self, rec: &TrajectoryRecord, dtau: f64, rates: [f64; 2]) {
        for p in 0..2 {
            if !rec.corr[p].is_empty() {
                for (k, c) in rec.corr[p].iter().enumerate() {
                    self.corr_sum[p][k] += c;
                    self.corr_sq_sum[p][k] += c.norm_sqr();
                }
                let psd = blackman_psd(&rec.corr[p], dtau, rates[p]);
                for (k, s) in psd.iter().enumerate() {
                    self.psd_sum[p][k] += s;
                    self.psd_sq_sum[p][k] += s * s;
                }
            }
            self.nbar_sum[p] += rec.nbar[p];
            self.nbar_sq_sum[p] += rec.nbar[p] * rec.nbar[p];
            self.bmean_sum[p] += rec.bmean[p];
        }
        self.max_trace_error = self.max_trace_error.max(rec.trace_error);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<()> {
        if other.n_tau() != self.n_tau() {
            return Err(SimError::invalid("accumulator", "lag grids differ"));
        }
        for p in 0..2 {
            add(&mut self.corr_sum[p], &other.corr_sum[p]);
            add(&mut self.corr_sq_sum[p], &other.corr_sq_sum[p]);
            add(&mut self.psd_sum[p], &other.psd_sum[p]);
            add(&mut self.psd_sq_sum[p], &other.psd_sq_sum[p]);
            self.nbar_sum[p] += other.nbar_sum[p];
            self.nbar_sq_sum[p] += other.nbar_sq_sum[p];
            self.bmean_sum[p] += other.bmean_sum[p];
        }
        self.count += other.count;
        self.excluded += other.excluded;
        self.next_index = self.next_index.max(other.next_index);
        self.max_trace_error = self.max_trace_error.max(other.max_trace_error);
        Ok(())
    }

    fn mean_field(&self, p: usize) -> Complex64 {
        self.bmean_sum[p] / self.count.max(1) as f64
    }

    /// Ensemble-mean power with the mean-field (Rayleigh) part removed.
    pub fn power(&self, p: usize, rate: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.nbar_sum[p] / self.count as f64;
        TWO_PI * rate * (n - self.mean_field(p).norm_sqr())
    }

    /// Standard error of the ensemble-mean ⟨AB⟩ power.
    pub fn power_std_err(&self, p: usize, rate: f64) -> f64 {
        TWO_PI * rate * std_err(self.nbar_sum[p], self.nbar_sq_sum[p], self.count)
    }

    /// Running standard error of the mean correlation per lag.
    pub fn corr_std_err(&self, p: usize) -> Vec<f64> {
        self.corr_sum[p]
            .iter()
            .zip(&self.corr_sq_sum[p])
            .map(|(s, q)| std_err_complex(*s, *q, self.count))
            .collect()
    }

    /// Standard error of the (unsubtracted) windowed spectrum per bin.
    pub fn psd_std_err(&self, p: usize) -> Vec<f64> {
        self.psd_sum[p]
            .iter()
            .zip(&self.psd_sq_sum[p])
            .map(|(s, q)| std_err(*s, *q, self.count))
            .collect()
    }
}

fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += *y;
    }
}

fn std_err(sum: f64, sq: f64, n: u64) -> f64 {
    if n < 2 {
        return f64::INFINITY;
    }
    let n = n as f64;
    let mean = sum / n;
    ((sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
}

fn std_err_complex(sum: Complex64, sq: f64, n: u64) -> f64 {
    if n < 2 {
        return f64::INFINITY;
    }
    let n = n as f64;
    let mean = sum / n;
    ((sq / n - mean.norm_sqr()).max(0.0) / (n - 1.0)).sqrt()
}

/// Per-trajectory windowed spectrum in fft-shifted order, no subtraction.
fn blackman_psd(corr: &[Complex64], dtau: f64, rate: f64) -> Vec<f64> {
    let c = Correlation {
        tau_us: (0..corr.len()).map(|k| k as f64 * dtau).collect(),
        values: corr.to_vec(),
        mean_product: c0(),
        frame_ghz: 0.0,
    };
    emission_spectrum_windowed(&c, rate, Port::Resonator4, false, LagWindow::Blackman)
        .map(|s| s.psd)
        .unwrap_or_else(|_| vec![0.0; 2 * corr.len()])
}

/// Completed ensemble with its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n_traj: u64,
    pub base_seed: u64,
    pub relax: f64,
    pub dtau: f64,
    pub frame_ghz: f64,
    pub rates: [f64; 2],
    pub acc: EnsembleAccumulator,
}

impl TrajectoryEnsemble {
    fn index(port: Port) -> Result<usize> {
        match port {
            Port::Waveguide2 => Ok(0),
            Port::Resonator4 => Ok(1),
            Port::NoiseInput => Err(SimError::invalid("port", "not an emission port")),
        }
    }

    pub fn correlation(&self, port: Port) -> Result<Correlation> {
        let p = Self::index(port)?;
        let n = self.acc.count.max(1) as f64;
        let m = self.acc.mean_field(p);
        Ok(Correlation {
            tau_us: (0..self.acc.n_tau()).map(|k| k as f64 * self.dtau).collect(),
            values: self.acc.corr_sum[p].iter().map(|c| c / n).collect(),
            mean_product: Complex64::new(m.norm_sqr(), 0.0),
            frame_ghz: self.frame_ghz,
        })
    }

    /// Blackman-windowed spectrum with the mean-field part subtracted.
    pub fn spectrum(&self, port: Port) -> Result<SpectrumResult> {
        let p = Self::index(port)?;
        emission_spectrum_windowed(&self.correlation(port)?, self.rates[p], port, true, LagWindow::Blackman)
    }

    pub fn summary(&self) -> TransportSummary {
        TransportSummary::from_powers(self.acc.power(1, self.rates[1]), self.acc.power(0, self.rates[0]))
    }

    pub fn power_std_err(&self, port: Port) -> Result<f64> {
        let p = Self::index(port)?;
        Ok(self.acc.power_std_err(p, self.rates[p]))
    }

    pub fn psd_std_err(&self, port: Port) -> Result<Vec<f64>> {
        Ok(self.acc.psd_std_err(Self::index(port)?))
    }

    pub fn corr_std_err(&self, port: Port) -> Result<Vec<f64>> {
        Ok(self.acc.corr_std_err(Self::index(port)?))
    }
}

fn fingerprint(params: &SystemParams, spec: &NoiseSpec, opts: &StochasticOptions, with_corr: bool) -> u64 {
    let text = format!("{params:?}|{spec:?}|{:?}|{}|{}|{}|{}|{with_corr}", opts.relax, opts.dt, opts.tau_span, opts.record_every, opts.resonator_dim);
    let text = format!("{text}|{}", opts.seed);
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Runs trajectories `acc.next_index..n_traj` in batches, reducing each
/// batch in index order so the result does not depend on scheduling.
pub fn run_ensemble(
    params: &SystemParams,
    spec: &NoiseSpec,
    opts: &StochasticOptions,
    with_corr: bool,
    checkpoint: Option<&Path>,
) -> Result<TrajectoryEnsemble> {
    opts.validate()?;
    validate_trajectory_noise(spec, opts.dt)?;
    let sys = StochasticSystem::new(params, opts.resonator_dim)?;
    let relax = opts.relax.unwrap_or_else(|| default_relaxation(params, spec));
    let n_tau = if with_corr {
        (opts.tau_span / (opts.dt * opts.record_every as f64)).round() as usize
    } else {
        0
    };
    let dtau = opts.dt * opts.record_every as f64;
    let fp = fingerprint(params, spec, opts, with_corr);
    let mut acc = match checkpoint {
        Some(path) if path.exists() => {
            let (f, a) = load_checkpoint(path)?;
            if f != fp || a.n_tau() != n_tau {
                return Err(SimError::invalid("checkpoint", "belongs to a different configuration"));
            }
            a
        }
        _ => EnsembleAccumulator::new(n_tau),
    };
    let rates = [sys.ports[0].rate, sys.ports[1].rate];
    let total = opts.n_traj as u64;
    while acc.next_index < total {
        let end = (acc.next_index + opts.batch as u64).min(total);
        let records: Vec<Result<TrajectoryRecord>> = (acc.next_index..end)
            .into_par_iter()
            .map(|i| run_trajectory(&sys, spec, opts, relax, i, with_corr))
            .collect();
        for r in records {
            match r {
                Ok(rec) => acc.push(&rec, dtau, rates),
                Err(e) if e.is_validation() => return Err(e),
                Err(_) => acc.excluded += 1,
            }
        }
        acc.next_index = end;
        if let Some(path) = checkpoint {
            save_checkpoint(path, fp, &acc)?;
        }
    }
    if acc.count == 0 {
        return Err(SimError::Numerical("every trajectory failed".into()));
    }
    Ok(TrajectoryEnsemble {
        n_traj: acc.count,
        base_seed: opts.seed,
        relax,
        dtau,
        frame_ghz: params.omega_in,
        rates,
        acc,
    })
}

fn validate_trajectory_noise(spec: &NoiseSpec, dt: f64) -> Result<()> {
    {
        match spec.kind {
            NoiseKind::Lorentzian { center, fwhm, .. } => check_wiener_step(center, fwhm, dt / 2.0),
            NoiseKind::CoherentTone { frequency, .. } => check_wiener_step(frequency, 0.0, dt / 2.0),
            NoiseKind::White { .. } => Err(SimError::invalid(
                "kind",
                "white noise is handled by the Lindblad dephasing term, not by trajectories",
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSpectra {
    pub s2: SpectrumResult,
    pub s4: SpectrumResult,
    pub summary: TransportSummary,
    pub ensemble: TrajectoryEnsemble,
}

/// Ensemble-averaged S2 and S4 for Lorentzian or coherent-tone noise on qubit 2.
pub fn run_stochastic_spectra(
    params: &SystemParams,
    spec: &NoiseSpec,
    n_traj: usize,
    tau_span: f64,
    seed: u64,
) -> Result<StochasticSpectra> {
    let opts = StochasticOptions {
        n_traj,
        tau_span,
        seed,
        ..StochasticOptions::default()
    };
    stochastic_spectra_with(params, spec, &opts, None)
}

pub fn stochastic_spectra_with(
    params: &SystemParams,
    spec: &NoiseSpec,
    opts: &StochasticOptions,
    checkpoint: Option<&Path>,
) -> Result<StochasticSpectra> {
    let ensemble = run_ensemble(params, spec, opts, true, checkpoint)?;
    Ok(StochasticSpectra {
        s2: ensemble.spectrum(Port::Waveguide2)?,
        s4: ensemble.spectrum(Port::Resonator4)?,
        summary: ensemble.summary(),
        ensemble,
    })
}

/// Ensemble-mean P2, P4, η from time-averaged equal-time moments only.
pub fn stochastic_transport(
    params: &SystemParams,
    spec: &NoiseSpec,
    opts: &StochasticOptions,
) -> Result<(TransportSummary, TrajectoryEnsemble)> {
    let ens = run_ensemble(params, spec, opts, false, None)?;
    Ok((ens.summary(), ens))
}

pub fn save_checkpoint(path: &Path, fingerprint: u64, acc: &EnsembleAccumulator) -> Result<()> {
    let io = |e: std::io::Error| SimError::Numerical(format!("checkpoint write: {e}"));
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [fingerprint, acc.count, acc.excluded, acc.next_index, acc.n_tau() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |x: f64| buf.extend_from_slice(&x.to_le_bytes());
    put(acc.max_trace_error);
    for p in 0..2 {
        put(acc.nbar_sum[p]);
        put(acc.nbar_sq_sum[p]);
        put(acc.bmean_sum[p].re);
        put(acc.bmean_sum[p].im);
        for c in &acc.corr_sum[p] {
            put(c.re);
            put(c.im);
        }
        for x in acc.corr_sq_sum[p].iter().chain(&acc.psd_sum[p]).chain(&acc.psd_sq_sum[p]) {
            put(*x);
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&buf).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(u64, EnsembleAccumulator)> {
    let bad = |m: &str| SimError::invalid("checkpoint", m.to_string());
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SimError::Numerical(format!("checkpoint read: {e}")))?;
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad("unsupported checkpoint version"));
    }
    let mut pos = 8;
    let mut take8 = || -> Result<[u8; 8]> {
        let s = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated"))?;
        pos += 8;
        Ok(s.try_into().unwrap())
    };
    let mut u = [0u64; 5];
    for v in u.iter_mut() {
        *v = u64::from_le_bytes(take8()?);
    }
    let [fp, count, excluded, next_index, n_tau] = u;
    let mut acc = EnsembleAccumulator::new(n_tau as usize);
    acc.count = count;
    acc.excluded = excluded;
    acc.next_index = next_index;
    let mut get = || -> Result<f64> { Ok(f64::from_le_bytes(take8()?)) };
    acc.max_trace_error = get()?;
    for p in 0..2 {
        acc.nbar_sum[p] = get()?;
        acc.nbar_sq_sum[p] = get()?;
        acc.bmean_sum[p] = Complex64::new(get()?, get()?);
        for c in acc.corr_sum[p].iter_mut() {
            *c = Complex64::new(get()?, get()?);
        }
        for x in acc.corr_sq_sum[p].iter_mut() {
            *x = get()?;
        }
        for x in acc.psd_sum[p].iter_mut() {
            *x = get()?;
        }
        for x in acc.psd_sq_sum[p].iter_mut() {
            *x = get()?;
        }
    }
    Ok((fp, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    /// µs
    pub t: Vec<f64>,
    pub sigma_x: Vec<f64>,
    /// exp(−2π·2S(0)·t)
    pub markov: Vec<f64>,
    /// Markov rate 2S(0), MHz.
    pub gamma: f64,
    pub n_traj: usize,
}

impl DecayCurve {
    /// RMS of ⟨σx⟩ minus the Markov exponential.
    pub fn rms_deviation(&self) -> f64 {
        let n = self.t.len() as f64;
        (self.sigma_x.iter().zip(&self.markov).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
    }
}

/// ⟨σx(t)⟩ of a single qubit under H = ξ(t)σz with Lorentzian noise centred
/// at zero frequency, amplitude set so that 2S(0) = γ_target. Sampled on
/// [0, 2/(2πγ)].
pub fn single_qubit_dephasing_demo(gamma_target: f64, fwhm: f64, n_traj: usize, seed: u64) -> Result<DecayCurve> {
    if !(gamma_target >= 0.0) || !(fwhm > 0.0) {
        return Err(SimError::invalid("gamma_target", "need γ ≥ 0 and Δν > 0"));
    }
    if n_traj == 0 {
        return Err(SimError::invalid("n_traj", "must be at least 1"));
    }
    let amplitude = gamma_target / 2.0;
    let spec = NoiseSpec::lorentzian(amplitude, 0.0, fwhm);
    let xi0 = (amplitude * fwhm / 2.0).sqrt();
    let t_max = if gamma_target > 0.0 { 2.0 / (TWO_PI * gamma_target) } else { 1.0 };
    let dt = (0.1 / (TWO_PI * fwhm)).min(t_max / 2000.0);
    let steps = (t_max / dt).ceil() as usize;
    let points = 200usize.min(steps);
    let stride = steps / points;
    let runs: Vec<Vec<f64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(trajectory_seed(seed, i));
            let phi = wiener_phase(fwhm, dt, steps + 1, &mut rng);
            let mut out = Vec::with_capacity(points + 1);
            let mut acc = 0.0;
            let mut prev = xi0 * phi[0].cos();
            out.push(1.0);
            for k in 1..=steps {
                let x = xi0 * phi[k].cos();
                acc += 0.5 * (prev + x) * dt;
                prev = x;
                if k % stride == 0 && out.len() <= points {
                    out.push((2.0 * TWO_PI * acc).cos());
                }
            }
            out
        })
        .collect();
    let mut sigma_x = vec![0.0; points + 1];
    for r in &runs {
        add(&mut sigma_x, r);
    }
    for s in sigma_x.iter_mut() {
        *s /= n_traj as f64;
    }
    let gamma = dephasing_rate_markov(&spec).rate;
    let t: Vec<f64> = (0..=points).map(|j| (j * stride) as f64 * dt).collect();
    let markov = t.iter().map(|t| (-TWO_PI * gamma * t).exp()).collect();
    Ok(DecayCurve {
        t,
        sigma_x,
        markov,
        gamma,
        n_traj,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationOptions {
    pub dt: f64,
    pub resonator_dim: usize,
    /// Length of one averaging block, µs.
    pub block: f64,
    /// Relative change between consecutive blocks accepted as periodic.
    pub tol: f64,
    /// Give up after this long, µs.
    pub max_time: f64,
}

impl Default for ModulationOptions {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            resonator_dim: 3,
            block: 0.2,
            tol: 1e-4,
            max_time: 40.0,
        }
    }
}

/// Deterministic ξ(t) = A·cos(2πν_c t) per ν_c; powers from the periodic
/// steady state averaged over whole blocks.
pub fn coherent_modulation_scan(
    params: &SystemParams,
    amplitude: f64,
    nu_c: &[f64],
    opts: &ModulationOptions,
) -> Result<Vec<TransportSummary>> {
    if !(amplitude > 0.0) {
        return Err(SimError::invalid("amplitude", "must be positive"));
    }
    for &nu in nu_c {
        check_wiener_step(nu, 0.0, opts.dt / 2.0)?;
    }
    let sys = StochasticSystem::new(params, opts.resonator_dim)?;
    nu_c.par_iter()
        .map(|&nu| modulated_transport(&sys, amplitude, nu, opts))
        .collect()
}

pub fn modulated_transport(
    sys: &StochasticSystem,
    amplitude: f64,
    nu: f64,
    opts: &ModulationOptions,
) -> Result<TransportSummary> {
    let n = sys.n();
    // whole modulation periods per block, whole steps per period
    let (h, block_steps) = if nu > 0.0 {
        let per = 1.0 / nu;
        let m = (per / opts.dt).ceil();
        let periods = (opts.block / per).round().max(1.0);
        (per / m, (m * periods) as usize)
    } else {
        (opts.dt, (opts.block / opts.dt).round().max(1.0) as usize)
    };
    let mut v: Vec<Complex64> = sys.rho0.as_slice().to_vec();
    let mut rk = Rk4::new(n);
    let mut t = 0.0;
    let mut prev: Option<TransportSummary> = None;
    let mut trace_error = 0.0;
    let mut k = 0usize;
    loop {
        let mut nbar = [0.0; 2];
        let mut bm = [c0(); 2];
        for _ in 0..block_steps {
            let t0 = k as f64 * h;
            let mut f = |stage: usize, x: &[Complex64], out: &mut [Complex64]| {
                let ts = t0 + [0.0, 0.5, 0.5, 1.0][stage] * h;
                sys.rhs(amplitude * (TWO_PI * nu * ts).cos(), x, out)
            };
            rk.step(&mut f, &mut v, h);
            k += 1;
            for (p, pv) in sys.ports.iter().enumerate() {
                nbar[p] += dot(&pv.nt, &v).re;
                bm[p] += dot(&pv.bt, &v);
            }
        }
        check_state(sys, &v, &mut trace_error)?;
        t += block_steps as f64 * h;
        let m = block_steps as f64;
        let pw = |p: usize| TWO_PI * sys.ports[p].rate * (nbar[p] / m - (bm[p] / m).norm_sqr());
        let cur = TransportSummary::from_powers(pw(1), pw(0));
        if let Some(pr) = prev {
            let scale = cur.p4.abs().max(cur.p2.abs()).max(1e-12);
            if (cur.p4 - pr.p4).abs() <= opts.tol * scale && (cur.p2 - pr.p2).abs() <= opts.tol * scale {
                return Ok(cur);
            }
        }
        if t >= opts.max_time {
            return Err(SimError::Numerical(format!("no periodic steady state within {} µs", opts.max_time)));
        }
        prev = Some(cur);
    }
}

/// Δ_b,d1 and Δ_b,d2 (MHz): bright-state frequency minus the lower and upper
/// dark/q3 hybrid.
pub fn bright_dark_detunings(params: &SystemParams) -> (f64, f64) {
    let modes = params.single_excitation_modes();
    // sorted: resonator-like, d1, d2, bright
    let wb = modes[3].0;
    ((wb - modes[1].0) * 1000.0, (wb - modes[2].0) * 1000.0)
}
