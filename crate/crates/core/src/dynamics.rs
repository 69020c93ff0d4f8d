use std::f64::consts::PI;

use nalgebra::DVector;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::model::{network_liouvillian, unvec, vec, Superoperator, SystemParams};
use crate::ode::{Dopri5, Dopri5Options};
use crate::space::{bright_dark_operators, resonator_annihilation, HilbertSpace, OperatorMatrix};
use crate::sparse::CsrMatrix;
use crate::{CMat, Complex64, Result, SimError};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub entries: CMat,
}

impl DensityMatrix {
    /// Checked constructor: Hermitian, unit trace, eigenvalues ≥ −1e−9.
    pub fn new(entries: CMat) -> Result<Self> {
        let rho = Self { entries };
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_unchecked(entries: CMat) -> Self {
        Self { entries }
    }

    pub fn pure(psi: &DVector<Complex64>) -> Self {
        let psi = psi.normalize();
        Self {
            entries: &psi * psi.adjoint(),
        }
    }

    pub fn basis_state(dim: usize, index: usize) -> Self {
        let mut m = CMat::zeros(dim, dim);
        m[(index, index)] = Complex64::new(1.0, 0.0);
        Self { entries: m }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn validate(&self) -> Result<()> {
        let herm = (&self.entries - self.entries.adjoint()).norm();
        if herm > 1e-10 * self.entries.norm().max(1.0) {
            return Err(SimError::invalid("rho", "not Hermitian"));
        }
        if (self.trace() - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(SimError::invalid("rho", "trace differs from 1"));
        }
        if self.min_eigenvalue() < -1e-9 {
            return Err(SimError::invalid("rho", "negative eigenvalue"));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.entries + self.entries.adjoint()).scale(0.5);
        h.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Tr(op·ρ)
    pub fn expect(&self, op: &CMat) -> Complex64 {
        trace_product(op, &self.entries)
    }

    /// Uhlmann fidelity (Tr √(√ρ σ √ρ))².
    pub fn fidelity(&self, other: &DensityMatrix) -> f64 {
        let s = psd_sqrt(&self.entries);
        let m = &s * &other.entries * &s;
        let ev = ((&m + m.adjoint()).scale(0.5)).symmetric_eigen().eigenvalues;
        let t: f64 = ev.iter().map(|x| x.max(0.0).sqrt()).sum();
        t * t
    }
}

fn psd_sqrt(m: &CMat) -> CMat {
    let eig = ((m + m.adjoint()).scale(0.5)).symmetric_eigen();
    let d = CMat::from_diagonal(&eig.eigenvalues.map(|x| Complex64::new(x.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Tr(A·X) without forming the product.
pub fn trace_product(a: &CMat, x: &CMat) -> Complex64 {
    let d = a.nrows();
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for k in 0..d {
            s += a[(i, k)] * x[(k, i)];
        }
    }
    s
}

/// Where a spectrum was emitted; sets the scaling rate and the operator pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Port {
    Waveguide2,
    Resonator4,
    NoiseInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// GHz, uniform and strictly increasing.
    pub freq_grid: Vec<f64>,
    /// photons·s⁻¹·Hz⁻¹ for emission ports.
    pub psd: Vec<f64>,
    pub port: Port,
    pub rayleigh_removed: bool,
}

impl SpectrumResult {
    pub fn df_mhz(&self) -> f64 {
        if self.freq_grid.len() < 2 {
            return 0.0;
        }
        (self.freq_grid[1] - self.freq_grid[0]) * 1000.0
    }

    /// Restrict to [lo, hi] GHz.
    pub fn crop(&self, lo: f64, hi: f64) -> SpectrumResult {
        let (f, p): (Vec<f64>, Vec<f64>) = self
            .freq_grid
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(f, p)| (*f, *p))
            .unzip();
        SpectrumResult {
            freq_grid: f,
            psd: p,
            port: self.port,
            rayleigh_removed: self.rayleigh_removed,
        }
    }

    /// Frequencies (GHz) of strict local maxima above `rel` × global maximum.
    pub fn local_maxima(&self, rel: f64) -> Vec<f64> {
        let max = self.psd.iter().copied().fold(0.0, f64::max);
        let p = &self.psd;
        (1..p.len().saturating_sub(1))
            .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1] && p[i] > rel * max)
            .map(|i| self.freq_grid[i])
            .collect()
    }

    pub fn min_psd(&self) -> f64 {
        self.psd.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation of the PSD at `f` GHz.
    pub fn at(&self, f: f64) -> f64 {
        let g = &self.freq_grid;
        if g.is_empty() || f < g[0] || f > g[g.len() - 1] {
            return 0.0;
        }
        let k = g.partition_point(|x| *x <= f).clamp(1, g.len() - 1);
        let w = (f - g[k - 1]) / (g[k] - g[k - 1]);
        self.psd[k - 1] * (1.0 - w) + self.psd[k] * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportSummary {
    /// photons/µs
    pub p2: f64,
    /// photons/µs
    pub p4: f64,
    pub eta: f64,
}

impl TransportSummary {
    /// η is reported as 0 when no power is emitted at all.
    pub fn from_powers(p4: f64, p2: f64) -> Self {
        let p4c = p4.max(0.0);
        let p2c = p2.max(0.0);
        let eta = transfer_efficiency(p4c, p2c).unwrap_or(0.0);
        Self { p2, p4, eta }
    }
}

pub fn transfer_efficiency(p4: f64, p2: f64) -> Result<f64> {
    if !(p4 >= 0.0) || !(p2 >= 0.0) {
        return Err(SimError::invalid("power", "powers must be non-negative"));
    }
    if p4 + 2.0 * p2 == 0.0 {
        return Err(SimError::ZeroPower);
    }
    Ok(p4 / (p4 + 2.0 * p2))
}

/// Unique kernel of L with unit trace.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    let d = l.hilbert_dim();
    let n = l.dim();
    let mut m = l.entries.clone();
    for c in 0..n {
        m[(0, c)] = Complex64::new(0.0, 0.0);
    }
    for k in 0..d {
        m[(0, k * d + k)] = Complex64::new(1.0, 0.0);
    }
    let mut b = DVector::zeros(n);
    b[0] = Complex64::new(1.0, 0.0);

    let lu = m.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };

    let x = if cond < 1e12 {
        lu.solve(&b).map(|mut x| {
            for _ in 0..2 {
                let r = &b - &m * &x;
                if let Some(dx) = lu.solve(&r) {
                    x += dx;
                }
            }
            x
        })
    } else {
        None
    };
    let x = match x {
        Some(x) => x,
        None => kernel_by_svd(l)?,
    };
    let mut rho = unvec(&x, d);
    rho = (&rho + rho.adjoint()).scale(0.5);
    let tr = rho.trace();
    rho /= tr;
    Ok(DensityMatrix::from_unchecked(rho))
}

fn kernel_by_svd(l: &Superoperator) -> Result<DVector<Complex64>> {
    let svd = l.entries.clone().svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tiny: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= 1e-10 * smax).collect();
    if tiny.len() != 1 {
        return Err(if tiny.is_empty() {
            SimError::Singular
        } else {
            SimError::DegenerateKernel { dim: tiny.len() }
        });
    }
    let v_t = svd.v_t.ok_or(SimError::Singular)?;
    let row = v_t.row(tiny[0]);
    Ok(DVector::from_iterator(row.len(), row.iter().map(|z| z.conj())))
}

/// Adaptive propagation of a vectorized operator under dX/dt = 2π·L X.
pub struct Propagator {
    csr: CsrMatrix,
    solver: Dopri5,
}

impl Propagator {
    pub fn new(l: &Superoperator, opts: Dopri5Options) -> Self {
        let csr = l.to_csr();
        let n = csr.nrows();
        Self {
            csr,
            solver: Dopri5::new(n, opts),
        }
    }

    pub fn advance(&mut self, v: &mut [Complex64], t0: f64, t1: f64) -> Result<()> {
        let csr = &self.csr;
        let mut f = |_t: f64, x: &[Complex64], out: &mut [Complex64]| csr.matvec_scaled(TWO_PI, x, out);
        self.solver.advance(&mut f, t0, v, t1)
    }
}

/// ρ(t) on `t_grid` (µs), starting from ρ0 at t = 0.
pub fn evolve(rho0: &DensityMatrix, l: &Superoperator, t_grid: &[f64]) -> Result<Vec<DensityMatrix>> {
    if rho0.dim() != l.hilbert_dim() {
        return Err(SimError::invalid("rho0", "dimension does not match the Liouvillian"));
    }
    if t_grid.first().is_some_and(|t| *t < 0.0) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::invalid("t_grid", "must be increasing from 0"));
    }
    let d = rho0.dim();
    let mut prop = Propagator::new(l, Dopri5Options::default());
    let mut v: Vec<Complex64> = rho0.entries.as_slice().to_vec();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &tk in t_grid {
        prop.advance(&mut v, t, tk)?;
        t = tk;
        out.push(DensityMatrix::from_unchecked(CMat::from_column_slice(d, d, &v)));
    }
    Ok(out)
}

/// ⟨A(τ)B(0)⟩ in the state `rho_ss` by quantum regression.
pub fn two_time_correlation(
    l: &Superoperator,
    rho_ss: &DensityMatrix,
    a: &OperatorMatrix,
    b: &OperatorMatrix,
    tau_grid: &[f64],
) -> Result<Vec<Complex64>> {
    let x0 = DensityMatrix::from_unchecked(&b.entries * &rho_ss.entries);
    let xs = evolve(&x0, l, tau_grid)?;
    Ok(xs.iter().map(|x| trace_product(&a.entries, &x.entries)).collect())
}

/// Correlation ⟨A(τ)B(0)⟩ sampled on τ = k·Δτ, k ≥ 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub tau_us: Vec<f64>,
    pub values: Vec<Complex64>,
    /// ⟨A⟩⟨B⟩, the coherent (Rayleigh) part.
    pub mean_product: Complex64,
    /// Rotating-frame frequency, GHz.
    pub frame_ghz: f64,
}

/// Lag window applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagWindow {
    None,
    /// Blackman taper with w(0) = 1 and w(τ_max) = 0.
    Blackman,
}

fn check_uniform(tau: &[f64]) -> Result<f64> {
    if tau.len() < 2 {
        return Err(SimError::invalid("tau_grid", "need at least two points"));
    }
    if tau[0].abs() > 1e-15 {
        return Err(SimError::invalid("tau_grid", "must start at 0"));
    }
    let dt = tau[1] - tau[0];
    let ok = dt > 0.0
        && tau
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(w[1].abs() * 1e-6));
    if !ok {
        return Err(SimError::invalid("tau_grid", "must be uniform"));
    }
    Ok(dt)
}

/// Two-sided spectrum `rate`·∫C(τ)e^{−2πiντ}dτ with C(−τ) = C(τ)*.
/// `rate` is in MHz (ν-units); output is photons·s⁻¹·Hz⁻¹ on an absolute GHz grid.
pub fn emission_spectrum(corr: &Correlation, rate: f64, port: Port, subtract_coherent: bool) -> Result<SpectrumResult> {
    emission_spectrum_windowed(corr, rate, port, subtract_coherent, LagWindow::None)
}

pub fn emission_spectrum_windowed(
    corr: &Correlation,
    rate: f64,
    port: Port,
    subtract_coherent: bool,
    window: LagWindow,
) -> Result<SpectrumResult> {
    if corr.values.len() != corr.tau_us.len() {
        return Err(SimError::invalid("corr", "length differs from tau grid"));
    }
    let dt = check_uniform(&corr.tau_us)?;
    let n = corr.values.len();
    let m = 2 * n;
    let shift = if subtract_coherent { corr.mean_product } else { Complex64::new(0.0, 0.0) };
    let w = |k: usize| match window {
        LagWindow::None => 1.0,
        LagWindow::Blackman => {
            let x = PI * k as f64 / n as f64;
            0.42 + 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        }
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        let c = (corr.values[k] - shift) * w(k);
        buf[k] = c;
        if k > 0 {
            buf[m - k] = c.conj();
        }
    }
    buf[0] = Complex64::new(buf[0].re, 0.0);
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let scale = TWO_PI * rate * dt;
    let df = 1.0 / (m as f64 * dt);
    let mut freq = Vec::with_capacity(m);
    let mut psd = Vec::with_capacity(m);
    for j in 0..m {
        let k = (j + n) % m;
        let off = (j as f64 - n as f64) * df;
        freq.push(corr.frame_ghz + off / 1000.0);
        psd.push(buf[k].re * scale);
    }
    Ok(SpectrumResult {
        freq_grid: freq,
        psd,
        port,
        rayleigh_removed: subtract_coherent,
    })
}

/// Trapezoidal ∫psd dν in photons/µs, optionally leaving out [lo, hi] GHz.
pub fn integrated_power(spec: &SpectrumResult, exclude: Option<(f64, f64)>) -> Result<f64> {
    let f = &spec.freq_grid;
    if f.len() != spec.psd.len() {
        return Err(SimError::invalid("spectrum", "grid and psd lengths differ"));
    }
    if f.len() < 2 {
        return Ok(0.0);
    }
    if let Some((lo, hi)) = exclude {
        if !(lo < hi) || lo < f[0] || hi > f[f.len() - 1] {
            return Err(SimError::invalid("exclude", "window must lie inside the frequency grid"));
        }
    }
    let mut total = 0.0;
    for i in 0..f.len() - 1 {
        let (x0, x1, y0, y1) = (f[i], f[i + 1], spec.psd[i], spec.psd[i + 1]);
        let seg = |a: f64, b: f64| {
            if b <= a {
                return 0.0;
            }
            let ya = y0 + (y1 - y0) * (a - x0) / (x1 - x0);
            let yb = y0 + (y1 - y0) * (b - x0) / (x1 - x0);
            0.5 * (ya + yb) * (b - a)
        };
        total += match exclude {
            None => seg(x0, x1),
            Some((lo, hi)) => seg(x0, x1.min(lo)) + seg(x0.max(hi), x1),
        };
    }
    Ok(total * 1000.0)
}

/// Operator pair and emission rate (MHz) for a port.
pub fn port_operators(params: &SystemParams, space: &HilbertSpace, port: Port) -> Result<(OperatorMatrix, OperatorMatrix, f64)> {
    match port {
        Port::Resonator4 => {
            let a = resonator_annihilation(space);
            Ok((a.dagger(), a, params.kappa))
        }
        Port::Waveguide2 => {
            let bd = bright_dark_operators(space)?;
            Ok((bd.sb_plus, bd.sb_minus, params.gamma_b / 2.0))
        }
        Port::NoiseInput => Err(SimError::invalid("port", "no emission operator for the noise input")),
    }
}

/// Power leaving a port from equal-time moments; equals the integral of the
/// port spectrum.
pub fn port_power(params: &SystemParams, space: &HilbertSpace, rho: &DensityMatrix, port: Port, subtract_coherent: bool) -> Result<f64> {
    let (a, b, rate) = port_operators(params, space, port)?;
    let n = rho.expect(&(&a.entries * &b.entries)).re;
    let coh = if subtract_coherent { (rho.expect(&a.entries) * rho.expect(&b.entries)).re } else { 0.0 };
    Ok(TWO_PI * rate * (n - coh))
}

/// Steady-state P2, P4, η with the Rayleigh part removed.
pub fn steady_transport(params: &SystemParams, space: &HilbertSpace) -> Result<(DensityMatrix, TransportSummary)> {
    let l = network_liouvillian(params, space)?;
    let rho = steady_state(&l)?;
    let p4 = port_power(params, space, &rho, Port::Resonator4, true)?;
    let p2 = port_power(params, space, &rho, Port::Waveguide2, true)?;
    Ok((rho, TransportSummary::from_powers(p4, p2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationGrid {
    /// Lag step, µs.
    pub dtau: f64,
    pub min_points: usize,
    pub max_points: usize,
    /// Span in units of the slowest decay time.
    pub decay_multiple: f64,
    /// Relative size of the correlation tail at which the span stops growing.
    pub tail_tol: f64,
}

impl Default for CorrelationGrid {
    fn default() -> Self {
        Self {
            dtau: 1e-3,
            min_points: 4096,
            max_points: 1 << 18,
            decay_multiple: 8.0,
            tail_tol: 1e-10,
        }
    }
}

/// Port correlation with a span grown until the subtracted tail has decayed.
pub fn port_correlation(
    params: &SystemParams,
    space: &HilbertSpace,
    l: &Superoperator,
    rho_ss: &DensityMatrix,
    port: Port,
    grid: &CorrelationGrid,
) -> Result<Correlation> {
    let (a, b, _) = port_operators(params, space, port)?;
    let mean_product = rho_ss.expect(&a.entries) * rho_ss.expect(&b.entries);
    let want = (grid.decay_multiple * params.slowest_decay_time() / grid.dtau).ceil() as usize;
    let mut target = want.max(grid.min_points).next_power_of_two().min(grid.max_points);

    let at = a.entries.transpose();
    let at = vec(&at);
    let mut prop = Propagator::new(l, Dopri5Options::default());
    let mut v: Vec<Complex64> = vec(&(&b.entries * &rho_ss.entries)).as_slice().to_vec();
    let dot = |v: &[Complex64]| -> Complex64 { at.iter().zip(v).map(|(x, y)| x * y).sum() };
    let mut values = vec![dot(&v)];
    let c0 = (values[0] - mean_product).norm().max(1e-300);
    loop {
        while values.len() < target {
            let k = values.len();
            prop.advance(&mut v, (k - 1) as f64 * grid.dtau, k as f64 * grid.dtau)?;
            values.push(dot(&v));
        }
        let tail = values[target - target / 8..]
            .iter()
            .map(|c| (c - mean_product).norm())
            .fold(0.0, f64::max);
        if tail <= grid.tail_tol * c0 || target >= grid.max_points {
            break;
        }
        target *= 2;
    }
    Ok(Correlation {
        tau_us: (0..values.len()).map(|k| k as f64 * grid.dtau).collect(),
        values,
        mean_product,
        frame_ghz: params.omega_in,
    })
}

/// Steady-state emission spectrum of one port of the network.
pub fn port_spectrum(
    params: &SystemParams,
    space: &HilbertSpace,
    port: Port,
    subtract_coherent: bool,
    grid: &CorrelationGrid,
) -> Result<SpectrumResult> {
    let l = network_liouvillian(params, space)?;
    let rho = steady_state(&l)?;
    let corr = port_correlation(params, space, &l, &rho, port, grid)?;
    let (_, _, rate) = port_operators(params, space, port)?;
    emission_spectrum(&corr, rate, port, subtract_coherent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lindblad;
    use crate::space::pauli;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn two_level(delta: f64, omega: f64, gamma: f64, gphi: f64, nth: f64) -> Superoperator {
        let h = pauli::sigma_z().scale(delta / 2.0) + pauli::sigma_x().scale(omega / 2.0);
        let (sm, sp, sz) = (pauli::sigma_minus(), pauli::sigma_plus(), pauli::sigma_z());
        lindblad(&h, &[(gamma * (1.0 + nth), &sm), (gamma * nth, &sp), (gphi / 2.0, &sz)]).unwrap()
    }

    #[test]
    fn undriven_qubit_relaxes_to_ground() {
        let rho = steady_state(&two_level(3.0, 0.0, 2.0, 0.5, 0.0)).unwrap();
        assert!((rho.entries[(0, 0)].re - 1.0).abs() < 1e-12);
        rho.validate().unwrap();
    }

    #[test]
    fn driven_two_level_matches_bloch_solution() {
        for (om, g) in [(1.0, 2.0), (5.0, 1.0), (0.3, 7.0)] {
            let l = two_level(0.0, om, g, 0.0, 0.0);
            let rho = steady_state(&l).unwrap();
            let s = om * om / (g * g);
            let want = s / (1.0 + 2.0 * s);
            assert!((rho.entries[(1, 1)].re - want).abs() < 1e-12);
            assert!(l.apply(&rho.entries).norm() < 1e-10);
        }
    }

    #[test]
    fn thermal_detailed_balance() {
        let rho = steady_state(&two_level(0.0, 0.0, 1.3, 0.0, 0.3)).unwrap();
        let ratio = rho.entries[(1, 1)].re / rho.entries[(0, 0)].re;
        assert!((ratio - 0.3 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn degenerate_kernel_is_reported() {
        // no dissipation at all: every diagonal state is stationary
        let l = lindblad(&pauli::sigma_z(), &[]).unwrap();
        match steady_state(&l) {
            Err(SimError::DegenerateKernel { dim }) => assert_eq!(dim, 2),
            other => panic!("expected degenerate kernel, got {other:?}"),
        }
    }

    #[test]
    fn network_ground_state_without_drive() {
        let p = SystemParams { omega_rabi: 0.0, ..SystemParams::default() };
        let s = HilbertSpace::network(3).unwrap();
        let rho = steady_state(&network_liouvillian(&p, &s).unwrap()).unwrap();
        let g = DensityMatrix::basis_state(24, 0);
        assert!(rho.fidelity(&g) > 1.0 - 1e-8);
    }

    #[test]
    fn frozen_and_decaying_evolution() {
        let rho0 = DensityMatrix::basis_state(2, 1);
        let zero = Superoperator::new(2, CMat::zeros(4, 4)).unwrap();
        let grid = [0.0, 0.5, 1.0];
        for r in evolve(&rho0, &zero, &grid).unwrap() {
            assert_eq!(r.entries, rho0.entries);
        }
        let g = 1.7;
        let l = two_level(0.0, 0.0, g, 0.0, 0.0);
        let grid: Vec<f64> = (0..20).map(|k| k as f64 * 0.05).collect();
        for (t, r) in grid.iter().zip(evolve(&rho0, &l, &grid).unwrap()) {
            assert!((r.entries[(1, 1)].re - (-TWO_PI * g * t).exp()).abs() < 1e-8);
            assert!((r.trace().re - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn long_evolution_reaches_steady_state() {
        let p = SystemParams { gamma_phi: 40.0, ..SystemParams::default() };
        let s = HilbertSpace::network(2).unwrap();
        let l = network_liouvillian(&p, &s).unwrap();
        let ss = steady_state(&l).unwrap();
        let rho0 = DensityMatrix::basis_state(s.dim(), 0);
        let out = evolve(&rho0, &l, &[3.0]).unwrap();
        assert!(out[0].fidelity(&ss) > 1.0 - 1e-6);
        assert!(out[0].min_eigenvalue() > -1e-9);
    }

    #[test]
    fn identity_and_empty_correlations() {
        let l = two_level(0.0, 0.0, 1.0, 0.0, 0.0);
        let rho = steady_state(&l).unwrap();
        let id = OperatorMatrix::new(CMat::identity(2, 2));
        let grid = [0.0, 0.1, 0.2];
        for v in two_time_correlation(&l, &rho, &id, &id, &grid).unwrap() {
            assert!((v - c(1.0)).norm() < 1e-12);
        }
        let sp = OperatorMatrix::new(pauli::sigma_plus());
        let sm = OperatorMatrix::new(pauli::sigma_minus());
        for v in two_time_correlation(&l, &rho, &sp, &sm, &grid).unwrap() {
            assert!(v.norm() < 1e-14);
        }
    }

    #[test]
    fn thermal_correlation_decay_rate() {
        let (g, gphi, n) = (1.0, 0.6, 0.3);
        let l = two_level(2.0, 0.0, g, gphi, n);
        let rho = steady_state(&l).unwrap();
        let sp = OperatorMatrix::new(pauli::sigma_plus());
        let sm = OperatorMatrix::new(pauli::sigma_minus());
        let grid: Vec<f64> = (0..40).map(|k| k as f64 * 0.01).collect();
        let vals = two_time_correlation(&l, &rho, &sp, &sm, &grid).unwrap();
        let a = g * (1.0 + 2.0 * n) / 2.0 + gphi;
        let pe = rho.entries[(1, 1)].re;
        for (t, v) in grid.iter().zip(vals) {
            let want = Complex64::new(0.0, TWO_PI * 2.0 * t).exp() * pe * (-TWO_PI * a * t).exp();
            assert!((v - want).norm() < 1e-9, "{v} vs {want}");
        }
    }

    #[test]
    fn weak_drive_envelope_set_by_coherence_decay() {
        let (g, gphi) = (1.0, 2.0);
        let l = two_level(0.0, 0.05, g, gphi, 0.0);
        let rho = steady_state(&l).unwrap();
        let sp = OperatorMatrix::new(pauli::sigma_plus());
        let sm = OperatorMatrix::new(pauli::sigma_minus());
        let mean = rho.expect(&sp.entries) * rho.expect(&sm.entries);
        let grid = [0.0, 0.05, 0.1];
        let v = two_time_correlation(&l, &rho, &sp, &sm, &grid).unwrap();
        let rate = ((v[1] - mean).norm() / (v[2] - mean).norm()).ln() / (0.05 * TWO_PI);
        assert!((rate - (g / 2.0 + gphi)).abs() / (g / 2.0 + gphi) < 0.05, "rate {rate}");
    }

    fn corr_from(l: &Superoperator, rho: &DensityMatrix, a: &CMat, b: &CMat, n: usize, dt: f64, frame: f64) -> Correlation {
        let tau: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let values = two_time_correlation(l, rho, &OperatorMatrix::new(a.clone()), &OperatorMatrix::new(b.clone()), &tau).unwrap();
        Correlation { tau_us: tau, values, mean_product: rho.expect(a) * rho.expect(b), frame_ghz: frame }
    }

    #[test]
    fn zero_correlation_zero_spectrum() {
        let corr = Correlation { tau_us: (0..16).map(|k| k as f64).collect(), values: vec![c(0.0); 16], mean_product: c(0.0), frame_ghz: 6.0 };
        let s = emission_spectrum(&corr, 1.0, Port::Resonator4, true).unwrap();
        assert!(s.psd.iter().all(|x| *x == 0.0));
        let mut bad = corr.clone();
        bad.tau_us[3] = 2.5;
        assert!(emission_spectrum(&bad, 1.0, Port::Resonator4, true).is_err());
    }

    #[test]
    fn thermal_fluorescence_is_lorentzian_at_qubit_frequency() {
        let (g, n, delta) = (2.0, 0.05, 12.0);
        let l = two_level(delta, 0.0, g, 0.0, n);
        let rho = steady_state(&l).unwrap();
        let corr = corr_from(&l, &rho, &pauli::sigma_plus(), &pauli::sigma_minus(), 8192, 2e-3, 6.0);
        let s = emission_spectrum(&corr, g, Port::Waveguide2, true).unwrap();
        let pe = rho.entries[(1, 1)].re;
        let a = g * (1.0 + 2.0 * n) / 2.0;
        // analytic: rate·pe·2a/(a² + ν²)/(2π) in ν-units
        for f in [-30.0, -5.0, 0.0, 1.0, 3.0, 40.0] {
            let nu = delta + f;
            let x = 6.0 + nu / 1000.0;
            let want = TWO_PI * g * pe * 2.0 * a / (TWO_PI * (a * a + f * f));
            let got = s.at(x);
            assert!((got - want).abs() < 0.02 * want.max(1e-3 * s.psd.iter().copied().fold(0.0, f64::max)), "f={f} {got} {want}");
        }
        let peak = s.freq_grid[s.psd.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        assert!(((peak - 6.0) * 1000.0 - delta).abs() < 0.1);
    }

    #[test]
    fn parseval_and_rectangle_power() {
        let l = two_level(3.0, 4.0, 1.0, 0.5, 0.0);
        let rho = steady_state(&l).unwrap();
        let corr = corr_from(&l, &rho, &pauli::sigma_plus(), &pauli::sigma_minus(), 4096, 2e-3, 6.0);
        let s = emission_spectrum(&corr, 1.0, Port::Waveguide2, true).unwrap();
        let sum: f64 = s.psd.iter().sum::<f64>() * s.df_mhz();
        let want = TWO_PI * (corr.values[0] - corr.mean_product).re;
        assert!((sum - want).abs() < 1e-6 * want);
        assert!(s.min_psd() > -1e-9);

        let rect = SpectrumResult { freq_grid: vec![6.0, 6.0005, 6.001], psd: vec![1.0; 3], port: Port::Resonator4, rayleigh_removed: true };
        assert!((integrated_power(&rect, None).unwrap() - 1.0).abs() < 1e-9);
        assert!((integrated_power(&rect, Some((6.00025, 6.00075))).unwrap() - 0.5).abs() < 1e-9);
        assert!(integrated_power(&rect, Some((5.0, 6.0005))).is_err());
    }

    #[test]
    fn efficiency_edges() {
        assert_eq!(transfer_efficiency(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(transfer_efficiency(2.0, 0.0).unwrap(), 1.0);
        assert!((transfer_efficiency(1.28, 1.0).unwrap() - 0.390).abs() < 1e-3);
        assert_eq!(transfer_efficiency(0.0, 0.0), Err(SimError::ZeroPower));
    }

    proptest! {
        #[test]
        fn efficiency_scale_invariant(p4 in 0.0f64..10.0, p2 in 0.01f64..10.0, k in 0.01f64..100.0) {
            let a = transfer_efficiency(p4, p2).unwrap();
            let b = transfer_efficiency(k * p4, k * p2).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn subtracted_spectra_are_positive(om in 0.1f64..8.0, delta in -5.0f64..5.0, gphi in 0.0f64..3.0) {
            let l = two_level(delta, om, 1.0, gphi, 0.0);
            let rho = steady_state(&l).unwrap();
            let corr = corr_from(&l, &rho, &pauli::sigma_plus(), &pauli::sigma_minus(), 2048, 4e-3, 6.0);
            let s = emission_spectrum(&corr, 1.0, Port::Waveguide2, true).unwrap();
            prop_assert!(s.min_psd() > -1e-9, "min {}", s.min_psd());
        }
    }
}
