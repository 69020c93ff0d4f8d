//! Four-level rate model |g⟩, |b⟩, |d⟩, |q3⟩ valid in the strong-dephasing limit.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::TransportSummary;
use crate::fit::purcell_rate;
use crate::model::SystemParams;
use crate::{Result, SimError};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// All entries in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub omega_rabi: f64,
    pub gamma_b: f64,
    pub gamma_pur: f64,
    pub gamma_phi_b: f64,
    pub j_d3: f64,
}

impl RateParams {
    /// Map the circuit onto the rate model; the resonator enters only through
    /// the Purcell rate of q3 at its detuning from the resonator.
    pub fn from_system(p: &SystemParams) -> Self {
        let delta = (p.omega3 - p.omega_r) * 1000.0;
        Self {
            omega_rabi: p.omega_rabi,
            gamma_b: p.gamma_b,
            gamma_pur: purcell_rate(p.g3, p.kappa, delta),
            gamma_phi_b: p.gamma_phi_b(),
            j_d3: p.j_d3().abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega_rabi", self.omega_rabi),
            ("gamma_b", self.gamma_b),
            ("gamma_pur", self.gamma_pur),
            ("gamma_phi_b", self.gamma_phi_b),
            ("j_d3", self.j_d3),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::invalid(name, "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn with_gamma_phi_b(mut self, x: f64) -> Self {
        self.gamma_phi_b = x;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p_g: f64,
    pub p_b: f64,
    pub p_d: f64,
    pub p_3: f64,
}

impl Populations {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_g, self.p_b, self.p_d, self.p_3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRates {
    pub k_gb: f64,
    pub k_bd: f64,
    pub k_d3: f64,
}

pub fn transfer_rates(rp: &RateParams) -> Result<TransferRates> {
    rp.validate()?;
    let den_gb = rp.gamma_b + 2.0 * rp.gamma_phi_b;
    let den_d3 = rp.gamma_pur + 2.0 * rp.gamma_phi_b;
    if den_gb == 0.0 {
        return Err(SimError::invalid("gamma_b", "k_gb denominator γb + 2γφb is zero"));
    }
    if den_d3 == 0.0 {
        return Err(SimError::invalid("gamma_pur", "k_d3 denominator γPur + 2γφb is zero"));
    }
    Ok(TransferRates {
        k_gb: rp.omega_rabi * rp.omega_rabi / den_gb,
        k_bd: rp.gamma_phi_b,
        k_d3: 4.0 * rp.j_d3 * rp.j_d3 / den_d3,
    })
}

/// Generator M with ṗ = M p, p = (g, b, d, 3).
pub fn rate_matrix(rp: &RateParams) -> Result<Matrix4<f64>> {
    let k = transfer_rates(rp)?;
    let (gb, gp) = (rp.gamma_b, rp.gamma_pur);
    Ok(Matrix4::new(
        -k.k_gb, k.k_gb + gb, 0.0, gp, //
        k.k_gb, -k.k_gb - k.k_bd - gb, k.k_bd, 0.0, //
        0.0, k.k_bd, -k.k_bd - k.k_d3, k.k_d3, //
        0.0, 0.0, k.k_d3, -k.k_d3 - gp,
    ))
}

pub fn steady_populations(rp: &RateParams) -> Result<Populations> {
    if rp.gamma_b == 0.0 && rp.gamma_pur == 0.0 {
        return Err(SimError::invalid("gamma_b", "need γb > 0 or γPur > 0"));
    }
    let m = rate_matrix(rp)?;
    let mut a = m;
    for c in 0..4 {
        a[(0, c)] = 1.0;
    }
    let b = Vector4::new(1.0, 0.0, 0.0, 0.0);
    let lu = a.lu();
    let mut p = lu.solve(&b).ok_or(SimError::Singular)?;
    let r = b - a * p;
    if let Some(dp) = lu.solve(&r) {
        p += dp;
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(SimError::Singular);
    }
    Ok(Populations {
        p_g: p[0],
        p_b: p[1],
        p_d: p[2],
        p_3: p[3],
    })
}

/// Residual of ṗ = M p at `pops`.
pub fn rate_residual(rp: &RateParams, pops: &Populations) -> Result<[f64; 4]> {
    let m = rate_matrix(rp)?;
    let r = m * Vector4::from(pops.as_array());
    Ok([r[0], r[1], r[2], r[3]])
}

/// Powers (photons/µs) out of the two ports implied by the populations.
pub fn rate_transport(rp: &RateParams) -> Result<TransportSummary> {
    let p = steady_populations(rp)?;
    let p4 = TWO_PI * rp.gamma_pur * p.p_3;
    let p2 = TWO_PI * rp.gamma_b / 2.0 * p.p_b;
    Ok(TransportSummary::from_powers(p4, p2))
}

/// η = γPur·p3 / (γPur·p3 + γb·pb).
pub fn rate_efficiency(rp: &RateParams) -> Result<f64> {
    let p = steady_populations(rp)?;
    let num = rp.gamma_pur * p.p_3;
    let den = num + rp.gamma_b * p.p_b;
    if den <= 0.0 {
        return Err(SimError::ZeroPower);
    }
    Ok(num / den)
}

/// Closed-form efficiency at the optimum γφb = √2·J_d3.
pub fn closed_form_max_efficiency(rp: &RateParams) -> f64 {
    let (gb, gp, j) = (rp.gamma_b, rp.gamma_pur, rp.j_d3);
    1.0 / (1.0 + std::f64::consts::SQRT_2 * gb / j + gb / gp + gb * gp / (4.0 * j * j))
}

/// Golden-section search for the γφb maximizing `rate_efficiency`.
pub fn efficiency_argmax(rp: &RateParams) -> Result<f64> {
    if !(rp.j_d3 > 0.0) {
        return Err(SimError::invalid("j_d3", "efficiency vanishes identically for J_d3 = 0"));
    }
    let f = |lx: f64| rate_efficiency(&rp.with_gamma_phi_b(lx.exp())).unwrap_or(0.0);
    let (mut a, mut b) = ((rp.j_d3 * 1e-4).ln(), (rp.j_d3 * 1e4).ln());
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    Ok((0.5 * (a + b)).exp())
}
