use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::space::{
    bright_dark_operators, embed_qubit_operator, pauli, resonator_annihilation, HilbertSpace,
    OperatorMatrix,
};
use crate::sparse::CsrMatrix;
use crate::{CMat, Complex64, Result, SimError};

/// Circuit parameters. Frequencies in GHz, couplings and rates in MHz, all as ν = ω/2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    #[serde(rename = "omega1_GHz")]
    pub omega1: f64,
    #[serde(rename = "omega2_GHz")]
    pub omega2: f64,
    #[serde(rename = "omega3_GHz")]
    pub omega3: f64,
    #[serde(rename = "omega_r_GHz")]
    pub omega_r: f64,
    #[serde(rename = "omega_in_GHz")]
    pub omega_in: f64,
    #[serde(rename = "J12_MHz")]
    pub j12: f64,
    #[serde(rename = "J23_MHz")]
    pub j23: f64,
    #[serde(rename = "J13_MHz")]
    pub j13: f64,
    #[serde(rename = "g3_MHz")]
    pub g3: f64,
    #[serde(rename = "gamma_b_MHz")]
    pub gamma_b: f64,
    #[serde(rename = "gamma_d_MHz")]
    pub gamma_d: f64,
    #[serde(rename = "kappa_MHz")]
    pub kappa: f64,
    #[serde(rename = "gamma_phi_MHz")]
    pub gamma_phi: f64,
    pub n_th: f64,
    #[serde(rename = "Omega_R_MHz")]
    pub omega_rabi: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            omega1: 6.277,
            omega2: 6.277,
            omega3: 6.161,
            omega_r: 6.000,
            omega_in: 6.368,
            j12: 83.5,
            j23: 33.4,
            j13: 3.67,
            g3: 90.0,
            gamma_b: 12.4,
            gamma_d: 0.29,
            kappa: 110.0,
            gamma_phi: 0.0,
            n_th: 0.0,
            omega_rabi: 14.0,
        }
    }
}

impl SystemParams {
    /// Thermally excited network, drive off.
    pub fn incoherent() -> Self {
        Self {
            n_th: 0.3,
            omega_rabi: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("gamma_b_MHz", self.gamma_b),
            ("gamma_d_MHz", self.gamma_d),
            ("kappa_MHz", self.kappa),
            ("gamma_phi_MHz", self.gamma_phi),
            ("n_th", self.n_th),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::invalid(name, "must be finite and non-negative"));
            }
        }
        let all = [
            self.omega1, self.omega2, self.omega3, self.omega_r, self.omega_in, self.j12, self.j23,
            self.j13, self.g3, self.omega_rabi,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SimError::invalid("params", "all parameters must be finite"));
        }
        Ok(())
    }

    pub fn j_b3(&self) -> f64 {
        (self.j23 + self.j13) / std::f64::consts::SQRT_2
    }

    pub fn j_d3(&self) -> f64 {
        (self.j23 - self.j13) / std::f64::consts::SQRT_2
    }

    /// Bright-state frequency, GHz (exact when ω1 = ω2).
    pub fn omega_b(&self) -> f64 {
        self.omega1 + self.j12 / 1000.0
    }

    /// Dark-state frequency, GHz (exact when ω1 = ω2).
    pub fn omega_d(&self) -> f64 {
        self.omega1 - self.j12 / 1000.0
    }

    /// Bright-state dephasing γφ^b = γφ/2.
    pub fn gamma_phi_b(&self) -> f64 {
        self.gamma_phi / 2.0
    }

    pub fn with_gamma_phi_b(mut self, gamma_phi_b: f64) -> Self {
        self.gamma_phi = 2.0 * gamma_phi_b;
        self
    }

    /// Non-Hermitian effective Hamiltonian (MHz) on the single-excitation
    /// manifold, ordered {q1, q2, q3, resonator}.
    pub fn single_excitation_heff(&self) -> CMat {
        let c = |re: f64| Complex64::new(re, 0.0);
        let det = |w: f64| (w - self.omega_in) * 1000.0;
        let th = 1.0 + 2.0 * self.n_th;
        let (gb, gd) = (self.gamma_b * th / 2.0, self.gamma_d * th / 2.0);
        let mut h = CMat::zeros(4, 4);
        h[(0, 0)] = c(det(self.omega1));
        h[(1, 1)] = Complex64::new(det(self.omega2), -self.gamma_phi);
        h[(2, 2)] = c(det(self.omega3));
        h[(3, 3)] = Complex64::new(det(self.omega_r), -self.kappa / 2.0);
        // collective loss −i(γb/2)|b⟩⟨b| − i(γd/2)|d⟩⟨d| in the q1/q2 block
        let (s, d) = ((gb + gd) / 2.0, (gb - gd) / 2.0);
        h[(0, 0)] -= Complex64::new(0.0, s);
        h[(1, 1)] -= Complex64::new(0.0, s);
        h[(0, 1)] -= Complex64::new(0.0, d);
        h[(1, 0)] -= Complex64::new(0.0, d);
        for (i, j, v) in [(0, 1, self.j12), (1, 2, self.j23), (0, 2, self.j13), (2, 3, self.g3)] {
            h[(i, j)] += c(v);
            h[(j, i)] += c(v);
        }
        h
    }

    /// Single-excitation normal modes as (frequency GHz, amplitude decay rate MHz),
    /// sorted by frequency.
    pub fn single_excitation_modes(&self) -> Vec<(f64, f64)> {
        let ev = eigenvalues(&self.single_excitation_heff());
        let mut modes: Vec<(f64, f64)> = ev
            .iter()
            .map(|l| (self.omega_in + l.re / 1000.0, -l.im))
            .collect();
        modes.sort_by(|a, b| a.0.total_cmp(&b.0));
        modes
    }

    /// Longest amplitude decay time (µs) among the single-excitation modes and
    /// the bare dissipative channels.
    pub fn slowest_decay_time(&self) -> f64 {
        let min_rate = self
            .single_excitation_modes()
            .iter()
            .map(|m| m.1)
            .fold(f64::INFINITY, f64::min);
        let min_rate = min_rate.max(1e-3);
        1.0 / (2.0 * std::f64::consts::PI * min_rate)
    }
}

/// Eigenvalues of a general complex matrix via Schur decomposition.
pub fn eigenvalues(m: &CMat) -> Vec<Complex64> {
    let schur = nalgebra::Schur::new(m.clone());
    let (_, t) = schur.unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Generator of dρ/dt = 2π·L(ρ) acting on column-stacked ρ, in MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    hilbert_dim: usize,
    pub entries: CMat,
}

impl Superoperator {
    pub fn new(hilbert_dim: usize, entries: CMat) -> Result<Self> {
        if entries.nrows() != hilbert_dim * hilbert_dim || entries.ncols() != entries.nrows() {
            return Err(SimError::invalid("entries", "must be d^2 x d^2"));
        }
        Ok(Self {
            hilbert_dim,
            entries,
        })
    }

    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        unvec(&(&self.entries * vec(rho)), self.hilbert_dim)
    }

    /// Norm of the row functional Tr∘L; zero for a trace-preserving generator.
    pub fn trace_annihilation_error(&self) -> f64 {
        let d = self.hilbert_dim;
        let mut acc = 0.0;
        for col in 0..self.dim() {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..d {
                s += self.entries[(k * d + k, col)];
            }
            acc += s.norm_sqr();
        }
        acc.sqrt()
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_dense(&self.entries, 0.0)
    }
}

pub fn vec(rho: &CMat) -> DVector<Complex64> {
    DVector::from_column_slice(rho.as_slice())
}

pub fn unvec(v: &DVector<Complex64>, d: usize) -> CMat {
    CMat::from_column_slice(d, d, v.as_slice())
}

/// Superoperator of c·ρ·c† − ½{c†c, ρ}.
pub fn dissipator(c: &CMat) -> CMat {
    let d = c.nrows();
    let id = CMat::identity(d, d);
    let cdc = c.adjoint() * c;
    c.conjugate().kronecker(c) - id.kronecker(&cdc).scale(0.5) - cdc.transpose().kronecker(&id).scale(0.5)
}

/// −i[H, ·] plus Σ rate·D(c).
pub fn lindblad(h: &CMat, channels: &[(f64, &CMat)]) -> Result<Superoperator> {
    let d = h.nrows();
    let id = CMat::identity(d, d);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * Complex64::new(0.0, -1.0);
    for (rate, c) in channels {
        if *rate < 0.0 {
            return Err(SimError::invalid("rate", "dissipation rates must be non-negative"));
        }
        if *rate > 0.0 {
            l += dissipator(c).scale(*rate);
        }
    }
    Superoperator::new(d, l)
}

pub fn build_hamiltonian(params: &SystemParams, space: &HilbertSpace) -> Result<OperatorMatrix> {
    params.validate()?;
    if space.qubit_count() != 3 {
        return Err(SimError::invalid("qubit_count", "the network Hamiltonian needs 3 qubits"));
    }
    let e = |op: CMat, site| embed_qubit_operator(space, &op, site).map(|o| o.entries);
    let (z, p, m) = (pauli::sigma_z, pauli::sigma_plus, pauli::sigma_minus);
    let a = resonator_annihilation(space).entries;
    let ad = a.adjoint();
    let c = |x: f64| Complex64::new(x, 0.0);

    let mut h = CMat::zeros(space.dim(), space.dim());
    for (site, w) in [(1, params.omega1), (2, params.omega2), (3, params.omega3)] {
        h += e(z(), site)?.scale((w - params.omega_in) * 1000.0 / 2.0);
    }
    for (k, j, coupling) in [(1, 2, params.j12), (2, 3, params.j23), (1, 3, params.j13)] {
        let hop = e(p(), k)? * e(m(), j)?;
        h += (&hop + hop.adjoint()) * c(coupling);
    }
    h += (&ad * &a).scale((params.omega_r - params.omega_in) * 1000.0);
    let jc = &ad * e(m(), 3)?;
    h += (&jc + jc.adjoint()) * c(params.g3);
    let omega_r1 = params.omega_rabi / std::f64::consts::SQRT_2;
    h += (e(pauli::sigma_x(), 1)? + e(pauli::sigma_x(), 2)?).scale(omega_r1 / 2.0);
    // remove rounding asymmetry
    let herm = (&h + h.adjoint()).scale(0.5);
    Ok(OperatorMatrix::new(herm))
}

pub fn build_liouvillian(
    params: &SystemParams,
    h: &OperatorMatrix,
    space: &HilbertSpace,
) -> Result<Superoperator> {
    params.validate()?;
    if h.dim() != space.dim() {
        return Err(SimError::invalid("H", "dimension does not match the space"));
    }
    if h.hermiticity_error() > 1e-12 {
        return Err(SimError::invalid("H", "Hamiltonian is not Hermitian"));
    }
    let bd = bright_dark_operators(space)?;
    let z2 = embed_qubit_operator(space, &pauli::sigma_z(), 2)?.entries;
    let a = resonator_annihilation(space).entries;
    let n = params.n_th;
    let channels = [
        (params.gamma_b * (1.0 + n), &bd.sb_minus.entries),
        (params.gamma_b * n, &bd.sb_plus.entries),
        (params.gamma_d * (1.0 + n), &bd.sd_minus.entries),
        (params.gamma_d * n, &bd.sd_plus.entries),
        (params.gamma_phi / 2.0, &z2),
        (params.kappa, &a),
    ];
    lindblad(&h.entries, &channels)
}

/// Hamiltonian and Liouvillian in one call.
pub fn network_liouvillian(params: &SystemParams, space: &HilbertSpace) -> Result<Superoperator> {
    let h = build_hamiltonian(params, space)?;
    build_liouvillian(params, &h, space)
}
