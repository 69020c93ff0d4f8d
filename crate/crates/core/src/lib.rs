//! Open-system simulator for noise-assisted excitation transport through a
//! three-qubit / resonator network.
//!
//! Conventions used everywhere in the crate:
//!
//! * Frequencies and rates are stored as ν = ω/2π. Couplings and rates are in
//!   MHz, absolute transition frequencies in GHz, time in µs. The factor 2π is
//!   applied once, inside time evolution and Fourier kernels.
//! * Qubit basis index 0 is |g⟩, index 1 is |e⟩; σz = diag(−1, +1).
//! * Tensor order is q1 ⊗ q2 ⊗ q3 ⊗ resonator, q1 most significant.
//! * Density matrices are vectorized by stacking columns, so element (i, j)
//!   lives at index `j * d + i` and vec(AρB) = (Bᵀ ⊗ A) vec(ρ).

pub mod dynamics;
pub mod error;
pub mod fit;
pub mod model;
pub mod noise;
pub mod ode;
pub mod rates;
pub mod space;
pub mod sparse;
pub mod stochastic;

pub use error::{Result, SimError};

pub use nalgebra::DMatrix;
pub use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub use dynamics::{
    emission_spectrum, evolve, integrated_power, steady_state, transfer_efficiency,
    two_time_correlation, Correlation, DensityMatrix, Port, SpectrumResult, TransportSummary,
};
pub use rates::{Populations, RateParams};
pub use noise::{NoiseKind, NoiseSeries, NoiseSpec};
pub use stochastic::{run_stochastic_spectra, StochasticOptions, TrajectoryEnsemble};
pub use model::{build_hamiltonian, build_liouvillian, SystemParams, Superoperator};


pub use space::{BasisTag, HilbertSpace, OperatorMatrix};
