//! Spectral simulation of the cubic Schrödinger equation on the torus
//! `[−π, π]` driven by additive Q-Wiener noise.

pub mod analysis;
pub mod error;
pub mod exec;
pub mod integrators;
pub mod noise;
pub mod phi;
pub mod spectral;

pub use analysis::{
    compute_r_term, epsilon_scaling_study, linear_fit, local_error_decomposition_check, longterm_error_curve,
    moment_monitor, order_fit, rco_frequency_split, strong_error, EpsilonRow, EpsilonScaling, ErrorConfig,
    ErrorRecord, ErrorSeries, HorizonMode, LongtermSetup, MomentSeries, OrderFit, ReferenceDriver, ReferenceKind,
};
pub use error::{Error, Result};
pub use integrators::{
    exact_linear_step, g_term, h_term, integrate, sli1_step, snrli1_step, snrli1_twisted_step, SchemeKind,
    SchemeParams, StepKernel, Trajectory,
};
pub use noise::{BrownianPath, Eigenvalues, QWienerSpec};
pub use phi::phi1;
pub use spectral::{SobolevIndex, SpectralGrid, SpectralState};

pub use num_complex::Complex64;
