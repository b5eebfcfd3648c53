//! Block-based statistical static timing analysis.
//!
//! Gate delays are modelled as η = max(X1, X2) + X0 with Gaussian arrivals
//! and operation time. Non-Gaussian node delays are carried as Gaussian
//! mixtures on a fixed comb whose weights are fitted by linear programming.

pub mod cli;
pub mod distributions;
pub mod error;
pub mod gate_delay;
pub mod gmm;
pub mod monte_carlo;
pub mod quadrature;
pub mod report;
pub mod special;
pub mod timing_graph;

pub use distributions::{CorrelatedPair, GaussianParams};
pub use error::{Result, SstaError};
pub use gate_delay::{GateInputs, GateKernel, GateMoments, PdfForm};
pub use gmm::{CombConfig, GaussianComponent, GaussianMixture, Moments};
pub use monte_carlo::{McConfig, McResult};
pub use report::RunReport;
