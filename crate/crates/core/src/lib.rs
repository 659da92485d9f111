//! Value of information for Bayesian evidence synthesis.
//!
//! Expected value of perfect, partial perfect and sample information (EVPI,
//! EVPPI, EVSI) and the expected net benefit of sampling are estimated from
//! Monte Carlo draws by nonparametric regression of outputs on the quantities
//! that would be learnt. The crate also contains a complete case study: an
//! HIV prevalence synthesis model with its own adaptive Metropolis sampler and
//! simulators for two future-survey designs.
//!
//! Module map:
//!
//! * [`samples`]: draw tables, summaries, CSV I/O
//! * [`hiv`]: the prevalence model (priors, likelihood, derived outputs)
//! * [`sampler`]: adaptive random-walk Metropolis and convergence diagnostics
//! * [`regress`]: MARS and polynomial regression backends
//! * [`voi`]: loss functionals and the VoI estimators
//! * [`designs`]: posterior-predictive simulation of sufficient statistics
//! * [`plot`]: SVG heatmaps and line charts
//! * [`cli`]: the batch pipeline behind the `voi` binary

pub mod cli;
pub mod designs;
pub mod error;
pub mod hiv;
pub mod plot;
pub mod regress;
pub mod sampler;
pub mod samples;
pub mod stats;
pub mod voi;

pub use error::{Result, VoiError};
pub use samples::{SampleTable, SummaryRow, TableMeta};
