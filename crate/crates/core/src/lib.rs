//! Homogeneity testing in the heteroscedastic contaminated normal mixture
//! `(1-α)N(0,σ₁²) + αN(μ,σ₂²)` with a penalized EM-test.
//!
//! - [`dist`]: normal, Student-t and chi-squared functions, seeded streams.
//! - [`mixture`]: the model, its penalized log-likelihood, the null fit and
//!   the default tuning constant `a_n`.
//! - [`em`]: the EM-test statistic, its limiting p-value and the fitted model.
//! - [`oracle`]: the quadratic approximation the statistic converges to,
//!   used to cross-check the engine.
//! - [`sim`]: type-I error, power and tuning experiments.
//! - [`cli`]: score ingestion, t-to-z transforms, reports and the `emtest`
//!   command line.

pub mod cli;
pub mod dist;
pub mod em;
pub mod error;
pub mod mixture;
pub mod oracle;
pub mod sim;

pub use em::{em_test, fit_report, limiting_pvalue, EmTestConfig, EmTestResult, EmTrace};
pub use error::{Error, Result};
pub use mixture::{a_n_default, MixtureParams, PenaltyConfig};
