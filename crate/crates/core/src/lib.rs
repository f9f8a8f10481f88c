//! Stratified Monte Carlo sampling for product-form quasi-probability
//! decompositions (QPDs).
//!
//! The crate is organised bottom-up:
//!
//! - [`qpd`]: local and circuit-level QPDs, configuration weights and the
//!   naïve product sampler.
//! - [`counts`] and [`parity`]: the counts-vector and sign-parity statistics,
//!   their exact dynamic programmes and exact conditional samplers.
//! - [`allocation`]: Hamilton apportionment with a residual stratum, Neyman
//!   quotas and the apportionment variance certificate.
//! - [`sampling`]: naïve and stratified designs, plug-in variances, bootstrap
//!   bands and variance ratios.
//! - [`oracle`]: exact enumeration of means and design variances.
//! - [`circuits`]: a dense density-matrix backend with the TFIM/PAI/PEC
//!   benchmark instances.

pub mod allocation;
pub mod circuits;
pub mod counts;
pub mod error;
pub mod numfmt;
pub mod oracle;
pub mod parity;
pub mod qpd;
pub mod rng;
pub mod sampling;
pub mod strata;

pub use error::{QpdError, Result};
pub use qpd::{Configuration, LocalQpd, ProductQpd};
