//! Common interface over stratification statistics that admit exact stratum
//! weights and exact conditional sampling.

use rand::Rng;

use crate::error::Result;
use crate::qpd::{Configuration, ProductQpd};

/// Stratum identifier: the statistic's value as a tuple of integers
/// (a counts vector, or `(P₊, P₋)` for sign parity).
pub type StratumKey = Vec<u32>;

/// A stratification with strata listed in lexicographic key order.
pub trait Stratification: Sync {
    /// Short tag used in reports (`"counts"`, `"parity"`).
    fn name(&self) -> &'static str;

    fn qpd(&self) -> &ProductQpd;

    /// All strata in lexicographic key order, zero-weight strata included.
    fn keys(&self) -> &[StratumKey];

    /// Weights `w_s`, aligned with [`Stratification::keys`].
    fn weights(&self) -> &[f64];

    /// Maps a configuration to the position of its stratum.
    fn stratum_of(&self, config: &Configuration) -> Result<usize>;

    /// Exact draw from `p(ℓ | S = s)` for the stratum at `position`.
    fn sample_in<R: Rng + ?Sized>(&self, position: usize, rng: &mut R) -> Result<Configuration>
    where
        Self: Sized;

    fn len(&self) -> usize {
        self.keys().len()
    }

    fn is_empty(&self) -> bool {
        self.keys().is_empty()
    }
}
