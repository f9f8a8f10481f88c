//! Local and circuit-level product-form QPDs.
//!
//! A local QPD is a list of signed coefficients `γ(ℓ)` over implementable
//! primitives. Sampling draws `ℓ` with probability `|γ(ℓ)| / ‖γ‖₁`; a circuit
//! QPD is the product of `ν` independent locals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QpdError, Result};

/// Above this many positions the circuit 1-norm is accumulated in log space.
const LOG_NORM_THRESHOLD: usize = 64;

/// A single local decomposition `γ(1..d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQpd {
    coeffs: Vec<f64>,
    labels: Option<Vec<String>>,
    norm: f64,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl LocalQpd {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(QpdError::InvalidCoefficients("empty coefficient list".into()));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(QpdError::InvalidCoefficients(format!("non-finite coefficient {bad}")));
        }
        let norm: f64 = coeffs.iter().map(|c| c.abs()).sum();
        if norm <= 0.0 {
            return Err(QpdError::InvalidCoefficients("all coefficients are zero".into()));
        }
        let probs: Vec<f64> = coeffs.iter().map(|c| c.abs() / norm).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { coeffs, labels: None, norm, probs, cdf })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.coeffs.len() {
            return Err(QpdError::InvalidArgument(format!(
                "{} labels for {} coefficients",
                labels.len(),
                self.coeffs.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, index: usize) -> f64 {
        self.coeffs[index]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// `‖γ‖₁ = Σ |γ(ℓ)|`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// `+1`, `-1`, or `0` for padded entries.
    pub fn sign(&self, index: usize) -> i8 {
        let c = self.coeffs[index];
        if c > 0.0 {
            1
        } else if c < 0.0 {
            -1
        } else {
            0
        }
    }

    /// Probability mass on positive-coefficient primitives.
    pub fn positive_mass(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.probs)
            .filter(|(c, _)| **c > 0.0)
            .map(|(_, p)| p)
            .sum()
    }

    /// Extends the decomposition with zero-coefficient primitives.
    pub fn padded(&self, width: usize) -> Self {
        if width <= self.width() {
            return self.clone();
        }
        let extra = width - self.width();
        let mut out = self.clone();
        out.coeffs.extend(std::iter::repeat_n(0.0, extra));
        out.probs.extend(std::iter::repeat_n(0.0, extra));
        let last = *out.cdf.last().expect("non-empty");
        out.cdf.extend(std::iter::repeat_n(last, extra));
        if let Some(labels) = out.labels.as_mut() {
            labels.extend((0..extra).map(|k| format!("pad{k}")));
        }
        out
    }

    /// Draws a local index; zero-probability entries are never returned.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.probs, Some(&self.cdf), rng)
    }
}

/// Draws from an (unnormalised is fine) categorical vector, never selecting
/// a zero-weight entry.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(
    weights: &[f64],
    cdf: Option<&[f64]>,
    rng: &mut R,
) -> usize {
    let owned;
    let cdf = match cdf {
        Some(c) => c,
        None => {
            let mut acc = 0.0;
            owned = weights
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect::<Vec<_>>();
            &owned
        }
    };
    let total = *cdf.last().expect("non-empty categorical");
    let u = rng.gen::<f64>() * total;
    let mut last_positive = 0;
    for (k, (&w, &c)) in weights.iter().zip(cdf).enumerate() {
        if w > 0.0 {
            last_positive = k;
            if u < c {
                return k;
            }
        }
    }
    last_positive
}

/// A choice of one primitive per QPD location, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration(pub Vec<u32>);

impl Configuration {
    pub fn new(indices: Vec<u32>) -> Self {
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    /// Mixed-radix code with position 0 as the most significant digit.
    pub fn code(&self, width: usize) -> u64 {
        self.0.iter().fold(0u64, |acc, &l| acc * width as u64 + l as u64)
    }

    pub fn from_code(mut code: u64, nu: usize, width: usize) -> Self {
        let mut out = vec![0u32; nu];
        for slot in out.iter_mut().rev() {
            *slot = (code % width as u64) as u32;
            code /= width as u64;
        }
        Self(out)
    }
}

/// Product of `ν` local QPDs padded to a common width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQpd {
    locals: Vec<LocalQpd>,
    width: usize,
    log_norm: f64,
    norm: f64,
}

impl ProductQpd {
    /// Pads every local to the maximum width and assembles the product.
    pub fn new(locals: Vec<LocalQpd>) -> Result<Self> {
        if locals.is_empty() {
            return Err(QpdError::EmptyDecomposition);
        }
        let width = locals.iter().map(LocalQpd::width).max().unwrap_or(1);
        let locals: Vec<LocalQpd> = locals.into_iter().map(|l| l.padded(width)).collect();
        let log_norm: f64 = locals.iter().map(|l| l.norm().ln()).sum();
        let norm = if locals.len() > LOG_NORM_THRESHOLD {
            log_norm.exp()
        } else {
            locals.iter().map(LocalQpd::norm).product()
        };
        Ok(Self { locals, width, log_norm, norm })
    }

    pub fn from_coeffs(coeffs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(coeffs.into_iter().map(LocalQpd::new).collect::<Result<_>>()?)
    }

    pub fn locals(&self) -> &[LocalQpd] {
        &self.locals
    }

    pub fn local(&self, position: usize) -> &LocalQpd {
        &self.locals[position]
    }

    /// Number of positions `ν`.
    pub fn nu(&self) -> usize {
        self.locals.len()
    }

    /// Common local width `d`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Circuit 1-norm `‖g‖₁ = Π ‖γ_i‖₁`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Number of configurations `d^ν`, if it fits in `u128`.
    pub fn configuration_count(&self) -> Option<u128> {
        (self.width as u128).checked_pow(self.nu() as u32)
    }

    pub fn validate(&self, config: &Configuration) -> Result<()> {
        if config.len() != self.nu() {
            return Err(QpdError::ConfigurationLength { expected: self.nu(), got: config.len() });
        }
        if let Some(&bad) = config.indices().iter().find(|&&l| l as usize >= self.width) {
            return Err(QpdError::IndexOutOfRange { index: bad as usize, width: self.width });
        }
        Ok(())
    }

    /// Signed coefficient `g(ℓ) = Π γ_i(ℓ_i)`.
    pub fn coefficient(&self, config: &Configuration) -> Result<f64> {
        self.validate(config)?;
        Ok(self
            .locals
            .iter()
            .zip(config.indices())
            .map(|(l, &k)| l.coeff(k as usize))
            .product())
    }

    /// Sampling probability `p(ℓ) = Π p_i(ℓ_i)`.
    pub fn probability(&self, config: &Configuration) -> Result<f64> {
        self.validate(config)?;
        Ok(self
            .locals
            .iter()
            .zip(config.indices())
            .map(|(l, &k)| l.prob(k as usize))
            .product())
    }

    /// Sign of `g(ℓ)`, or an error for configurations hitting a zero entry.
    pub fn sign(&self, config: &Configuration) -> Result<i8> {
        self.validate(config)?;
        let mut sign = 1i8;
        for (position, (l, &k)) in self.locals.iter().zip(config.indices()).enumerate() {
            match l.sign(k as usize) {
                0 => return Err(QpdError::ZeroMassConfiguration { position }),
                s => sign *= s,
            }
        }
        Ok(sign)
    }

    /// QPD weight `w(ℓ) = ‖g‖₁ · sign(g(ℓ))`.
    pub fn config_weight(&self, config: &Configuration) -> Result<f64> {
        Ok(self.norm * f64::from(self.sign(config)?))
    }

    /// Independent draw of every local index.
    pub fn sample_naive<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        Configuration(self.locals.iter().map(|l| l.sample(rng) as u32).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = QpdDocument { locals: self.locals.iter().map(|l| l.coeffs.clone()).collect() };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: QpdDocument = serde_json::from_str(text)?;
        Self::from_coeffs(doc.locals)
    }
}

#[derive(Serialize, Deserialize)]
struct QpdDocument {
    locals: Vec<Vec<f64>>,
}

/// Coefficients of the 4-term inverse of a single-qubit depolarising channel,
/// ordered `(I, X, Y, Z)`.
pub fn depolarising_inverse_coeffs(p: f64) -> Result<[f64; 4]> {
    if !(0.0..0.75).contains(&p) {
        return Err(QpdError::InvalidArgument(format!(
            "depolarising strength {p} must lie in [0, 3/4)"
        )));
    }
    let lambda = 1.0 - 4.0 * p / 3.0;
    let id = (lambda + 3.0) / (4.0 * lambda);
    let pauli = (lambda - 1.0) / (4.0 * lambda);
    Ok([id, pauli, pauli, pauli])
}
