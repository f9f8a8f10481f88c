//! JSON instance descriptions for the TFIM benchmarks.

use serde::{Deserialize, Serialize};

use super::density::{Pauli, PauliString};
use super::qpd_circuit::{attach_pai, attach_pec, QpdCircuit};
use super::tfim::{build_tfim_trotter, Boundary};
use crate::error::{QpdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpdKind {
    Pai,
    Pec,
}

/// `{"model":"tfim","n":6,"L":2,"h":0.6,"J":0.7,"t":1.0,"boundary":"ring","qpd":"pai","B_bits":5}`.
/// PEC instances carry `"p"`. The observable defaults to `X` on qubit
/// `n − 1`, the site written first in little-endian Pauli labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    #[serde(default = "default_model")]
    pub model: String,
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(rename = "J", default = "default_j")]
    pub j: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    pub qpd: QpdKind,
    #[serde(rename = "B_bits", default = "default_bits", skip_serializing_if = "Option::is_none")]
    pub b_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<Vec<(usize, Pauli)>>,
}

fn default_model() -> String {
    "tfim".into()
}
fn default_h() -> f64 {
    0.6
}
fn default_j() -> f64 {
    0.7
}
fn default_t() -> f64 {
    1.0
}
fn default_boundary() -> Boundary {
    Boundary::Ring
}
fn default_bits() -> Option<u32> {
    Some(5)
}

impl InstanceSpec {
    pub fn pai(n: usize, depth: usize, b_bits: u32) -> Self {
        Self {
            model: default_model(),
            n,
            depth,
            h: default_h(),
            j: default_j(),
            t: default_t(),
            boundary: Boundary::Ring,
            qpd: QpdKind::Pai,
            b_bits: Some(b_bits),
            p: None,
            observable: None,
        }
    }

    pub fn pec(n: usize, depth: usize, p: f64) -> Self {
        Self { qpd: QpdKind::Pec, b_bits: None, p: Some(p), ..Self::pai(n, depth, 5) }
    }

    /// The enumerable validation instance: `n = 3`, `L = 1`, open boundary,
    /// PEC at `p = 0.01`.
    pub fn golden() -> Self {
        Self { boundary: Boundary::Open, ..Self::pec(3, 1, 0.01) }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn observable_string(&self) -> PauliString {
        match &self.observable {
            Some(terms) => PauliString::new(terms.clone()),
            None => PauliString::single(self.n - 1, Pauli::X),
        }
    }

    /// Short tag such as `tfim-pec-n3-L1-open`.
    pub fn label(&self) -> String {
        let kind = match self.qpd {
            QpdKind::Pai => "pai",
            QpdKind::Pec => "pec",
        };
        let boundary = match self.boundary {
            Boundary::Ring => "ring",
            Boundary::Open => "open",
        };
        format!("{}-{kind}-n{}-L{}-{boundary}", self.model, self.n, self.depth)
    }

    pub fn build(&self) -> Result<QpdCircuit> {
        if self.model != "tfim" {
            return Err(QpdError::InvalidArgument(format!("unknown model {:?}", self.model)));
        }
        let gates = build_tfim_trotter(self.n, self.depth, self.h, self.j, self.t, self.boundary)?;
        let obs = self.observable_string();
        match self.qpd {
            QpdKind::Pai => attach_pai(self.n, &gates, self.b_bits.unwrap_or(5), obs),
            QpdKind::Pec => {
                let p = self.p.ok_or_else(|| QpdError::InvalidArgument("PEC instance needs \"p\"".into()))?;
                attach_pec(self.n, &gates, p, obs)
            }
        }
    }
}
