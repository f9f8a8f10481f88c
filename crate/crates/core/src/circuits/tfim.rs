//! First-order Trotter circuits for the transverse-field Ising model
//! `H = h Σ X_j + J Σ Z_j Z_{j+1}`.

use serde::{Deserialize, Serialize};

use super::density::{Pauli, PauliString};
use crate::error::{QpdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Ring,
    Open,
}

/// A rotation `R_G(θ) = exp(−iθG/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationGate {
    pub generator: PauliString,
    pub angle: f64,
}

impl RotationGate {
    pub fn support(&self) -> Vec<usize> {
        self.generator.qubits()
    }
}

/// Per step `dt = t/L`: `R_X(2h·dt)` on every qubit, then `R_ZZ(2J·dt)` on
/// every bond (`n` bonds on a ring, `n − 1` when open).
pub fn build_tfim_trotter(
    n: usize,
    steps: usize,
    h: f64,
    j: f64,
    t: f64,
    boundary: Boundary,
) -> Result<Vec<RotationGate>> {
    if n < 2 {
        return Err(QpdError::InvalidArgument(format!("TFIM needs at least 2 qubits, got {n}")));
    }
    if steps == 0 {
        return Err(QpdError::InvalidArgument("Trotter depth must be at least 1".into()));
    }
    let dt = t / steps as f64;
    let bonds: Vec<(usize, usize)> = match boundary {
        Boundary::Ring if n > 2 => (0..n).map(|q| (q, (q + 1) % n)).collect(),
        // a 2-site ring has a single distinct bond
        Boundary::Ring | Boundary::Open => (0..n - 1).map(|q| (q, q + 1)).collect(),
    };
    let mut gates = Vec::with_capacity(steps * (n + bonds.len()));
    for _ in 0..steps {
        for q in 0..n {
            gates.push(RotationGate { generator: PauliString::single(q, Pauli::X), angle: 2.0 * h * dt });
        }
        for &(a, b) in &bonds {
            gates.push(RotationGate {
                generator: PauliString::new(vec![(a, Pauli::Z), (b, Pauli::Z)]),
                angle: 2.0 * j * dt,
            });
        }
    }
    Ok(gates)
}
