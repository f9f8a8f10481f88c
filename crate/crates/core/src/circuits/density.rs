//! Dense density-matrix simulation on a handful of qubits.
//!
//! Qubit `j` is bit `n − 1 − j` of a basis-state index, so qubit 0 is the
//! leftmost tensor factor.

use num_complex::Complex64;

use crate::error::{QpdError, Result};

/// Default largest register the backend accepts.
pub const DEFAULT_QUBIT_CAP: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        match self {
            Pauli::I => [[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => [[ZERO, -I], [I, ZERO]],
            Pauli::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }

    pub fn label(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Tensor product of single-qubit Paulis on explicit qubits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct PauliString {
    pub terms: Vec<(usize, Pauli)>,
}

impl PauliString {
    pub fn new(terms: Vec<(usize, Pauli)>) -> Self {
        Self { terms }
    }

    pub fn single(qubit: usize, p: Pauli) -> Self {
        Self { terms: vec![(qubit, p)] }
    }

    pub fn qubits(&self) -> Vec<usize> {
        self.terms.iter().map(|(q, _)| *q).collect()
    }

    /// Dense `2^k × 2^k` matrix over the listed qubits, first qubit most
    /// significant.
    pub fn local_matrix(&self) -> Vec<Complex64> {
        let mut m = vec![ONE];
        let mut dim = 1;
        for (_, p) in &self.terms {
            let pm = p.matrix();
            let nd = dim * 2;
            let mut next = vec![ZERO; nd * nd];
            for r in 0..dim {
                for c in 0..dim {
                    for a in 0..2 {
                        for b in 0..2 {
                            next[(r * 2 + a) * nd + c * 2 + b] = m[r * dim + c] * pm[a][b];
                        }
                    }
                }
            }
            m = next;
            dim = nd;
        }
        m
    }
}

/// `2ⁿ × 2ⁿ` density matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    dim: usize,
    data: Vec<Complex64>,
}

impl DensityMatrix {
    /// `|0…0⟩⟨0…0|`.
    pub fn zero_state(n: usize) -> Result<Self> {
        Self::zero_state_capped(n, DEFAULT_QUBIT_CAP)
    }

    pub fn zero_state_capped(n: usize, cap: usize) -> Result<Self> {
        if n == 0 || n > cap {
            return Err(QpdError::Simulation(format!("{n} qubits outside the backend range 1..={cap}")));
        }
        let dim = 1 << n;
        let mut data = vec![ZERO; dim * dim];
        data[0] = ONE;
        Ok(Self { n, dim, data })
    }

    pub fn from_matrix(n: usize, data: Vec<Complex64>) -> Result<Self> {
        let dim = 1 << n;
        if data.len() != dim * dim {
            return Err(QpdError::Simulation("matrix size does not match qubit count".into()));
        }
        Ok(Self { n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Largest entry of `ρ − ρ†`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in 0..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n - 1 - qubit)
    }

    /// `ρ ← U ρ U†` for a dense `2^k × 2^k` unitary on `qubits`.
    pub fn apply_unitary(&mut self, qubits: &[usize], u: &[Complex64]) -> Result<()> {
        let k = qubits.len();
        let sub = 1 << k;
        if u.len() != sub * sub {
            return Err(QpdError::Simulation("operator size does not match its support".into()));
        }
        if let Some(&q) = qubits.iter().find(|&&q| q >= self.n) {
            return Err(QpdError::Simulation(format!("qubit {q} outside a {}-qubit register", self.n)));
        }
        let masks: Vec<usize> = qubits.iter().map(|&q| self.bit(q)).collect();
        let support: usize = masks.iter().sum();
        // offsets[a] = basis offset of local state a (first qubit most significant)
        let offsets: Vec<usize> = (0..sub)
            .map(|a| {
                masks
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| a & (1 << (k - 1 - j)) != 0)
                    .map(|(_, m)| m)
                    .sum()
            })
            .collect();
        let dim = self.dim;
        let mut buf = vec![ZERO; sub];

        // left multiplication, column by column
        for c in 0..dim {
            for base in (0..dim).filter(|b| b & support == 0) {
                for a in 0..sub {
                    buf[a] = (0..sub).map(|b| u[a * sub + b] * self.data[(base + offsets[b]) * dim + c]).sum();
                }
                for a in 0..sub {
                    self.data[(base + offsets[a]) * dim + c] = buf[a];
                }
            }
        }
        // right multiplication by U†, row by row
        for r in 0..dim {
            let row = r * dim;
            for base in (0..dim).filter(|b| b & support == 0) {
                for a in 0..sub {
                    buf[a] = (0..sub)
                        .map(|b| self.data[row + base + offsets[b]] * u[a * sub + b].conj())
                        .sum();
                }
                for a in 0..sub {
                    self.data[row + base + offsets[a]] = buf[a];
                }
            }
        }
        Ok(())
    }

    /// `ρ ← PρP` for a single-qubit Pauli.
    pub fn apply_pauli(&mut self, qubit: usize, p: Pauli) -> Result<()> {
        self.apply_pauli_string(&PauliString::single(qubit, p))
    }

    /// `ρ ← GρG` for a Pauli string `G`.
    pub fn apply_pauli_string(&mut self, g: &PauliString) -> Result<()> {
        let (flip, phase) = self.pauli_action(g)?;
        if flip == 0 && phase.iter().all(|&x| x == ONE) {
            return Ok(());
        }
        let dim = self.dim;
        let mut out = vec![ZERO; dim * dim];
        for r in 0..dim {
            let (rf, pr) = (r ^ flip, phase[r ^ flip]);
            for c in 0..dim {
                let cf = c ^ flip;
                out[r * dim + c] = pr * self.data[rf * dim + cf] * phase[cf].conj();
            }
        }
        self.data = out;
        Ok(())
    }

    /// `ρ ← R ρ R†` with `R = exp(−iθG/2) = c·1 − i s·G`, expanded as
    /// `c²ρ + s²GρG + i c s (ρG − Gρ)` so a single pass suffices.
    pub fn apply_rotation(&mut self, g: &PauliString, theta: f64) -> Result<()> {
        let (flip, phase) = self.pauli_action(g)?;
        let (s, c) = (theta / 2.0).sin_cos();
        let (cc, ss, ics) = (c * c, s * s, Complex64::new(0.0, c * s));
        let dim = self.dim;
        let mut out = vec![ZERO; dim * dim];
        for r in 0..dim {
            let rf = r ^ flip;
            let pr = phase[rf];
            for c in 0..dim {
                let cf = c ^ flip;
                let rho = self.data[r * dim + c];
                let g_rho = pr * self.data[rf * dim + c];
                let rho_g = self.data[r * dim + cf] * phase[c];
                let g_rho_g = pr * self.data[rf * dim + cf] * phase[cf].conj();
                out[r * dim + c] = rho * cc + g_rho_g * ss + ics * (rho_g - g_rho);
            }
        }
        self.data = out;
        Ok(())
    }

    /// Single-qubit depolarising channel `(1−p)ρ + (p/3)(XρX + YρY + ZρZ)`.
    /// The four Kraus terms sum to `λρ + (1−λ)·(1/2 ⊗ Tr_q ρ)` with
    /// `λ = 1 − 4p/3`, which is evaluated entrywise.
    pub fn apply_depolarising(&mut self, qubit: usize, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(QpdError::Simulation(format!("depolarising strength {p} outside [0, 1]")));
        }
        self.check_qubit(qubit)?;
        if p == 0.0 {
            return Ok(());
        }
        let lambda = 1.0 - 4.0 * p / 3.0;
        let half = (1.0 - lambda) / 2.0;
        let b = self.bit(qubit);
        let dim = self.dim;
        let mut out = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                let v = self.data[r * dim + c];
                out[r * dim + c] = if (r ^ c) & b == 0 {
                    v * (lambda + half) + self.data[(r ^ b) * dim + (c ^ b)] * half
                } else {
                    v * lambda
                };
            }
        }
        self.data = out;
        Ok(())
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n {
            return Err(QpdError::Simulation(format!("qubit {qubit} outside a {}-qubit register", self.n)));
        }
        Ok(())
    }

    /// `G|a⟩ = φ(a)|a ⊕ flip⟩`: returns `flip` and `φ` over the basis.
    fn pauli_action(&self, g: &PauliString) -> Result<(usize, Vec<Complex64>)> {
        let mut flip = 0;
        for (q, p) in &g.terms {
            self.check_qubit(*q)?;
            if matches!(p, Pauli::X | Pauli::Y) {
                flip |= self.bit(*q);
            }
        }
        let phase = (0..self.dim)
            .map(|a| {
                g.terms.iter().fold(ONE, |acc, (q, p)| {
                    let set = a & self.bit(*q) != 0;
                    acc * match (p, set) {
                        (Pauli::I, _) | (Pauli::X, _) | (Pauli::Z, false) => ONE,
                        (Pauli::Y, false) => I,
                        (Pauli::Y, true) => -I,
                        (Pauli::Z, true) => -ONE,
                    }
                })
            })
            .collect();
        Ok((flip, phase))
    }

    /// `Tr[O ρ]` for a Pauli string `O`.
    pub fn expectation(&self, obs: &PauliString) -> Result<f64> {
        // Tr[Oρ] = Σ_a ⟨a|Oρ|a⟩ = Σ_a φ(a ⊕ flip) ρ[a ⊕ flip, a]
        let (flip, phase) = self.pauli_action(obs)?;
        let total: Complex64 = (0..self.dim).map(|a| phase[a ^ flip] * self.data[(a ^ flip) * self.dim + a]).sum();
        Ok(total.re)
    }
}

/// `R_G(θ) = exp(−iθG/2) = cos(θ/2)·1 − i sin(θ/2)·G` as a dense matrix on
/// the generator's support.
pub fn rotation_matrix(generator: &PauliString, theta: f64) -> Vec<Complex64> {
    let g = generator.local_matrix();
    let sub = 1 << generator.terms.len();
    let (s, c) = (theta / 2.0).sin_cos();
    let mut out: Vec<Complex64> = g.iter().map(|x| x * Complex64::new(0.0, -s)).collect();
    for a in 0..sub {
        out[a * sub + a] += c;
    }
    out
}
