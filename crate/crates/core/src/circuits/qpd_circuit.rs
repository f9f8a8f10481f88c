//! Circuits with QPD locations: every location maps a local index to a short
//! sequence of implementable channels.

use serde::{Deserialize, Serialize};

use super::density::{DensityMatrix, Pauli, PauliString, DEFAULT_QUBIT_CAP};
use super::tfim::RotationGate;
use crate::error::{QpdError, Result};
use crate::qpd::{depolarising_inverse_coeffs, Configuration, LocalQpd, ProductQpd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelPrimitive {
    Rotation { generator: PauliString, angle: f64 },
    PauliConjugation { pauli: Pauli, qubit: usize },
    Depolarising { p: f64, qubit: usize },
}

impl ChannelPrimitive {
    pub fn support(&self) -> Vec<usize> {
        match self {
            ChannelPrimitive::Rotation { generator, .. } => generator.qubits(),
            ChannelPrimitive::PauliConjugation { qubit, .. } | ChannelPrimitive::Depolarising { qubit, .. } => {
                vec![*qubit]
            }
        }
    }

    pub fn apply(&self, rho: &mut DensityMatrix) -> Result<()> {
        match self {
            ChannelPrimitive::Rotation { generator, angle } => rho.apply_rotation(generator, *angle),
            ChannelPrimitive::PauliConjugation { pauli, qubit } => rho.apply_pauli(*qubit, *pauli),
            ChannelPrimitive::Depolarising { p, qubit } => rho.apply_depolarising(*qubit, *p),
        }
    }
}

impl From<&RotationGate> for ChannelPrimitive {
    fn from(g: &RotationGate) -> Self {
        ChannelPrimitive::Rotation { generator: g.generator.clone(), angle: g.angle }
    }
}

/// One entry of the circuit schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Step {
    /// Channels applied in every circuit variant.
    Fixed(Vec<ChannelPrimitive>),
    /// QPD location `i`, resolved by `ℓ_i`.
    Location(usize),
}

/// A circuit whose variants `𝒰(ℓ)` are indexed by configurations of `qpd`.
#[derive(Debug, Clone)]
pub struct QpdCircuit {
    n: usize,
    steps: Vec<Step>,
    // options[i][k]: channels for local index k at location i
    options: Vec<Vec<Vec<ChannelPrimitive>>>,
    qpd: ProductQpd,
    observable: PauliString,
    qubit_cap: usize,
}

impl QpdCircuit {
    pub fn new(
        n: usize,
        steps: Vec<Step>,
        options: Vec<Vec<Vec<ChannelPrimitive>>>,
        qpd: ProductQpd,
        observable: PauliString,
    ) -> Result<Self> {
        if options.len() != qpd.nu() {
            return Err(QpdError::InvalidArgument(format!(
                "{} locations but the QPD has {} factors",
                options.len(),
                qpd.nu()
            )));
        }
        let order: Vec<usize> = steps
            .iter()
            .filter_map(|s| match s {
                Step::Location(i) => Some(*i),
                Step::Fixed(_) => None,
            })
            .collect();
        if order != (0..qpd.nu()).collect::<Vec<_>>() {
            return Err(QpdError::InvalidArgument("locations must appear once each, in order".into()));
        }
        for (i, opts) in options.iter().enumerate() {
            if opts.len() > qpd.width() {
                return Err(QpdError::InvalidArgument(format!("location {i} has more primitives than the QPD width")));
            }
            let local = qpd.local(i);
            if let Some(k) = (opts.len()..local.width()).find(|&k| local.coeff(k) != 0.0) {
                return Err(QpdError::InvalidArgument(format!("location {i} has no primitive for index {k}")));
            }
        }
        let touched = steps
            .iter()
            .flat_map(|s| match s {
                Step::Fixed(ch) => ch.iter().flat_map(|c| c.support()).collect::<Vec<_>>(),
                Step::Location(_) => Vec::new(),
            })
            .chain(options.iter().flatten().flatten().flat_map(|c| c.support()))
            .chain(observable.qubits());
        if let Some(q) = touched.into_iter().find(|&q| q >= n) {
            return Err(QpdError::InvalidArgument(format!("qubit {q} outside a {n}-qubit circuit")));
        }
        Ok(Self { n, steps, options, qpd, observable, qubit_cap: DEFAULT_QUBIT_CAP })
    }

    pub fn with_qubit_cap(mut self, cap: usize) -> Self {
        self.qubit_cap = cap;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn qpd(&self) -> &ProductQpd {
        &self.qpd
    }

    pub fn observable(&self) -> &PauliString {
        &self.observable
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Channels implementing local index `k` at location `i`.
    pub fn primitive(&self, i: usize, k: usize) -> Option<&[ChannelPrimitive]> {
        self.options.get(i)?.get(k).map(|v| v.as_slice())
    }

    /// Applies the variant `𝒰(ℓ)` to `|0…0⟩⟨0…0|`.
    pub fn evolve(&self, config: &Configuration) -> Result<DensityMatrix> {
        self.qpd.validate(config)?;
        let mut rho = DensityMatrix::zero_state_capped(self.n, self.qubit_cap)?;
        for step in &self.steps {
            match step {
                Step::Fixed(channels) => {
                    for c in channels {
                        c.apply(&mut rho)?;
                    }
                }
                Step::Location(i) => {
                    let k = config.indices()[*i] as usize;
                    let channels =
                        self.primitive(*i, k).ok_or(QpdError::ZeroMassConfiguration { position: *i })?;
                    for c in channels {
                        c.apply(&mut rho)?;
                    }
                }
            }
        }
        Ok(rho)
    }
}

/// `µ_ℓ = Tr[O 𝒰(ℓ)(ρ₀)]`.
pub fn evaluate_configuration(circuit: &QpdCircuit, config: &Configuration) -> Result<f64> {
    circuit.evolve(config)?.expectation(&circuit.observable)
}

/// Coefficients `(γ₁, γ₂, γ₃)` for the on-grid rotations at `0`, `Δ` and `π`
/// reproducing a rotation by `ϑ ∈ [0, Δ)`.
pub fn pai_coefficients(theta: f64, delta: f64) -> Result<[f64; 3]> {
    if !(delta > 0.0 && delta <= std::f64::consts::PI) {
        return Err(QpdError::InvalidArgument(format!("grid step {delta} outside (0, π]")));
    }
    if !(0.0..delta).contains(&theta) {
        return Err(QpdError::InvalidArgument(format!("offset {theta} outside [0, {delta})")));
    }
    solve_pai(0.0, theta, delta)
}

// Matches the constant, cosine and sine components of R_G(base + θ) with
// rotations at base, base + Δ and base + π.
fn solve_pai(base: f64, theta: f64, delta: f64) -> Result<[f64; 3]> {
    let angles = [base, base + delta, base + std::f64::consts::PI];
    let target = base + theta;
    let mut a = [
        [1.0, 1.0, 1.0, 1.0],
        [angles[0].cos(), angles[1].cos(), angles[2].cos(), target.cos()],
        [angles[0].sin(), angles[1].sin(), angles[2].sin(), target.sin()],
    ];
    for col in 0..3 {
        let pivot = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap_or(col);
        if a[pivot][col].abs() < 1e-12 {
            return Err(QpdError::DegenerateGrid(format!("grid step {delta} gives a singular system")));
        }
        a.swap(col, pivot);
        let pivot_row = a[col];
        for (row, r) in a.iter_mut().enumerate() {
            if row != col {
                let f = r[col] / pivot_row[col];
                for (x, p) in r[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    Ok([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

/// Replaces every rotation with its three-term angle-interpolation QPD on
/// the grid `Δ = 2π / 2^b_bits`.
pub fn attach_pai(n: usize, gates: &[RotationGate], b_bits: u32, observable: PauliString) -> Result<QpdCircuit> {
    if b_bits == 0 || b_bits > 52 {
        return Err(QpdError::InvalidArgument(format!("grid resolution of {b_bits} bits is unsupported")));
    }
    let delta = std::f64::consts::TAU / (1u64 << b_bits) as f64;
    if delta > std::f64::consts::PI - 1e-12 {
        return Err(QpdError::DegenerateGrid(format!("{b_bits}-bit grid step is π")));
    }
    let mut steps = Vec::with_capacity(gates.len());
    let mut options = Vec::with_capacity(gates.len());
    let mut locals = Vec::with_capacity(gates.len());
    for (i, gate) in gates.iter().enumerate() {
        let mut k = (gate.angle / delta).floor();
        let mut offset = gate.angle - k * delta;
        if offset >= delta {
            k += 1.0;
            offset = 0.0;
        }
        let base = k * delta;
        let gamma = solve_pai(base, offset.max(0.0), delta)?;
        let rot = |angle: f64| vec![ChannelPrimitive::Rotation { generator: gate.generator.clone(), angle }];
        options.push(vec![rot(base), rot(base + delta), rot(base + std::f64::consts::PI)]);
        locals.push(
            LocalQpd::new(gamma.to_vec())?
                .with_labels(vec!["k".into(), "k+1".into(), "k+pi".into()])?,
        );
        steps.push(Step::Location(i));
    }
    QpdCircuit::new(n, steps, options, ProductQpd::new(locals)?, observable)
}

/// Attaches the depolarising-inverse QPD to every leg of every gate, where
/// the hardware applies `𝒟_p` to each support qubit after the gate.
pub fn attach_pec(n: usize, gates: &[RotationGate], p: f64, observable: PauliString) -> Result<QpdCircuit> {
    let gamma = depolarising_inverse_coeffs(p)?;
    let mut steps = Vec::new();
    let mut options = Vec::new();
    let mut locals = Vec::new();
    for gate in gates {
        let support = gate.support();
        let mut noisy = vec![ChannelPrimitive::from(gate)];
        noisy.extend(support.iter().map(|&qubit| ChannelPrimitive::Depolarising { p, qubit }));
        steps.push(Step::Fixed(noisy));
        for &qubit in &support {
            steps.push(Step::Location(options.len()));
            options.push(Pauli::ALL.iter().map(|&pauli| vec![ChannelPrimitive::PauliConjugation { pauli, qubit }]).collect());
            locals.push(
                LocalQpd::new(gamma.to_vec())?
                    .with_labels(Pauli::ALL.iter().map(|p| p.label().to_string()).collect())?,
            );
        }
    }
    QpdCircuit::new(n, steps, options, ProductQpd::new(locals)?, observable)
}
