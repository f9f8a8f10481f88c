//! Dense density-matrix backend and the TFIM benchmark QPD circuits.

pub mod density;
pub mod evaluator;
pub mod instance;
pub mod qpd_circuit;
pub mod tfim;

pub use density::{DensityMatrix, Pauli, PauliString};
pub use evaluator::{CircuitEvaluator, MeanCache};
pub use instance::{InstanceSpec, QpdKind};
pub use qpd_circuit::{
    attach_pai, attach_pec, evaluate_configuration, pai_coefficients, ChannelPrimitive, QpdCircuit, Step,
};
pub use tfim::{build_tfim_trotter, Boundary, RotationGate};
