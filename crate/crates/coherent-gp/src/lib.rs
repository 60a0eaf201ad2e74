//! Gaussian-process machine learning with coherent-state quantum kernels.
//!
//! The library simulates the quantum side of kernel evaluation — truncated
//! displacement operators on bosonic Fock spaces, their Pauli/Trotter
//! preparation on qubits, and two-mode squeezed feature maps — and wires the
//! resulting kernels into GP regression, hyperparameter optimization, and a
//! GP-based reinforcement-learning loop for the car-on-a-hill control task.
//!
//! Layering, bottom up:
//!
//! - [`fock`]: dense truncated Fock-space linear algebra; the ground-truth
//!   oracle for everything above it.
//! - [`pauli`]: Pauli-string decompositions of the displacement generator and
//!   first-order Trotter evolution with optional shot-noise emulation.
//! - [`kernels`]: the kernel families (analytic coherent, finite-dimensional,
//!   qubit-Trotterized, two-mode squeezed, externally supplied Gram matrices),
//!   Gram construction, and hardware-style noise emulation.
//! - [`gp`]: GP posterior/marginal-likelihood machinery with heteroscedastic
//!   known noise, an optional model-discrepancy term, and a seeded multi-start
//!   simplex optimizer.
//! - [`tasks`]: data generation and experiment harnesses (1-D regression,
//!   car-on-hill dynamics regression, value-iteration reinforcement learning).
//! - [`cli`]: the command implementations behind the `coherent-gp` binary.
//!
//! The `examples/` directory has one runnable example per capability; start
//! with `cargo run --example regress_xsinx`.

pub mod cli;
pub mod fock;
pub mod gp;
pub mod kernels;
pub mod pauli;
pub mod tasks;
