//! Numerical laboratory for coherence and decoherence in finite open quantum
//! systems.
//!
//! The crate cross-validates three independent routes to the reduced dynamics
//! of a system coupled to a finite environment:
//!
//! * a brute-force oracle that diagonalizes the joint Hamiltonian and traces
//!   out the environment ([`evolution`]),
//! * closed-form reduced density matrices for a family of spin-boson models
//!   ([`closedform`]), reconstructed either directly or through the
//!   super-matrix propagator contraction,
//! * truncated Zassenhaus product propagators ([`zassenhaus`]) and a
//!   memory-kernel Green's function solver ([`greens`]) for the dissipative
//!   level picture.
//!
//! [`diagnostics`] classifies each model (commutator structure, coherence
//! decay shape, Markovianity) and the CLI in `src/main.rs` drives runs,
//! comparisons and the verdict suite from a TOML config.

pub mod closedform;
pub mod config;
pub mod constants;
pub mod diagnostics;
pub mod evolution;
pub mod greens;
pub mod linalg;
pub mod models;
pub mod numeric;
pub mod operators;
pub mod report;
pub mod runner;
pub mod suite;
pub mod zassenhaus;

pub use linalg::{OperatorMatrix, SpaceLayout};
pub use models::{ModelInstance, ModelParams, ModelTag};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
