//! Exact characteristic-function models of DLCZ-style probabilistic quantum
//! repeaters, the entanglement-swapping measurements that join them, and the
//! entanglement-based QKD rates they support.
//!
//! Everything is computed in closed form: states are finite sums of Gaussian
//! terms in phase space (see [`gaussian`]), detector projections become
//! polynomial kernels under the integral, and an independent truncated
//! Fock-space simulation ([`fock`]) cross-checks every metric the engine
//! produces.
//!
//! The primary interface is the `examples/` directory (one runnable example
//! per capability — link metrics, swap metrics, QKD rates, optimal excitation
//! probability, crossover distances, figure datasets, oracle and closed-form
//! checks); a thin command-line binary exposes the same entry points for
//! scripted parameter studies.

pub mod closed_form;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod link;
pub mod mat;
pub mod qkd;
pub mod study;
pub mod swap;
pub mod validate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
