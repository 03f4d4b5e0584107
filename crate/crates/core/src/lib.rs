//! Variational microcanonical estimation on small spin chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: Pauli strings, the periodic mixed-field Ising chain and local
//!   observables.
//! * [`spectral`]: dense exact diagonalization, broadened microcanonical
//!   ensembles, coarse graining and smooth fits of diagonal matrix elements.
//! * [`circuit`]: real statevector simulation of the layered ansatz and its
//!   parameter-shift gradient.
//! * [`optimize`]: BFGS with a strong-Wolfe line search.
//! * [`vqa`]: the variance-targeting optimization loop with adaptive depth.
//! * [`analysis`]: error decomposition, off-diagonal statistics, reduced
//!   density matrices, trace distances and entropies.
//!
//! Site `j` (0-based) of an `N`-site chain is stored in bit `N − 1 − j` of a
//! basis index, so basis states enumerate in Kronecker-product order with
//! site 0 leftmost. User-facing output (CSV, logs) is 0-based as well unless
//! a column says otherwise.

pub mod analysis;
pub mod circuit;
pub mod error;
pub mod fit;
pub mod model;
pub mod optimize;
pub mod spectral;
pub mod store;
pub mod vqa;

pub use error::{Error, Result};
