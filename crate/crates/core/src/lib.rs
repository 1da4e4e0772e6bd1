//! Ground-truth Riccati machinery and learned surrogates for finite-horizon LQR.
//!
//! The crate is organised as a pipeline:
//!
//! * [`linalg`] — dense real-matrix kernel (LU, Cholesky, Kronecker-Lyapunov,
//!   shifted-QR eigenvalues). Everything else sits on top of it.
//! * [`riccati`] — algebraic and differential Riccati solvers, closed-loop
//!   simulation and exact cost evaluation.
//! * [`datagen`] — admissible training corpora: Brunovsky-structured
//!   time-invariant systems and trigonometric time-varying systems.
//! * [`opnet`] — branch/trunk operator networks, Adam training, and the
//!   progressive cross-dimension wrapper.
//! * [`analysis`] — stability classification, error metrics, the
//!   perturbation-bound engine and inference benchmarks.
//! * [`store`] — deterministic serialization of datasets and checkpoints.

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod linalg;
pub mod opnet;
pub mod riccati;
pub mod store;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
