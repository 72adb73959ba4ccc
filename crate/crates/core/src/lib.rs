//! Almost-sure stability certification for discrete-time switched linear
//! systems `x(t+1) = A_{r(t)} x(t)` whose mode signal is only known through
//! bounds on long-run mode-activation ratios.
//!
//! The pipeline lifts the system to blocks of `h` steps, scores each lifted
//! product by the log of its norm, and maximizes the expected score over every
//! block occupancy compatible with the bounds. A strictly negative optimum
//! certifies stability.
//!
//! - [`matlib`]: matrices, norms and eigenvalues.
//! - [`lifting`]: mode sequences, compositions and coefficient tables.
//! - [`lpcore`]: bounded-variable simplex and certificate verification.
//! - [`certify`]: the occupancy LPs, certificates and attack extraction.
//! - [`signals`]: mode-signal generators and exact limit-frequency oracles.
//! - [`ncs`]: networked-control scenarios under jamming.

pub mod certify;
pub mod error;
pub mod lifting;
pub mod lpcore;
pub mod matlib;
pub mod model;
pub mod ncs;
pub mod signals;

pub use error::{Error, Result};
pub use matlib::{Mat, NormKind};
pub use model::{ActivationBounds, SwitchedSystem};
