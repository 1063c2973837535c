//! Numerical laboratory for the k-equivariant energy-critical wave map
//! equation on the radial half-line,
//!
//! ```text
//! u_tt - u_rr - u_r / r + k^2 sin(2u) / (2 r^2) = 0.
//! ```
//!
//! The crate builds the harmonic-map bubble Q(r) = 2 arctan(r^k), the
//! correction profiles entering a two-bubble ansatz, the modulation
//! machinery that reads scale parameters off an evolved field, and the
//! virial-corrected instability functional used to monitor two-bubble
//! dynamics near twice the ground-state energy.
//!
//! Everything is deterministic: fixed grids, fixed stencils, seeded RNG
//! where perturbations are wanted.

pub mod ansatz;
pub mod error;
pub mod evolve;
pub mod field;
pub mod grid;
pub mod modulation;
pub mod ops;
pub mod profiles;
pub mod verify;
pub mod virial;

pub use error::Error;
pub use field::{RadialField, StatePair};
pub use grid::{Grading, RadialGrid};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
