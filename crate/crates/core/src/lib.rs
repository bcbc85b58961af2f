//! Selective and efficient quantum process tomography (SEQPT) on composite
//! Hilbert spaces, simulated end to end.
//!
//! The library reconstructs the process matrix χ of a quantum channel acting
//! on a space of dimension `d = D1 * D2` (`D1`, `D2` prime) without a maximal
//! set of mutually unbiased bases in dimension `d`. It uses tensor products
//! of the complete MUB sets of the two factors as the state family, estimates
//! coefficient-wise mean fidelities of modified channels, and inverts the
//! fidelity/χ relation per coefficient. Any single coefficient can be
//! estimated on its own (selectivity) from a random subsample of the state
//! family (efficiency).
//!
//! Module map:
//! - [`algebra`]: dense complex linear algebra (Kronecker products, partial
//!   traces, Hermitian eigendecomposition, PSD square roots, Haar sampling).
//! - [`designs`]: Sylvester operator bases, MUB constructions for prime
//!   dimensions, the tensor-product state family, covariance lookups.
//! - [`channels`]: Kraus / χ / Choi channel representations, conversions,
//!   and concrete channel builders.
//! - [`estimator`]: modified-channel fidelities, outer-product projector
//!   decompositions, sampling plans, and the reconstruction driver.
//! - [`sim`]: the measurement-settings enumerator, binomial shot-noise
//!   simulator, and dataset persistence.
//! - [`postprocess`]: CPTP projection, fidelity metrics, standard process
//!   and state tomography baselines.

pub mod algebra;
pub mod channels;
pub mod designs;
pub mod error;
pub mod estimator;
pub mod postprocess;
pub mod sim;
pub mod stream;
pub mod tol;

pub use error::{Error, Result};
pub use tol::Tolerances;
