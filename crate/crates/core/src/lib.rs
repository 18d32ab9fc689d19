//! Hoeffding- and Bernstein-type concentration bounds for the largest
//! eigenvalue of sums of matrix-valued functions of a Markov chain.
//!
//! The crate is organized bottom-up:
//!
//! * [`matcore`]: dense symmetric/Hermitian kernels (eigendecomposition,
//!   spectral exponentials, Kronecker products, vectorization).
//! * [`chain`]: finite Markov chains, stationary distributions, the absolute
//!   spectral gap and seeded trajectory sampling.
//! * [`lift`]: operators on the lifted space `l2(pi (x) 1)` materialized as
//!   explicit `(m d^2) x (m d^2)` matrices, exact evaluation of the
//!   noncommutative moment generating function, sandwich-operator spectra.
//! * [`bounds`]: closed-form MGF and tail bounds plus the Chernoff pipeline.
//! * [`mc`]: Monte Carlo estimators and the inequality verification suite.
//! * [`cli`]: problem-file ingestion and the report surface used by the
//!   `mmconc` binary.
//! * [`oracle`]: brute-force path enumeration used to cross-check the
//!   transfer-operator evaluation on tiny instances.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod chain;
pub mod cli;
pub mod lift;
pub mod matcore;
pub mod mc;
pub mod oracle;

pub use bounds::{BernsteinParams, BoundReport, HoeffdingParams};
pub use chain::{FiniteChain, InitialDistribution, Trajectory};
pub use lift::{LiftedOperator, ObservableSequence};
pub use matcore::{HermitianMatrix, SymmetricMatrix};
pub use mc::{EstimateWithCI, VerificationRecord};

/// Complex scalar used throughout the lifted calculus.
pub type C64 = nalgebra::Complex<f64>;
