//! Analysis of continuous-time switched linear systems `ẋ = A_σ(t) x`.
//!
//! The crate brackets the worst-case (deterministic) Lyapunov exponent of a
//! finite family of modes, estimates probabilistic Lyapunov exponents when
//! the switching signal is a continuous-time Markov chain, decomposes
//! parametric chain families into timescale hierarchies with their limit
//! convexified processes, and runs executable checks of the equality
//! criteria between the two kinds of exponents.
//!
//! Modules:
//! - [`linalg`]: dense kernels (exponentials, spectra, real-part eigenspace
//!   splits, irreducibility, the skew-shift certificate);
//! - [`flows`]: switching signals and the fundamental flow `Φ_σ(t)`;
//! - [`detlyap`]: lower/upper bounds bracketing the deterministic exponent;
//! - [`ctmc`]: finite-state chains, recurrence structure, capacities,
//!   trace processes;
//! - [`pdmp`]: Monte Carlo exponent estimation and convexified processes;
//! - [`hierarchy`]: multiscale decomposition of monomial rate families;
//! - [`criteria`]: equality verdicts and the gap report.

// `!(x > 0.0)` guards deliberately reject NaN along with the out-of-range
// values; the suggested `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod ctmc;
pub mod detlyap;
pub mod error;
pub mod flows;
pub mod hierarchy;
pub mod linalg;
pub mod pdmp;
pub mod rng;

pub use error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type Vec64 = nalgebra::DVector<f64>;

pub use ctmc::{ChainStructure, MarkovParams, RateMatrix};
pub use detlyap::{BracketConfig, LyapunovBracket};
pub use flows::{Signal, SwitchedSystem};
pub use hierarchy::{HierarchyReport, RateFamily};
pub use linalg::RealPartSplit;
pub use pdmp::{ConvexifiedProcess, LyapunovEstimate};
