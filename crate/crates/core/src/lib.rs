//! Constrained Bayesian optimization with a two-step lookahead acquisition.
//!
//! The crate covers Gaussian-process surrogates ([`gp`]), myopic acquisitions
//! ([`acq`]), the 2-OPT-C lookahead acquisition with its likelihood-ratio
//! gradient ([`twostep`]), the outer optimization loop ([`bo_loop`]),
//! benchmark problems with brute-force optima ([`problems`]) and an
//! experiment harness ([`harness`]).

pub mod acq;
pub mod bo_loop;
pub mod bounds;
pub mod error;
pub mod gp;
pub mod harness;
pub mod normal;
pub mod problems;
pub mod qmc;
pub mod search;
pub mod twostep;

pub use bounds::Bounds;
pub use error::{CboError, Result};
