//! Identification of Markov-switched autoregressive systems from noisy
//! input-output data.
//!
//! The pipeline runs in four stages: estimate the noise level and the
//! decoupling polynomial from moment-corrected Veronese statistics, recover the
//! subsystem parameters by differentiating that polynomial, decode the active
//! mode on short independent snippets, and estimate the transition matrix from
//! the decoded transition counts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decode;
pub mod error;
pub mod experiment;
pub mod extract;
pub mod io;
pub mod model;
pub mod ptm;
pub mod sigma;
pub mod simulate;
pub mod veronese;

pub use error::{Error, Result};
pub use model::{Dataset, NoiseSpec, SarModel, SubsystemParams, TransitionMatrix, Truth};
