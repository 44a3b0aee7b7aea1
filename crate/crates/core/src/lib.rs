//! Conditional event generator for marked temporal point processes.
//!
//! The crate covers the whole pipeline: classical ground-truth processes and
//! their thinning simulators, a small reverse-mode autodiff engine, the
//! generator and history-encoder networks, kernel density estimation over
//! generated samples, the two learning objectives (KDE likelihood and
//! conditional-VAE ELBO), and evaluation metrics.

pub mod autodiff;
pub mod ceg;
pub mod classical;
pub mod data;
pub mod error;
pub mod eval;
pub mod kde;
pub mod nets;
pub mod rng;
pub mod stats;
pub mod train;

pub use data::{Dataset, Event, EventSequence};
pub use error::{Error, Result};
pub use rng::StreamKey;
