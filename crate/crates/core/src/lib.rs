//! Automatic cross-domain transfer for linear regression.
//!
//! The pipeline mines latent domains in the training data with a
//! Dirichlet-process mixture over per-instance regression coefficients
//! ([`dp`]), learns a shared low-dimensional space that aligns the joint
//! `(x, ŷ)` distribution of every latent domain with the unlabeled target
//! domain ([`adapt`]), and fits ridge regression in that space ([`regress`]).

pub mod adapt;
pub mod bench;
pub mod bundle;
pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod projection;
pub mod regress;
pub mod stochastics;
pub mod synth;

pub use error::{Error, Result};
