//! Cross-domain adversarial auto-encoder.
//!
//! Two image domains share one content latent code (a probability vector over
//! K categories) and keep per-domain style codes matched to Gaussian priors
//! adversarially. The crate bundles the autodiff substrate, the network set,
//! the losses, supervised/semi-supervised training, pseudo-label domain
//! adaptation, dataset plumbing and the evaluation protocol.

pub mod autodiff;
pub mod nets;
pub mod objectives;
pub mod evaluate;
pub mod trainer;
pub mod adapt;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;

pub use error::{Error, Result};
