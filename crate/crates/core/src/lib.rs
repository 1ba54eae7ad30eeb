//! Synthetic-image detection with separately trained artifact experts.
//!
//! The crate generates aligned real/fake datasets from procedural anchors
//! ([`forge`]), measures forensic image statistics ([`metrics`]), trains
//! LoRA experts on a frozen ViT backbone and fuses them with a gate
//! ([`model`], [`train`]), probes gradient conflict in mixed training
//! ([`conflict`]) and evaluates detectors under perturbations
//! ([`evalbench`]). [`cli`] backs the `sef` binary.
//!
//! ```
//! use sef::forge::{gen_procedural_real, simulate_gan_artifact};
//! use sef::metrics::mse;
//!
//! let real = gen_procedural_real(7, 64, 64).unwrap();
//! let fake = simulate_gan_artifact(&real).unwrap();
//! assert!(mse(&real, &fake).unwrap() > 0.0);
//! ```

pub mod cli;
pub mod conflict;
pub mod error;
pub mod evalbench;
pub mod forge;
pub mod imagelab;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
