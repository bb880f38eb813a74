//! Pruning-aware training for tiny feedback recurrent autoencoders.
//!
//! Everything here is pure computation over `alloc` collections, so the crate
//! builds with `#![no_std]`. File formats, configuration and the experiment
//! runner live in the `frae-prune` companion crate.
//!
//! The pieces, bottom-up:
//!
//! - [`params`]: flat parameter vectors, the encoder/decoder/bias/codebook
//!   partition, magnitude-based pruning masks and the pruning direction.
//! - [`frae`]: a GRU-based feedback recurrent autoencoder with a 6-bit
//!   vector quantizer, coding one frame per step with no lookahead.
//! - [`spsa`]: simultaneous perturbation stochastic approximation with
//!   optional frozen coordinates.
//! - [`pa_loss`]: the pruning-aware fitness and its perturbation schedule.
//! - [`objective`]: reconstruction fitness functions averaged over a dataset.
//! - [`data`]: N-of-M stimulation pattern sequences and a synthetic generator.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
mod error;
pub mod frae;
pub mod objective;
pub mod pa_loss;
pub mod params;
pub mod rng;
pub mod spsa;

pub use error::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;
