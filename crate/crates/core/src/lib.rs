//! Sequence transduction with attention encoder-decoder models and
//! beam-search-coupled discriminative training objectives.
//!
//! The crate provides a reverse-mode autodiff substrate ([`autodiff`]), an
//! attention-based encoder-decoder ([`model`]), N-best beam search with
//! per-step prefix bookkeeping ([`beam`]), edit-distance metrics
//! ([`metrics`]), the four training objectives ([`loss`]) including prefix
//! boosting, a training/evaluation driver ([`trainer`]), and dataset
//! ingestion plus synthetic task generation ([`data`]).

pub mod autodiff;
pub mod beam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
