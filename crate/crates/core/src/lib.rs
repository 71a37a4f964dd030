//! Fall detection from ambient bathroom audio.
//!
//! The crate covers the whole pipeline: ingestion and corpus manifests
//! ([`audio_io`]), corpus expansion ([`augmentation`]), feature extraction
//! ([`features`]), a masked Transformer encoder classifier trained from
//! scratch ([`transformer`]), evaluation and baselines ([`experiments`]) and
//! a streaming alert daemon ([`sentinel`]).

pub mod audio_io;
pub mod augmentation;
pub mod dsp;
pub mod error;
pub mod experiments;
pub mod features;
pub mod sentinel;
pub mod transformer;

pub use error::{Error, Result};
