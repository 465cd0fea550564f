//! Asymmetric dual-generator GAN for unpaired multi-domain translation and
//! skeleton-guided paired translation.
//!
//! The crate is organised around a handful of pluggable strategies:
//! generator architectures ([`generators::ArchRegistry`]) and feature
//! extractors ([`features::ExtractorRegistry`]) are registered by name and
//! resolved at runtime from JSON configs or CLI flags.

pub mod checkpoint;
pub mod datamodel;
pub mod discriminators;
pub mod error;
pub mod features;
pub mod generators;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
