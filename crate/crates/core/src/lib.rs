//! Restoration agent engine.
//!
//! This crate holds everything that is pure computation: the distortion
//! taxonomy, deterministic degradation synthesis, full-reference metrics,
//! the restoration tool registry (classical and simulated families), the
//! fast/slow/feedback agent contracts, the routing state machine and the
//! instruction-corpus planners. It is `no_std` and only needs `alloc`;
//! file formats, subprocess codecs, HTTP clients and the service live in the
//! `restorekit` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agents;
pub mod datagen;
pub mod degrade;
pub mod domain;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod tools;

pub use domain::{
    ContentHash, DistortionKind, DomainError, ImageState, Provenance, QualityReport, Raster, ToolId,
};
