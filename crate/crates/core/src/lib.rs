//! Speckle tracking on compounded plane-wave ultrasound images.
//!
//! The crate covers the whole chain from a numerical phantom to motion
//! accuracy statistics: probe and sequence planning ([`config`]), synthetic
//! phantoms and channel data ([`phantom`], [`simulate`]), delay-and-sum
//! reconstruction and compounding ([`beamform`]), multi-pass block matching
//! ([`tracking`]), error metrics ([`metrics`]) and the experiment driver
//! ([`harness`]).

pub mod analytic;
pub mod beamform;
pub mod bspline;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod phantom;
pub mod simulate;
pub mod tracking;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sequences.md")]
    mod sequences {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/beamforming.md")]
    mod beamforming {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    mod tracking {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiment.md")]
    mod experiment {}
}
