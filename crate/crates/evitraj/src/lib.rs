//! Desk-scale trajectory prediction with evidential uncertainty.
//!
//! The pipeline: generate synthetic agent-centric driving scenes
//! ([`scenegen`]), cluster training futures into a discrete anchor set
//! ([`anchors`]), train classifiers over those anchors ([`model`]) — either
//! softmax baselines or normalizing-flow-based evidential heads
//! ([`flows`], [`evidential`]) — and score calibration plus OOD detection
//! ([`metrics`]). Artifacts round-trip through a hashed manifest+payload
//! container ([`persist`]).

pub mod anchors;
pub mod eval;
pub mod evidential;
pub mod flows;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod rng;
pub mod scenegen;
