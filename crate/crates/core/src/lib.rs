//! Trajectory-based video anomaly detection with normalizing flows.
//!
//! The pipeline consumes precomputed multi-object tracks (and optionally
//! 17-keypoint poses), encodes each track window as a 27-dimensional
//! kinematic feature sequence plus a learned class embedding, and models
//! the distribution of normal windows with an invertible flow. The
//! per-window negative log-likelihood is the anomaly score; an optional
//! pose branch refines person tracks through a reliability gate.

pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod pose;
pub mod preprocess;
pub mod scoring;
pub mod synth;
pub mod track_io;
pub mod training;

pub use error::{Error, Result};
