//! Retweeter-bot detection from retweet timing alone.
//!
//! The pipeline turns per-account retweet logs into run-length encoded
//! per-second series, projects them to short latent vectors with one of
//! several interchangeable extractors, clusters the vectors with HDBSCAN and
//! labels every clustered account as a bot. A synthetic behavior generator
//! and an RTT plot emitter make every stage testable offline.

pub mod cluster;
pub mod detect;
pub mod error;
pub mod extract;
pub mod formats;
pub mod handcrafted;
pub mod ingest;
pub mod linproj;
pub mod pipeline;
pub mod rtt;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
