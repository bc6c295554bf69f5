//! Joint far- and near-end speech intelligibility enhancement.
//!
//! The processing chain is an MVDR beamformer on the microphone array
//! followed by per-frequency gains that maximize a band-importance-weighted
//! audibility sum at the listener under an equal playback power constraint.
//!
//! Modules follow the chain: [`spectral`] (analysis, synthesis, statistics),
//! [`bands`] (critical-band filterbank and weight mappings), [`beamformer`]
//! (MVDR), [`gainopt`] (closed-form gain allocation and its independent
//! oracles), [`scene`] (acoustic scenario synthesis), [`metrics`]
//! (audibility scoring), plus [`wav`] and [`resample`] utilities.

pub mod bands;
pub mod beamformer;
pub mod error;
pub mod gainopt;
pub mod metrics;
pub mod resample;
pub mod scene;
pub mod spectral;
pub mod wav;

pub use error::{Error, Result};
