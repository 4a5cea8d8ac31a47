//! Joint DFBS / STAR-RIS beamforming for integrated sensing and communication
//! with multiple targets and multiple users.

pub mod baselines;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod optimizer;
pub mod scenario;
pub mod sdp;
pub mod waveform;

pub use error::{Error, Result};
