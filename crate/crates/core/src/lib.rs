//! Seizure risk assessment from multi-channel scalp EEG.
//!
//! The crate is organized along the processing chain:
//!
//! ```text
//! Recording ──► preprocess (bandpass, notch, average reference, ICA hook)
//!           ──► imaging    (normalize to [0,1], 19×256 / 95×256 / 190×256 images)
//!           ──► classifier (CNN, softmax pre-ictal probability)
//!           ──► forecast   (60 s mean likelihood, threshold Z, Firing Power Y, SPH/SOP alarms)
//!           ──► evaluation (sensitivity, FPR/h, threshold grid, best combination)
//! ```
//!
//! [`pipeline`] glues the stages together for one patient.

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod imaging;
pub mod io_util;
pub mod pipeline;
pub mod preprocess;
pub mod recording;
pub mod synth;
pub mod timeline;

pub use error::{Error, Result};
