//! Reconstruction of pitched audio from a log-mel-spectrogram.
//!
//! The inversion drives a harmonic sinusoidal model: partial frequencies are
//! integer multiples of a YIN pitch track, amplitudes come from the mel-band
//! energies through a calibrated source/filter rule, and phase accumulates
//! across frames so the oscillations stay continuous. A Griffin-Lim baseline
//! fed by a ridge pseudo-inverse of the same log-mel input and a
//! spectral-convergence harness make reconstructions comparable.
//!
//! ```no_run
//! use melsin::config::PipelineConfig;
//! use melsin::pipeline;
//!
//! let config = PipelineConfig::default();
//! let audio = melsin::wav::read_wav(std::path::Path::new("note.wav"))?;
//! let analysis = pipeline::analyze(&audio, &config)?;
//! let reconstructed = pipeline::invert(&analysis.logmel, &analysis.pitch, &config)?;
//! # Ok::<(), melsin::Error>(())
//! ```

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod mel;
pub mod pipeline;
pub mod pitch;
pub mod sinres;
pub mod wav;

pub use error::{Error, Result};
