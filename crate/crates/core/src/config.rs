//! Pipeline configuration with validated cross-field constraints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{StftParams, WindowKind};
use crate::error::{Error, Result};

/// All knobs of the analysis/inversion/evaluation pipeline. Defaults follow
/// the reference configuration: 16 kHz audio, 80 mel bands from a
/// 1024/256/1024 STFT under a normalized Blackman window, YIN searching
/// 80-3000 Hz, 6% pitch continuity, and a 32-iteration Griffin-Lim baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub num_mels: usize,
    pub window_length: usize,
    pub hop_size: usize,
    pub fft_size: usize,
    pub analysis_window: WindowKind,
    pub f0_min: f64,
    pub f0_max: f64,
    pub yin_threshold: f64,
    pub continuity_tolerance: f64,
    pub log_floor_db: f64,
    pub griffinlim_iterations: usize,
    pub griffinlim_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate: 16000,
            num_mels: 80,
            window_length: 1024,
            hop_size: 256,
            fft_size: 1024,
            analysis_window: WindowKind::Blackman,
            f0_min: 80.0,
            f0_max: 3000.0,
            yin_threshold: 0.1,
            continuity_tolerance: 0.06,
            log_floor_db: -100.0,
            griffinlim_iterations: 32,
            griffinlim_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn stft_params(&self) -> StftParams {
        StftParams {
            window_length: self.window_length,
            hop_size: self.hop_size,
            fft_size: self.fft_size,
        }
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    /// Checks every cross-field constraint, naming both fields on violation.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if self.num_mels == 0 {
            return Err(Error::invalid("num_mels must be at least 1"));
        }
        if self.hop_size == 0 {
            return Err(Error::invalid("hop_size must be positive"));
        }
        if self.hop_size > self.window_length {
            return Err(Error::invalid(format!(
                "hop_size ({}) exceeds window_length ({})",
                self.hop_size, self.window_length
            )));
        }
        if self.window_length > self.fft_size {
            return Err(Error::invalid(format!(
                "window_length ({}) exceeds fft_size ({})",
                self.window_length, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::invalid(format!(
                "fft_size ({}) must be a power of two",
                self.fft_size
            )));
        }
        if !self.f0_min.is_finite() || self.f0_min <= 0.0 {
            return Err(Error::invalid(format!(
                "f0_min ({}) must be positive",
                self.f0_min
            )));
        }
        if self.f0_min >= self.f0_max {
            return Err(Error::invalid(format!(
                "f0_min ({}) must be below f0_max ({})",
                self.f0_min, self.f0_max
            )));
        }
        if self.f0_max > self.nyquist_hz() {
            return Err(Error::invalid(format!(
                "f0_max ({}) exceeds sample_rate/2 ({})",
                self.f0_max,
                self.nyquist_hz()
            )));
        }
        // YIN needs one period of f0_min plus interpolation margin per frame.
        let needed = (self.sample_rate as f64 / self.f0_min).floor() as usize + 2;
        if self.window_length < needed {
            return Err(Error::invalid(format!(
                "window_length ({}) too short for f0_min ({} Hz): need at least {needed} samples",
                self.window_length, self.f0_min
            )));
        }
        if !self.yin_threshold.is_finite() || self.yin_threshold <= 0.0 {
            return Err(Error::invalid(format!(
                "yin_threshold ({}) must be positive",
                self.yin_threshold
            )));
        }
        if !self.continuity_tolerance.is_finite() || self.continuity_tolerance <= 0.0 {
            return Err(Error::invalid(format!(
                "continuity_tolerance ({}) must be positive",
                self.continuity_tolerance
            )));
        }
        if !self.log_floor_db.is_finite() {
            return Err(Error::invalid("log_floor_db must be finite"));
        }
        if self.griffinlim_iterations == 0 {
            return Err(Error::invalid("griffinlim_iterations must be at least 1"));
        }
        Ok(())
    }

    /// Loads a TOML `key = value` file; keys not present keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
