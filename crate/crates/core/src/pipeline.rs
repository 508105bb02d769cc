//! End-to-end orchestration of analysis, inversion, baseline, and
//! evaluation under one [`PipelineConfig`].

use crate::config::PipelineConfig;
use crate::dsp::{make_window, power_spectrogram, stft, AudioBuffer, WindowVector};
use crate::error::{Error, Result};
use crate::eval::{evaluate, griffin_lim, mel_pseudo_inverse, EvalReport};
use crate::mel::{build_filterbank, log_mel, FilterShape, LogMelSpectrogram, MelFilterbank};
use crate::pitch::{track_pitch, PitchTrack};
use crate::sinres::invert_mel_with;

/// Artifacts of the analysis front end; these are what the file formats
/// serialize and what the inversion consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub logmel: LogMelSpectrogram,
    pub pitch: PitchTrack,
}

/// Mel filterbank for the pipeline: triangular filters spanning 0 Hz to
/// Nyquist, sized to the given spectrogram geometry.
pub fn filterbank_for(num_mels: usize, fft_size: usize, sample_rate: u32) -> Result<MelFilterbank> {
    build_filterbank(
        num_mels,
        fft_size,
        sample_rate,
        0.0,
        sample_rate as f64 / 2.0,
        FilterShape::Triangular,
    )
}

fn analysis_window(config: &PipelineConfig) -> Result<WindowVector> {
    make_window(config.analysis_window, config.window_length, true)
}

/// Log-mel-spectrogram plus pitch track with identical framing.
///
/// The audio must already be at the configured sample rate; no resampling
/// happens here.
pub fn analyze(audio: &AudioBuffer, config: &PipelineConfig) -> Result<Analysis> {
    config.validate()?;
    if audio.sample_rate != config.sample_rate {
        return Err(Error::invalid(format!(
            "input sample rate ({} Hz) does not match configured sample_rate ({} Hz); \
             pass --sample-rate or resample the file first",
            audio.sample_rate, config.sample_rate
        )));
    }
    let window = analysis_window(config)?;
    let spec = stft(audio, &window, config.hop_size, config.fft_size)?;
    let power = power_spectrogram(&spec);
    let fb = filterbank_for(config.num_mels, config.fft_size, config.sample_rate)?;
    let logmel = log_mel(&power, &fb, config.log_floor_db)?;
    let pitch = track_pitch(
        audio,
        config.window_length,
        config.hop_size,
        config.f0_min,
        config.f0_max,
        config.yin_threshold,
    )?;
    Ok(Analysis { logmel, pitch })
}

/// Sinusoidal reconstruction. The filterbank is rebuilt from the log-mel
/// metadata so inversion of serialized artifacts is self-consistent; the
/// config contributes the window kind and the continuity tolerance.
pub fn invert(
    logmel: &LogMelSpectrogram,
    pitch: &PitchTrack,
    config: &PipelineConfig,
) -> Result<AudioBuffer> {
    let fb = filterbank_for(logmel.num_mels, logmel.fft_size, logmel.sample_rate)?;
    let window = make_window(config.analysis_window, logmel.window_length, true)?;
    invert_mel_with(logmel, pitch, &fb, &window, config.continuity_tolerance)
}

/// [`invert`] that also returns the harmonic frame set, for diagnostics.
pub fn invert_with_frames(
    logmel: &LogMelSpectrogram,
    pitch: &PitchTrack,
    config: &PipelineConfig,
) -> Result<(AudioBuffer, crate::sinres::HarmonicFrameSet)> {
    let fb = filterbank_for(logmel.num_mels, logmel.fft_size, logmel.sample_rate)?;
    let window = make_window(config.analysis_window, logmel.window_length, true)?;
    let frames =
        crate::sinres::plan_frames(logmel, pitch, &fb, &window, config.continuity_tolerance)?;
    let audio = crate::sinres::synthesize(&frames)?;
    Ok((audio, frames))
}

/// Griffin-Lim reconstruction from the same log-mel input, via the ridge
/// pseudo-inverse of the mel projection.
pub fn baseline(logmel: &LogMelSpectrogram, config: &PipelineConfig) -> Result<AudioBuffer> {
    let fb = filterbank_for(logmel.num_mels, logmel.fft_size, logmel.sample_rate)?;
    let magnitude = mel_pseudo_inverse(logmel, &fb)?;
    let params = crate::dsp::StftParams {
        window_length: logmel.window_length,
        hop_size: logmel.hop_size,
        fft_size: logmel.fft_size,
    };
    let window = make_window(config.analysis_window, logmel.window_length, true)?;
    griffin_lim(
        &magnitude,
        &params,
        &window,
        logmel.sample_rate,
        config.griffinlim_iterations,
        config.griffinlim_seed,
    )
}

/// Metric comparison under the configured STFT geometry with a normalized
/// Hann window (chosen for overlap-add behavior in the metric ISTFT path).
pub fn evaluate_audio(
    reference: &AudioBuffer,
    candidate: &AudioBuffer,
    config: &PipelineConfig,
    max_lag: usize,
) -> Result<EvalReport> {
    let params = config.stft_params();
    let window = make_window(crate::dsp::WindowKind::Hann, params.window_length, true)?;
    evaluate(reference, candidate, &params, &window, max_lag)
}
