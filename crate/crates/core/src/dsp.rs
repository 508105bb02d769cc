//! Windows, framing, forward/inverse DFTs, and STFT/ISTFT primitives.
//!
//! Frames are laid out without center padding: frame `t` covers samples
//! `[t*hop, t*hop + window_length)` and its center time is
//! `t*hop + window_length/2`. Spectra are stored one-sided
//! (`fft_size/2 + 1` bins) since all inputs are real.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono time-domain signal plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    /// Validates that the rate is positive and every sample is finite.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample_rate must be positive"));
        }
        if let Some(pos) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite sample at index {pos}"
            )));
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Blackman,
    Hann,
    Rectangular,
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            WindowKind::Blackman => "blackman",
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blackman" => Ok(WindowKind::Blackman),
            "hann" => Ok(WindowKind::Hann),
            "rectangular" => Ok(WindowKind::Rectangular),
            other => Err(Error::invalid(format!("unknown window kind '{other}'"))),
        }
    }
}

/// Analysis window coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowVector {
    pub coefficients: Vec<f64>,
    pub kind: WindowKind,
    pub normalized: bool,
}

impl WindowVector {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// Builds a window of the given kind, optionally scaled so its coefficients
/// sum to one.
///
/// Blackman uses the exact coefficients (0.42, 0.5, 0.08) in symmetric form
/// with denominator `length - 1`; the mathematically-zero endpoints are
/// clamped to exactly 0 so overlap-add weighting can rely on them.
pub fn make_window(kind: WindowKind, length: usize, normalized: bool) -> Result<WindowVector> {
    if length == 0 {
        return Err(Error::invalid("window length must be at least 1"));
    }
    let mut coefficients = vec![0.0f64; length];
    if length == 1 {
        coefficients[0] = 1.0;
    } else {
        let denom = (length - 1) as f64;
        for (n, c) in coefficients.iter_mut().enumerate() {
            let x = n as f64 / denom;
            *c = match kind {
                WindowKind::Blackman => {
                    let w = 0.42 - 0.5 * (std::f64::consts::TAU * x).cos()
                        + 0.08 * (2.0 * std::f64::consts::TAU * x).cos();
                    w.max(0.0)
                }
                WindowKind::Hann => 0.5 - 0.5 * (std::f64::consts::TAU * x).cos(),
                WindowKind::Rectangular => 1.0,
            };
        }
    }
    if normalized {
        let sum: f64 = coefficients.iter().sum();
        if sum <= 0.0 {
            return Err(Error::invalid("window sums to zero; cannot normalize"));
        }
        for c in &mut coefficients {
            *c /= sum;
        }
    }
    Ok(WindowVector {
        coefficients,
        kind,
        normalized,
    })
}

/// STFT geometry shared by analysis, synthesis and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_length: usize,
    pub hop_size: usize,
    pub fft_size: usize,
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
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
        Ok(())
    }

    /// `1 + floor((len - window_length) / hop)`, the frame count for a signal.
    pub fn num_frames(&self, signal_len: usize) -> Result<usize> {
        if signal_len < self.window_length {
            return Err(Error::invalid(format!(
                "signal length ({}) shorter than one window ({})",
                signal_len, self.window_length
            )));
        }
        Ok(1 + (signal_len - self.window_length) / self.hop_size)
    }
}

/// One-sided complex STFT matrix, `num_frames x (fft_size/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub fft_size: usize,
    pub hop_size: usize,
    pub window_length: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn params(&self) -> StftParams {
        StftParams {
            window_length: self.window_length,
            hop_size: self.hop_size,
            fft_size: self.fft_size,
        }
    }
}

/// Squared-magnitude counterpart of [`ComplexSpectrogram`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub fft_size: usize,
    pub hop_size: usize,
    pub window_length: usize,
    pub sample_rate: u32,
}

impl PowerSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn total_energy(&self) -> f64 {
        self.frames.iter().flatten().sum()
    }
}

/// Forward DFT of a zero-padded real frame. Returns the full `fft_size`-point
/// complex spectrum.
pub fn dft(frame: &[f64], fft_size: usize) -> Result<Vec<Complex64>> {
    if !fft_size.is_power_of_two() {
        return Err(Error::invalid(format!(
            "fft_size ({fft_size}) must be a power of two"
        )));
    }
    if frame.len() > fft_size {
        return Err(Error::invalid(format!(
            "frame length ({}) exceeds fft_size ({fft_size})",
            frame.len()
        )));
    }
    let mut buf: Vec<Complex64> = frame
        .iter()
        .map(|&x| Complex64::new(x, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(fft_size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(fft_size).process(&mut buf);
    Ok(buf)
}

/// Inverse DFT with 1/N scaling, so `idft(dft(x)) == x`.
pub fn idft(spectrum: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = spectrum.len();
    if !n.is_power_of_two() {
        return Err(Error::invalid(format!(
            "spectrum length ({n}) must be a power of two"
        )));
    }
    let mut buf = spectrum.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    Ok(buf)
}

/// Short-time Fourier transform without center padding.
pub fn stft(
    audio: &AudioBuffer,
    window: &WindowVector,
    hop_size: usize,
    fft_size: usize,
) -> Result<ComplexSpectrogram> {
    let params = StftParams {
        window_length: window.len(),
        hop_size,
        fft_size,
    };
    params.validate()?;
    let num_frames = params.num_frames(audio.len())?;
    let window_length = window.len();
    let num_bins = fft_size / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let mut frames = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let start = t * hop_size;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < window_length {
                audio.samples[start + i] * window.coefficients[i]
            } else {
                0.0
            };
            *slot = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        frames.push(buf[..num_bins].to_vec());
    }
    Ok(ComplexSpectrogram {
        frames,
        fft_size,
        hop_size,
        window_length,
        sample_rate: audio.sample_rate,
    })
}

/// Element-wise squared magnitudes.
pub fn power_spectrogram(spec: &ComplexSpectrogram) -> PowerSpectrogram {
    PowerSpectrogram {
        frames: spec
            .frames
            .iter()
            .map(|frame| frame.iter().map(|z| z.norm_sqr()).collect())
            .collect(),
        fft_size: spec.fft_size,
        hop_size: spec.hop_size,
        window_length: spec.window_length,
        sample_rate: spec.sample_rate,
    }
}

/// Least-squares inverse STFT: windowed overlap-add divided by the summed
/// squared window. Samples with no window coverage come back as zero.
///
/// For an unmodified spectrogram this reconstructs the original signal
/// exactly wherever the window coverage is nonzero, for any window shape.
pub fn istft(spec: &ComplexSpectrogram, window: &WindowVector) -> Result<Vec<f64>> {
    if window.len() != spec.window_length {
        return Err(Error::invalid(format!(
            "window length ({}) does not match spectrogram window_length ({})",
            window.len(),
            spec.window_length
        )));
    }
    let num_frames = spec.num_frames();
    if num_frames == 0 {
        return Err(Error::invalid("empty spectrogram"));
    }
    let num_bins = spec.num_bins();
    let fft_size = spec.fft_size;
    let out_len = (num_frames - 1) * spec.hop_size + spec.window_length;
    let mut numerator = vec![0.0f64; out_len];
    let mut denominator = vec![0.0f64; out_len];

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    let scale = 1.0 / fft_size as f64;
    for (t, frame) in spec.frames.iter().enumerate() {
        if frame.len() != num_bins {
            return Err(Error::invalid(format!(
                "frame {t} has {} bins, expected {num_bins}",
                frame.len()
            )));
        }
        // Rebuild the full conjugate-symmetric spectrum from the one-sided half.
        buf[..num_bins].copy_from_slice(frame);
        for k in 1..fft_size - num_bins + 1 {
            buf[fft_size - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * spec.hop_size;
        for i in 0..spec.window_length {
            let w = window.coefficients[i];
            numerator[start + i] += w * buf[i].re * scale;
            denominator[start + i] += w * w;
        }
    }
    let den_max = denominator.iter().cloned().fold(0.0f64, f64::max);
    if den_max <= 0.0 {
        return Err(Error::invalid("window has no energy for overlap-add"));
    }
    let threshold = den_max * 1e-24;
    let out = numerator
        .iter()
        .zip(denominator.iter())
        .map(|(&num, &den)| if den > threshold { num / den } else { 0.0 })
        .collect();
    Ok(out)
}
