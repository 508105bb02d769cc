//! Evaluation harness: alignment, energy normalization, spectral
//! convergence, and the Griffin-Lim baseline reconstruction.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::{
    istft, power_spectrogram, stft, AudioBuffer, ComplexSpectrogram, PowerSpectrogram, StftParams,
    WindowVector,
};
use crate::error::{Error, Result};
use crate::mel::{LogMelSpectrogram, MelFilterbank};

/// Result bundle of one reference/candidate comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Spectral convergence as printed in the source metric:
    /// `sqrt(sum |S - S_hat| / (n + m))` over power spectrograms.
    pub spectral_convergence: f64,
    /// Standard relative Frobenius form, reported as a secondary diagnostic:
    /// `||S - S_hat||_F / ||S||_F`.
    pub spectral_convergence_relative: f64,
    /// Lag (samples) that maximized the normalized cross-correlation.
    pub alignment_lag: i64,
    /// Energy scale applied to the candidate before the metric.
    pub energy_scale: f64,
    pub stft_params: StftParams,
}

/// Finds the lag in `[-max_lag, max_lag]` maximizing the magnitude of the
/// normalized cross-correlation. Ties break toward smaller `|lag|`, then
/// toward the negative lag.
pub fn align(reference: &AudioBuffer, candidate: &AudioBuffer, max_lag: usize) -> Result<i64> {
    if reference.sample_rate != candidate.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate mismatch: reference {} Hz vs candidate {} Hz",
            reference.sample_rate, candidate.sample_rate
        )));
    }
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::invalid("cannot align empty signals"));
    }
    // Mathematical ties (periodic signals line up exactly at whole-period
    // lags) come out a few ulps apart in float; treat them as ties so the
    // scan order decides.
    const TIE_EPS: f64 = 1e-12;
    let mut best_lag = 0i64;
    let mut best_corr = f64::NEG_INFINITY;
    for lag in lags_by_magnitude(max_lag as i64) {
        let corr = normalized_correlation(&reference.samples, &candidate.samples, lag).abs();
        if corr > best_corr + TIE_EPS {
            best_corr = corr;
            best_lag = lag;
        }
    }
    Ok(best_lag)
}

/// 0, -1, 1, -2, 2, ...: scanning in this order plus strict improvement
/// implements the tie-breaking rule (smaller |lag| first, negative before
/// positive at equal magnitude).
fn lags_by_magnitude(max_lag: i64) -> impl Iterator<Item = i64> {
    std::iter::once(0).chain((1..=max_lag).flat_map(|l| [-l, l]))
}

/// Pearson-style normalized cross-correlation of the overlapping segment at
/// the given lag (candidate index = reference index + lag).
fn normalized_correlation(reference: &[f64], candidate: &[f64], lag: i64) -> f64 {
    let start = (-lag).max(0) as usize;
    let end = reference
        .len()
        .min((candidate.len() as i64 - lag).max(0) as usize);
    if start >= end {
        return 0.0;
    }
    let mut dot = 0.0;
    let mut ref_energy = 0.0;
    let mut cand_energy = 0.0;
    for n in start..end {
        let r = reference[n];
        let c = candidate[(n as i64 + lag) as usize];
        dot += r * c;
        ref_energy += r * r;
        cand_energy += c * c;
    }
    let denom = (ref_energy * cand_energy).sqrt();
    if denom > 0.0 {
        dot / denom
    } else {
        0.0
    }
}

/// Shifts the candidate by `-lag` and truncates both signals to their common
/// length, as the metric pipeline requires after [`align`].
pub fn apply_lag(reference: &[f64], candidate: &[f64], lag: i64) -> (Vec<f64>, Vec<f64>) {
    let (r, c): (&[f64], &[f64]) = if lag >= 0 {
        let lag = (lag as usize).min(candidate.len());
        (reference, &candidate[lag..])
    } else {
        let lag = ((-lag) as usize).min(reference.len());
        (&reference[lag..], candidate)
    };
    let len = r.len().min(c.len());
    (r[..len].to_vec(), c[..len].to_vec())
}

/// Energy normalization scale: `sqrt(total ref power / total cand power)`.
/// The caller applies it to the candidate's time-domain samples (power scales
/// by its square) and recomputes the candidate spectrogram.
pub fn energy_normalize(ref_power: &PowerSpectrogram, cand_power: &PowerSpectrogram) -> Result<f64> {
    check_same_shape(ref_power, cand_power)?;
    let ref_total = ref_power.total_energy();
    let cand_total = cand_power.total_energy();
    if cand_total <= 0.0 {
        return Err(Error::DegenerateCandidate(
            "candidate spectrogram carries no energy".into(),
        ));
    }
    Ok((ref_total / cand_total).sqrt())
}

/// Spectral convergence as printed: square root of the summed absolute power
/// difference divided by `n + m` (bins plus frames).
pub fn spectral_convergence(
    ref_power: &PowerSpectrogram,
    cand_power: &PowerSpectrogram,
) -> Result<f64> {
    check_same_shape(ref_power, cand_power)?;
    let m = ref_power.num_frames() as f64;
    let n = ref_power.num_bins() as f64;
    let sum: f64 = ref_power
        .frames
        .iter()
        .zip(cand_power.frames.iter())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .sum();
    Ok((sum / (n + m)).sqrt())
}

/// Relative Frobenius spectral convergence over the same power spectrograms.
pub fn relative_spectral_convergence(
    ref_power: &PowerSpectrogram,
    cand_power: &PowerSpectrogram,
) -> Result<f64> {
    check_same_shape(ref_power, cand_power)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (a, b) in ref_power.frames.iter().zip(cand_power.frames.iter()) {
        for (x, y) in a.iter().zip(b.iter()) {
            diff += (x - y) * (x - y);
            norm += x * x;
        }
    }
    if norm <= 0.0 {
        return Err(Error::invalid("reference spectrogram carries no energy"));
    }
    Ok((diff / norm).sqrt())
}

fn check_same_shape(a: &PowerSpectrogram, b: &PowerSpectrogram) -> Result<()> {
    if a.num_frames() != b.num_frames() || a.num_bins() != b.num_bins() {
        return Err(Error::invalid(format!(
            "spectrogram shape mismatch: {}x{} vs {}x{}",
            a.num_frames(),
            a.num_bins(),
            b.num_frames(),
            b.num_bins()
        )));
    }
    Ok(())
}

/// Full metric pipeline: align, truncate, energy-normalize the candidate,
/// then compute both spectral-convergence figures with the given metric STFT.
pub fn evaluate(
    reference: &AudioBuffer,
    candidate: &AudioBuffer,
    params: &StftParams,
    window: &WindowVector,
    max_lag: usize,
) -> Result<EvalReport> {
    params.validate()?;
    let lag = align(reference, candidate, max_lag)?;
    let (ref_aligned, cand_aligned) = apply_lag(&reference.samples, &candidate.samples, lag);
    let sr = reference.sample_rate;
    let ref_audio = AudioBuffer::new(ref_aligned, sr)?;
    let cand_audio = AudioBuffer::new(cand_aligned, sr)?;

    let ref_power = power_spectrogram(&stft(&ref_audio, window, params.hop_size, params.fft_size)?);
    let cand_power =
        power_spectrogram(&stft(&cand_audio, window, params.hop_size, params.fft_size)?);
    let scale = energy_normalize(&ref_power, &cand_power)?;

    let scaled: Vec<f64> = cand_audio.samples.iter().map(|s| s * scale).collect();
    let scaled_audio = AudioBuffer::new(scaled, sr)?;
    let scaled_power =
        power_spectrogram(&stft(&scaled_audio, window, params.hop_size, params.fft_size)?);

    Ok(EvalReport {
        spectral_convergence: spectral_convergence(&ref_power, &scaled_power)?,
        spectral_convergence_relative: relative_spectral_convergence(&ref_power, &scaled_power)?,
        alignment_lag: lag,
        energy_scale: scale,
        stft_params: *params,
    })
}

/// CSV row matching the report interface:
/// `ref_path,cand_path,sc_eq5,sc_relative,lag_samples,energy_scale`.
pub fn eval_csv_header() -> &'static str {
    "ref_path,cand_path,sc_eq5,sc_relative,lag_samples,energy_scale"
}

pub fn eval_csv_row(report: &EvalReport, ref_path: &str, cand_path: &str) -> String {
    format!(
        "{ref_path},{cand_path},{},{},{},{}",
        report.spectral_convergence,
        report.spectral_convergence_relative,
        report.alignment_lag,
        report.energy_scale
    )
}

/// Ridge-regularized pseudo-inverse of the mel projection, giving Griffin-Lim
/// a linear-frequency magnitude target from the same log-mel input the
/// sinusoidal path consumes.
///
/// Per frame: `E = 10^(dB/10)`, solve `(W W^T + lambda I) x = E`, take
/// `P_hat = W^T x` clamped to zero, and return `sqrt(P_hat)`.
pub fn mel_pseudo_inverse(logmel: &LogMelSpectrogram, fb: &MelFilterbank) -> Result<Vec<Vec<f64>>> {
    if logmel.num_mels != fb.num_mels()
        || logmel.fft_size != fb.fft_size
        || logmel.sample_rate != fb.sample_rate
    {
        return Err(Error::invalid(
            "log-mel metadata does not match the filterbank".to_string(),
        ));
    }
    const RIDGE: f64 = 1e-8;
    let m = fb.num_mels();
    let mut gram = vec![vec![0.0f64; m]; m];
    for (i, row_i) in fb.weights.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in i..m {
            let dot: f64 = row_i
                .iter()
                .zip(fb.weights[j].iter())
                .map(|(a, b)| a * b)
                .sum();
            gram[i][j] = dot;
            gram[j][i] = dot;
        }
        gram[i][i] += RIDGE;
    }
    let chol = cholesky(&gram)?;

    let mut magnitudes = Vec::with_capacity(logmel.num_frames());
    for frame in &logmel.frames {
        let energies: Vec<f64> = frame.iter().map(|db| 10f64.powf(db / 10.0)).collect();
        let x = cholesky_solve(&chol, &energies);
        let mut mag = vec![0.0f64; fb.num_bins()];
        for (b, &coef) in x.iter().enumerate() {
            for (k, &w) in fb.weights[b].iter().enumerate() {
                mag[k] += w * coef;
            }
        }
        for v in &mut mag {
            if !v.is_finite() {
                return Err(Error::NumericFailure(
                    "non-finite value in pseudo-inverse solution".into(),
                ));
            }
            *v = v.max(0.0).sqrt();
        }
        magnitudes.push(mag);
    }
    Ok(magnitudes)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            sum -= l[i][..j].iter().zip(&l[j][..j]).map(|(x, y)| x * y).sum::<f64>();
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return Err(Error::NumericFailure(format!(
                        "mel Gram matrix not positive definite at pivot {i} ({sum})"
                    )));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` by forward then backward substitution.
fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        sum -= l[i][..i].iter().zip(&y[..i]).map(|(x, v)| x * v).sum::<f64>();
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        sum -= l[i + 1..].iter().zip(&x[i + 1..]).map(|(row, v)| row[i] * v).sum::<f64>();
        x[i] = sum / l[i][i];
    }
    x
}

/// Classic Griffin-Lim: random initial phase (seeded), then alternating
/// ISTFT/STFT projections keeping the target magnitude. Returns the signal
/// and, per iteration, the Frobenius distance between the projected STFT
/// magnitude and the target.
pub fn griffin_lim_with_trace(
    magnitude: &[Vec<f64>],
    params: &StftParams,
    window: &WindowVector,
    sample_rate: u32,
    iterations: usize,
    seed: u64,
) -> Result<(AudioBuffer, Vec<f64>)> {
    params.validate()?;
    if iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    if magnitude.is_empty() {
        return Err(Error::invalid("empty magnitude target"));
    }
    let num_bins = params.fft_size / 2 + 1;
    for (t, frame) in magnitude.iter().enumerate() {
        if frame.len() != num_bins {
            return Err(Error::invalid(format!(
                "magnitude frame {t} has {} bins, expected {num_bins}",
                frame.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = ComplexSpectrogram {
        frames: magnitude
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|&mag| {
                        let phase: f64 = rng.gen_range(0.0..TAU);
                        Complex64::from_polar(mag, phase)
                    })
                    .collect()
            })
            .collect(),
        fft_size: params.fft_size,
        hop_size: params.hop_size,
        window_length: params.window_length,
        sample_rate,
    };

    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let samples = istft(&spec, window)?;
        let audio = AudioBuffer::new(samples, sample_rate)?;
        let projected = stft(&audio, window, params.hop_size, params.fft_size)?;
        let mut dist = 0.0;
        for (target_frame, proj_frame) in magnitude.iter().zip(projected.frames.iter()) {
            for (&target, z) in target_frame.iter().zip(proj_frame.iter()) {
                let d = z.norm() - target;
                dist += d * d;
            }
        }
        trace.push(dist.sqrt());
        for (spec_frame, (target_frame, proj_frame)) in spec
            .frames
            .iter_mut()
            .zip(magnitude.iter().zip(projected.frames.iter()))
        {
            for (slot, (&target, z)) in spec_frame
                .iter_mut()
                .zip(target_frame.iter().zip(proj_frame.iter()))
            {
                let norm = z.norm();
                *slot = if norm > 0.0 {
                    z * (target / norm)
                } else {
                    Complex64::new(target, 0.0)
                };
            }
        }
    }
    let samples = istft(&spec, window)?;
    Ok((AudioBuffer::new(samples, sample_rate)?, trace))
}

/// [`griffin_lim_with_trace`] without the diagnostic trace.
pub fn griffin_lim(
    magnitude: &[Vec<f64>],
    params: &StftParams,
    window: &WindowVector,
    sample_rate: u32,
    iterations: usize,
    seed: u64,
) -> Result<AudioBuffer> {
    griffin_lim_with_trace(magnitude, params, window, sample_rate, iterations, seed)
        .map(|(audio, _)| audio)
}
