//! Frame-wise fundamental-frequency estimation.
//!
//! YIN per frame: difference function over a fixed summation window,
//! cumulative-mean-normalized difference, absolute threshold with a descent
//! to the dip's local minimum, then parabolic interpolation over the raw
//! difference function. Frames share the STFT framing so every spectrogram
//! frame pairs with exactly one f0 estimate.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::{AudioBuffer, StftParams};
use crate::error::{Error, Result};

/// Per-frame f0 estimates; `None` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub f0_hz: Vec<Option<f64>>,
    pub hop_size: usize,
    pub window_length: usize,
    pub sample_rate: u32,
    pub search_min_hz: f64,
    pub search_max_hz: f64,
}

impl PitchTrack {
    pub fn num_frames(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn num_voiced(&self) -> usize {
        self.f0_hz.iter().filter(|f| f.is_some()).count()
    }
}

/// Estimates the fundamental frequency of one frame, or `None` if the frame
/// shows no usable periodicity.
pub fn yin_frame(
    frame: &[f64],
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    threshold: f64,
) -> Result<Option<f64>> {
    if !(fmin > 0.0 && fmin < fmax) {
        return Err(Error::invalid(format!(
            "need 0 < fmin < fmax, got fmin={fmin}, fmax={fmax}"
        )));
    }
    if fmax > sample_rate as f64 / 2.0 {
        return Err(Error::invalid(format!(
            "fmax ({fmax} Hz) exceeds Nyquist ({} Hz)",
            sample_rate as f64 / 2.0
        )));
    }
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::invalid("threshold must be positive"));
    }
    let sr = sample_rate as f64;
    let tau_min = (sr / fmax).ceil() as usize;
    let tau_max = (sr / fmin).floor() as usize;
    // One full period of the lowest frequency plus interpolation margin.
    if frame.len() < tau_max + 2 {
        return Err(Error::invalid(format!(
            "frame length ({}) below sample_rate/fmin + 2 ({})",
            frame.len(),
            tau_max + 2
        )));
    }

    // Difference function with a fixed summation window so the normalization
    // is unbiased across lags. Lag tau_max + 1 is needed for interpolation.
    let sum_len = frame.len() - (tau_max + 1);
    let mut diff = vec![0.0f64; tau_max + 2];
    for (tau, d) in diff.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for j in 0..sum_len {
            let delta = frame[j] - frame[j + tau];
            acc += delta * delta;
        }
        *d = acc;
    }

    // Cumulative-mean-normalized difference; defined as 1 where the signal
    // carries no energy at all.
    let mut cmnd = vec![1.0f64; tau_max + 2];
    let mut running = 0.0;
    for tau in 1..=tau_max + 1 {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    // The dip of a short-period sinusoid can fall entirely between integer
    // lags, so threshold the parabola-interpolated valley depth at each
    // local minimum instead of the raw samples; otherwise the first lag to
    // cross the threshold can be a whole period too late (octave error).
    let dip_value = |tau: usize| -> f64 {
        if cmnd[tau] <= cmnd[tau - 1] && cmnd[tau] <= cmnd[tau + 1] {
            vertex_value(cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]).max(0.0)
        } else {
            cmnd[tau]
        }
    };

    // First dip below the threshold, walked down to its valley bottom (the
    // threshold usually fires on the dip's slope); otherwise the global
    // minimum, if it is at least a half-decent dip.
    let descend = |start: usize| -> usize {
        let mut t = start;
        while t < tau_max && cmnd[t + 1] < cmnd[t] {
            t += 1;
        }
        t
    };
    let mut picked = None;
    for tau in tau_min..=tau_max {
        if dip_value(tau) < threshold {
            picked = Some(descend(tau));
            break;
        }
    }
    if picked.is_none() {
        let (best_tau, best_val) = (tau_min..=tau_max)
            .map(|t| (t, dip_value(t)))
            .fold((tau_min, f64::INFINITY), |acc, cur| {
                if cur.1 < acc.1 {
                    cur
                } else {
                    acc
                }
            });
        if best_val < 2.0 * threshold {
            picked = Some(descend(best_tau));
        }
    }
    let Some(tau) = picked else {
        return Ok(None);
    };

    // The refined lag may leave the integer search range by a fraction of a
    // sample; only the frequency itself is held to the search bounds.
    let refined = parabolic_refine(&diff, tau);
    let freq = (sr / refined).clamp(fmin, fmax);
    Ok(Some(freq))
}

/// Minimum value of the parabola through three equally spaced samples with
/// the middle one lowest.
fn vertex_value(c0: f64, c1: f64, c2: f64) -> f64 {
    let denom = c0 - 2.0 * c1 + c2;
    if denom <= 1e-30 {
        return c1;
    }
    c1 - (c0 - c2) * (c0 - c2) / (8.0 * denom)
}

/// Parabolic vertex through `(tau-1, tau, tau+1)` of the raw difference
/// function, clamped to stay within one lag of the integer estimate.
fn parabolic_refine(diff: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= diff.len() {
        return tau as f64;
    }
    let s0 = diff[tau - 1];
    let s1 = diff[tau];
    let s2 = diff[tau + 1];
    let denom = s0 - 2.0 * s1 + s2;
    if denom.abs() < 1e-30 {
        return tau as f64;
    }
    let shift = 0.5 * (s0 - s2) / denom;
    tau as f64 + shift.clamp(-1.0, 1.0)
}

/// Runs [`yin_frame`] over frames laid out exactly like the STFT's.
pub fn track_pitch(
    audio: &AudioBuffer,
    window_length: usize,
    hop_size: usize,
    fmin: f64,
    fmax: f64,
    threshold: f64,
) -> Result<PitchTrack> {
    let params = StftParams {
        window_length,
        hop_size,
        // Framing checks only; the FFT size plays no role in pitch analysis.
        fft_size: window_length.next_power_of_two(),
    };
    params.validate()?;
    let num_frames = params.num_frames(audio.len())?;
    let mut f0_hz = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        let start = t * hop_size;
        let frame = &audio.samples[start..start + window_length];
        f0_hz.push(yin_frame(frame, audio.sample_rate, fmin, fmax, threshold)?);
    }
    Ok(PitchTrack {
        f0_hz,
        hop_size,
        window_length,
        sample_rate: audio.sample_rate,
        search_min_hz: fmin,
        search_max_hz: fmax,
    })
}

/// Replaces voiced frames that deviate from the last accepted voiced value by
/// more than `tolerance` (as a fraction of that value) with the accepted
/// value. Unvoiced frames pass through and do not move the reference.
pub fn enforce_continuity(track: &PitchTrack, tolerance: f64) -> PitchTrack {
    let mut out = track.clone();
    let mut accepted: Option<f64> = None;
    for slot in out.f0_hz.iter_mut() {
        if let Some(f) = *slot {
            match accepted {
                None => accepted = Some(f),
                Some(prev) => {
                    if (f - prev).abs() / prev > tolerance {
                        *slot = Some(prev);
                    } else {
                        accepted = Some(f);
                    }
                }
            }
        }
    }
    out
}

/// CSV form: header `#pitch v1 hop=<H> win=<W> sr=<R>`, then
/// `frame_index,f0_hz` rows with an empty f0 field for unvoiced frames.
pub fn write_pitch_csv<W: Write>(writer: &mut W, track: &PitchTrack) -> Result<()> {
    writeln!(
        writer,
        "#pitch v1 hop={} win={} sr={}",
        track.hop_size, track.window_length, track.sample_rate
    )?;
    for (i, f0) in track.f0_hz.iter().enumerate() {
        match f0 {
            Some(f) => writeln!(writer, "{i},{f}")?,
            None => writeln!(writer, "{i},")?,
        }
    }
    Ok(())
}

pub fn read_pitch_csv<R: Read>(reader: R) -> Result<PitchTrack> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty pitch CSV"))??;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#pitch") || fields.next() != Some("v1") {
        return Err(Error::parse(0, "pitch CSV must start with '#pitch v1'"));
    }
    let mut hop = None;
    let mut win = None;
    let mut sr = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(0, format!("bad header field '{field}'")))?;
        let num: u64 = value
            .parse()
            .map_err(|_| Error::parse(0, format!("bad {key} value '{value}'")))?;
        match key {
            "hop" => hop = Some(num),
            "win" => win = Some(num),
            "sr" => sr = Some(num),
            _ => return Err(Error::parse(0, format!("unknown header key '{key}'"))),
        }
    }
    let hop = hop.ok_or_else(|| Error::parse(0, "header missing hop"))?;
    let win = win.ok_or_else(|| Error::parse(0, "header missing win"))?;
    let sr = sr.ok_or_else(|| Error::parse(0, "header missing sr"))?;

    let mut f0_hz = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed == "frame_index,f0_hz" {
            continue;
        }
        let (idx, value) = trimmed
            .split_once(',')
            .ok_or_else(|| Error::parse(0, format!("line {}: missing comma", lineno + 2)))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::parse(0, format!("line {}: bad frame index '{idx}'", lineno + 2)))?;
        if idx != f0_hz.len() {
            return Err(Error::parse(
                0,
                format!("line {}: frame index {idx}, expected {}", lineno + 2, f0_hz.len()),
            ));
        }
        if value.is_empty() {
            f0_hz.push(None);
        } else {
            let f: f64 = value.parse().map_err(|_| {
                Error::parse(0, format!("line {}: bad f0 value '{value}'", lineno + 2))
            })?;
            f0_hz.push(Some(f));
        }
    }
    let voiced: Vec<f64> = f0_hz.iter().flatten().copied().collect();
    let search_min_hz = voiced.iter().cloned().fold(f64::INFINITY, f64::min);
    let search_max_hz = voiced.iter().cloned().fold(0.0f64, f64::max);
    Ok(PitchTrack {
        f0_hz,
        hop_size: hop as usize,
        window_length: win as usize,
        sample_rate: sr as u32,
        search_min_hz: if search_min_hz.is_finite() { search_min_hz } else { 0.0 },
        search_max_hz,
    })
}

pub fn save_pitch_csv(path: &Path, track: &PitchTrack) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_pitch_csv(&mut w, track)?;
    w.flush()?;
    Ok(())
}

pub fn load_pitch_csv(path: &Path) -> Result<PitchTrack> {
    read_pitch_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sample_rate: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / sample_rate as f64).sin())
            .collect()
    }

    #[test]
    fn yin_finds_440() {
        let frame = sine(440.0, 16000, 1024);
        let f = yin_frame(&frame, 16000, 80.0, 3000.0, 0.1).unwrap().unwrap();
        assert!(
            (f - 440.0).abs() / 440.0 < 0.005,
            "estimated {f} Hz for a 440 Hz sine"
        );
    }

    #[test]
    fn yin_finds_100_with_longer_frame() {
        let frame = sine(100.0, 16000, 2048);
        let f = yin_frame(&frame, 16000, 80.0, 3000.0, 0.1).unwrap().unwrap();
        assert!(
            (f - 100.0).abs() / 100.0 < 0.01,
            "estimated {f} Hz for a 100 Hz sine"
        );
    }

    #[test]
    fn yin_silence_is_unvoiced() {
        let frame = vec![0.0; 1024];
        assert_eq!(yin_frame(&frame, 16000, 80.0, 3000.0, 0.1).unwrap(), None);
    }

    #[test]
    fn yin_rejects_bad_search_range() {
        let frame = vec![0.0; 1024];
        assert!(yin_frame(&frame, 16000, 3000.0, 80.0, 0.1).is_err());
        assert!(yin_frame(&frame, 16000, 80.0, 9000.0, 0.1).is_err());
    }

    #[test]
    fn yin_rejects_too_short_frame() {
        let frame = sine(440.0, 16000, 128);
        assert!(yin_frame(&frame, 16000, 80.0, 3000.0, 0.1).is_err());
    }

    #[test]
    fn track_matches_stft_framing() {
        let audio = AudioBuffer::new(sine(440.0, 16000, 16000), 16000).unwrap();
        let track = track_pitch(&audio, 1024, 256, 80.0, 3000.0, 0.1).unwrap();
        assert_eq!(track.num_frames(), 59);
        for (t, f0) in track.f0_hz.iter().enumerate() {
            let f = f0.unwrap_or_else(|| panic!("frame {t} unvoiced"));
            assert!(
                (f - 440.0).abs() / 440.0 < 0.005,
                "frame {t} estimated {f} Hz"
            );
        }
    }

    #[test]
    fn track_silence_is_all_unvoiced() {
        let audio = AudioBuffer::new(vec![0.0; 16000], 16000).unwrap();
        let track = track_pitch(&audio, 1024, 256, 80.0, 3000.0, 0.1).unwrap();
        assert_eq!(track.num_frames(), 59);
        assert_eq!(track.num_voiced(), 0);
    }

    #[test]
    fn track_tone_then_silence() {
        let mut samples = sine(440.0, 16000, 8000);
        samples.extend(std::iter::repeat_n(0.0, 8000));
        let audio = AudioBuffer::new(samples, 16000).unwrap();
        let track = track_pitch(&audio, 1024, 256, 80.0, 3000.0, 0.1).unwrap();
        // Frames fully inside the tone are voiced near 440; frames fully in
        // the silent tail are unvoiced.
        for (t, f0) in track.f0_hz.iter().enumerate() {
            let start = t * 256;
            if start + 1024 <= 8000 {
                let f = f0.unwrap_or_else(|| panic!("tone frame {t} unvoiced"));
                assert!((f - 440.0).abs() / 440.0 < 0.005, "frame {t}: {f} Hz");
            } else if start >= 8000 {
                assert_eq!(*f0, None, "silent frame {t} reported {f0:?}");
            }
        }
    }

    fn track_of(values: &[Option<f64>]) -> PitchTrack {
        PitchTrack {
            f0_hz: values.to_vec(),
            hop_size: 256,
            window_length: 1024,
            sample_rate: 16000,
            search_min_hz: 80.0,
            search_max_hz: 3000.0,
        }
    }

    #[test]
    fn continuity_replaces_outlier() {
        // 470/440 - 1 = 6.8% > 6%, so the middle frame snaps back to 440.
        let track = track_of(&[Some(440.0), Some(470.0), Some(440.0)]);
        let fixed = enforce_continuity(&track, 0.06);
        assert_eq!(fixed.f0_hz, vec![Some(440.0), Some(440.0), Some(440.0)]);
    }

    #[test]
    fn continuity_accepts_in_tolerance_drift() {
        // 460/440 - 1 = 4.5% and 455/460 - 1 = -1.1%; both within 6%.
        let track = track_of(&[Some(440.0), Some(460.0), Some(455.0)]);
        let fixed = enforce_continuity(&track, 0.06);
        assert_eq!(fixed.f0_hz, track.f0_hz);
    }

    #[test]
    fn continuity_keeps_constant_track() {
        let track = track_of(&[Some(300.0); 10]);
        assert_eq!(enforce_continuity(&track, 0.06).f0_hz, track.f0_hz);
    }

    #[test]
    fn continuity_skips_unvoiced_frames() {
        let track = track_of(&[Some(440.0), None, Some(470.0), None]);
        let fixed = enforce_continuity(&track, 0.06);
        assert_eq!(
            fixed.f0_hz,
            vec![Some(440.0), None, Some(440.0), None],
            "unvoiced frames pass through, reference survives the gap"
        );
    }

    #[test]
    fn pitch_csv_round_trip() {
        let track = track_of(&[Some(440.25), None, Some(441.5)]);
        let mut buf = Vec::new();
        write_pitch_csv(&mut buf, &track).unwrap();
        let back = read_pitch_csv(buf.as_slice()).unwrap();
        assert_eq!(back.f0_hz, track.f0_hz);
        assert_eq!(back.hop_size, track.hop_size);
        assert_eq!(back.window_length, track.window_length);
        assert_eq!(back.sample_rate, track.sample_rate);
    }
}
