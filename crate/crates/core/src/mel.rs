//! Mel-scale conversion, mel filterbank construction, and the
//! log-mel-spectrogram representation being inverted.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::PowerSpectrogram;
use crate::error::{Error, Result};

pub const DEFAULT_LOG_FLOOR_DB: f64 = -100.0;

/// Hz to mel: `2595 * log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !f.is_finite() || f < 0.0 {
        return Err(Error::invalid(format!("frequency must be >= 0 Hz, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

/// Mel to Hz, the analytic inverse: `700 * (10^(m/2595) - 1)`.
pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !m.is_finite() || m < 0.0 {
        return Err(Error::invalid(format!("mel value must be >= 0, got {m}")));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterShape {
    Triangular,
    Rectangular,
}

/// Bank of mel-spaced bandpass filters over one-sided FFT bins.
///
/// Band `b` spans `band_edges_hz[b] .. band_edges_hz[b+2]` with its peak at
/// `band_edges_hz[b+1]`; edges are equally spaced in mel.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Vec<Vec<f64>>,
    pub band_edges_hz: Vec<f64>,
    pub shape: FilterShape,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub sample_rate: u32,
    pub fft_size: usize,
}

impl MelFilterbank {
    pub fn num_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Rectangular support of band `b`: the half-open interval
    /// `[edge_b, edge_{b+2})` covering the band's whole footprint.
    pub fn band_support(&self, b: usize) -> (f64, f64) {
        (self.band_edges_hz[b], self.band_edges_hz[b + 2])
    }

    /// Peak frequency of band `b`.
    pub fn band_peak_hz(&self, b: usize) -> f64 {
        self.band_edges_hz[b + 1]
    }

    /// Indices of all bands whose rectangular support contains `f`.
    pub fn bands_containing(&self, f: f64) -> Vec<usize> {
        (0..self.num_mels())
            .filter(|&b| {
                let (lo, hi) = self.band_support(b);
                f >= lo && f < hi
            })
            .collect()
    }
}

/// Builds `num_mels` filters with edges equally spaced in mel between `fmin`
/// and `fmax`, sampled at FFT bin centers `k * sample_rate / fft_size`.
pub fn build_filterbank(
    num_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
    shape: FilterShape,
) -> Result<MelFilterbank> {
    if num_mels == 0 {
        return Err(Error::invalid("num_mels must be at least 1"));
    }
    if fft_size == 0 || sample_rate == 0 {
        return Err(Error::invalid("fft_size and sample_rate must be positive"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if fmax > nyquist {
        return Err(Error::invalid(format!(
            "fmax ({fmax} Hz) exceeds Nyquist ({nyquist} Hz)"
        )));
    }
    if !(fmin >= 0.0 && fmin < fmax) {
        return Err(Error::invalid(format!(
            "need 0 <= fmin < fmax, got fmin={fmin}, fmax={fmax}"
        )));
    }

    let mel_lo = hz_to_mel(fmin)?;
    let mel_hi = hz_to_mel(fmax)?;
    let num_edges = num_mels + 2;
    let mut band_edges_hz = Vec::with_capacity(num_edges);
    for i in 0..num_edges {
        let mel = mel_lo + (mel_hi - mel_lo) * i as f64 / (num_edges - 1) as f64;
        band_edges_hz.push(mel_to_hz(mel)?);
    }
    // Pin the outermost edges exactly; the mel round trip can drift a ulp.
    band_edges_hz[0] = fmin;
    band_edges_hz[num_edges - 1] = fmax;

    let num_bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    let mut weights = Vec::with_capacity(num_mels);
    for b in 0..num_mels {
        let lo = band_edges_hz[b];
        let mid = band_edges_hz[b + 1];
        let hi = band_edges_hz[b + 2];
        let mut row = vec![0.0f64; num_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = match shape {
                FilterShape::Triangular => {
                    if f >= lo && f <= mid && mid > lo {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f <= hi && hi > mid {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                }
                FilterShape::Rectangular => {
                    if f >= lo && f < hi {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
        }
        if !row.iter().any(|&w| w > 0.0) {
            return Err(Error::DegenerateFilterbank { index: b });
        }
        weights.push(row);
    }

    Ok(MelFilterbank {
        weights,
        band_edges_hz,
        shape,
        fmin_hz: fmin,
        fmax_hz: fmax,
        sample_rate,
        fft_size,
    })
}

/// Log-compressed mel-band energies in dB, `num_frames x num_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub num_mels: usize,
    pub hop_size: usize,
    pub window_length: usize,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub log_floor_db: f64,
}

impl LogMelSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Applies the filterbank to a power spectrogram and log-compresses:
/// `max(10*log10(sum_k weights[b,k] * power[t,k]), log_floor_db)`.
pub fn log_mel(
    power: &PowerSpectrogram,
    fb: &MelFilterbank,
    log_floor_db: f64,
) -> Result<LogMelSpectrogram> {
    if power.num_bins() != fb.num_bins() || power.fft_size != fb.fft_size {
        return Err(Error::invalid(format!(
            "power spectrogram has {} bins (fft {}), filterbank expects {} (fft {})",
            power.num_bins(),
            power.fft_size,
            fb.num_bins(),
            fb.fft_size
        )));
    }
    if power.sample_rate != fb.sample_rate {
        return Err(Error::invalid(format!(
            "sample rate mismatch: power {} Hz vs filterbank {} Hz",
            power.sample_rate, fb.sample_rate
        )));
    }
    let frames = power
        .frames
        .iter()
        .map(|frame| {
            fb.weights
                .iter()
                .map(|row| {
                    let energy: f64 = row.iter().zip(frame.iter()).map(|(w, p)| w * p).sum();
                    (10.0 * energy.log10()).max(log_floor_db)
                })
                .collect()
        })
        .collect();
    Ok(LogMelSpectrogram {
        frames,
        num_mels: fb.num_mels(),
        hop_size: power.hop_size,
        window_length: power.window_length,
        fft_size: power.fft_size,
        sample_rate: power.sample_rate,
        log_floor_db,
    })
}

const MELSPEC_MAGIC: &[u8; 4] = b"MELS";
const MELSPEC_VERSION: u32 = 1;

/// Writes the binary melspec layout: magic "MELS", u32 version, u32 rows,
/// u32 cols, u32 sample_rate, u32 hop, u32 win, u32 fft, f32 floor_db,
/// then rows*cols little-endian f32 row-major.
pub fn write_melspec_binary<W: Write>(writer: &mut W, mel: &LogMelSpectrogram) -> Result<()> {
    writer.write_all(MELSPEC_MAGIC)?;
    for v in [
        MELSPEC_VERSION,
        mel.num_frames() as u32,
        mel.num_mels as u32,
        mel.sample_rate,
        mel.hop_size as u32,
        mel.window_length as u32,
        mel.fft_size as u32,
    ] {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.write_all(&(mel.log_floor_db as f32).to_le_bytes())?;
    for frame in &mel.frames {
        for &v in frame {
            writer.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_melspec_binary<R: Read>(reader: &mut R) -> Result<LogMelSpectrogram> {
    let mut offset = 0u64;
    let mut read_exact = |buf: &mut [u8], what: &str| -> Result<u64> {
        let at = offset;
        reader
            .read_exact(buf)
            .map_err(|_| Error::parse(at, format!("truncated while reading {what}")))?;
        offset += buf.len() as u64;
        Ok(at)
    };

    let mut magic = [0u8; 4];
    read_exact(&mut magic, "magic")?;
    if &magic != MELSPEC_MAGIC {
        return Err(Error::parse(0, "bad magic, expected \"MELS\""));
    }
    let mut u32buf = [0u8; 4];
    let mut next_u32 = |what: &str| -> Result<(u32, u64)> {
        let at = read_exact(&mut u32buf, what)?;
        Ok((u32::from_le_bytes(u32buf), at))
    };
    let (version, at) = next_u32("version")?;
    if version != MELSPEC_VERSION {
        return Err(Error::parse(at, format!("unsupported version {version}")));
    }
    let (rows, _) = next_u32("rows")?;
    let (cols, at_cols) = next_u32("cols")?;
    let (sample_rate, at_sr) = next_u32("sample_rate")?;
    let (hop, _) = next_u32("hop")?;
    let (win, _) = next_u32("win")?;
    let (fft, _) = next_u32("fft")?;
    if cols == 0 {
        return Err(Error::parse(at_cols, "zero mel bands"));
    }
    if sample_rate == 0 {
        return Err(Error::parse(at_sr, "zero sample rate"));
    }
    let mut f32buf = [0u8; 4];
    let at = read_exact(&mut f32buf, "floor_db")?;
    let log_floor_db = f32::from_le_bytes(f32buf) as f64;
    if !log_floor_db.is_finite() {
        return Err(Error::parse(at, "non-finite floor_db"));
    }
    let mut frames = Vec::with_capacity(rows as usize);
    for _ in 0..rows {
        let mut frame = Vec::with_capacity(cols as usize);
        for _ in 0..cols {
            let at = read_exact(&mut f32buf, "mel value")?;
            let v = f32::from_le_bytes(f32buf) as f64;
            if !v.is_finite() {
                return Err(Error::parse(at, "non-finite mel value"));
            }
            frame.push(v);
        }
        frames.push(frame);
    }
    Ok(LogMelSpectrogram {
        frames,
        num_mels: cols as usize,
        hop_size: hop as usize,
        window_length: win as usize,
        fft_size: fft as usize,
        sample_rate,
        log_floor_db,
    })
}

/// CSV form: header `#melspec v1 num_mels=<M> hop=<H> win=<W> fft=<F> sr=<R>
/// floor_db=<L>`, then one comma-separated frame per row.
pub fn write_melspec_csv<W: Write>(writer: &mut W, mel: &LogMelSpectrogram) -> Result<()> {
    writeln!(
        writer,
        "#melspec v1 num_mels={} hop={} win={} fft={} sr={} floor_db={}",
        mel.num_mels, mel.hop_size, mel.window_length, mel.fft_size, mel.sample_rate, mel.log_floor_db
    )?;
    for frame in &mel.frames {
        let row: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
        writeln!(writer, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_melspec_csv<R: Read>(reader: R) -> Result<LogMelSpectrogram> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty melspec CSV"))??;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#melspec") || fields.next() != Some("v1") {
        return Err(Error::parse(0, "melspec CSV must start with '#melspec v1'"));
    }
    let mut num_mels = None;
    let mut hop = None;
    let mut win = None;
    let mut fft = None;
    let mut sr = None;
    let mut floor_db = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(0, format!("bad header field '{field}'")))?;
        match key {
            "num_mels" => num_mels = Some(parse_header_num(value, key)?),
            "hop" => hop = Some(parse_header_num(value, key)?),
            "win" => win = Some(parse_header_num(value, key)?),
            "fft" => fft = Some(parse_header_num(value, key)?),
            "sr" => sr = Some(parse_header_num(value, key)?),
            "floor_db" => {
                floor_db = Some(value.parse::<f64>().map_err(|_| {
                    Error::parse(0, format!("bad floor_db value '{value}'"))
                })?)
            }
            _ => return Err(Error::parse(0, format!("unknown header key '{key}'"))),
        }
    }
    let num_mels = num_mels.ok_or_else(|| Error::parse(0, "header missing num_mels"))?;
    let hop = hop.ok_or_else(|| Error::parse(0, "header missing hop"))?;
    let win = win.ok_or_else(|| Error::parse(0, "header missing win"))?;
    let fft = fft.ok_or_else(|| Error::parse(0, "header missing fft"))?;
    let sr = sr.ok_or_else(|| Error::parse(0, "header missing sr"))?;
    let floor_db = floor_db.ok_or_else(|| Error::parse(0, "header missing floor_db"))?;

    let mut frames = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| {
                    Error::parse(0, format!("line {}: bad value '{v}'", lineno + 2))
                })
            })
            .collect::<Result<_>>()?;
        if frame.len() != num_mels as usize {
            return Err(Error::parse(
                0,
                format!(
                    "line {}: {} values, expected {num_mels}",
                    lineno + 2,
                    frame.len()
                ),
            ));
        }
        frames.push(frame);
    }
    Ok(LogMelSpectrogram {
        frames,
        num_mels: num_mels as usize,
        hop_size: hop as usize,
        window_length: win as usize,
        fft_size: fft as usize,
        sample_rate: sr as u32,
        log_floor_db: floor_db,
    })
}

fn parse_header_num(value: &str, key: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::parse(0, format!("bad {key} value '{value}'")))
}

pub fn save_melspec_binary(path: &Path, mel: &LogMelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_melspec_binary(&mut w, mel)?;
    w.flush()?;
    Ok(())
}

pub fn load_melspec_binary(path: &Path) -> Result<LogMelSpectrogram> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_melspec_binary(&mut r)
}

pub fn save_melspec_csv(path: &Path, mel: &LogMelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_melspec_csv(&mut w, mel)?;
    w.flush()?;
    Ok(())
}

pub fn load_melspec_csv(path: &Path) -> Result<LogMelSpectrogram> {
    read_melspec_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::PowerSpectrogram;

    fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
        assert!(
            (actual - expected).abs() <= tol,
            "{what}: got {actual}, expected {expected} (tol {tol})"
        );
    }

    #[test]
    fn mel_scale_anchor_points() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        // 2595 * log10(2), evaluated independently.
        assert_close(hz_to_mel(700.0).unwrap(), 781.1728387480312, 1e-3, "mel(700)");
        assert_close(hz_to_mel(8000.0).unwrap(), 2840.023046708319, 1e-2, "mel(8000)");
        assert_eq!(mel_to_hz(0.0).unwrap(), 0.0);
        assert_close(mel_to_hz(781.1728387480312).unwrap(), 700.0, 1e-2, "hz(781.17)");
    }

    #[test]
    fn mel_round_trip() {
        for &f in &[80.0, 440.0, 2100.0, 8000.0] {
            let back = mel_to_hz(hz_to_mel(f).unwrap()).unwrap();
            assert!(
                (back - f).abs() <= 1e-6 * f,
                "round trip of {f} Hz gave {back}"
            );
        }
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(hz_to_mel(-1.0).is_err());
        assert!(mel_to_hz(-1.0).is_err());
    }

    #[test]
    fn paper_filterbank_geometry() {
        let fb = build_filterbank(80, 1024, 16000, 0.0, 8000.0, FilterShape::Triangular).unwrap();
        assert_eq!(fb.band_edges_hz.len(), 82);
        assert_eq!(fb.band_edges_hz[0], 0.0);
        assert_eq!(fb.band_edges_hz[81], 8000.0);
        assert_eq!(fb.weights.len(), 80);
        assert_eq!(fb.weights[0].len(), 513);
        // Equal spacing in mel: 2840.023/81 per step.
        let step = hz_to_mel(8000.0).unwrap() / 81.0;
        assert_close(step, 35.062012922324925, 1e-6, "mel step");
        for i in 0..81 {
            let got = hz_to_mel(fb.band_edges_hz[i + 1]).unwrap()
                - hz_to_mel(fb.band_edges_hz[i]).unwrap();
            assert!(
                (got - step).abs() <= 1e-6 * step,
                "edge {i} spacing {got} vs {step}"
            );
        }
        for (b, row) in fb.weights.iter().enumerate() {
            let max = row.iter().cloned().fold(0.0f64, f64::max);
            assert!(max > 0.0, "band {b} has no support");
        }
    }

    #[test]
    fn single_rectangular_band_covers_everything() {
        let fb = build_filterbank(1, 8, 16000, 0.0, 8000.0, FilterShape::Rectangular).unwrap();
        assert_eq!(fb.weights.len(), 1);
        // Bin centers 0..8000 Hz; 8000 itself is outside the half-open support.
        assert_eq!(fb.weights[0], vec![1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn fmax_beyond_nyquist_rejected() {
        assert!(build_filterbank(10, 1024, 16000, 0.0, 9000.0, FilterShape::Triangular).is_err());
    }

    #[test]
    fn degenerate_filterbank_names_the_filter() {
        // 512 bands over 0..200 Hz with 15.6 Hz bins leaves many bands empty.
        let err = build_filterbank(512, 1024, 16000, 0.0, 200.0, FilterShape::Triangular)
            .unwrap_err();
        match err {
            Error::DegenerateFilterbank { .. } => {}
            other => panic!("expected DegenerateFilterbank, got {other:?}"),
        }
    }

    fn power_of(frames: Vec<Vec<f64>>, fft_size: usize, sample_rate: u32) -> PowerSpectrogram {
        PowerSpectrogram {
            frames,
            fft_size,
            hop_size: fft_size / 4,
            window_length: fft_size,
            sample_rate,
        }
    }

    #[test]
    fn log_mel_floors_silence() {
        let fb = build_filterbank(4, 64, 16000, 0.0, 8000.0, FilterShape::Triangular).unwrap();
        let power = power_of(vec![vec![0.0; 33]], 64, 16000);
        let mel = log_mel(&power, &fb, -100.0).unwrap();
        assert_eq!(mel.frames[0], vec![-100.0; 4]);
    }

    #[test]
    fn log_mel_unit_bin_in_unit_band_is_zero_db() {
        let fb = build_filterbank(1, 8, 16000, 0.0, 8000.0, FilterShape::Rectangular).unwrap();
        let mut frame = vec![0.0; 5];
        frame[2] = 1.0;
        let mel = log_mel(&power_of(vec![frame], 8, 16000), &fb, -100.0).unwrap();
        assert_close(mel.frames[0][0], 0.0, 1e-12, "0 dB band");
    }

    #[test]
    fn log_mel_matches_double_loop_oracle() {
        let fb = build_filterbank(6, 32, 16000, 0.0, 8000.0, FilterShape::Triangular).unwrap();
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|t| {
                (0..17)
                    .map(|k| ((t * 31 + k * 7 + 3) % 23) as f64 / 23.0)
                    .collect()
            })
            .collect();
        let mel = log_mel(&power_of(frames.clone(), 32, 16000), &fb, -100.0).unwrap();
        for (t, frame) in frames.iter().enumerate() {
            for b in 0..6 {
                let mut e = 0.0;
                for (k, &p) in frame.iter().enumerate() {
                    e += fb.weights[b][k] * p;
                }
                let expected = (10.0 * e.log10()).max(-100.0);
                assert_close(mel.frames[t][b], expected, 1e-9, "oracle entry");
            }
        }
    }

    #[test]
    fn log_mel_rejects_dimension_mismatch() {
        let fb = build_filterbank(4, 16, 16000, 0.0, 8000.0, FilterShape::Triangular).unwrap();
        let power = power_of(vec![vec![0.0; 5]], 8, 16000);
        assert!(log_mel(&power, &fb, -100.0).is_err());
    }

    #[test]
    fn melspec_binary_round_trip() {
        let mel = LogMelSpectrogram {
            frames: vec![vec![-3.25, 0.5, -100.0], vec![1.75, -42.125, 6.0]],
            num_mels: 3,
            hop_size: 256,
            window_length: 1024,
            fft_size: 1024,
            sample_rate: 16000,
            log_floor_db: -100.0,
        };
        let mut buf = Vec::new();
        write_melspec_binary(&mut buf, &mel).unwrap();
        let back = read_melspec_binary(&mut buf.as_slice()).unwrap();
        // Chosen values are exactly representable in f32.
        assert_eq!(back, mel);
    }

    #[test]
    fn melspec_csv_round_trip() {
        let mel = LogMelSpectrogram {
            frames: vec![vec![-3.25, 0.5], vec![1.75, -42.125]],
            num_mels: 2,
            hop_size: 128,
            window_length: 512,
            fft_size: 512,
            sample_rate: 8000,
            log_floor_db: -80.0,
        };
        let mut buf = Vec::new();
        write_melspec_csv(&mut buf, &mel).unwrap();
        let back = read_melspec_csv(buf.as_slice()).unwrap();
        assert_eq!(back, mel);
    }

    #[test]
    fn melspec_binary_truncation_is_a_parse_error() {
        let mel = LogMelSpectrogram {
            frames: vec![vec![1.0, 2.0]],
            num_mels: 2,
            hop_size: 1,
            window_length: 2,
            fft_size: 2,
            sample_rate: 8000,
            log_floor_db: -100.0,
        };
        let mut buf = Vec::new();
        write_melspec_binary(&mut buf, &mel).unwrap();
        buf.truncate(buf.len() - 3);
        match read_melspec_binary(&mut buf.as_slice()) {
            Err(Error::Parse { .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
