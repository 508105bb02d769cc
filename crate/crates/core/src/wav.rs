//! Minimal RIFF/WAVE codec: PCM16 and IEEE float32, mono or stereo.

use std::io::Write;
use std::path::Path;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

/// Reads a WAV file into a mono buffer. Stereo is downmixed by averaging
/// the channels; PCM16 samples are scaled by 1/32768. The sample rate comes
/// straight from the header (no resampling).
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path)?;
    read_wav_bytes(&bytes)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer> {
    let need = |offset: usize, len: usize, what: &str| -> Result<&[u8]> {
        bytes
            .get(offset..offset + len)
            .ok_or_else(|| Error::parse(offset as u64, format!("truncated while reading {what}")))
    };

    if need(0, 4, "RIFF id")? != b"RIFF" {
        return Err(Error::parse(0, "missing RIFF id"));
    }
    if need(8, 4, "WAVE id")? != b"WAVE" {
        return Err(Error::parse(8, "missing WAVE id"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = need(pos, 4, "chunk id")?;
        let size = u32::from_le_bytes(need(pos + 4, 4, "chunk size")?.try_into().unwrap()) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::parse(pos as u64, "fmt chunk shorter than 16 bytes"));
                }
                let f = need(body, 16, "fmt chunk body")?;
                let audio_format = u16::from_le_bytes([f[0], f[1]]);
                let channels = u16::from_le_bytes([f[2], f[3]]);
                let sample_rate = u32::from_le_bytes([f[4], f[5], f[6], f[7]]);
                let bits = u16::from_le_bytes([f[14], f[15]]);
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => {
                need(body, size, "data chunk body")?;
                data = Some((body, size));
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
    }

    let (audio_format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::parse(12, "no fmt chunk found"))?;
    let (data_offset, data_len) = data.ok_or_else(|| Error::parse(12, "no data chunk found"))?;
    if sample_rate == 0 {
        return Err(Error::parse(data_offset as u64, "zero sample rate"));
    }
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (only mono or stereo)"
        )));
    }

    let payload = &bytes[data_offset..data_offset + data_len];
    let interleaved: Vec<f64> = match (audio_format, bits) {
        (FORMAT_PCM, 16) => {
            if !data_len.is_multiple_of(2) {
                return Err(Error::parse(
                    data_offset as u64,
                    "PCM16 data length not a multiple of 2",
                ));
            }
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                .collect()
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            if !data_len.is_multiple_of(4) {
                return Err(Error::parse(
                    data_offset as u64,
                    "float32 data length not a multiple of 4",
                ));
            }
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect()
        }
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "audio format {format} with {bits} bits per sample (need PCM16 or float32)"
            )))
        }
    };

    let samples = if channels == 2 {
        if !interleaved.len().is_multiple_of(2) {
            return Err(Error::parse(
                data_offset as u64,
                "stereo data with an odd sample count",
            ));
        }
        interleaved.chunks_exact(2).map(|p| (p[0] + p[1]) / 2.0).collect()
    } else {
        interleaved
    };
    AudioBuffer::new(samples, sample_rate)
}

/// Writes a canonical 44-byte-header mono WAV. PCM16 clamps to `[-1, 1]`
/// then rounds half away from zero.
pub fn write_wav(path: &Path, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let bytes = wav_bytes(audio, format);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn wav_bytes(audio: &AudioBuffer, format: WavFormat) -> Vec<u8> {
    let (format_tag, bits): (u16, u16) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16),
        WavFormat::Float32 => (FORMAT_IEEE_FLOAT, 32),
    };
    let bytes_per_sample = bits as u32 / 8;
    let data_len = audio.len() as u32 * bytes_per_sample;
    let byte_rate = audio.sample_rate * bytes_per_sample;

    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    match format {
        WavFormat::Pcm16 => {
            for &s in &audio.samples {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        WavFormat::Float32 => {
            for &s in &audio.samples {
                out.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
    }
    out
}
