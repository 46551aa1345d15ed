//! Minimal RIFF/WAVE codec.
//!
//! Reads integer PCM (8, 16, 24, 32 bit), IEEE float (32, 64 bit) and the
//! `WAVE_FORMAT_EXTENSIBLE` wrapper around either. Writes mono PCM16 or
//! float32.

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

pub(crate) struct Wav {
    /// Interleaved, scaled to [-1, 1) for integer formats.
    pub samples: Vec<f32>,
    pub channels: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Encoding {
    Pcm16,
    Float32,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::AudioDecode(msg.into())
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| bad("truncated WAV header"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| bad("truncated WAV header"))
}

pub(crate) fn parse(bytes: &[u8]) -> Result<Wav> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, usize, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| bad("chunk size overflow"))?;
        match id {
            b"fmt " => {
                let body = bytes
                    .get(body_start..body_end)
                    .ok_or_else(|| bad("truncated fmt chunk"))?;
                let mut tag = u16_at(body, 0)?;
                let channels = u16_at(body, 2)? as usize;
                let rate = u32_at(body, 4)?;
                let bits = u16_at(body, 14)?;
                if tag == FORMAT_EXTENSIBLE {
                    // the sub-format GUID starts with the real format tag
                    tag = u16_at(body, 24)?;
                }
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                if channels == 0 {
                    return Err(bad("zero channels"));
                }
                // tolerate a data size that overruns the file (streamed writers)
                let body = &bytes[body_start..body_end.min(bytes.len())];
                let samples = decode_samples(body, tag, bits)?;
                return Ok(Wav {
                    samples,
                    channels,
                    sample_rate: rate,
                });
            }
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    Err(bad("no data chunk"))
}

fn decode_samples(body: &[u8], tag: u16, bits: u16) -> Result<Vec<f32>> {
    let out = match (tag, bits) {
        (FORMAT_PCM, 8) => body.iter().map(|&b| (b as f32 - 128.0) / 128.0).collect(),
        (FORMAT_PCM, 16) => body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32_768.0)
            .collect(),
        (FORMAT_PCM, 24) => body
            .chunks_exact(3)
            .map(|c| (i32::from_le_bytes([0, c[0], c[1], c[2]]) >> 8) as f32 / 8_388_608.0)
            .collect(),
        (FORMAT_PCM, 32) => body
            .chunks_exact(4)
            .map(|c| (i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 / 2_147_483_648.0) as f32)
            .collect(),
        (FORMAT_FLOAT, 32) => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (FORMAT_FLOAT, 64) => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
            .collect(),
        _ => {
            return Err(bad(format!(
                "unsupported WAV encoding (format tag {tag}, {bits} bits)"
            )))
        }
    };
    Ok(out)
}

/// Canonical 44-byte header.
pub(crate) fn header(rate: u32, channels: u16, tag: u16, bits: u16, data_len: u32) -> Vec<u8> {
    let block_align = channels * bits / 8;
    let mut h = Vec::with_capacity(44);
    h.extend_from_slice(b"RIFF");
    h.extend_from_slice(&(36 + data_len).to_le_bytes());
    h.extend_from_slice(b"WAVEfmt ");
    h.extend_from_slice(&16u32.to_le_bytes());
    h.extend_from_slice(&tag.to_le_bytes());
    h.extend_from_slice(&channels.to_le_bytes());
    h.extend_from_slice(&rate.to_le_bytes());
    h.extend_from_slice(&(rate * u32::from(block_align)).to_le_bytes());
    h.extend_from_slice(&block_align.to_le_bytes());
    h.extend_from_slice(&bits.to_le_bytes());
    h.extend_from_slice(b"data");
    h.extend_from_slice(&data_len.to_le_bytes());
    h
}

pub(crate) fn write(rate: u32, encoding: Encoding, samples: &[f32]) -> Vec<u8> {
    let (tag, bits) = match encoding {
        Encoding::Pcm16 => (FORMAT_PCM, 16u16),
        Encoding::Float32 => (FORMAT_FLOAT, 32),
    };
    let data_len = (samples.len() * usize::from(bits / 8)) as u32;
    let mut out = header(rate, 1, tag, bits, data_len);
    out.reserve(data_len as usize);
    for &s in samples {
        match encoding {
            Encoding::Pcm16 => {
                let v = (f64::from(s) * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            Encoding::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}
