//! WAV and FLAC decoding, WAV encoding.
//!
//! Accepted input: RIFF/WAVE with 8/16/24/32-bit integer or 32-bit float
//! samples, and FLAC. Any channel count is accepted and downmixed to mono by
//! averaging channels.

use std::io::Cursor;
use std::path::Path;

use super::{wav, AudioClip};
use crate::error::{Error, Result};

pub fn load_clip(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_audio(&bytes)
}

pub fn save_clip(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav_f32(clip)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Sniffs the container from the leading magic bytes.
pub fn decode_audio(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
        decode_wav(bytes)
    } else if bytes.len() >= 4 && &bytes[..4] == b"fLaC" {
        decode_flac(bytes)
    } else {
        Err(Error::AudioDecode(
            "unrecognized container (expected WAV or FLAC)".into(),
        ))
    }
}

fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let wav = wav::parse(bytes)?;
    Ok(AudioClip::new(downmix(&wav.samples, wav.channels), wav.sample_rate))
}

fn decode_flac(bytes: &[u8]) -> Result<AudioClip> {
    let mut reader =
        claxon::FlacReader::new(Cursor::new(bytes)).map_err(|e| Error::AudioDecode(e.to_string()))?;
    let info = reader.streaminfo();
    let channels = info.channels as usize;
    let scale = 1.0 / (1u64 << (info.bits_per_sample - 1)) as f32;
    let interleaved: Vec<f32> = reader
        .samples()
        .map(|s| s.map(|v| v as f32 * scale))
        .collect::<Result<_, _>>()
        .map_err(|e| Error::AudioDecode(e.to_string()))?;
    Ok(AudioClip::new(downmix(&interleaved, channels), info.sample_rate))
}

fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect()
}

pub fn encode_wav_f32(clip: &AudioClip) -> Result<Vec<u8>> {
    Ok(wav::write(clip.sample_rate, wav::Encoding::Float32, &clip.samples))
}

pub fn encode_wav_pcm16(clip: &AudioClip) -> Result<Vec<u8>> {
    Ok(wav::write(clip.sample_rate, wav::Encoding::Pcm16, &clip.samples))
}
