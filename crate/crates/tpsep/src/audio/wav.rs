//! Minimal RIFF/WAVE reader and writer.
//!
//! Writes mono 32-bit float PCM (format 3). Reads format 3 at 32 bits and
//! format 1 at 16 bits (scaled to [-1, 1) by 1/32768). Round-tripping a
//! float waveform is bit-exact.

use super::Waveform;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

fn wav_err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

pub fn write_wav(w: &Waveform, path: &Path) -> Result<()> {
    if !w.samples.iter().all(|s| s.is_finite()) {
        return Err(wav_err("refusing to write non-finite samples"));
    }
    let data_len = (w.samples.len() * 4) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &w.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct FmtChunk {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(wav_err("not RIFF"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(wav_err("not WAVE"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let tag = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(wav_err(format!(
                "chunk {:?} truncated: wants {} bytes",
                String::from_utf8_lossy(tag),
                size
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match tag {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err("fmt chunk too short"));
                }
                fmt = Some(FmtChunk {
                    format_tag: u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    channels: u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    bits: u16::from_le_bytes(body[14..16].try_into().unwrap()),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| wav_err("missing fmt chunk"))?;
    let data = data.ok_or_else(|| wav_err("missing data chunk"))?;
    if fmt.channels != 1 {
        return Err(wav_err(format!("channels: only mono supported, got {}", fmt.channels)));
    }

    let samples = match (fmt.format_tag, fmt.bits) {
        (3, 32) => {
            if data.len() % 4 != 0 {
                return Err(wav_err("data chunk length not a multiple of 4"));
            }
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        (1, 16) => {
            if data.len() % 2 != 0 {
                return Err(wav_err("data chunk length not a multiple of 2"));
            }
            data.chunks_exact(2)
                .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f32 / 32768.0)
                .collect()
        }
        (tag, bits) => {
            return Err(wav_err(format!(
                "unsupported format: tag {} at {} bits (want float32 or pcm16)",
                tag, bits
            )))
        }
    };

    Ok(Waveform {
        samples,
        sample_rate: fmt.sample_rate,
    })
}
