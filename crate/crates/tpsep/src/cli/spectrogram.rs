//! Display-only magnitude spectrograms rendered as 8-bit PGM.
//!
//! 256-point Hann-windowed DFT, 50% hop, log magnitude, min-max
//! normalized. Row = frequency bin (high frequencies at the top),
//! column = frame. Entirely outside the training graph.

use crate::audio::Waveform;
use crate::error::Result;
use std::f64::consts::PI;
use std::path::Path;

const FFT_SIZE: usize = 256;
const HOP: usize = FFT_SIZE / 2;
const BINS: usize = FFT_SIZE / 2 + 1;

/// Log-magnitude spectrogram, laid out `[frame][bin]`.
pub fn log_magnitude(w: &Waveform) -> Vec<Vec<f64>> {
    let mut samples = w.samples.clone();
    if samples.len() < FFT_SIZE {
        samples.resize(FFT_SIZE, 0.0);
    }
    let num_frames = (samples.len() - FFT_SIZE) / HOP + 1;
    let window: Vec<f64> = (0..FFT_SIZE)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / FFT_SIZE as f64).cos())
        .collect();
    // precomputed twiddles for the direct transform
    let mut cos_t = vec![[0.0f64; FFT_SIZE]; BINS];
    let mut sin_t = vec![[0.0f64; FFT_SIZE]; BINS];
    for (k, (crow, srow)) in cos_t.iter_mut().zip(sin_t.iter_mut()).enumerate() {
        for i in 0..FFT_SIZE {
            let arg = 2.0 * PI * (k * i) as f64 / FFT_SIZE as f64;
            crow[i] = arg.cos();
            srow[i] = arg.sin();
        }
    }
    let mut frames = Vec::with_capacity(num_frames);
    for f in 0..num_frames {
        let seg = &samples[f * HOP..f * HOP + FFT_SIZE];
        let windowed: Vec<f64> = seg.iter().zip(&window).map(|(&s, &w)| s as f64 * w).collect();
        let mut row = Vec::with_capacity(BINS);
        for k in 0..BINS {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &v) in windowed.iter().enumerate() {
                re += v * cos_t[k][i];
                im -= v * sin_t[k][i];
            }
            row.push(10.0 * (re * re + im * im + 1e-12).log10());
        }
        frames.push(row);
    }
    frames
}

/// Renders the spectrogram as binary PGM bytes: `P5`, width = frames,
/// height = 129 bins.
pub fn spectrogram_pgm(w: &Waveform) -> Vec<u8> {
    let frames = log_magnitude(w);
    let width = frames.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in &frames {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", width, BINS).into_bytes();
    for bin in (0..BINS).rev() {
        for frame in frames.iter() {
            let v = if span > 1e-12 {
                ((frame[bin] - lo) / span * 255.0).round() as u8
            } else {
                0
            };
            out.push(v);
        }
    }
    out
}

pub fn write_spectrogram(w: &Waveform, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, spectrogram_pgm(w))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_dims() {
        let w = Waveform {
            samples: (0..1024).map(|i| (i as f32 * 0.1).sin()).collect(),
            sample_rate: 8000,
        };
        let pgm = spectrogram_pgm(&w);
        let header = String::from_utf8_lossy(&pgm[..20]);
        assert!(header.starts_with("P5\n"), "{header}");
        // (1024 - 256)/128 + 1 = 7 frames
        assert!(header.contains("7 129"), "{header}");
        let header_len = pgm.iter().position(|&b| b == b'\n').unwrap() + 1;
        let rest = &pgm[header_len..];
        let dims_end = rest.iter().position(|&b| b == b'\n').unwrap() + 1;
        let max_end = rest[dims_end..].iter().position(|&b| b == b'\n').unwrap() + 1;
        let payload = &rest[dims_end + max_end..];
        assert_eq!(payload.len(), 7 * 129);
    }

    #[test]
    fn constant_zero_input_is_uniform() {
        let w = Waveform {
            samples: vec![0.0; 512],
            sample_rate: 8000,
        };
        let pgm = spectrogram_pgm(&w);
        let payload_start = pgm.len() - 3 * 129;
        let first = pgm[payload_start];
        assert!(pgm[payload_start..].iter().all(|&b| b == first));
    }

    #[test]
    fn short_input_pads_to_one_frame() {
        let w = Waveform {
            samples: vec![0.5; 100],
            sample_rate: 8000,
        };
        let frames = log_magnitude(&w);
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].len(), 129);
    }
}
