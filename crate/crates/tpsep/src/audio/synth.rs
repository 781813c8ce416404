//! Deterministic synthetic scene generation.
//!
//! Each scene realizes `y = sum_i s_i * h_i + n`: per-speaker harmonic
//! pseudo-speech sources, sparse exponentially decaying room responses,
//! and pink background noise, together with the per-stage ground-truth
//! targets (denoised mixture z, reverberant sources m, anechoic sources s).

use super::{Waveform};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Everything needed to generate one scene deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub num_speakers: usize,
    pub duration: f64,
    pub sample_rate: u32,
    pub snr_db: f64,
    pub t60_range: (f64, f64),
    pub seed: u64,
    pub reverb_enabled: bool,
}

impl SceneSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

/// Sparse-echo exponential-decay room impulse response.
#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    pub taps: Vec<f32>,
    pub direct_delay: usize,
    pub t60: f64,
    pub sample_rate: u32,
}

impl ImpulseResponse {
    pub fn unit(sample_rate: u32) -> Self {
        ImpulseResponse {
            taps: vec![1.0],
            direct_delay: 0,
            t60: 0.0,
            sample_rate,
        }
    }
}

/// One training example: the mixture and every per-stage target.
#[derive(Debug, Clone)]
pub struct MixtureScene {
    /// Mixture y = z + noise.
    pub y: Waveform,
    /// Denoised mixture z = sum_i m_i.
    pub z: Waveform,
    /// Reverberant per-speaker sources m_i = s_i * h_i.
    pub m: Vec<Waveform>,
    /// Anechoic per-speaker sources, direct-path aligned with m.
    pub s: Vec<Waveform>,
    pub spec: SceneSpec,
    /// Per-speaker decay times; empty when reverb is disabled.
    pub t60_list: Vec<f64>,
}

/// Stream separation for the various random draws inside one scene.
fn derive_seed(base: u64, salt: u64, idx: u64) -> u64 {
    // splitmix64 over the combined words
    let mut x = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(idx.wrapping_add(1).wrapping_mul(0x94d049bb133111eb));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    x
}

const SALT_SOURCE: u64 = 1;
const SALT_RIR: u64 = 2;
const SALT_NOISE: u64 = 3;
const SALT_RETRY: u64 = 4;
const SALT_DATASET: u64 = 5;

/// Knobs for generating a whole dataset of scenes.
#[derive(Debug, Clone)]
pub struct DatasetParams {
    pub num_scenes: usize,
    pub num_speakers: usize,
    pub duration: f64,
    pub sample_rate: u32,
    pub snr_range: (f64, f64),
    pub t60_range: (f64, f64),
    pub reverb_enabled: bool,
    pub seed: u64,
}

/// Builds `num_scenes` scenes with per-scene SNR drawn from `snr_range`
/// and per-scene sub-seeds, all derived from one dataset seed.
pub fn build_dataset(p: &DatasetParams) -> Result<Vec<MixtureScene>> {
    let mut scenes = Vec::with_capacity(p.num_scenes);
    for i in 0..p.num_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(p.seed, SALT_DATASET, i as u64));
        let (lo, hi) = p.snr_range;
        let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        scenes.push(build_scene(&SceneSpec {
            num_speakers: p.num_speakers,
            duration: p.duration,
            sample_rate: p.sample_rate,
            snr_db,
            t60_range: p.t60_range,
            seed: derive_seed(p.seed, SALT_DATASET, 0x1_0000 + i as u64),
            reverb_enabled: p.reverb_enabled,
        })?);
    }
    Ok(scenes)
}

/// Deterministic pseudo-speech: a harmonic complex with a speaker-specific
/// fundamental in band `[80+60k, 120+60k]` Hz, slow vibrato, and a gated
/// amplitude envelope with silent gaps. Unit RMS unless fully gated silent.
pub fn generate_source(speaker_index: usize, spec: &SceneSpec) -> Result<Waveform> {
    if spec.duration < 0.25 {
        return Err(Error::Audio(format!(
            "duration {:.3} s too short for a source (need >= 0.25 s)",
            spec.duration
        )));
    }
    if speaker_index >= spec.num_speakers {
        return Err(Error::Audio(format!(
            "speaker index {} out of range for {} speakers",
            speaker_index, spec.num_speakers
        )));
    }
    let sr = spec.sample_rate as f64;
    let n = spec.num_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, SALT_SOURCE, speaker_index as u64));

    let band_lo = 80.0 + 60.0 * speaker_index as f64;
    let f0 = rng.gen_range(band_lo..band_lo + 40.0);
    let nyquist_cap = 0.45 * sr;
    let num_harmonics = ((nyquist_cap / f0).floor() as usize).clamp(1, 12);
    let amps: Vec<f64> = (1..=num_harmonics)
        .map(|h| (0.7 + rng.gen_range(0.0..0.6)) / h as f64)
        .collect();
    let phases: Vec<f64> = (0..num_harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let vib_rate = rng.gen_range(3.0..7.0);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let trem_rate = rng.gen_range(1.0..3.0);
    let trem_phase = rng.gen_range(0.0..2.0 * PI);

    // voiced/silent segment plan
    let mut gate = vec![0.0f64; n];
    let mut pos = 0usize;
    while pos < n {
        let voiced = rng.gen_bool(0.7);
        let seg_dur = if voiced {
            rng.gen_range(0.10..0.35)
        } else {
            rng.gen_range(0.03..0.12)
        };
        let level = if voiced { rng.gen_range(0.5..1.0) } else { 0.0 };
        let seg_len = ((seg_dur * sr) as usize).max(1);
        let end = (pos + seg_len).min(n);
        for g in &mut gate[pos..end] {
            *g = level;
        }
        pos = end;
    }
    // 10 ms raised-cosine smoothing of the gate edges
    let ramp = ((0.010 * sr) as usize).max(1);
    let mut env = gate.clone();
    for i in 0..n {
        if i > 0 && (gate[i] - gate[i - 1]).abs() > 1e-12 {
            let (from, to) = (gate[i - 1], gate[i]);
            for r in 0..ramp.min(n - i) {
                let w = 0.5 - 0.5 * (PI * (r as f64 + 1.0) / ramp as f64).cos();
                env[i + r] = from + (to - from) * w;
            }
        }
    }

    let mut samples = vec![0.0f32; n];
    let mut phase_acc = 0.0f64;
    for (i, out) in samples.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let inst_f0 = f0 * (1.0 + 0.02 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        phase_acc += 2.0 * PI * inst_f0 / sr;
        let mut v = 0.0f64;
        for (h, (&a, &ph)) in amps.iter().zip(&phases).enumerate() {
            v += a * ((h as f64 + 1.0) * phase_acc + ph).sin();
        }
        let trem = 0.85 + 0.15 * (2.0 * PI * trem_rate * t + trem_phase).sin();
        *out = (v * env[i] * trem) as f32;
    }

    let mut w = Waveform {
        samples,
        sample_rate: spec.sample_rate,
    };
    let rms = w.rms();
    if rms > 1e-6 {
        let g = 1.0 / rms;
        for s in &mut w.samples {
            *s = (*s as f64 * g) as f32;
        }
    }
    Ok(w)
}

/// Sparse-echo RIR: unit direct tap at a small random delay (<= 10 ms)
/// followed by random-sign taps whose density grows over time under an
/// `exp(-6.9 t / t60)` envelope. Normalized so the direct tap is 1.
pub fn generate_rir(spec: &SceneSpec, speaker_index: usize) -> Result<ImpulseResponse> {
    if !spec.reverb_enabled {
        return Err(Error::Audio("generate_rir called with reverb disabled".into()));
    }
    let sr = spec.sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, SALT_RIR, speaker_index as u64));
    let (lo, hi) = spec.t60_range;
    let t60 = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let direct_delay = rng.gen_range(0..=((0.010 * sr) as usize));
    let tail_len = (t60 * sr).ceil() as usize;
    let mut taps = vec![0.0f32; direct_delay + tail_len + 1];
    taps[direct_delay] = 1.0;
    for i in 1..=tail_len {
        let t = i as f64 / sr;
        let density = 0.08 + 0.62 * (t / (0.3 * t60)).min(1.0);
        if rng.gen_bool(density) {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let amp = sign * rng.gen_range(0.2..0.7) * (-6.9 * t / t60).exp();
            taps[direct_delay + i] = amp as f32;
        }
    }
    Ok(ImpulseResponse {
        taps,
        direct_delay,
        t60,
        sample_rate: spec.sample_rate,
    })
}

/// Full linear convolution truncated to the input length.
pub fn convolve_same(x: &Waveform, h: &ImpulseResponse) -> Result<Waveform> {
    if x.samples.is_empty() || h.taps.is_empty() {
        return Err(Error::Audio("convolve: empty input".into()));
    }
    if x.sample_rate != h.sample_rate {
        return Err(Error::Audio(format!(
            "convolve: sample rates differ ({} vs {})",
            x.sample_rate, h.sample_rate
        )));
    }
    let n = x.samples.len();
    let mut out = vec![0.0f64; n];
    for (j, &tap) in h.taps.iter().enumerate() {
        if tap == 0.0 {
            continue;
        }
        let tap = tap as f64;
        for i in 0..n.saturating_sub(j) {
            out[i + j] += tap * x.samples[i] as f64;
        }
    }
    Ok(Waveform {
        samples: out.into_iter().map(|v| v as f32).collect(),
        sample_rate: x.sample_rate,
    })
}

fn delayed(x: &Waveform, delay: usize) -> Waveform {
    let n = x.samples.len();
    let mut samples = vec![0.0f32; n];
    if delay < n {
        samples[delay..].copy_from_slice(&x.samples[..n - delay]);
    }
    Waveform {
        samples,
        sample_rate: x.sample_rate,
    }
}

/// Pink (1/f-shaped) noise with unit-ish scale, later calibrated to an
/// exact SNR against the speech sum.
fn pink_noise(n: usize, sample_rate: u32, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let white: f64 = rng.gen_range(-1.0..1.0);
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        samples.push(((b0 + b1 + b2 + white * 0.1848) * 0.2) as f32);
    }
    Waveform {
        samples,
        sample_rate,
    }
}

const HEADROOM: f32 = 4.0;

/// Builds one scene: sources, room responses, targets, calibrated noise.
///
/// If every source comes out gated silent the scene is regenerated with an
/// incremented sub-seed, up to 8 attempts.
pub fn build_scene(spec: &SceneSpec) -> Result<MixtureScene> {
    if spec.num_speakers < 2 {
        return Err(Error::Audio(format!(
            "scene needs >= 2 speakers, got {}",
            spec.num_speakers
        )));
    }
    for attempt in 0..8u64 {
        let sub_spec = SceneSpec {
            seed: if attempt == 0 {
                spec.seed
            } else {
                derive_seed(spec.seed, SALT_RETRY, attempt)
            },
            ..spec.clone()
        };
        if let Some(scene) = try_build(&sub_spec, spec)? {
            return Ok(scene);
        }
    }
    Err(Error::Audio(format!(
        "scene seed {} produced silence in 8 attempts",
        spec.seed
    )))
}

fn try_build(sub: &SceneSpec, original: &SceneSpec) -> Result<Option<MixtureScene>> {
    let n = sub.num_samples();
    let mut m = Vec::with_capacity(sub.num_speakers);
    let mut s = Vec::with_capacity(sub.num_speakers);
    let mut t60_list = Vec::new();

    for k in 0..sub.num_speakers {
        let raw = generate_source(k, sub)?;
        let rir = if sub.reverb_enabled {
            let r = generate_rir(sub, k)?;
            t60_list.push(r.t60);
            r
        } else {
            ImpulseResponse::unit(sub.sample_rate)
        };
        let reverberant = convolve_same(&raw, &rir)?;
        let anechoic = delayed(&raw, rir.direct_delay);
        m.push(reverberant);
        s.push(anechoic);
    }

    let sum_sources = |m: &[Waveform]| {
        let mut z = Waveform {
            samples: vec![0.0f32; n],
            sample_rate: sub.sample_rate,
        };
        for mi in m {
            for (a, &b) in z.samples.iter_mut().zip(&mi.samples) {
                *a += b;
            }
        }
        z
    };

    let mut z = sum_sources(&m);
    if z.power() < 1e-10 {
        return Ok(None); // all sources gated silent; caller retries
    }

    let noise_raw = pink_noise(n, sub.sample_rate, derive_seed(sub.seed, SALT_NOISE, 0));
    let noise_gain = (z.power() / 10f64.powf(sub.snr_db / 10.0) / noise_raw.power()).sqrt() as f32;
    let mut noise: Vec<f32> = noise_raw.samples.iter().map(|&v| v * noise_gain).collect();

    let mix = |z: &Waveform, noise: &[f32]| {
        let mut y = z.clone();
        for (a, &b) in y.samples.iter_mut().zip(noise) {
            *a += b;
        }
        y
    };

    let mut y = mix(&z, &noise);

    // Headroom guard. The components are rescaled and the sums rebuilt so
    // z == sum(m) and y == z + noise stay exact in f32.
    let peak = y
        .samples
        .iter()
        .chain(z.samples.iter())
        .chain(m.iter().flat_map(|w| w.samples.iter()))
        .chain(s.iter().flat_map(|w| w.samples.iter()))
        .fold(0.0f32, |acc, &v| acc.max(v.abs()));
    if peak > HEADROOM {
        let g = (HEADROOM - 0.2) / peak;
        for w in m.iter_mut().chain(s.iter_mut()) {
            for v in &mut w.samples {
                *v *= g;
            }
        }
        for v in &mut noise {
            *v *= g;
        }
        z = sum_sources(&m);
        y = mix(&z, &noise);
    }

    Ok(Some(MixtureScene {
        y,
        z,
        m,
        s,
        spec: original.clone(),
        t60_list,
    }))
}
