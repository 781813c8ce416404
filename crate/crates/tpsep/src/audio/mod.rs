//! Waveforms, synthetic scenes, WAV files and dataset manifests.

pub mod manifest;
pub mod synth;
pub mod wav;

pub use manifest::{load_dataset, load_scene, read_manifest, write_dataset, write_manifest, SceneRecord};
pub use synth::{build_dataset, build_scene, convolve_same, generate_rir, generate_source, DatasetParams, ImpulseResponse, MixtureScene, SceneSpec};
pub use wav::{read_wav, write_wav};

/// Mono sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean square of the samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }
}
