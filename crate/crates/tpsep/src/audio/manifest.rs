//! Dataset persistence: WAV layout plus a JSON-lines manifest.
//!
//! Layout under the dataset directory:
//! `mix/<id>.wav`, `z/<id>.wav`, `m/<id>_<k>.wav`, `s/<id>_<k>.wav`,
//! `manifest.jsonl` (one record per scene, paths relative to the dir).

use super::synth::{MixtureScene, SceneSpec};
use super::wav::{read_wav, write_wav};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub mix_path: String,
    pub denoised_path: String,
    pub reverb_src_paths: Vec<String>,
    pub anechoic_src_paths: Vec<String>,
    pub sample_rate: u32,
    pub snr_db: f64,
    pub t60_list: Vec<f64>,
    pub seed: u64,
}

/// Writes the scenes' WAV files and the manifest; returns the records.
pub fn write_dataset(scenes: &[MixtureScene], dir: &Path) -> Result<Vec<SceneRecord>> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let id = format!("scene_{:05}", i);
        let mix_path = format!("mix/{}.wav", id);
        let denoised_path = format!("z/{}.wav", id);
        write_wav(&scene.y, &dir.join(&mix_path))?;
        write_wav(&scene.z, &dir.join(&denoised_path))?;
        let mut reverb_src_paths = Vec::new();
        let mut anechoic_src_paths = Vec::new();
        for (k, (mi, si)) in scene.m.iter().zip(&scene.s).enumerate() {
            let mp = format!("m/{}_{}.wav", id, k);
            let sp = format!("s/{}_{}.wav", id, k);
            write_wav(mi, &dir.join(&mp))?;
            write_wav(si, &dir.join(&sp))?;
            reverb_src_paths.push(mp);
            anechoic_src_paths.push(sp);
        }
        records.push(SceneRecord {
            id,
            mix_path,
            denoised_path,
            reverb_src_paths,
            anechoic_src_paths,
            sample_rate: scene.y.sample_rate,
            snr_db: scene.spec.snr_db,
            t60_list: scene.t60_list.clone(),
            seed: scene.spec.seed,
        });
    }
    write_manifest(&records, dir)?;
    Ok(records)
}

pub fn write_manifest(records: &[SceneRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join("manifest.jsonl"))?;
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{}", line)?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<SceneRecord>> {
    let path = dir.join("manifest.jsonl");
    let f = fs::File::open(&path)
        .map_err(|e| Error::Manifest(format!("{}: {}", path.display(), e)))?;
    let mut records = Vec::new();
    for (ln, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SceneRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {}", ln + 1, e)))?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::Manifest(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn read_field(dir: &Path, id: &str, field: &str, rel: &str) -> Result<super::Waveform> {
    read_wav(&dir.join(rel))
        .map_err(|e| Error::Manifest(format!("scene {}: {}: {}", id, field, e)))
}

/// Loads a record's audio back into a full scene. The reconstructed spec
/// carries the manifest metadata; the t60 range collapses to the stored
/// values' span.
pub fn load_scene(record: &SceneRecord, dir: &Path) -> Result<MixtureScene> {
    let y = read_field(dir, &record.id, "mix_path", &record.mix_path)?;
    let z = read_field(dir, &record.id, "denoised_path", &record.denoised_path)?;
    let mut m = Vec::new();
    for p in &record.reverb_src_paths {
        m.push(read_field(dir, &record.id, "reverb_src_paths", p)?);
    }
    let mut s = Vec::new();
    for p in &record.anechoic_src_paths {
        s.push(read_field(dir, &record.id, "anechoic_src_paths", p)?);
    }
    let t60_lo = record.t60_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let t60_hi = record.t60_list.iter().cloned().fold(0.0, f64::max);
    let spec = SceneSpec {
        num_speakers: s.len(),
        duration: y.samples.len() as f64 / record.sample_rate as f64,
        sample_rate: record.sample_rate,
        snr_db: record.snr_db,
        t60_range: if record.t60_list.is_empty() {
            (0.0, 0.0)
        } else {
            (t60_lo, t60_hi)
        },
        seed: record.seed,
        reverb_enabled: !record.t60_list.is_empty(),
    };
    Ok(MixtureScene {
        y,
        z,
        m,
        s,
        spec,
        t60_list: record.t60_list.clone(),
    })
}

/// Reads the manifest and loads every scene.
pub fn load_dataset(dir: &Path) -> Result<Vec<MixtureScene>> {
    let records = read_manifest(dir)?;
    records.iter().map(|r| load_scene(r, dir)).collect()
}
