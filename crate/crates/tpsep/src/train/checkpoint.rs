//! Binary checkpoint format.
//!
//! Layout: magic `TPSEP1\0`, u32 tensor count, then per tensor
//! `u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, f32 LE data`,
//! with tensors ordered lexicographically by name. Optimizer state, RNG
//! state and metadata ride along under the reserved prefixes `opt.`,
//! `rng.` and `meta.`.

use super::optim::Adam;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, MultiStageParams};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 7] = b"TPSEP1\0";
const MAX_NDIM: usize = 8;

/// Everything needed to resume training deterministically.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: MultiStageParams<f32>,
    pub opt: Option<Adam<f32>>,
    pub epoch: usize,
    pub shuffle_rng: Option<ChaCha8Rng>,
    /// Sample rate of the training data; 0 when unknown.
    pub sample_rate: u32,
}

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn rng_to_tensor(rng: &ChaCha8Rng) -> Tensor<f32> {
    let seed = rng.get_seed();
    let word_pos = rng.get_word_pos().to_le_bytes();
    let stream = rng.get_stream().to_le_bytes();
    let mut bytes = Vec::with_capacity(56);
    bytes.extend_from_slice(&seed);
    bytes.extend_from_slice(&word_pos);
    bytes.extend_from_slice(&stream);
    Tensor::from_slice_1d(&bytes.iter().map(|&b| b as f32).collect::<Vec<_>>())
}

fn rng_from_tensor(t: &Tensor<f32>) -> Result<ChaCha8Rng> {
    if t.numel() != 56 {
        return Err(ck_err(format!("rng.state wants 56 bytes, got {}", t.numel())));
    }
    let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[0..32]);
    let word_pos = u128::from_le_bytes(bytes[32..48].try_into().unwrap());
    let stream = u64::from_le_bytes(bytes[48..56].try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

fn scalar_record(v: f64) -> Tensor<f32> {
    Tensor::scalar(v as f32)
}

impl Checkpoint {
    pub fn fresh(model: MultiStageParams<f32>) -> Self {
        Checkpoint {
            model,
            opt: None,
            epoch: 0,
            shuffle_rng: None,
            sample_rate: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut records: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        self.model
            .set
            .for_each_named(&mut |name, t| {
                records.insert(name, t.clone());
            });
        if let Some(opt) = &self.opt {
            let mut names = Vec::new();
            self.model.set.for_each_named(&mut |name, _| names.push(name));
            for (i, name) in names.iter().enumerate() {
                records.insert(format!("opt.{}.m", name), opt.m[i].clone());
                records.insert(format!("opt.{}.v", name), opt.v[i].clone());
            }
            records.insert("opt.t".into(), scalar_record(opt.t as f64));
            records.insert("opt.lr".into(), scalar_record(opt.lr));
        }
        if let Some(rng) = &self.shuffle_rng {
            records.insert("rng.state".into(), rng_to_tensor(rng));
        }
        records.insert("meta.epoch".into(), scalar_record(self.epoch as f64));
        records.insert("meta.sample_rate".into(), scalar_record(self.sample_rate as f64));
        let cfg = &self.model.cfg;
        for (key, v) in [
            ("n_channels", cfg.n_channels),
            ("enc_kernel", cfg.enc_kernel),
            ("enc_stride", cfg.enc_stride),
            ("chunk_k", cfg.chunk_k),
            ("repeats_p", cfg.repeats_p),
            ("hidden_h", cfg.hidden_h),
            ("num_speakers", cfg.num_speakers),
            ("stages", cfg.stages),
            ("ca_reduction", cfg.ca_reduction),
        ] {
            records.insert(format!("meta.cfg.{}", key), scalar_record(v as f64));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, tensor) in &records {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(tensor.rank() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut records = parse_records(&bytes)?;

        let take_scalar = |records: &mut BTreeMap<String, Tensor<f32>>, name: &str| -> Result<f64> {
            let t = records
                .remove(name)
                .ok_or_else(|| ck_err(format!("missing {}", name)))?;
            if t.numel() != 1 {
                return Err(ck_err(format!("{} must be scalar", name)));
            }
            Ok(t.data()[0] as f64)
        };

        let cfg = ModelConfig {
            n_channels: take_scalar(&mut records, "meta.cfg.n_channels")? as usize,
            enc_kernel: take_scalar(&mut records, "meta.cfg.enc_kernel")? as usize,
            enc_stride: take_scalar(&mut records, "meta.cfg.enc_stride")? as usize,
            chunk_k: take_scalar(&mut records, "meta.cfg.chunk_k")? as usize,
            repeats_p: take_scalar(&mut records, "meta.cfg.repeats_p")? as usize,
            hidden_h: take_scalar(&mut records, "meta.cfg.hidden_h")? as usize,
            num_speakers: take_scalar(&mut records, "meta.cfg.num_speakers")? as usize,
            stages: take_scalar(&mut records, "meta.cfg.stages")? as usize,
            ca_reduction: take_scalar(&mut records, "meta.cfg.ca_reduction")? as usize,
        };
        cfg.validate()?;
        let epoch = take_scalar(&mut records, "meta.epoch")? as usize;
        let sample_rate = take_scalar(&mut records, "meta.sample_rate").unwrap_or(0.0) as u32;

        let shuffle_rng = match records.remove("rng.state") {
            Some(t) => Some(rng_from_tensor(&t)?),
            None => None,
        };

        // model parameters: everything not under a reserved prefix
        let mut model = MultiStageParams::<f32>::init(&cfg, 0)?;
        let mut param_map = std::collections::HashMap::new();
        let mut opt_map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for (name, t) in records {
            if let Some(rest) = name.strip_prefix("opt.") {
                opt_map.insert(rest.to_string(), t);
            } else {
                param_map.insert(name, t);
            }
        }
        model.assign_from(param_map)?;

        let opt = if opt_map.is_empty() {
            None
        } else {
            let t = opt_map
                .remove("t")
                .ok_or_else(|| ck_err("missing opt.t"))?
                .data()[0] as u64;
            let lr = opt_map
                .remove("lr")
                .ok_or_else(|| ck_err("missing opt.lr"))?
                .data()[0] as f64;
            let mut names = Vec::new();
            model.set.for_each_named(&mut |name, _| names.push(name));
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for name in &names {
                m.push(
                    opt_map
                        .remove(&format!("{}.m", name))
                        .ok_or_else(|| ck_err(format!("missing opt.{}.m", name)))?,
                );
                v.push(
                    opt_map
                        .remove(&format!("{}.v", name))
                        .ok_or_else(|| ck_err(format!("missing opt.{}.v", name)))?,
                );
            }
            if !opt_map.is_empty() {
                let extra: Vec<String> = opt_map.into_keys().collect();
                return Err(ck_err(format!("unknown optimizer tensors: {}", extra.join(", "))));
            }
            Some(Adam { lr, t, m, v })
        };

        Ok(Checkpoint {
            model,
            opt,
            epoch,
            shuffle_rng,
            sample_rate,
        })
    }
}

fn parse_records(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(ck_err("truncated payload: missing header"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(ck_err("bad magic"));
    }
    let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let mut pos = 11usize;
    let mut records = BTreeMap::new();
    let mut last_name: Option<String> = None;
    for _ in 0..count {
        let need = |pos: usize, n: usize| -> Result<()> {
            if pos + n > bytes.len() {
                Err(ck_err("truncated payload"))
            } else {
                Ok(())
            }
        };
        need(pos, 2)?;
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        need(pos, name_len)?;
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| ck_err("tensor name is not UTF-8"))?
            .to_string();
        pos += name_len;
        need(pos, 1)?;
        let ndim = bytes[pos] as usize;
        pos += 1;
        if ndim > MAX_NDIM {
            return Err(ck_err(format!("dimension overflow: ndim {} > {}", ndim, MAX_NDIM)));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            need(pos, 4)?;
            let d = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| ck_err("dimension overflow: element count"))?;
            shape.push(d);
        }
        need(pos, numel * 4)?;
        let data: Vec<f32> = bytes[pos..pos + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += numel * 4;
        if let Some(prev) = &last_name {
            if *prev >= name {
                return Err(ck_err(format!(
                    "tensors not in lexicographic order ({} before {})",
                    prev, name
                )));
            }
        }
        last_name = Some(name.clone());
        records.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use tempfile::tempdir;

    fn model() -> MultiStageParams<f32> {
        let cfg = ModelConfig {
            n_channels: 8,
            enc_kernel: 4,
            enc_stride: 2,
            chunk_k: 4,
            repeats_p: 1,
            hidden_h: 4,
            num_speakers: 2,
            stages: 3,
            ca_reduction: 4,
        };
        MultiStageParams::init(&cfg, 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _: u32 = rng.gen(); // advance so word_pos is nontrivial
        let ck = Checkpoint {
            opt: Some(Adam::new(&m, 1e-3)),
            model: m,
            epoch: 42,
            shuffle_rng: Some(rng.clone()),
            sample_rate: 8000,
        };
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, 42);
        assert_eq!(loaded.model.cfg, ck.model.cfg);
        let mut a = Vec::new();
        ck.model.set.for_each_named(&mut |n, t| a.push((n, t.data().to_vec())));
        let mut b = Vec::new();
        loaded.model.set.for_each_named(&mut |n, t| b.push((n, t.data().to_vec())));
        assert_eq!(a, b);
        // resumed rng continues identically
        let mut resumed = loaded.shuffle_rng.unwrap();
        let mut orig = rng;
        for _ in 0..8 {
            assert_eq!(orig.gen::<u64>(), resumed.gen::<u64>());
        }
    }

    #[test]
    fn exactly_one_decoder_tensor_in_a_3_stage_model() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.ckpt");
        Checkpoint::fresh(model()).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let records = parse_records(&bytes).unwrap();
        let dec: Vec<&String> = records
            .keys()
            .filter(|k| k.starts_with("dec."))
            .collect();
        assert_eq!(dec.len(), 1, "decoder tensors: {:?}", dec);
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        Checkpoint::fresh(model()).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        Checkpoint::fresh(model()).save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn names_are_sorted_in_the_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.ckpt");
        Checkpoint::fresh(model()).save(&path).unwrap();
        // parse_records validates ordering as it reads
        let bytes = std::fs::read(&path).unwrap();
        parse_records(&bytes).unwrap();
    }
}
