//! Model parameters.
//!
//! The parameter tree is generic over its payload so the same structure
//! holds `Tensor<T>` (storage) or `NodeId` (bound into a graph for one
//! training step). Naming and traversal order are fixed and shared by the
//! optimizer and the checkpoint format.

use super::config::ModelConfig;
use crate::diff::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CaP<P> {
    pub w0: P,
    pub b0: P,
    pub w1: P,
    pub b1: P,
}

#[derive(Debug, Clone)]
pub struct GruDirP<P> {
    pub wx: P,
    pub wh: P,
    pub bx: P,
    pub bh: P,
}

#[derive(Debug, Clone)]
pub struct BiGruP<P> {
    pub fwd: GruDirP<P>,
    pub bwd: GruDirP<P>,
}

#[derive(Debug, Clone)]
pub struct BlockP<P> {
    pub ln_gamma: P,
    pub ln_beta: P,
    pub gru: BiGruP<P>,
    pub proj_w: P,
    pub proj_b: P,
}

#[derive(Debug, Clone)]
pub struct RepeatP<P> {
    pub ca: CaP<P>,
    pub intra: BlockP<P>,
    pub inter: BlockP<P>,
}

#[derive(Debug, Clone)]
pub struct HeadP<P> {
    pub slope: P,
    pub w: P,
    pub b: P,
}

#[derive(Debug, Clone)]
pub struct SubnetP<P> {
    pub repeats: Vec<RepeatP<P>>,
    pub head: HeadP<P>,
}

#[derive(Debug, Clone)]
pub struct ParamSet<P> {
    pub encoder_w: P,
    pub decoder_w: P,
    pub subnets: Vec<SubnetP<P>>,
}

impl<P> ParamSet<P> {
    pub fn for_each_named_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        f("enc.w".into(), &mut self.encoder_w);
        f("dec.w".into(), &mut self.decoder_w);
        for (si, sub) in self.subnets.iter_mut().enumerate() {
            for (ri, rep) in sub.repeats.iter_mut().enumerate() {
                let base = format!("sub{}.rep{}", si, ri);
                f(format!("{}.ca.w0", base), &mut rep.ca.w0);
                f(format!("{}.ca.b0", base), &mut rep.ca.b0);
                f(format!("{}.ca.w1", base), &mut rep.ca.w1);
                f(format!("{}.ca.b1", base), &mut rep.ca.b1);
                for (tag, block) in [("intra", &mut rep.intra), ("inter", &mut rep.inter)] {
                    f(format!("{}.{}.ln_g", base, tag), &mut block.ln_gamma);
                    f(format!("{}.{}.ln_b", base, tag), &mut block.ln_beta);
                    for (d, dir) in [("f", &mut block.gru.fwd), ("b", &mut block.gru.bwd)] {
                        f(format!("{}.{}.gru.{}.wx", base, tag, d), &mut dir.wx);
                        f(format!("{}.{}.gru.{}.wh", base, tag, d), &mut dir.wh);
                        f(format!("{}.{}.gru.{}.bx", base, tag, d), &mut dir.bx);
                        f(format!("{}.{}.gru.{}.bh", base, tag, d), &mut dir.bh);
                    }
                    f(format!("{}.{}.proj.w", base, tag), &mut block.proj_w);
                    f(format!("{}.{}.proj.b", base, tag), &mut block.proj_b);
                }
            }
            f(format!("sub{}.head.slope", si), &mut sub.head.slope);
            f(format!("sub{}.head.w", si), &mut sub.head.w);
            f(format!("sub{}.head.b", si), &mut sub.head.b);
        }
    }

    /// Visits every parameter with its stable name, in the same order as
    /// the mutable traversal.
    pub fn for_each_named(&self, f: &mut impl FnMut(String, &P)) {
        f("enc.w".into(), &self.encoder_w);
        f("dec.w".into(), &self.decoder_w);
        for (si, sub) in self.subnets.iter().enumerate() {
            for (ri, rep) in sub.repeats.iter().enumerate() {
                let base = format!("sub{}.rep{}", si, ri);
                f(format!("{}.ca.w0", base), &rep.ca.w0);
                f(format!("{}.ca.b0", base), &rep.ca.b0);
                f(format!("{}.ca.w1", base), &rep.ca.w1);
                f(format!("{}.ca.b1", base), &rep.ca.b1);
                for (tag, block) in [("intra", &rep.intra), ("inter", &rep.inter)] {
                    f(format!("{}.{}.ln_g", base, tag), &block.ln_gamma);
                    f(format!("{}.{}.ln_b", base, tag), &block.ln_beta);
                    for (d, dir) in [("f", &block.gru.fwd), ("b", &block.gru.bwd)] {
                        f(format!("{}.{}.gru.{}.wx", base, tag, d), &dir.wx);
                        f(format!("{}.{}.gru.{}.wh", base, tag, d), &dir.wh);
                        f(format!("{}.{}.gru.{}.bx", base, tag, d), &dir.bx);
                        f(format!("{}.{}.gru.{}.bh", base, tag, d), &dir.bh);
                    }
                    f(format!("{}.{}.proj.w", base, tag), &block.proj_w);
                    f(format!("{}.{}.proj.b", base, tag), &block.proj_b);
                }
            }
            f(format!("sub{}.head.slope", si), &sub.head.slope);
            f(format!("sub{}.head.w", si), &sub.head.w);
            f(format!("sub{}.head.b", si), &sub.head.b);
        }
    }

    /// Structural map preserving traversal order.
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ParamSet<Q> {
        let map_dir = |dir: &GruDirP<P>, f: &mut dyn FnMut(&P) -> Q| GruDirP {
            wx: f(&dir.wx),
            wh: f(&dir.wh),
            bx: f(&dir.bx),
            bh: f(&dir.bh),
        };
        let map_block = |b: &BlockP<P>, f: &mut dyn FnMut(&P) -> Q| BlockP {
            ln_gamma: f(&b.ln_gamma),
            ln_beta: f(&b.ln_beta),
            gru: BiGruP {
                fwd: map_dir(&b.gru.fwd, f),
                bwd: map_dir(&b.gru.bwd, f),
            },
            proj_w: f(&b.proj_w),
            proj_b: f(&b.proj_b),
        };
        ParamSet {
            encoder_w: f(&self.encoder_w),
            decoder_w: f(&self.decoder_w),
            subnets: self
                .subnets
                .iter()
                .map(|sub| SubnetP {
                    repeats: sub
                        .repeats
                        .iter()
                        .map(|rep| RepeatP {
                            ca: CaP {
                                w0: f(&rep.ca.w0),
                                b0: f(&rep.ca.b0),
                                w1: f(&rep.ca.w1),
                                b1: f(&rep.ca.b1),
                            },
                            intra: map_block(&rep.intra, f),
                            inter: map_block(&rep.inter, f),
                        })
                        .collect(),
                    head: HeadP {
                        slope: f(&sub.head.slope),
                        w: f(&sub.head.w),
                        b: f(&sub.head.b),
                    },
                })
                .collect(),
        }
    }
}

/// Parameter tree bound into a graph for one forward/backward pass.
pub type NodeParams = ParamSet<NodeId>;

/// The full model: config plus parameter storage.
#[derive(Debug, Clone)]
pub struct MultiStageParams<T> {
    pub cfg: ModelConfig,
    pub set: ParamSet<Tensor<T>>,
}

/// Output channel count of a sub-network's head. The separation stage
/// expands to one representation per speaker; other stages map N -> N.
pub fn head_out_channels(cfg: &ModelConfig, stage_index: usize) -> usize {
    let expanding = match cfg.stages {
        1 => stage_index == 0,
        _ => stage_index == 1,
    };
    if expanding {
        cfg.num_speakers * cfg.n_channels
    } else {
        cfg.n_channels
    }
}

impl<T: Scalar> MultiStageParams<T> {
    /// Seeded uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_channels;
        let h = cfg.hidden_h;
        let r = cfg.ca_reduction;

        fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let count: usize = shape.iter().product();
            let data: Vec<T> = (0..count)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            Tensor::from_vec(shape.to_vec(), data).expect("init shape")
        }

        fn make_dir<T: Scalar>(rng: &mut ChaCha8Rng, feat: usize, h: usize) -> GruDirP<Tensor<T>> {
            GruDirP {
                wx: uniform(rng, &[feat, 3 * h], h),
                wh: uniform(rng, &[h, 3 * h], h),
                bx: uniform(rng, &[3 * h], h),
                bh: uniform(rng, &[3 * h], h),
            }
        }

        fn make_block<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, h: usize) -> BlockP<Tensor<T>> {
            BlockP {
                ln_gamma: Tensor::filled(&[n], T::one()),
                ln_beta: Tensor::zeros(&[n]),
                gru: BiGruP {
                    fwd: make_dir(rng, n, h),
                    bwd: make_dir(rng, n, h),
                },
                proj_w: uniform(rng, &[2 * h, n], 2 * h),
                proj_b: uniform(rng, &[n], 2 * h),
            }
        }

        let mut subnets = Vec::with_capacity(cfg.stages);
        for si in 0..cfg.stages {
            let mut repeats = Vec::with_capacity(cfg.repeats_p);
            for _ in 0..cfg.repeats_p {
                repeats.push(RepeatP {
                    ca: CaP {
                        w0: uniform(&mut rng, &[n, n / r], n),
                        b0: uniform(&mut rng, &[n / r], n),
                        w1: uniform(&mut rng, &[n / r, n], n / r),
                        b1: uniform(&mut rng, &[n], n / r),
                    },
                    intra: make_block(&mut rng, n, h),
                    inter: make_block(&mut rng, n, h),
                });
            }
            let out_c = head_out_channels(cfg, si);
            subnets.push(SubnetP {
                repeats,
                head: HeadP {
                    slope: Tensor::scalar(T::from_f64(0.25)),
                    w: uniform(&mut rng, &[out_c, n], n),
                    b: uniform(&mut rng, &[out_c], n),
                },
            });
        }

        Ok(MultiStageParams {
            cfg: cfg.clone(),
            set: ParamSet {
                encoder_w: uniform(&mut rng, &[n, 1, cfg.enc_kernel], cfg.enc_kernel),
                decoder_w: uniform(&mut rng, &[n, 1, cfg.enc_kernel], n * cfg.enc_kernel),
                subnets,
            },
        })
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.set.for_each_named(&mut |_, t| total += t.numel());
        total
    }

    /// Inserts every parameter as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> NodeParams {
        self.set.map(&mut |t| g.leaf(t.clone(), trainable))
    }

    pub fn cast<U: Scalar>(&self) -> MultiStageParams<U> {
        MultiStageParams {
            cfg: self.cfg.clone(),
            set: self.set.map(&mut |t| t.cast::<U>()),
        }
    }

    /// Replaces parameter values from a name -> tensor map, checking
    /// shapes. Unknown or missing names are errors.
    pub fn assign_from(&mut self, mut tensors: std::collections::HashMap<String, Tensor<T>>) -> Result<()> {
        let mut missing = Vec::new();
        let mut bad_shape = Vec::new();
        self.set.for_each_named_mut(&mut |name, slot| {
            match tensors.remove(&name) {
                Some(t) if t.shape() == slot.shape() => *slot = t,
                Some(t) => bad_shape.push(format!("{} ({:?} vs {:?})", name, t.shape(), slot.shape())),
                None => missing.push(name),
            }
        });
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!("missing tensors: {}", missing.join(", "))));
        }
        if !bad_shape.is_empty() {
            return Err(Error::Checkpoint(format!("shape mismatch: {}", bad_shape.join(", "))));
        }
        if !tensors.is_empty() {
            let mut extra: Vec<String> = tensors.into_keys().collect();
            extra.sort();
            return Err(Error::Checkpoint(format!("unknown tensors: {}", extra.join(", "))));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_orders_agree() {
        let p = MultiStageParams::<f32>::init(&ModelConfig::desk_default(), 1).unwrap();
        let mut names = Vec::new();
        p.set.for_each_named(&mut |n, _| names.push(n));
        let mut mut_names = Vec::new();
        let mut clone = p.clone();
        clone.set.for_each_named_mut(&mut |n, _| mut_names.push(n));
        assert_eq!(names, mut_names);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "duplicate parameter names");
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::desk_default();
        let a = MultiStageParams::<f32>::init(&cfg, 9).unwrap();
        let b = MultiStageParams::<f32>::init(&cfg, 9).unwrap();
        assert_eq!(a.set.encoder_w.data(), b.set.encoder_w.data());
        assert_eq!(
            a.set.subnets[2].repeats[1].inter.gru.bwd.wh.data(),
            b.set.subnets[2].repeats[1].inter.gru.bwd.wh.data()
        );
    }

    #[test]
    fn parameter_matched_configs_are_close() {
        // total params of {stages=3, P=p} vs {stages=1, P=3p} differ < 5%
        let multi_cfg = ModelConfig::desk_default();
        let single_cfg = multi_cfg.single_stage_matched();
        let multi = MultiStageParams::<f32>::init(&multi_cfg, 0).unwrap().param_count();
        let single = MultiStageParams::<f32>::init(&single_cfg, 0).unwrap().param_count();
        let rel = (multi as f64 - single as f64).abs() / single as f64;
        assert!(rel < 0.05, "multi {} vs single {} ({:.3}%)", multi, single, rel * 100.0);
    }

    #[test]
    fn stage_roles_set_head_widths() {
        let cfg = ModelConfig::desk_default();
        assert_eq!(head_out_channels(&cfg, 0), 32);
        assert_eq!(head_out_channels(&cfg, 1), 64);
        assert_eq!(head_out_channels(&cfg, 2), 32);
        let single = cfg.single_stage_matched();
        assert_eq!(head_out_channels(&single, 0), 64);
        let two = ModelConfig { stages: 2, ..cfg };
        assert_eq!(head_out_channels(&two, 0), 32);
        assert_eq!(head_out_channels(&two, 1), 64);
    }
}
