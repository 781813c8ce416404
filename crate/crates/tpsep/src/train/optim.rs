//! Adaptive-moment optimizer and gradient clipping.

use crate::diff::{Scalar, Tensor};
use crate::model::MultiStageParams;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moment state is kept in the parameter
/// traversal order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &MultiStageParams<T>, lr: f64) -> Self {
        let mut m = Vec::new();
        params.set.for_each_named(&mut |_, t| m.push(Tensor::zeros(t.shape())));
        let v = m.clone();
        Adam { lr, t: 0, m, v }
    }

    /// One update. `grads` must align with the parameter traversal order.
    pub fn step(&mut self, params: &mut MultiStageParams<T>, grads: &[Tensor<T>]) {
        self.t += 1;
        let b1 = T::from_f64(BETA1);
        let b2 = T::from_f64(BETA2);
        let one_m_b1 = T::from_f64(1.0 - BETA1);
        let one_m_b2 = T::from_f64(1.0 - BETA2);
        let bc1 = T::from_f64(1.0 - BETA1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - BETA2.powi(self.t as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(ADAM_EPS);

        let mut idx = 0;
        params.set.for_each_named_mut(&mut |_, p| {
            let g = grads[idx].data();
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = b1 * *mv + one_m_b1 * gv;
                *vv = b2 * *vv + one_m_b2 * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for &v in g.data() {
            let v = v.as_f64();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn one_param_model() -> MultiStageParams<f64> {
        // smallest valid config; we poke a single scalar via the head slope
        let cfg = ModelConfig {
            n_channels: 4,
            enc_kernel: 2,
            enc_stride: 1,
            chunk_k: 2,
            repeats_p: 1,
            hidden_h: 2,
            num_speakers: 2,
            stages: 1,
            ca_reduction: 2,
        };
        MultiStageParams::init(&cfg, 0).unwrap()
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut model = one_param_model();
        // zero a scalar parameter, give it gradient 1
        model.set.subnets[0].head.slope = Tensor::scalar(0.0);
        let mut grads = Vec::new();
        let mut slope_idx = None;
        let mut i = 0;
        model.set.for_each_named(&mut |name, t| {
            if name == "sub0.head.slope" {
                slope_idx = Some(i);
                grads.push(Tensor::scalar(1.0));
            } else {
                grads.push(Tensor::zeros(t.shape()));
            }
            i += 1;
        });
        let mut adam = Adam::new(&model, 1e-3);
        adam.step(&mut model, &grads);
        let got = model.set.subnets[0].head.slope.data()[0];
        // bias-corrected first step ratio is ~1, so the move is ~ -lr
        assert!((got + 1e-3).abs() < 1e-8, "{got}");
        let _ = slope_idx;
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut model = one_param_model();
        let before: Vec<f64> = {
            let mut v = Vec::new();
            model.set.for_each_named(&mut |_, t| v.extend_from_slice(t.data()));
            v
        };
        let mut grads = Vec::new();
        model.set.for_each_named(&mut |_, t| grads.push(Tensor::zeros(t.shape())));
        let mut adam = Adam::new(&model, 1e-2);
        adam.step(&mut model, &grads);
        let after: Vec<f64> = {
            let mut v = Vec::new();
            model.set.for_each_named(&mut |_, t| v.extend_from_slice(t.data()));
            v
        };
        assert_eq!(before, after);
    }

    #[test]
    fn identical_grads_give_identical_updates() {
        let mut model = one_param_model();
        // force two equal params with equal grads, updates must match
        model.set.subnets[0].head.slope = Tensor::scalar(0.3);
        model.set.encoder_w = Tensor::filled(model.set.encoder_w.shape(), 0.3);
        let mut grads = Vec::new();
        model.set.for_each_named(&mut |_, t| grads.push(Tensor::filled(t.shape(), 0.7)));
        let mut adam = Adam::new(&model, 1e-3);
        adam.step(&mut model, &grads);
        let slope = model.set.subnets[0].head.slope.data()[0];
        let enc = model.set.encoder_w.data()[0];
        assert!((slope - enc).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![
            Tensor::<f64>::filled(&[3], 2.0),
            Tensor::<f64>::filled(&[4], -1.5),
        ];
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!(pre > 1.0);
        let mut sq = 0.0;
        for g in &grads {
            for &v in g.data() {
                sq += v * v;
            }
        }
        assert!(sq.sqrt() <= 1.0 + 1e-6);
        // below the cap nothing changes
        let mut small = vec![Tensor::<f64>::filled(&[2], 0.1)];
        let before = small[0].data().to_vec();
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].data(), before.as_slice());
    }
}
