//! The staged training objective: per-stage negated SI-SNR losses with the
//! halving alpha/beta schedule, built on the tape so gradients flow to
//! every sub-network.

use super::metrics::{pit_assign_matrix, si_snr, SI_SNR_EPS};
use crate::audio::MixtureScene;
use crate::diff::{Graph, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::StageNodes;

/// Stage balance weights for one epoch: start at 1, halve every 20 epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageWeights {
    pub alpha: f64,
    pub beta: f64,
    pub epoch: usize,
}

pub fn stage_weights(epoch: usize) -> StageWeights {
    let w = 2.0f64.powi(-((epoch / 20) as i32));
    StageWeights {
        alpha: w,
        beta: w,
        epoch,
    }
}

/// Per-stage losses (negated SI-SNR, dB) and their weighted total.
#[derive(Debug, Clone)]
pub struct StageLossReport {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
    /// Estimate index assigned to each reference speaker.
    pub permutation: Vec<usize>,
}

/// SI-SNR of an estimate node against a constant reference, as a graph
/// node (dB, shape [1]). The reference-side statistics are precomputed;
/// only estimate-dependent terms go on the tape.
pub fn si_snr_node<T: Scalar>(
    g: &mut Graph<T>,
    est: NodeId,
    reference: &[f32],
) -> Result<NodeId> {
    let t = g.value(est).numel();
    if t != reference.len() {
        return Err(Error::Audio(format!(
            "si_snr: length mismatch ({} vs {})",
            t,
            reference.len()
        )));
    }
    let n = reference.len() as f64;
    let mr = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ref0: Vec<T> = reference.iter().map(|&v| T::from_f64(v as f64 - mr)).collect();
    let ref_energy: f64 = ref0.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    let shape = g.shape(est).to_vec();
    let ref_node = g.constant(Tensor::from_vec(shape, ref0)?);

    let m_est = g.mean(est)?;
    let neg_mean = g.neg(m_est)?;
    let est0 = g.shift_by(est, neg_mean)?;
    let prod = g.mul(est0, ref_node)?;
    let dot = g.sum(prod)?;
    let coef = g.scale(dot, 1.0 / (ref_energy + SI_SNR_EPS))?;
    let target = g.scale_by(ref_node, coef)?;
    let err = g.sub(est0, target)?;
    let t2 = g.mul(target, target)?;
    let num = g.sum(t2)?;
    let num = g.add_scalar(num, SI_SNR_EPS)?;
    let e2 = g.mul(err, err)?;
    let den = g.sum(e2)?;
    let den = g.add_scalar(den, SI_SNR_EPS)?;
    let inv = g.recip(den)?;
    let ratio = g.mul(num, inv)?;
    let l = g.ln(ratio)?;
    g.scale(l, 10.0 / std::f64::consts::LN_10)
}

fn node_samples<T: Scalar>(g: &Graph<T>, id: NodeId) -> Vec<f32> {
    g.value(id).data().iter().map(|&v| v.as_f32()).collect()
}

/// Negated-SI-SNR pairwise loss matrix `[est][ref]` between decoded nodes
/// and target waveforms.
fn loss_matrix<T: Scalar>(
    g: &Graph<T>,
    ests: &[NodeId],
    refs: &[crate::audio::Waveform],
) -> Result<Vec<Vec<f64>>> {
    let mut m = vec![vec![0.0; refs.len()]; ests.len()];
    for (e, &est) in ests.iter().enumerate() {
        let est_samples = node_samples(g, est);
        for (r, rf) in refs.iter().enumerate() {
            m[e][r] = -si_snr(&est_samples, &rf.samples)?;
        }
    }
    Ok(m)
}

/// Builds the total loss `alpha*L1 + beta*L2 + L3` on the tape.
///
/// One speaker permutation is chosen for stages 2 and 3 together by
/// minimizing `beta*L2 + L3` (the reverberant and anechoic targets
/// describe the same speaker, so their assignments must agree). Returns
/// the scalar loss node and a value report.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &StageNodes,
    scene: &MixtureScene,
    w: &StageWeights,
    stages: usize,
) -> Result<(NodeId, StageLossReport)> {
    let c = scene.s.len();
    if outputs.shat.len() != c {
        return Err(Error::Train(format!(
            "loss: {} estimates vs {} target speakers",
            outputs.shat.len(),
            c
        )));
    }

    // stage-1 loss
    let l1_node = match (stages >= 2, outputs.zhat) {
        (true, Some(zhat)) => {
            let snr = si_snr_node(g, zhat, &scene.z.samples)?;
            Some(g.neg(snr)?)
        }
        (true, None) if w.alpha != 0.0 => {
            return Err(Error::Train(
                "loss: stage-1 weight is nonzero but no denoised output was emitted".into(),
            ))
        }
        _ => None,
    };

    // choose the shared speaker permutation
    let s_matrix = loss_matrix(g, &outputs.shat, &scene.s)?;
    let use_m = stages == 3;
    let perm = if use_m {
        let mhat = outputs.mhat.as_ref().ok_or_else(|| {
            Error::Train("loss: 3-stage model without reverberant-stage outputs".into())
        })?;
        let m_matrix = loss_matrix(g, mhat, &scene.m)?;
        let combined: Vec<Vec<f64>> = (0..c)
            .map(|e| {
                (0..c)
                    .map(|r| w.beta * m_matrix[e][r] + s_matrix[e][r])
                    .collect()
            })
            .collect();
        pit_assign_matrix(&combined)?.0
    } else {
        pit_assign_matrix(&s_matrix)?.0
    };

    // stage-2 loss under the shared permutation
    let l2_node = if use_m {
        let mhat = outputs.mhat.as_ref().unwrap();
        let mut acc: Option<NodeId> = None;
        for (r, &e) in perm.iter().enumerate() {
            let snr = si_snr_node(g, mhat[e], &scene.m[r].samples)?;
            let neg = g.neg(snr)?;
            acc = Some(match acc {
                Some(a) => g.add(a, neg)?,
                None => neg,
            });
        }
        Some(g.scale(acc.unwrap(), 1.0 / c as f64)?)
    } else {
        None
    };

    // final-stage loss
    let mut acc: Option<NodeId> = None;
    for (r, &e) in perm.iter().enumerate() {
        let snr = si_snr_node(g, outputs.shat[e], &scene.s[r].samples)?;
        let neg = g.neg(snr)?;
        acc = Some(match acc {
            Some(a) => g.add(a, neg)?,
            None => neg,
        });
    }
    let l3_node = g.scale(acc.unwrap(), 1.0 / c as f64)?;

    // total = alpha*l1 + beta*l2 + l3
    let mut total = l3_node;
    if let Some(l2) = l2_node {
        let weighted = g.scale(l2, w.beta)?;
        total = g.add(weighted, total)?;
    }
    if let Some(l1) = l1_node {
        let weighted = g.scale(l1, w.alpha)?;
        total = g.add(weighted, total)?;
    }

    let value = |id: Option<NodeId>| id.map(|i| g.value(i).data()[0].as_f64()).unwrap_or(0.0);
    let report = StageLossReport {
        l1: value(l1_node),
        l2: value(l2_node),
        l3: g.value(l3_node).data()[0].as_f64(),
        total: g.value(total).data()[0].as_f64(),
        permutation: perm,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{build_scene, SceneSpec, Waveform};

    #[test]
    fn schedule_starts_at_one_and_halves() {
        assert_eq!(stage_weights(0).alpha, 1.0);
        assert_eq!(stage_weights(19).alpha, 1.0);
        assert_eq!(stage_weights(20).alpha, 0.5);
        assert_eq!(stage_weights(20).beta, 0.5);
        assert_eq!(stage_weights(45).alpha, 0.25);
        for e in 0..=100 {
            let w = stage_weights(e);
            assert_eq!(w.alpha, w.beta);
            assert_eq!(w.alpha, 2.0f64.powi(-((e / 20) as i32)));
        }
    }

    fn scene() -> MixtureScene {
        build_scene(&SceneSpec {
            num_speakers: 2,
            duration: 0.3,
            sample_rate: 8000,
            snr_db: 4.0,
            t60_range: (0.1, 0.2),
            seed: 5,
            reverb_enabled: true,
        })
        .unwrap()
    }

    fn as_node(g: &mut Graph<f64>, w: &Waveform) -> NodeId {
        let data: Vec<f64> = w.samples.iter().map(|&v| v as f64).collect();
        g.constant(Tensor::from_vec(vec![1, data.len()], data).unwrap())
    }

    #[test]
    fn tape_si_snr_matches_plain() {
        let sc = scene();
        let mut g = Graph::<f64>::new();
        let est = as_node(&mut g, &sc.y);
        let node = si_snr_node(&mut g, est, &sc.z.samples).unwrap();
        let plain = si_snr(&sc.y.samples, &sc.z.samples).unwrap();
        assert!((g.value(node).data()[0] - plain).abs() < 1e-9);
    }

    #[test]
    fn perfect_outputs_hit_eps_ceiling_total() {
        // perfect estimates: every stage loss sits at the eps-forced
        // ceiling of about -80 dB per unit-energy reference
        let sc = scene();
        let mut g = Graph::<f64>::new();
        let outputs = StageNodes {
            zhat: Some(as_node(&mut g, &sc.z)),
            mhat: Some(vec![as_node(&mut g, &sc.m[0]), as_node(&mut g, &sc.m[1])]),
            shat: vec![as_node(&mut g, &sc.s[0]), as_node(&mut g, &sc.s[1])],
        };
        let w = stage_weights(0);
        let (_, report) = total_loss(&mut g, &outputs, &sc, &w, 3).unwrap();
        assert!(report.l1 < -55.0, "l1 {}", report.l1);
        assert!(report.l3 < -55.0, "l3 {}", report.l3);
        let expect = report.l1 * w.alpha + report.l2 * w.beta + report.l3;
        assert!((report.total - expect).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_leave_only_l3() {
        let sc = scene();
        let mut g = Graph::<f64>::new();
        let outputs = StageNodes {
            zhat: Some(as_node(&mut g, &sc.y)), // deliberately poor
            mhat: Some(vec![as_node(&mut g, &sc.y), as_node(&mut g, &sc.y)]),
            shat: vec![as_node(&mut g, &sc.s[0]), as_node(&mut g, &sc.s[1])],
        };
        let w = StageWeights {
            alpha: 0.0,
            beta: 0.0,
            epoch: 0,
        };
        let (_, report) = total_loss(&mut g, &outputs, &sc, &w, 3).unwrap();
        assert!((report.total - report.l3).abs() < 1e-9);
    }

    #[test]
    fn swapped_speakers_give_identical_total() {
        let sc = scene();
        let w = stage_weights(0);
        let run = |swap: bool| {
            let mut g = Graph::<f64>::new();
            let (a, b) = if swap { (1, 0) } else { (0, 1) };
            let outputs = StageNodes {
                zhat: Some(as_node(&mut g, &sc.z)),
                mhat: Some(vec![as_node(&mut g, &sc.m[a]), as_node(&mut g, &sc.m[b])]),
                shat: vec![as_node(&mut g, &sc.s[a]), as_node(&mut g, &sc.s[b])],
            };
            total_loss(&mut g, &outputs, &sc, &w, 3).unwrap().1
        };
        let plain = run(false);
        let swapped = run(true);
        assert!((plain.total - swapped.total).abs() < 1e-9);
        assert_eq!(plain.permutation, vec![0, 1]);
        assert_eq!(swapped.permutation, vec![1, 0]);
    }

    #[test]
    fn missing_intermediate_with_nonzero_weight_errors() {
        let sc = scene();
        let mut g = Graph::<f64>::new();
        let outputs = StageNodes {
            zhat: None,
            mhat: None,
            shat: vec![as_node(&mut g, &sc.s[0]), as_node(&mut g, &sc.s[1])],
        };
        let w = stage_weights(0);
        assert!(total_loss(&mut g, &outputs, &sc, &w, 3).is_err());
    }

    #[test]
    fn gradient_of_negated_si_snr_matches_finite_differences() {
        use crate::diff::grad_check_fn;
        let sc = scene();
        let reference: Vec<f32> = sc.s[0].samples[..48].to_vec();
        let est: Vec<f64> = sc.y.samples[..48].iter().map(|&v| v as f64 + 0.05).collect();
        let input = Tensor::from_vec(vec![1, 48], est).unwrap();
        let r = grad_check_fn("neg_si_snr", &[input], 1e-4, |g, ids| {
            let snr = si_snr_node(g, ids[0], &reference)?;
            g.neg(snr)
        })
        .unwrap();
        assert!(r.passed, "{r}");
    }
}
