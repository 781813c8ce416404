//! Scale-invariant SNR, permutation-invariant assignment and evaluation
//! metrics, all pure functions over sample slices (accumulation in f64).

use crate::audio::{MixtureScene, Waveform};
use crate::error::{Error, Result};
use serde::Serialize;

pub const SI_SNR_EPS: f64 = 1e-8;

/// Scale-invariant SNR in dB. Both signals are mean-subtracted; the
/// estimate is projected onto the reference and the residual measured
/// against that projection with `eps` floors in both ratio terms.
pub fn si_snr(est: &[f32], reference: &[f32]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Audio(format!(
            "si_snr: length mismatch ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Audio("si_snr: empty signals".into()));
    }
    let n = est.len() as f64;
    let me: f64 = est.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mr: f64 = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut dot = 0.0f64;
    let mut ref_energy = 0.0f64;
    for (&e, &r) in est.iter().zip(reference) {
        let (e, r) = (e as f64 - me, r as f64 - mr);
        dot += e * r;
        ref_energy += r * r;
    }
    let scale = dot / (ref_energy + SI_SNR_EPS);
    let mut target_energy = 0.0f64;
    let mut error_energy = 0.0f64;
    for (&e, &r) in est.iter().zip(reference) {
        let (e, r) = (e as f64 - me, r as f64 - mr);
        let t = scale * r;
        target_energy += t * t;
        let err = e - t;
        error_energy += err * err;
    }
    Ok(10.0 * ((target_energy + SI_SNR_EPS) / (error_energy + SI_SNR_EPS)).log10())
}

/// Plain SDR in dB after optimal scalar scaling of the estimate; a labeled
/// substitute for filtered-projection SDR.
pub fn sdr_plain(est: &[f32], reference: &[f32]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Audio(format!(
            "sdr_plain: length mismatch ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    let n = est.len() as f64;
    let me: f64 = est.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mr: f64 = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut dot = 0.0f64;
    let mut est_energy = 0.0f64;
    let mut ref_energy = 0.0f64;
    for (&e, &r) in est.iter().zip(reference) {
        let (e, r) = (e as f64 - me, r as f64 - mr);
        dot += e * r;
        est_energy += e * e;
        ref_energy += r * r;
    }
    let scale = dot / (est_energy + SI_SNR_EPS);
    let mut err_energy = 0.0f64;
    for (&e, &r) in est.iter().zip(reference) {
        let (e, r) = (e as f64 - me, r as f64 - mr);
        let d = r - scale * e;
        err_energy += d * d;
    }
    Ok(10.0 * ((ref_energy + SI_SNR_EPS) / (err_energy + SI_SNR_EPS)).log10())
}

/// All permutations of 0..n in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    heap_permute(&mut items, n, &mut out);
    out.sort();
    out
}

fn heap_permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(items.clone());
        return;
    }
    for i in 0..k {
        heap_permute(items, k - 1, out);
        if k % 2 == 0 {
            items.swap(i, k - 1);
        } else {
            items.swap(0, k - 1);
        }
    }
}

/// Brute-force permutation-invariant assignment over a pairwise loss
/// matrix `loss[est][ref]`. Returns the permutation (estimate index per
/// reference position) minimizing the mean pairwise loss, and that loss.
pub fn pit_assign_matrix(loss: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let c = loss.len();
    if c == 0 || loss.iter().any(|row| row.len() != c) {
        return Err(Error::Audio("pit: loss matrix must be square".into()));
    }
    if c > 6 {
        return Err(Error::Audio(format!(
            "pit: brute-force enumeration is bounded at 6 sources, got {}",
            c
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in permutations(c) {
        let total: f64 = perm.iter().enumerate().map(|(r, &e)| loss[e][r]).sum();
        let mean = total / c as f64;
        if best.as_ref().map(|(_, b)| mean < *b).unwrap_or(true) {
            best = Some((perm, mean));
        }
    }
    Ok(best.expect("at least one permutation"))
}

/// PIT over waveform lists with an arbitrary pairwise loss.
pub fn pit_assign(
    ests: &[Waveform],
    refs: &[Waveform],
    pairwise_loss: impl Fn(&[f32], &[f32]) -> Result<f64>,
) -> Result<(Vec<usize>, f64)> {
    if ests.len() != refs.len() {
        return Err(Error::Audio(format!(
            "pit: {} estimates vs {} references",
            ests.len(),
            refs.len()
        )));
    }
    let c = ests.len();
    let mut matrix = vec![vec![0.0f64; c]; c];
    for (e, est) in ests.iter().enumerate() {
        for (r, rf) in refs.iter().enumerate() {
            matrix[e][r] = pairwise_loss(&est.samples, &rf.samples)?;
        }
    }
    pit_assign_matrix(&matrix)
}

/// Mean SI-SNR of the best-permutation assignment (the quantity tracked on
/// validation curves).
pub fn best_perm_si_snr(ests: &[Waveform], refs: &[Waveform]) -> Result<f64> {
    let (_, loss) = pit_assign(ests, refs, |e, r| Ok(-si_snr(e, r)?))?;
    Ok(-loss)
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemMetrics {
    pub id: String,
    pub si_snri: f64,
    pub sdri_plain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub num_items: usize,
    pub si_snri_mean: f64,
    pub si_snri_std: f64,
    pub sdri_plain_mean: f64,
    pub per_item: Vec<ItemMetrics>,
}

/// SI-SNRi / SDRi of final-stage estimates against the anechoic targets,
/// measured relative to the unprocessed mixture under one shared
/// best-permutation assignment.
pub fn eval_metrics(shat: &[Waveform], scene: &MixtureScene, id: &str) -> Result<ItemMetrics> {
    let (perm, loss) = pit_assign(shat, &scene.s, |e, r| Ok(-si_snr(e, r)?))?;
    let _ = loss;
    let c = perm.len() as f64;
    let mut si_est = 0.0;
    let mut si_mix = 0.0;
    let mut sdr_est = 0.0;
    let mut sdr_mix = 0.0;
    for (r, &e) in perm.iter().enumerate() {
        si_est += si_snr(&shat[e].samples, &scene.s[r].samples)?;
        si_mix += si_snr(&scene.y.samples, &scene.s[r].samples)?;
        sdr_est += sdr_plain(&shat[e].samples, &scene.s[r].samples)?;
        sdr_mix += sdr_plain(&scene.y.samples, &scene.s[r].samples)?;
    }
    Ok(ItemMetrics {
        id: id.to_string(),
        si_snri: (si_est - si_mix) / c,
        sdri_plain: (sdr_est - sdr_mix) / c,
    })
}

pub fn aggregate(per_item: Vec<ItemMetrics>) -> MetricsReport {
    let n = per_item.len();
    let mean = |f: &dyn Fn(&ItemMetrics) -> f64| {
        per_item.iter().map(f).sum::<f64>() / n.max(1) as f64
    };
    let si_mean = mean(&|i| i.si_snri);
    let var = per_item
        .iter()
        .map(|i| (i.si_snri - si_mean).powi(2))
        .sum::<f64>()
        / n.max(1) as f64;
    MetricsReport {
        num_items: n,
        si_snri_mean: si_mean,
        si_snri_std: var.sqrt(),
        sdri_plain_mean: mean(&|i| i.sdri_plain),
        per_item,
    }
}
