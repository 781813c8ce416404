//! The separation network: convolutional encoder, 50%-overlap chunking,
//! triple-path sub-networks composed in stages, and the shared transposed
//! convolution decoder.
//!
//! Sub-networks predict decodable feature representations directly; there
//! is no mask multiplication with the encoder output anywhere.

use super::config::ModelConfig;
use super::params::{head_out_channels, BlockP, CaP, NodeParams, SubnetP};
use crate::audio::Waveform;
use crate::diff::{bigru, BiGru, Graph, GruDir, NodeId, Scalar, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Decoded per-stage outputs as graph nodes, each shaped [1, T].
#[derive(Debug, Clone)]
pub struct StageNodes {
    /// Denoised mixture estimate (training-time decode of stage 1).
    pub zhat: Option<NodeId>,
    /// Reverberant source estimates (training-time decode of stage 2 in a
    /// 3-stage model).
    pub mhat: Option<Vec<NodeId>>,
    /// Final per-speaker estimates.
    pub shat: Vec<NodeId>,
}

/// Number of encoder frames for an input of `t` samples after right
/// padding to the stride grid.
pub fn encoded_frames(t: usize, cfg: &ModelConfig) -> usize {
    let t_pad = padded_input_len(t, cfg);
    (t_pad - cfg.enc_kernel) / cfg.enc_stride + 1
}

fn padded_input_len(t: usize, cfg: &ModelConfig) -> usize {
    let t = t.max(cfg.enc_kernel);
    let rem = (t - cfg.enc_kernel) % cfg.enc_stride;
    if rem == 0 {
        t
    } else {
        t + cfg.enc_stride - rem
    }
}

/// Encoder: right-pad, strided 1-D convolution (no bias), ReLU.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    wave: NodeId,
    enc_w: NodeId,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let t = g.shape(wave)[1];
    if t < cfg.enc_kernel {
        return Err(Error::Model(format!(
            "input of {} samples shorter than encoder kernel {}",
            t, cfg.enc_kernel
        )));
    }
    let t_pad = padded_input_len(t, cfg);
    let padded = if t_pad > t {
        g.pad_end(wave, 1, t_pad - t)?
    } else {
        wave
    };
    let conv = g.conv1d(padded, enc_w, cfg.enc_stride)?;
    g.relu(conv)
}

/// Chunk a [N, L] feature map into [N, K, S] with 50% overlap.
pub fn segment<T: Scalar>(g: &mut Graph<T>, f: NodeId, k: usize) -> Result<NodeId> {
    g.segment_chunks(f, k, k / 2)
}

/// Inverse of `segment`, trimmed back to `original_l` frames.
pub fn overlap_add<T: Scalar>(g: &mut Graph<T>, c: NodeId, original_l: usize) -> Result<NodeId> {
    let k = g.shape(c)[1];
    g.overlap_add(c, k / 2, original_l)
}

/// Channel attention: gate each channel by a sigmoid weight computed from
/// mean- and max-pooled channel statistics through two shared linear
/// layers.
pub fn channel_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    ca: &CaP<NodeId>,
) -> Result<NodeId> {
    let n = g.shape(x)[0];
    let branch = |g: &mut Graph<T>, pooled: NodeId, ca: &CaP<NodeId>| -> Result<NodeId> {
        let row = g.reshape(pooled, &[1, n])?;
        let hid = g.matmul(row, ca.w0)?;
        let hid = g.vec_add(hid, ca.b0, 1)?;
        let hid = g.relu(hid)?;
        let out = g.matmul(hid, ca.w1)?;
        g.vec_add(out, ca.b1, 1)
    };
    let avg = g.mean_pool(x, &[1, 2])?;
    let max = g.max_pool(x, &[1, 2])?;
    let ba = branch(g, avg, ca)?;
    let bm = branch(g, max, ca)?;
    let pre = g.add(ba, bm)?;
    let phi = g.sigmoid(pre)?;
    let phi = g.reshape(phi, &[n])?;
    g.vec_mul(x, phi, 0)
}

fn block_gru(block: &BlockP<NodeId>) -> BiGru {
    BiGru {
        fwd: GruDir {
            wx: block.gru.fwd.wx,
            wh: block.gru.fwd.wh,
            bx: block.gru.fwd.bx,
            bh: block.gru.fwd.bh,
        },
        bwd: GruDir {
            wx: block.gru.bwd.wx,
            wh: block.gru.bwd.wh,
            bx: block.gru.bwd.bx,
            bh: block.gru.bwd.bh,
        },
    }
}

/// Shared body of the intra/inter blocks: layer norm, bidirectional
/// recurrence along one axis, linear projection back to N channels, and a
/// residual connection.
///
/// `seq_axis` is 1 (K) for the intra block and 2 (S) for the inter block;
/// the recurrence batches over the other spatial axis.
fn sequence_block<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    block: &BlockP<NodeId>,
    hidden: usize,
    seq_axis: usize,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec(); // [N, K, S]
    let (n, k, s) = (shape[0], shape[1], shape[2]);
    let normed = g.layer_norm(x, &[0, seq_axis], block.ln_gamma, block.ln_beta, 0, LN_EPS)?;
    // to [seq, batch, N]
    let (perm_in, perm_out, seq, batch) = if seq_axis == 1 {
        ([1usize, 2, 0], [2usize, 0, 1], k, s)
    } else {
        ([2usize, 1, 0], [2usize, 1, 0], s, k)
    };
    let t_in = g.transpose(normed, &perm_in)?;
    let h = bigru(g, t_in, &block_gru(block), hidden)?;
    let flat = g.reshape(h, &[seq * batch, 2 * hidden])?;
    let proj = g.matmul(flat, block.proj_w)?;
    let proj = g.vec_add(proj, block.proj_b, 1)?;
    let proj = g.reshape(proj, &[seq, batch, n])?;
    let back = g.transpose(proj, &perm_out)?;
    g.add(x, back)
}

/// Intra-chunk path: recurrence along K, chunks independent.
pub fn intra_block<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    block: &BlockP<NodeId>,
    hidden: usize,
) -> Result<NodeId> {
    sequence_block(g, x, block, hidden, 1)
}

/// Inter-chunk path: recurrence along S, intra-chunk positions independent.
pub fn inter_block<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    block: &BlockP<NodeId>,
    hidden: usize,
) -> Result<NodeId> {
    sequence_block(g, x, block, hidden, 2)
}

/// One sub-network: P triple-path repeats followed by the output head.
///
/// Per repeat the three paths run sequentially (attention, intra, inter)
/// and their results are added. The head is a PReLU plus pointwise
/// convolution; the separation stage expands to C per-speaker tensors.
pub fn triple_path_subnet<T: Scalar>(
    g: &mut Graph<T>,
    inputs: &[NodeId],
    sp: &SubnetP<NodeId>,
    cfg: &ModelConfig,
    stage_index: usize,
) -> Result<Vec<NodeId>> {
    let out_c = head_out_channels(cfg, stage_index);
    let expanding = out_c != cfg.n_channels;
    if expanding && inputs.len() != 1 {
        return Err(Error::Model(format!(
            "expanding stage {} takes one input, got {}",
            stage_index,
            inputs.len()
        )));
    }
    let mut outputs = Vec::new();
    for &input in inputs {
        let mut x = input;
        for rep in &sp.repeats {
            let a = channel_attention(g, x, &rep.ca)?;
            let b = intra_block(g, a, &rep.intra, cfg.hidden_h)?;
            let c = inter_block(g, b, &rep.inter, cfg.hidden_h)?;
            let ab = g.add(a, b)?;
            x = g.add(ab, c)?;
        }
        let shape = g.shape(x).to_vec();
        let (n, k, s) = (shape[0], shape[1], shape[2]);
        let act = g.prelu(x, sp.head.slope)?;
        let flat = g.reshape(act, &[n, k * s])?;
        let mixed = g.matmul(sp.head.w, flat)?;
        let mixed = g.vec_add(mixed, sp.head.b, 0)?;
        let out = g.reshape(mixed, &[out_c, k, s])?;
        if expanding {
            outputs.extend(g.split(out, 0, cfg.num_speakers)?);
        } else {
            outputs.push(out);
        }
    }
    Ok(outputs)
}

/// Shared decoder: overlap-add back to a feature map, transposed
/// convolution (no bias), trim to the original sample count.
pub fn decode<T: Scalar>(
    g: &mut Graph<T>,
    rep: NodeId,
    original_l: usize,
    original_t: usize,
    dec_w: NodeId,
    cfg: &ModelConfig,
) -> Result<NodeId> {
    let fm = overlap_add(g, rep, original_l)?;
    let full = g.conv1d_transpose(fm, dec_w, cfg.enc_stride)?;
    let t_conv = g.shape(full)[1];
    if t_conv < original_t {
        return Err(Error::Model(format!(
            "decoded {} samples, expected at least {}",
            t_conv, original_t
        )));
    }
    if t_conv == original_t {
        Ok(full)
    } else {
        g.narrow(full, 1, 0, original_t)
    }
}

/// Full forward pass over an already-inserted [1, T] input node.
///
/// Stage order is fixed: denoise, then separate, then de-reverberate.
/// `emit_intermediate` additionally decodes the stage-1 and stage-2
/// representations through the shared decoder for training-time losses.
pub fn multistage_forward<T: Scalar>(
    g: &mut Graph<T>,
    input: NodeId,
    params: &NodeParams,
    cfg: &ModelConfig,
    emit_intermediate: bool,
) -> Result<StageNodes> {
    if params.subnets.len() != cfg.stages {
        return Err(Error::Model(format!(
            "config wants {} stages but parameters hold {}",
            cfg.stages,
            params.subnets.len()
        )));
    }
    let original_t = g.shape(input)[1];
    let fm = encode(g, input, params.encoder_w, cfg)?;
    let original_l = g.shape(fm)[1];
    let chunks = segment(g, fm, cfg.chunk_k)?;

    let mut zhat = None;
    let mut mhat = None;
    let mut current = vec![chunks];
    for (si, sp) in params.subnets.iter().enumerate() {
        current = triple_path_subnet(g, &current, sp, cfg, si)?;
        let is_last = si + 1 == cfg.stages;
        if emit_intermediate && !is_last {
            let mut decoded = Vec::with_capacity(current.len());
            for &rep in &current {
                decoded.push(decode(g, rep, original_l, original_t, params.decoder_w, cfg)?);
            }
            if si == 0 {
                zhat = Some(decoded.remove(0));
            } else {
                mhat = Some(decoded);
            }
        }
    }

    let mut shat = Vec::with_capacity(current.len());
    for &rep in &current {
        shat.push(decode(g, rep, original_l, original_t, params.decoder_w, cfg)?);
    }
    Ok(StageNodes { zhat, mhat, shat })
}

/// Inserts a waveform as a [1, T] constant node.
pub fn waveform_node<T: Scalar>(g: &mut Graph<T>, w: &Waveform) -> NodeId {
    let data: Vec<T> = w.samples.iter().map(|&v| T::from_f32(v)).collect();
    g.constant(Tensor::from_vec(vec![1, w.samples.len()], data).expect("waveform shape"))
}

/// Extracts a decoded [1, T] node back into a waveform.
pub fn node_waveform<T: Scalar>(g: &Graph<T>, id: NodeId, sample_rate: u32) -> Waveform {
    Waveform {
        samples: g.value(id).data().iter().map(|&v| v.as_f32()).collect(),
        sample_rate,
    }
}

/// Inference: separate a mixture into per-speaker estimates (f32 graph,
/// no intermediate decodes).
pub fn separate<T: Scalar>(
    model: &super::params::MultiStageParams<T>,
    wave: &Waveform,
) -> Result<Vec<Waveform>> {
    let mut g = Graph::<T>::new();
    let bound = model.bind(&mut g, false);
    let input = waveform_node(&mut g, wave);
    let out = multistage_forward(&mut g, input, &bound, &model.cfg, false)?;
    Ok(out
        .shat
        .iter()
        .map(|&id| node_waveform(&g, id, wave.sample_rate))
        .collect())
}
