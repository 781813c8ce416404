//! Bidirectional recurrent layer built from a gated recurrent cell,
//! unrolled onto the tape so gradients come out of the ordinary backward
//! pass.

use super::graph::{Graph, NodeId};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Node handles for one recurrence direction.
///
/// Weight layout: `wx` is `[feat, 3H]`, `wh` is `[H, 3H]`, biases are
/// `[3H]`. Gate order along the 3H axis is reset, update, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruDir {
    pub wx: NodeId,
    pub wh: NodeId,
    pub bx: NodeId,
    pub bh: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BiGru {
    pub fwd: GruDir,
    pub bwd: GruDir,
}

/// Runs one direction of the gated recurrent cell over `x` of shape
/// `[seq, batch, feat]`, returning `[seq, batch, H]` in original time
/// order. `reverse` walks the sequence back-to-front.
fn gru_direction<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    p: &GruDir,
    hidden: usize,
    reverse: bool,
) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape {
            op: "gru",
            detail: format!("input must be [seq, batch, feat], got {:?}", shape),
        });
    }
    let (seq, batch, feat) = (shape[0], shape[1], shape[2]);

    // Bulk input projection for every timestep at once.
    let flat = g.reshape(x, &[seq * batch, feat])?;
    let xp = g.matmul(flat, p.wx)?;
    let xp = g.vec_add(xp, p.bx, 1)?;
    let xp = g.reshape(xp, &[seq, batch, 3 * hidden])?;

    let mut h = g.constant(Tensor::zeros(&[batch, hidden]));
    let mut outputs: Vec<NodeId> = vec![h; seq];
    let order: Vec<usize> = if reverse {
        (0..seq).rev().collect()
    } else {
        (0..seq).collect()
    };

    for &t in &order {
        let xp_t = g.narrow(xp, 0, t, 1)?;
        let xp_t = g.reshape(xp_t, &[batch, 3 * hidden])?;
        let hp = g.matmul(h, p.wh)?;
        let hp = g.vec_add(hp, p.bh, 1)?;

        let xg = g.split(xp_t, 1, 3)?;
        let hg = g.split(hp, 1, 3)?;

        let r_pre = g.add(xg[0], hg[0])?;
        let r = g.sigmoid(r_pre)?;
        let z_pre = g.add(xg[1], hg[1])?;
        let z = g.sigmoid(z_pre)?;
        let gated = g.mul(r, hg[2])?;
        let n_pre = g.add(xg[2], gated)?;
        let n = g.tanh(n_pre)?;

        // h = (1 - z) * n + z * h
        let keep = g.mul(z, h)?;
        let one_minus_z = g.affine(z, -1.0, 1.0)?;
        let new = g.mul(one_minus_z, n)?;
        h = g.add(new, keep)?;
        outputs[t] = h;
    }

    g.stack(&outputs)
}

/// Bidirectional recurrent layer: `[seq, batch, feat]` -> `[seq, batch, 2H]`
/// with the forward and backward hidden sequences concatenated on the
/// feature axis.
pub fn bigru<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    p: &BiGru,
    hidden: usize,
) -> Result<NodeId> {
    let f = gru_direction(g, x, &p.fwd, hidden, false)?;
    let b = gru_direction(g, x, &p.bwd, hidden, true)?;
    g.concat(&[f, b], 2)
}
