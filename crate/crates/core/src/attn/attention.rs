use super::mask::{MaskKind, MaskSpec};
use super::positional::{sinusoidal_pe, PeScheme, Positional, ROPE_BASE};
use crate::error::{Error, Result};
use crate::numkit::{SeqMatrix, Tape, Var};

/// Language projections of one attention block: query, key, value, output.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w_q: SeqMatrix,
    pub w_k: SeqMatrix,
    pub w_v: SeqMatrix,
    pub w_o: SeqMatrix,
}

/// The same projections recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

impl AttentionWeights {
    pub fn record(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            w_q: tape.constant(self.w_q.clone()),
            w_k: tape.constant(self.w_k.clone()),
            w_v: tape.constant(self.w_v.clone()),
            w_o: tape.constant(self.w_o.clone()),
        }
    }
}

/// Vision key/value projections `d_v -> d`.
#[derive(Debug, Clone, Copy)]
pub struct VisionKvVars {
    pub w_k: Var,
    pub w_v: Var,
}

fn check_heads(width: usize, n_heads: usize) -> Result<usize> {
    if n_heads == 0 || !width.is_multiple_of(n_heads) {
        return Err(Error::InvalidArgument(format!(
            "head count {n_heads} does not divide attention width {width}"
        )));
    }
    Ok(width / n_heads)
}

fn apply_positions(tape: &mut Tape, x: Var, pos: Positional, head_dim: usize) -> Result<Var> {
    let rows = tape.value(x).rows();
    let cols = tape.value(x).cols();
    match pos.scheme {
        PeScheme::None => Ok(x),
        PeScheme::AdditiveSinusoidal => {
            let table = sinusoidal_pe(&pos.positions(rows), cols)?;
            let p = tape.constant(table.entries);
            tape.add(x, p)
        }
        PeScheme::Rotary => tape.rope(x, &pos.positions(rows), head_dim, ROPE_BASE),
    }
}

/// Per-head `softmax(q_h k_h^T / sqrt(d_head) + mask) v_h`, heads concatenated.
fn multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, n_heads: usize, mask: Var) -> Result<Var> {
    let width = tape.value(q).cols();
    let head_dim = check_heads(width, n_heads)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * head_dim, head_dim)?,
                tape.slice_cols(k, h * head_dim, head_dim)?,
                tape.slice_cols(v, h * head_dim, head_dim)?,
            )
        };
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, mask)?;
        let weights = tape.softmax_rows(scores);
        heads.push(tape.matmul(weights, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        tape.concat_cols(&heads)
    }
}

/// Causal multi-head self-attention over `x`, output-projected.
pub fn self_attention_on(
    tape: &mut Tape,
    x: Var,
    w: &AttentionVars,
    n_heads: usize,
    mask: &MaskSpec,
    pos: Positional,
) -> Result<Var> {
    let rows = tape.value(x).rows();
    if mask.kind != MaskKind::CausalConcat || mask.query_len() != rows {
        return Err(Error::InvalidArgument(format!(
            "self-attention over {rows} tokens needs a causal mask of that length, got {:?} for {} queries",
            mask.kind,
            mask.query_len()
        )));
    }
    let q = tape.matmul(x, w.w_q)?;
    let k = tape.matmul(x, w.w_k)?;
    let v = tape.matmul(x, w.w_v)?;
    let head_dim = check_heads(tape.value(q).cols(), n_heads)?;
    let q = apply_positions(tape, q, pos, head_dim)?;
    let k = apply_positions(tape, k, pos, head_dim)?;
    let mask = tape.constant(mask.to_matrix());
    let attended = multi_head(tape, q, k, v, n_heads, mask)?;
    tape.matmul(attended, w.w_o)
}

/// Mixture attention: language queries over `[K_v; K_l]` / `[V_v; V_l]`.
///
/// `x_v` is projected by `vision` (dedicated matrices, or the language K/V
/// matrices when the variant shares them). Positions are applied to `Q_l`
/// and `K_l` only. The output has `x_l`'s row count.
#[allow(clippy::too_many_arguments)]
pub fn mixture_attention_on(
    tape: &mut Tape,
    x_v: Var,
    x_l: Var,
    w: &AttentionVars,
    vision: &VisionKvVars,
    n_heads: usize,
    mask: &MaskSpec,
    pos: Positional,
) -> Result<Var> {
    let (n, m) = (tape.value(x_v).rows(), tape.value(x_l).rows());
    if mask.kind != MaskKind::PartCausal || mask.n_vision != n || mask.n_language != m {
        return Err(Error::InvalidArgument(format!(
            "mixture attention over N={n}, M={m} needs a part-causal mask of that size, got {:?} with N={}, M={}",
            mask.kind, mask.n_vision, mask.n_language
        )));
    }
    let k_v = tape.matmul(x_v, vision.w_k)?;
    let v_v = tape.matmul(x_v, vision.w_v)?;
    let q_l = tape.matmul(x_l, w.w_q)?;
    let k_l = tape.matmul(x_l, w.w_k)?;
    let v_l = tape.matmul(x_l, w.w_v)?;
    let head_dim = check_heads(tape.value(q_l).cols(), n_heads)?;
    let q_l = apply_positions(tape, q_l, pos, head_dim)?;
    let k_l = apply_positions(tape, k_l, pos, head_dim)?;
    let k = tape.concat_rows(&[k_v, k_l])?;
    let v = tape.concat_rows(&[v_v, v_l])?;
    let mask = tape.constant(mask.to_matrix());
    let attended = multi_head(tape, q_l, k, v, n_heads, mask)?;
    tape.matmul(attended, w.w_o)
}

/// Value-level wrapper around [`self_attention_on`].
pub fn self_attention(
    x: &SeqMatrix,
    w: &AttentionWeights,
    n_heads: usize,
    mask: &MaskSpec,
    pos: Positional,
) -> Result<SeqMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = w.record(&mut tape);
    let out = self_attention_on(&mut tape, xv, &wv, n_heads, mask, pos)?;
    Ok(tape.value(out).clone())
}

/// Value-level wrapper around [`mixture_attention_on`].
#[allow(clippy::too_many_arguments)]
pub fn mixture_attention(
    x_v: &SeqMatrix,
    x_l: &SeqMatrix,
    w: &AttentionWeights,
    w_vk: &SeqMatrix,
    w_vv: &SeqMatrix,
    n_heads: usize,
    mask: &MaskSpec,
    pos: Positional,
) -> Result<SeqMatrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x_v.clone());
    let xl = tape.constant(x_l.clone());
    let wv = w.record(&mut tape);
    let vision = VisionKvVars {
        w_k: tape.constant(w_vk.clone()),
        w_v: tape.constant(w_vv.clone()),
    };
    let out = mixture_attention_on(&mut tape, xv, xl, &wv, &vision, n_heads, mask, pos)?;
    Ok(tape.value(out).clone())
}

/// Softmax attention weights of one head, `query_len x key_len`. Used by
/// tests and diagnostics to inspect masking.
pub fn attention_weights(
    x_v: &SeqMatrix,
    x_l: &SeqMatrix,
    w: &AttentionWeights,
    w_vk: &SeqMatrix,
    n_heads: usize,
    head: usize,
    mask: &MaskSpec,
) -> Result<SeqMatrix> {
    let k = SeqMatrix::concat_rows(&[&x_v.matmul(w_vk)?, &x_l.matmul(&w.w_k)?])?;
    let q = x_l.matmul(&w.w_q)?;
    let head_dim = check_heads(q.cols(), n_heads)?;
    if head >= n_heads {
        return Err(Error::InvalidArgument(format!("head {head} out of range")));
    }
    let qh = q.slice_cols(head * head_dim, head_dim)?;
    let kh = k.slice_cols(head * head_dim, head_dim)?;
    let scores = qh
        .matmul_nt(&kh)?
        .scale(1.0 / (head_dim as f64).sqrt())
        .add(&mask.to_matrix())?;
    Ok(crate::numkit::softmax_rows(&scores))
}
