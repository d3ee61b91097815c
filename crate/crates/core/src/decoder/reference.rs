//! Line-by-line transcription of the mixture decoder loop: single head, no
//! norms, no residuals, no output projection. Kept as an independent
//! reference for the production path.

use super::config::Variant;
use super::forward::Model;
use crate::attn::{build_part_causal_mask, sinusoidal_pe, PeScheme};
use crate::error::{Error, Result};
use crate::numkit::{softmax_rows, SeqMatrix};

/// Returns `Y_l` for a dedicated-projection model.
pub fn algorithm_reference_forward(
    model: &Model,
    x_v: &SeqMatrix,
    x_l: &SeqMatrix,
) -> Result<SeqMatrix> {
    let cfg = &model.config;
    if cfg.variant != Variant::HimixDedicated {
        return Err(Error::InvalidConfig(
            "reference path covers the dedicated variant".into(),
        ));
    }
    if cfg.pe_scheme == PeScheme::Rotary {
        return Err(Error::InvalidConfig(
            "reference path uses additive positions".into(),
        ));
    }
    let d = cfg.d_model as f64;
    let m = x_l.rows();
    let mask = build_part_causal_mask(x_v.rows(), m)?.to_matrix();
    let positions: Vec<usize> = (cfg.language_pos_offset..cfg.language_pos_offset + m).collect();
    let p_l = sinusoidal_pe(&positions, cfg.d_model)?.entries;

    let mut y = x_l.clone();
    for layer in &model.params.layers {
        let (Some(w_vk), Some(w_vv)) = (&layer.w_vk, &layer.w_vv) else {
            return Err(Error::InvalidConfig("missing vision projections".into()));
        };
        // language projection
        let q_l = y.matmul(&layer.w_q)?;
        let k_l = y.matmul(&layer.w_k)?;
        let v_l = y.matmul(&layer.w_v)?;
        // vision projection
        let k_v = x_v.matmul(w_vk)?;
        let v_v = x_v.matmul(w_vv)?;
        // positional embedding
        let (q_l, k_l) = if cfg.pe_scheme == PeScheme::AdditiveSinusoidal {
            (q_l.add(&p_l)?, k_l.add(&p_l)?)
        } else {
            (q_l, k_l)
        };
        // concatenate
        let k_vl = SeqMatrix::concat_rows(&[&k_v, &k_l])?;
        let v_vl = SeqMatrix::concat_rows(&[&v_v, &v_l])?;
        // scores
        let s = q_l.matmul(&k_vl.transpose())?.scale(1.0 / d.sqrt());
        // part-causal mask
        let s_hat = s.add(&mask)?;
        // attention output
        let a = softmax_rows(&s_hat).matmul(&v_vl)?;
        // feed-forward
        y = cfg
            .activation
            .apply_matrix(&a.matmul(&layer.w_ffn1)?)
            .matmul(&layer.w_ffn2)?;
    }
    Ok(y)
}
