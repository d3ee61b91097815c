//! Masks, positional tables, and the two attention forms: causal
//! self-attention over a concatenated sequence and mixture attention with
//! language-only queries.

mod attention;
mod mask;
mod positional;

pub use attention::{
    attention_weights, mixture_attention, mixture_attention_on, self_attention, self_attention_on,
    AttentionVars, AttentionWeights, VisionKvVars,
};
pub use mask::{
    build_causal_concat_mask, build_causal_mask, build_part_causal_mask, MaskKind, MaskSpec,
    MASK_SENTINEL,
};
pub use positional::{sinusoidal_pe, PETable, PeScheme, Positional, ROPE_BASE};
