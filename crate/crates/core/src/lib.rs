//! Mixture attention for vision-language decoders.
//!
//! Language tokens form the only queries; keys and values are the
//! concatenation of per-layer projected vision features and the language
//! stream. Vision features are injected afresh at every layer instead of
//! flowing through the residual stream, so the decoder state stays
//! `M x d` regardless of the number of vision tokens.
//!
//! Modules:
//! - [`numkit`]: matrices, activations, the reverse-mode tape, gradient checks
//! - [`attn`]: masks, positional tables, self and mixture attention
//! - [`decoder`]: model config, weights, forward passes, checkpoints
//! - [`costmodel`]: closed-form and full FLOPs/parameter accounting
//! - [`probe`]: layer-wise cosine similarity profiles
//! - [`trainer`]: synthetic patch task and training loop

pub mod attn;
pub mod costmodel;
pub mod decoder;
pub mod error;
pub mod numkit;
pub mod probe;
pub mod trainer;

pub use error::{Error, Result};
pub use numkit::SeqMatrix;
