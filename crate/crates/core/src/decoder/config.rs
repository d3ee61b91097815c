use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attn::PeScheme;
use crate::error::{Error, Result};
use crate::numkit::Activation;

/// How vision features reach the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Connector output concatenated with language tokens, full causal
    /// self-attention over both.
    Vanilla,
    /// One shared connector output fed to every layer's mixture attention
    /// through the language K/V projections.
    HimixUniform,
    /// A connector per layer, language K/V projections shared.
    HimixConnector,
    /// Per-layer dedicated vision K/V projections straight from raw features.
    HimixDedicated,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::HimixUniform,
        Variant::HimixConnector,
        Variant::HimixDedicated,
    ];

    pub fn is_mixture(self) -> bool {
        self != Variant::Vanilla
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::HimixUniform => "himix-uniform",
            Variant::HimixConnector => "himix-connector",
            Variant::HimixDedicated => "himix-dedicated",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown variant `{s}`; expected one of vanilla, himix-uniform, himix-connector, himix-dedicated"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnKind {
    /// `W2(Act(W1 x))`.
    #[default]
    Plain,
    /// `W2(Act(W_gate x) * W_up x)`; priced by the cost model only.
    Gated,
}

/// Architecture shared by the runnable decoders and the cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_vision: usize,
    pub n_heads: usize,
    /// Key/value head count; only the cost model distinguishes it.
    pub n_kv_heads: usize,
    pub d_ffn: usize,
    pub vocab: usize,
    pub variant: Variant,
    #[serde(default)]
    pub ffn: FfnKind,
    #[serde(default)]
    pub tied_embeddings: bool,
    #[serde(default)]
    pub pe_scheme: PeScheme,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default = "default_true")]
    pub use_norm: bool,
    #[serde(default = "default_true")]
    pub use_residual: bool,
    #[serde(default)]
    pub language_pos_offset: usize,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_init_std() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

fn default_norm_eps() -> f64 {
    1e-6
}

impl ModelConfig {
    /// Small config for tests and demos: `d_ffn = 4 d`, one head per 4 dims.
    pub fn toy(
        variant: Variant,
        n_layers: usize,
        d_model: usize,
        d_vision: usize,
        vocab: usize,
    ) -> Self {
        let n_heads = (d_model / 4).clamp(1, 4);
        Self {
            n_layers,
            d_model,
            d_vision,
            n_heads,
            n_kv_heads: n_heads,
            d_ffn: 4 * d_model,
            vocab,
            variant,
            ffn: FfnKind::Plain,
            tied_embeddings: false,
            pe_scheme: PeScheme::AdditiveSinusoidal,
            activation: Activation::Gelu,
            seed: 0,
            init_std: default_init_std(),
            use_norm: true,
            use_residual: true,
            language_pos_offset: 0,
            norm_eps: default_norm_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    /// Width of the key/value projections under grouped-query attention.
    pub fn kv_width(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    /// Structural checks shared by every consumer.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.d_vision == 0 || self.vocab == 0 {
            return bad("layers, d_model, d_vision and vocab must all be positive".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "n_heads {} must divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if self.n_kv_heads == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "n_kv_heads {} must divide n_heads {}",
                self.n_kv_heads, self.n_heads
            ));
        }
        if self.d_ffn < self.d_model {
            return bad(format!(
                "d_ffn {} is smaller than d_model {}",
                self.d_ffn, self.d_model
            ));
        }
        Ok(())
    }

    /// Additional checks for configs that are instantiated as weights.
    pub fn validate_runnable(&self) -> Result<()> {
        self.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.ffn != FfnKind::Plain {
            return bad("runnable decoders implement the plain two-matrix FFN only".into());
        }
        if self.n_kv_heads != self.n_heads {
            return bad(
                "grouped-query attention is priced by the cost model but not runnable".into(),
            );
        }
        match self.pe_scheme {
            PeScheme::AdditiveSinusoidal if !self.d_model.is_multiple_of(2) => bad(format!(
                "sinusoidal positions need an even d_model, got {}",
                self.d_model
            )),
            PeScheme::Rotary if !self.head_dim().is_multiple_of(2) => bad(format!(
                "rotary positions need an even head dim, got {}",
                self.head_dim()
            )),
            _ if !(self.init_std.is_finite() && self.init_std > 0.0) => {
                bad(format!("init_std must be positive, got {}", self.init_std))
            }
            _ => Ok(()),
        }
    }
}
