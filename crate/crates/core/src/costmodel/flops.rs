use serde::{Deserialize, Serialize};

use crate::decoder::{FfnKind, ModelConfig, Variant};
use crate::error::{Error, Result};

/// `(N+M)^2 d + 8 (N+M) d^2`, in multiply-accumulates: score matmul over the
/// joint sequence plus a 4d-wide two-matrix FFN.
pub fn flops_closed_form_vanilla(n: u64, m: u64, d: u64) -> Result<u64> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let t = n + m;
    Ok(t * t * d + 8 * t * d * d)
}

/// `(N+M) M d + 8 M d^2`: language-only queries and FFN.
pub fn flops_closed_form_himix(n: u64, m: u64, d: u64) -> Result<u64> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    Ok((n + m) * m * d + 8 * m * d * d)
}

// Per-element costs when pointwise work is priced.
const SOFTMAX_PER_ELEM: u64 = 5;
const NORM_PER_ELEM: u64 = 4;
const ACT_PER_ELEM: u64 = 8;
const ADD_PER_ELEM: u64 = 1;

/// Which parts of the decoder get priced. Matmuls count 2 FLOPs per MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostOptions {
    /// Q, K, V, O projections of the language stream.
    pub attn_projections: bool,
    /// The attention-weights times V product.
    pub value_mix: bool,
    /// Vision K/V projections (and per-layer connectors) of mixture variants.
    pub vision_projections: bool,
    pub lm_head: bool,
    /// Softmax, norms, activations, residual adds.
    pub pointwise: bool,
    /// Replace the configured FFN by a plain two-matrix FFN of width 4d.
    pub idealized_ffn: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        Self {
            attn_projections: true,
            value_mix: true,
            vision_projections: true,
            lm_head: true,
            pointwise: false,
            idealized_ffn: false,
        }
    }
}

impl CostOptions {
    /// Only the terms the closed forms keep: the score matmul and a 4d FFN.
    pub fn closed_form() -> Self {
        Self {
            attn_projections: false,
            value_mix: false,
            vision_projections: false,
            lm_head: false,
            pointwise: false,
            idealized_ffn: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub attn: u64,
    pub ffn: u64,
}

/// FLOPs of the language decoder for one `(config, N, M)` point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub model: String,
    pub variant: Variant,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "F_Attn")]
    pub attn_flops: u64,
    #[serde(rename = "F_FFN")]
    pub ffn_flops: u64,
    #[serde(rename = "head")]
    pub head_flops: u64,
    pub total: u64,
    pub params: u64,
    #[serde(skip)]
    pub per_layer: Vec<LayerFlops>,
}

impl FlopsReport {
    pub fn total_gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

/// Per-layer attention and FFN cost.
fn layer_flops(
    cfg: &ModelConfig,
    n: u64,
    m: u64,
    variant: Variant,
    opts: &CostOptions,
) -> LayerFlops {
    let d = cfg.d_model as u64;
    let dv = cfg.d_vision as u64;
    let kv = cfg.kv_width() as u64;
    let heads = cfg.n_heads as u64;
    let keys = n + m;
    // rows that run language projections and the FFN
    let rows = if variant.is_mixture() { m } else { n + m };

    let mut attn_mac = rows * keys * d;
    if opts.value_mix {
        attn_mac += rows * keys * d;
    }
    if opts.attn_projections {
        attn_mac += rows * d * (2 * d + 2 * kv);
    }
    if opts.vision_projections {
        attn_mac += match variant {
            Variant::Vanilla => 0,
            Variant::HimixDedicated => n * dv * 2 * kv,
            Variant::HimixUniform => n * d * 2 * kv,
            Variant::HimixConnector => n * d * 2 * kv + n * (dv * d + d * d),
        };
    }

    let (ffn_width, ffn_kind) = if opts.idealized_ffn {
        (4 * d, FfnKind::Plain)
    } else {
        (cfg.d_ffn as u64, cfg.ffn)
    };
    let ffn_mats = match ffn_kind {
        FfnKind::Plain => 2,
        FfnKind::Gated => 3,
    };
    let ffn_mac = rows * ffn_mats * d * ffn_width;

    let mut attn = 2 * attn_mac;
    let mut ffn = 2 * ffn_mac;
    if opts.pointwise {
        attn += rows * d * (NORM_PER_ELEM + ADD_PER_ELEM) + heads * rows * keys * SOFTMAX_PER_ELEM;
        let gate = if ffn_kind == FfnKind::Gated {
            rows * ffn_width
        } else {
            0
        };
        ffn += rows * d * (NORM_PER_ELEM + ADD_PER_ELEM) + rows * ffn_width * ACT_PER_ELEM + gate;
    }
    LayerFlops { attn, ffn }
}

/// Prices one decoder forward under explicit options.
pub fn flops_with_options(
    name: &str,
    cfg: &ModelConfig,
    n: u64,
    m: u64,
    variant: Variant,
    opts: &CostOptions,
) -> Result<FlopsReport> {
    cfg.validate()?;
    let layer = layer_flops(cfg, n, m, variant, opts);
    let per_layer = vec![layer; cfg.n_layers];
    let l = cfg.n_layers as u64;
    let head_rows = if variant.is_mixture() { m } else { n + m };
    let d = cfg.d_model as u64;
    let mut head_flops = 0;
    if opts.lm_head {
        head_flops = 2 * head_rows * d * cfg.vocab as u64;
        if opts.pointwise {
            head_flops += head_rows * d * NORM_PER_ELEM;
        }
    }
    let attn_flops = l * layer.attn;
    let ffn_flops = l * layer.ffn;
    Ok(FlopsReport {
        model: name.to_string(),
        variant,
        n,
        m,
        attn_flops,
        ffn_flops,
        head_flops,
        total: attn_flops + ffn_flops + head_flops,
        params: params_count(cfg, variant),
        per_layer,
    })
}

/// Full accounting with default options: projections (grouped-query
/// aware), scores, value mix, FFN as configured, vision projections or
/// per-layer connectors, and the LM head over every row the decoder
/// carries.
pub fn flops_full_accounting(
    name: &str,
    cfg: &ModelConfig,
    n: u64,
    m: u64,
    variant: Variant,
) -> Result<FlopsReport> {
    flops_with_options(name, cfg, n, m, variant, &CostOptions::default())
}

/// Parameter count of the language decoder, including vision projections
/// or per-layer connectors that live inside it. The shared connector of
/// the vanilla and uniform variants is reported by [`connector_params`].
pub fn params_count(cfg: &ModelConfig, variant: Variant) -> u64 {
    let d = cfg.d_model as u64;
    let dv = cfg.d_vision as u64;
    let kv = cfg.kv_width() as u64;
    let l = cfg.n_layers as u64;
    let vocab = cfg.vocab as u64;
    let ffn_mats = match cfg.ffn {
        FfnKind::Plain => 2,
        FfnKind::Gated => 3,
    };
    let per_layer = 2 * d * d + 2 * d * kv + ffn_mats * d * cfg.d_ffn as u64 + 2 * d;
    let vision = match variant {
        Variant::HimixDedicated => dv * 2 * kv,
        Variant::HimixConnector => dv * d + d * d,
        Variant::Vanilla | Variant::HimixUniform => 0,
    };
    let embed = vocab * d;
    let head = if cfg.tied_embeddings { 0 } else { vocab * d };
    embed + head + d + l * (per_layer + vision)
}

/// Size of one two-layer `d_v -> d -> d` connector.
pub fn connector_params(cfg: &ModelConfig) -> u64 {
    let (d, dv) = (cfg.d_model as u64, cfg.d_vision as u64);
    dv * d + d * d
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn scaling_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let cov: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    cov / var
}
