//! Frozen-vision equivalence: a vanilla decoder whose vision rows are reset
//! each layer matches a mixture decoder whose vision K/V projections are
//! tied to the language ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ModelConfig, Variant};
use super::forward::{frozen_vision_oracle_forward, himix_forward, Model};
use super::params::{init_params, ModelParams};
use crate::attn::PeScheme;
use crate::error::{Error, Result};
use crate::numkit::SeqMatrix;

/// Config for which the equivalence holds exactly: no norms (vision rows
/// would be normalized on one side only) and no positions.
pub fn oracle_config(seed: u64, n_layers: usize, d_model: usize, d_vision: usize) -> ModelConfig {
    let mut cfg = ModelConfig::toy(Variant::Vanilla, n_layers, d_model, d_vision, 16);
    cfg.seed = seed;
    cfg.use_norm = false;
    cfg.pe_scheme = PeScheme::None;
    cfg.init_std = 0.3;
    cfg
}

/// Dedicated-variant twin of a vanilla model, consuming post-connector rows.
pub fn tied_mixture_twin(vanilla: &Model) -> Result<Model> {
    if vanilla.config.variant != Variant::Vanilla {
        return Err(Error::InvalidConfig(
            "twin is built from a vanilla model".into(),
        ));
    }
    let mut config = vanilla.config.clone();
    config.variant = Variant::HimixDedicated;
    config.d_vision = config.d_model;
    let src = &vanilla.params;
    let mut layers = src.layers.clone();
    for l in &mut layers {
        l.w_vk = Some(l.w_k.clone());
        l.w_vv = Some(l.w_v.clone());
    }
    Ok(Model {
        config,
        params: ModelParams {
            embed: src.embed.clone(),
            connector: None,
            layers,
            norm_final: src.norm_final.clone(),
            head: src.head.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub per_layer: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Max abs difference between the oracle's language rows and the twin's,
/// layer by layer.
pub fn frozen_vision_check(
    vanilla: &Model,
    x_v: &SeqMatrix,
    x_l: &SeqMatrix,
) -> Result<OracleCheck> {
    let oracle = frozen_vision_oracle_forward(vanilla, x_v, x_l)?;
    let twin = tied_mixture_twin(vanilla)?;
    let projected = oracle
        .vision_input
        .as_ref()
        .expect("oracle trace carries vision");
    let mixed = himix_forward(&twin, projected, x_l)?;
    let per_layer: Vec<f64> = (0..oracle.n_layers())
        .map(|i| {
            oracle
                .language_output(i)
                .max_abs_diff(&mixed.language_output(i))
        })
        .collect();
    let max_abs_diff = per_layer.iter().copied().fold(0.0, f64::max);
    Ok(OracleCheck {
        per_layer,
        max_abs_diff,
    })
}

/// Seeded model and inputs for one oracle trial.
pub fn oracle_trial(
    cfg: &ModelConfig,
    n_vision: usize,
    n_language: usize,
) -> Result<(Model, SeqMatrix, SeqMatrix)> {
    let model = Model {
        config: cfg.clone(),
        params: init_params(cfg)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let x_v = SeqMatrix::random_normal(n_vision, cfg.d_vision, 1.0, &mut rng);
    let x_l = SeqMatrix::random_normal(n_language, cfg.d_model, 1.0, &mut rng);
    Ok((model, x_v, x_l))
}
