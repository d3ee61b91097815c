//! Decoder stacks: the concatenation baseline, the three mixture-attention
//! injection variants, the frozen-vision oracle, and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod oracle;
mod params;
mod reference;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::{FfnKind, ModelConfig, Variant};
pub use forward::{
    decoder_forward_on, forward, frozen_vision_oracle_forward, frozen_vision_oracle_on,
    himix_forward, init_model, language_only_forward, lm_head, logits_on, record_params,
    vanilla_forward, ForwardTrace, LayerRecord, Model, TapeForward,
};
pub use oracle::{
    frozen_vision_check, oracle_config, oracle_trial, tied_mixture_twin, OracleCheck,
};
pub use params::{init_params, Connector, LayerParams, LayerWeights, ModelParams};
pub use reference::algorithm_reference_forward;
