use serde::Serialize;

use super::config::{ModelConfig, Variant};
use super::params::{init_params, Connector, LayerParams, ModelParams};
use crate::attn::{
    build_causal_concat_mask, build_part_causal_mask, mixture_attention_on, self_attention_on,
    AttentionVars, Positional, VisionKvVars,
};
use crate::error::{Error, Result};
use crate::numkit::{SeqMatrix, Tape, Var};

/// A decoder: config plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<SeqMatrix>,
}

/// Builds a model with seeded weights. Same config, same weights, bit for bit.
pub fn init_model(cfg: &ModelConfig) -> Result<Model> {
    Ok(Model {
        config: cfg.clone(),
        params: init_params(cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerRecord {
    pub input: SeqMatrix,
    pub output: SeqMatrix,
}

/// Per-layer activations of one forward pass.
///
/// Vanilla traces hold `N + M` rows per layer (vision first); mixture traces
/// hold the `M` language rows only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub variant: Variant,
    pub n_vision: usize,
    pub n_language: usize,
    /// Vision rows as the decoder first sees them: connector output for
    /// concatenating decoders, absent for mixture decoders.
    pub vision_input: Option<SeqMatrix>,
    pub language_input: SeqMatrix,
    pub layers: Vec<LayerRecord>,
    /// `Y_l`, the last layer's output before the final norm.
    pub final_hidden: SeqMatrix,
}

impl ForwardTrace {
    /// Whether layer states carry vision rows.
    pub fn carries_vision(&self) -> bool {
        self.variant == Variant::Vanilla
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    fn split(&self, m: &SeqMatrix) -> (Option<SeqMatrix>, SeqMatrix) {
        if self.carries_vision() {
            let v = m.slice_rows(0, self.n_vision).expect("trace rows");
            let l = m
                .slice_rows(self.n_vision, self.n_language)
                .expect("trace rows");
            (Some(v), l)
        } else {
            (None, m.clone())
        }
    }

    pub fn language_output(&self, layer: usize) -> SeqMatrix {
        self.split(&self.layers[layer].output).1
    }

    pub fn vision_output(&self, layer: usize) -> Option<SeqMatrix> {
        self.split(&self.layers[layer].output).0
    }
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct TapeForward {
    pub vision_input: Option<Var>,
    pub layer_inputs: Vec<Var>,
    pub layer_outputs: Vec<Var>,
    pub final_hidden: Var,
}

/// Records all weights on `tape`, trainable or constant.
pub fn record_params(
    tape: &mut Tape,
    params: &ModelParams<SeqMatrix>,
    trainable: bool,
) -> ModelParams<Var> {
    params.map(|_, m| {
        if trainable {
            tape.param(m.clone())
        } else {
            tape.constant(m.clone())
        }
    })
}

fn attn_vars(l: &LayerParams<Var>) -> AttentionVars {
    AttentionVars {
        w_q: l.w_q,
        w_k: l.w_k,
        w_v: l.w_v,
        w_o: l.w_o,
    }
}

fn positional(cfg: &ModelConfig) -> Positional {
    Positional {
        scheme: cfg.pe_scheme,
        offset: cfg.language_pos_offset,
    }
}

fn norm(tape: &mut Tape, cfg: &ModelConfig, x: Var, gain: Var) -> Result<Var> {
    if cfg.use_norm {
        tape.rms_norm(x, gain, cfg.norm_eps)
    } else {
        Ok(x)
    }
}

fn residual(tape: &mut Tape, cfg: &ModelConfig, x: Var, delta: Var) -> Result<Var> {
    if cfg.use_residual {
        tape.add(x, delta)
    } else {
        Ok(delta)
    }
}

fn ffn(tape: &mut Tape, cfg: &ModelConfig, x: Var, l: &LayerParams<Var>) -> Result<Var> {
    let h = tape.matmul(x, l.w_ffn1)?;
    let h = tape.activation(h, cfg.activation);
    tape.matmul(h, l.w_ffn2)
}

pub(crate) fn connector_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    x: Var,
    c: &Connector<Var>,
) -> Result<Var> {
    let h = tape.matmul(x, c.w1)?;
    let h = tape.activation(h, cfg.activation);
    tape.matmul(h, c.w2)
}

/// Post-attention half of a block: residual, pre-norm FFN, residual.
fn finish_block(
    tape: &mut Tape,
    cfg: &ModelConfig,
    x: Var,
    attended: Var,
    l: &LayerParams<Var>,
) -> Result<Var> {
    let h = residual(tape, cfg, x, attended)?;
    let a = norm(tape, cfg, h, l.norm_ffn)?;
    let f = ffn(tape, cfg, a, l)?;
    residual(tape, cfg, h, f)
}

fn check_inputs(tape: &Tape, cfg: &ModelConfig, x_v: Var, x_l: Var) -> Result<()> {
    let (v, l) = (tape.value(x_v), tape.value(x_l));
    if v.cols() != cfg.d_vision {
        return Err(Error::shape(
            "vision input",
            v.shape(),
            (v.rows(), cfg.d_vision),
        ));
    }
    if l.cols() != cfg.d_model {
        return Err(Error::shape(
            "language input",
            l.shape(),
            (l.rows(), cfg.d_model),
        ));
    }
    Ok(())
}

fn shared_connector(p: &ModelParams<Var>) -> Result<&Connector<Var>> {
    p.connector
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("variant has no shared connector".into()))
}

/// Concatenating decoder. With `freeze_vision`, the vision rows of the
/// residual stream are reset to the connector output before every layer.
fn concat_forward_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    x_v: Var,
    x_l: Var,
    freeze_vision: bool,
) -> Result<TapeForward> {
    check_inputs(tape, cfg, x_v, x_l)?;
    let xv = connector_on(tape, cfg, x_v, shared_connector(p)?)?;
    let (n, m) = (tape.value(xv).rows(), tape.value(x_l).rows());
    let mask = build_causal_concat_mask(n, m)?;
    let pos = positional(cfg);

    let mut stream = tape.concat_rows(&[xv, x_l])?;
    let mut fwd = TapeForward {
        vision_input: Some(xv),
        layer_inputs: Vec::with_capacity(cfg.n_layers),
        layer_outputs: Vec::with_capacity(cfg.n_layers),
        final_hidden: stream,
    };
    for (i, l) in p.layers.iter().enumerate() {
        if freeze_vision && i > 0 {
            let lang = tape.slice_rows(stream, n, m)?;
            stream = tape.concat_rows(&[xv, lang])?;
        }
        fwd.layer_inputs.push(stream);
        let a = norm(tape, cfg, stream, l.norm_attn)?;
        let attended = self_attention_on(tape, a, &attn_vars(l), cfg.n_heads, &mask, pos)?;
        stream = finish_block(tape, cfg, stream, attended, l)?;
        fwd.layer_outputs.push(stream);
    }
    fwd.final_hidden = stream;
    Ok(fwd)
}

/// Mixture decoder: only the `M` language rows flow between layers; vision
/// K/V are recomputed from the same raw features at every layer.
fn mixture_forward_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    x_v: Var,
    x_l: Var,
) -> Result<TapeForward> {
    check_inputs(tape, cfg, x_v, x_l)?;
    let (n, m) = (tape.value(x_v).rows(), tape.value(x_l).rows());
    let mask = build_part_causal_mask(n, m)?;
    let pos = positional(cfg);

    let uniform = match cfg.variant {
        Variant::HimixUniform => Some(connector_on(tape, cfg, x_v, shared_connector(p)?)?),
        _ => None,
    };

    let mut y = x_l;
    let mut fwd = TapeForward {
        vision_input: None,
        layer_inputs: Vec::with_capacity(cfg.n_layers),
        layer_outputs: Vec::with_capacity(cfg.n_layers),
        final_hidden: y,
    };
    for (i, l) in p.layers.iter().enumerate() {
        fwd.layer_inputs.push(y);
        let (vision_rows, vision_kv) = match cfg.variant {
            Variant::HimixUniform => (
                uniform.expect("uniform connector"),
                VisionKvVars {
                    w_k: l.w_k,
                    w_v: l.w_v,
                },
            ),
            Variant::HimixConnector => {
                let c = l
                    .connector
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig(format!("layer {i} has no connector")))?;
                (
                    connector_on(tape, cfg, x_v, c)?,
                    VisionKvVars {
                        w_k: l.w_k,
                        w_v: l.w_v,
                    },
                )
            }
            Variant::HimixDedicated => {
                let (Some(w_k), Some(w_v)) = (l.w_vk, l.w_vv) else {
                    return Err(Error::InvalidConfig(format!(
                        "layer {i} has no vision projections"
                    )));
                };
                (x_v, VisionKvVars { w_k, w_v })
            }
            Variant::Vanilla => unreachable!("vanilla handled by concat_forward_on"),
        };
        let a = norm(tape, cfg, y, l.norm_attn)?;
        let attended = mixture_attention_on(
            tape,
            vision_rows,
            a,
            &attn_vars(l),
            &vision_kv,
            cfg.n_heads,
            &mask,
            pos,
        )?;
        y = finish_block(tape, cfg, y, attended, l)?;
        fwd.layer_outputs.push(y);
    }
    fwd.final_hidden = y;
    Ok(fwd)
}

/// Runs the forward pass the config's variant prescribes.
pub fn decoder_forward_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    x_v: Var,
    x_l: Var,
) -> Result<TapeForward> {
    match cfg.variant {
        Variant::Vanilla => concat_forward_on(tape, cfg, p, x_v, x_l, false),
        _ => mixture_forward_on(tape, cfg, p, x_v, x_l),
    }
}

/// The frozen-vision oracle on a tape; requires a vanilla-layout model.
pub fn frozen_vision_oracle_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    x_v: Var,
    x_l: Var,
) -> Result<TapeForward> {
    if cfg.variant != Variant::Vanilla {
        return Err(Error::InvalidConfig(
            "frozen-vision oracle runs on a vanilla model".into(),
        ));
    }
    concat_forward_on(tape, cfg, p, x_v, x_l, true)
}

/// Final norm and output head over `hidden`.
pub fn logits_on(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    hidden: Var,
) -> Result<Var> {
    let h = norm(tape, cfg, hidden, p.norm_final)?;
    match p.head {
        Some(head) => tape.matmul(h, head),
        None => tape.matmul_nt(h, p.embed),
    }
}

fn run<F>(model: &Model, x_v: &SeqMatrix, x_l: &SeqMatrix, f: F) -> Result<ForwardTrace>
where
    F: FnOnce(&mut Tape, &ModelConfig, &ModelParams<Var>, Var, Var) -> Result<TapeForward>,
{
    let mut tape = Tape::new();
    let p = record_params(&mut tape, &model.params, false);
    let xv = tape.constant(x_v.clone());
    let xl = tape.constant(x_l.clone());
    let fwd = f(&mut tape, &model.config, &p, xv, xl)?;
    let layers = fwd
        .layer_inputs
        .iter()
        .zip(&fwd.layer_outputs)
        .map(|(&i, &o)| LayerRecord {
            input: tape.value(i).clone(),
            output: tape.value(o).clone(),
        })
        .collect();
    Ok(ForwardTrace {
        variant: model.config.variant,
        n_vision: x_v.rows(),
        n_language: x_l.rows(),
        vision_input: fwd.vision_input.map(|v| tape.value(v).clone()),
        language_input: x_l.clone(),
        layers,
        final_hidden: tape.value(fwd.final_hidden).clone(),
    })
}

/// Concatenation baseline: `[connector(X_v); X_l]` through causal blocks.
pub fn vanilla_forward(model: &Model, x_v: &SeqMatrix, x_l: &SeqMatrix) -> Result<ForwardTrace> {
    if model.config.variant != Variant::Vanilla {
        return Err(Error::InvalidConfig(format!(
            "vanilla_forward called on a {} model",
            model.config.variant
        )));
    }
    run(model, x_v, x_l, |t, c, p, v, l| {
        concat_forward_on(t, c, p, v, l, false)
    })
}

/// Mixture-attention decoder for any of the three injection variants.
pub fn himix_forward(model: &Model, x_v: &SeqMatrix, x_l: &SeqMatrix) -> Result<ForwardTrace> {
    if !model.config.variant.is_mixture() {
        return Err(Error::InvalidConfig(
            "himix_forward called on a vanilla model".into(),
        ));
    }
    run(model, x_v, x_l, mixture_forward_on)
}

/// Vanilla forward with the vision rows reset to the connector output
/// before each layer.
pub fn frozen_vision_oracle_forward(
    model: &Model,
    x_v: &SeqMatrix,
    x_l: &SeqMatrix,
) -> Result<ForwardTrace> {
    run(model, x_v, x_l, frozen_vision_oracle_on)
}

/// Dispatches on the model's variant.
pub fn forward(model: &Model, x_v: &SeqMatrix, x_l: &SeqMatrix) -> Result<ForwardTrace> {
    run(model, x_v, x_l, decoder_forward_on)
}

/// Language-only causal decoder using `model`'s language weights.
pub fn language_only_forward(model: &Model, x_l: &SeqMatrix) -> Result<SeqMatrix> {
    let cfg = &model.config;
    let mut tape = Tape::new();
    let p = record_params(&mut tape, &model.params, false);
    let mut y = tape.constant(x_l.clone());
    let mask = build_causal_concat_mask(0, x_l.rows())?;
    for l in &p.layers {
        let a = norm(&mut tape, cfg, y, l.norm_attn)?;
        let attended = self_attention_on(
            &mut tape,
            a,
            &attn_vars(l),
            cfg.n_heads,
            &mask,
            positional(cfg),
        )?;
        y = finish_block(&mut tape, cfg, y, attended, l)?;
    }
    Ok(tape.value(y).clone())
}

/// Plain output head: `y * w_head`.
pub fn lm_head(y: &SeqMatrix, w_head: &SeqMatrix) -> Result<SeqMatrix> {
    y.matmul(w_head)
}

impl Model {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        init_model(cfg)
    }

    pub fn forward(&self, x_v: &SeqMatrix, x_l: &SeqMatrix) -> Result<ForwardTrace> {
        forward(self, x_v, x_l)
    }

    /// Logits for every row of the final hidden state.
    pub fn logits(&self, trace: &ForwardTrace) -> Result<SeqMatrix> {
        let mut tape = Tape::new();
        let p = record_params(&mut tape, &self.params, false);
        let h = tape.constant(trace.final_hidden.clone());
        let out = logits_on(&mut tape, &self.config, &p, h)?;
        Ok(tape.value(out).clone())
    }
}
