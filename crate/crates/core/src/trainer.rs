//! Synthetic patch-lookup task and a small training loop.
//!
//! Each sample holds `N` patch vectors, each tagged with a class. The
//! language side asks about one patch by index (`[BOS, SEP, q_i]`) and the
//! model must answer with that patch's class token at the query position.
//! The answer is independent of the query token alone, so a model that
//! ignores the vision rows sits at chance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decoder::{
    decoder_forward_on, logits_on, record_params, Model, ModelConfig, ModelParams, Variant,
};
use crate::error::{Error, Result};
use crate::numkit::{grad_check, GradCheckOptions, GradCheckReport, SeqMatrix, Tape, Var};

/// Sizes of a patch task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    pub n_patches: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    /// Free coordinates filled with noise, after the class and position blocks.
    pub noise_dims: usize,
    pub noise_std: f64,
}

impl TaskSpec {
    pub fn new(seed: u64, n_patches: usize, n_classes: usize, n_samples: usize) -> Self {
        Self {
            seed,
            n_patches,
            n_classes,
            n_samples,
            noise_dims: 16,
            noise_std: 0.5,
        }
    }

    pub fn d_vision(&self) -> usize {
        self.n_classes + self.n_patches + self.noise_dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    /// `n_patches x d_vision`, unit rows.
    pub patches: SeqMatrix,
    pub classes: Vec<usize>,
    pub query: usize,
    pub label: usize,
    pub tokens: Vec<usize>,
}

/// A generated sample set plus its vocabulary layout:
/// `[0, N)` query tokens, `[N, N+K)` class tokens, then BOS and SEP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTask {
    pub spec: TaskSpec,
    pub samples: Vec<PatchSample>,
}

impl PatchTask {
    pub fn n_patches(&self) -> usize {
        self.spec.n_patches
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn d_vision(&self) -> usize {
        self.spec.d_vision()
    }

    pub fn query_token(&self, patch: usize) -> usize {
        patch
    }

    pub fn class_token(&self, class: usize) -> usize {
        self.spec.n_patches + class
    }

    pub fn bos(&self) -> usize {
        self.spec.n_patches + self.spec.n_classes
    }

    pub fn sep(&self) -> usize {
        self.bos() + 1
    }

    pub fn vocab(&self) -> usize {
        self.sep() + 1
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A decoder config sized for this task, initialised at
    /// [`REFERENCE_INIT_STD`].
    pub fn model_config(&self, variant: Variant, n_layers: usize, d_model: usize) -> ModelConfig {
        let mut cfg = ModelConfig::toy(variant, n_layers, d_model, self.d_vision(), self.vocab());
        cfg.init_std = REFERENCE_INIT_STD;
        cfg
    }
}

/// Weight scale the toy task trains reliably from. Much smaller scales leave
/// the concatenated decoder stuck near chance for dozens of epochs.
pub const REFERENCE_INIT_STD: f64 = 0.1;

/// Generates `n_samples` samples, deterministic per seed. Labels are
/// balanced to within one sample per class.
pub fn gen_task(
    seed: u64,
    n_patches: usize,
    n_classes: usize,
    n_samples: usize,
) -> Result<PatchTask> {
    gen_task_with(TaskSpec::new(seed, n_patches, n_classes, n_samples))
}

pub fn gen_task_with(spec: TaskSpec) -> Result<PatchTask> {
    if spec.n_classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if spec.n_patches < 1 {
        return Err(Error::InvalidArgument("need at least 1 patch".into()));
    }
    if spec.n_samples < 1 {
        return Err(Error::InvalidArgument("need at least 1 sample".into()));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad noise_std {}",
            spec.noise_std
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
    let (n, k) = (spec.n_patches, spec.n_classes);

    let mut labels: Vec<usize> = (0..spec.n_samples).map(|s| s % k).collect();
    labels.shuffle(&mut rng);

    let task_stub = PatchTask {
        spec,
        samples: Vec::new(),
    };
    let samples = labels
        .into_iter()
        .map(|label| {
            let query = rng.random_range(0..n);
            let classes: Vec<usize> = (0..n)
                .map(|i| {
                    if i == query {
                        label
                    } else {
                        rng.random_range(0..k)
                    }
                })
                .collect();
            let mut patches = SeqMatrix::zeros(n, spec.d_vision());
            for (i, &c) in classes.iter().enumerate() {
                let row = patches.row_mut(i);
                row[c] = 1.0;
                row[k + i] = 1.0;
                for v in &mut row[k + n..] {
                    *v = noise.sample(&mut rng);
                }
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= norm);
            }
            PatchSample {
                patches,
                classes,
                query,
                label,
                tokens: vec![
                    task_stub.bos(),
                    task_stub.sep(),
                    task_stub.query_token(query),
                ],
            }
        })
        .collect();
    Ok(PatchTask { spec, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!(
                "unknown optimizer {other:?}; expected sgd or adam"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 3e-3,
            optimizer: Optimizer::Adam,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: ModelConfig,
    pub options: TrainOptions,
    pub task: TaskSpec,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Training accuracy per epoch, measured on each batch before its update.
    pub epoch_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub steps: usize,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_task(model: &Model, task: &PatchTask) -> Result<()> {
    let cfg = &model.config;
    if cfg.d_vision != task.d_vision() || cfg.vocab < task.vocab() {
        return Err(Error::InvalidConfig(format!(
            "model (d_vision {}, vocab {}) does not fit task (d_vision {}, vocab {})",
            cfg.d_vision,
            cfg.vocab,
            task.d_vision(),
            task.vocab()
        )));
    }
    Ok(())
}

/// `1 x vocab` logits at the answer position.
fn answer_logits(
    tape: &mut Tape,
    cfg: &ModelConfig,
    p: &ModelParams<Var>,
    sample: &PatchSample,
    zero_vision: bool,
) -> Result<Var> {
    let patches = if zero_vision {
        SeqMatrix::zeros(sample.patches.rows(), sample.patches.cols())
    } else {
        sample.patches.clone()
    };
    let x_v = tape.constant(patches);
    let x_l = tape.gather_rows(p.embed, &sample.tokens)?;
    let fwd = decoder_forward_on(tape, cfg, p, x_v, x_l)?;
    let rows = tape.value(fwd.final_hidden).rows();
    let last = tape.slice_rows(fwd.final_hidden, rows - 1, 1)?;
    logits_on(tape, cfg, p, last)
}

fn predicted_class(task: &PatchTask, logits: &SeqMatrix) -> usize {
    let row = logits.row(0);
    (0..task.n_classes())
        .max_by(|&a, &b| row[task.class_token(a)].total_cmp(&row[task.class_token(b)]))
        .expect("at least two classes")
}

fn accuracy_with(model: &Model, task: &PatchTask, zero_vision: bool) -> Result<f64> {
    check_task(model, task)?;
    if task.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut correct = 0usize;
    for s in &task.samples {
        let mut tape = Tape::new();
        let p = record_params(&mut tape, &model.params, false);
        let logits = answer_logits(&mut tape, &model.config, &p, s, zero_vision)?;
        if predicted_class(task, tape.value(logits)) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / task.len() as f64)
}

/// Exact-match accuracy of the argmax over class tokens at the answer
/// position. Does not touch the model.
pub fn evaluate(model: &Model, task: &PatchTask) -> Result<f64> {
    accuracy_with(model, task, false)
}

/// Accuracy with every patch vector replaced by zeros.
pub fn evaluate_vision_ablated(model: &Model, task: &PatchTask) -> Result<f64> {
    accuracy_with(model, task, true)
}

/// Finite-difference check of every weight block under the training loss
/// on the first `n_samples` samples. Blocks are reported in canonical order.
pub fn grad_check_model(
    model: &Model,
    task: &PatchTask,
    n_samples: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    check_task(model, task)?;
    let batch = &task.samples[..n_samples.clamp(1, task.len())];
    let theta: Vec<SeqMatrix> = model
        .params
        .named()
        .into_iter()
        .map(|(_, w)| w.clone())
        .collect();
    let cfg = &model.config;
    let loss = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut it = vars.iter();
        let p = model
            .params
            .map(|_, _| *it.next().expect("one var per block"));
        let mut rows = Vec::with_capacity(batch.len());
        for s in batch {
            rows.push(answer_logits(tape, cfg, &p, s, false)?);
        }
        let logits = tape.concat_rows(&rows)?;
        let targets: Vec<usize> = batch.iter().map(|s| task.class_token(s.label)).collect();
        tape.cross_entropy(logits, &targets)
    };
    grad_check(loss, &theta, *opts)
}

struct AdamState {
    m: Vec<SeqMatrix>,
    v: Vec<SeqMatrix>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Minibatch training with cross-entropy on the answer position.
///
/// `held_out` supplies the final accuracy in the report.
pub fn train(
    model: &mut Model,
    task: &PatchTask,
    held_out: &PatchTask,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    check_task(model, task)?;
    check_task(model, held_out)?;
    if task.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad learning rate {}",
            opts.lr
        )));
    }
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState {
        m: model
            .params
            .named()
            .iter()
            .map(|(_, w)| SeqMatrix::zeros(w.rows(), w.cols()))
            .collect(),
        v: model
            .params
            .named()
            .iter()
            .map(|(_, w)| SeqMatrix::zeros(w.rows(), w.cols()))
            .collect(),
        t: 0,
    };
    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut epoch_loss = Vec::with_capacity(opts.epochs);
    let mut epoch_accuracy = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(opts.batch_size) {
            let mut tape = Tape::new();
            let p = record_params(&mut tape, &model.params, true);
            let mut rows = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &task.samples[i];
                rows.push(answer_logits(&mut tape, &cfg, &p, s, false)?);
                targets.push(task.class_token(s.label));
            }
            let logits = tape.concat_rows(&rows)?;
            let loss = tape.cross_entropy(logits, &targets)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Diverged { step, loss: value });
            }
            loss_sum += value * batch.len() as f64;
            for (r, &i) in batch.iter().enumerate() {
                let row = tape.value(logits).slice_rows(r, 1)?;
                if predicted_class(task, &row) == task.samples[i].label {
                    correct += 1;
                }
            }

            let grads = tape.backward(loss);
            let vars: Vec<Var> = p.named().into_iter().map(|(_, &v)| v).collect();
            adam.t += 1;
            for (k, (w, var)) in model.params.blocks_mut().into_iter().zip(vars).enumerate() {
                let g = grads.wrt(var);
                apply_update(w, &g, k, &mut adam, opts);
            }
            step += 1;
        }
        epoch_loss.push(loss_sum / task.len() as f64);
        epoch_accuracy.push(correct as f64 / task.len() as f64);
    }

    Ok(TrainReport {
        seed: cfg.seed,
        config: cfg,
        options: *opts,
        task: task.spec,
        epoch_loss,
        epoch_accuracy,
        final_accuracy: evaluate(model, held_out)?,
        steps: step,
    })
}

fn apply_update(
    w: &mut SeqMatrix,
    g: &SeqMatrix,
    k: usize,
    adam: &mut AdamState,
    opts: &TrainOptions,
) {
    match opts.optimizer {
        Optimizer::Sgd => {
            for (x, d) in w.data_mut().iter_mut().zip(g.data()) {
                *x -= opts.lr * d;
            }
        }
        Optimizer::Adam => {
            let c1 = 1.0 - BETA1.powi(adam.t);
            let c2 = 1.0 - BETA2.powi(adam.t);
            let m = adam.m[k].data_mut();
            let v = adam.v[k].data_mut();
            for (((x, &d), m), v) in w.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = BETA1 * *m + (1.0 - BETA1) * d;
                *v = BETA2 * *v + (1.0 - BETA2) * d * d;
                *x -= opts.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}
