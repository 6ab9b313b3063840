//! Configuration, seeding, the training loop, the cross-domain
//! pretrain/finetune protocol, inference, and reporting.

mod checkpoint;
mod data;

pub use checkpoint::{
    adam_from_checkpoint, load_checkpoint, network_from_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_SCHEMA,
};
pub use data::{
    assemble_batch, batch_indices, epoch_order, load_prepared, prepare_tuple, Batch,
    PreparedDataset, PreparedTuple,
};

use crate::geometry::{bbox_from_mask, Mask};
use crate::losses::{tensor_losses, BatchTargets, LossBreakdown, LossError, RecNorm};
use crate::metrics::{evaluate_dataset, EvalPrediction, EvalTarget, MetricsError, MetricsReport};
use crate::network::{
    attention_entropy, batch_from_tuples, images_to_tensor, masks_to_tensor, tensor_to_image,
    tensor_to_mask, BatchInputs, FillHead, NetError, Network, NetworkConfig, ParamStore,
};
use crate::synthdata::{DataError, Image};
use candle_core::backprop::GradStore;
use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss at step {step}; offending batch: {batch_ids:?}")]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::Metrics(_) | HarnessError::Checkpoint(_) => 3,
            HarnessError::NonFiniteLoss { .. } => 4,
            HarnessError::Net(NetError::EmptyForeground(_)) => 4,
            _ => 1,
        }
    }
}

fn default_resolution() -> usize {
    256
}
fn default_channel_mult() -> f64 {
    1.0
}
fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_steps() -> usize {
    2000
}
fn default_checkpoint_every() -> usize {
    500
}
fn default_log_every() -> usize {
    50
}
fn default_fallback_scale() -> f64 {
    0.5
}
fn default_shape_size() -> usize {
    32
}
fn default_attn_dim() -> usize {
    32
}

/// Full description of a training/finetuning run. Defaults follow the
/// published settings: batch 16, learning rate 1e-4, betas (0.5, 0.999),
/// and no data augmentation anywhere in the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_data: PathBuf,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_channel_mult")]
    pub channel_mult: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Evaluate S-BER on `test_data` every this many steps and keep the
    /// best snapshot; 0 disables periodic evaluation.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub no_refine: bool,
    #[serde(default)]
    pub paper_literal_mean: bool,
    #[serde(default)]
    pub rec_norm: RecNorm,
    #[serde(default = "default_fallback_scale")]
    pub fallback_scale: f64,
    #[serde(default = "default_shape_size")]
    pub shape_size: usize,
    #[serde(default = "default_attn_dim")]
    pub attn_dim: usize,
    /// Resume a previous run: restores parameters, optimizer state, and the
    /// global step, then continues to `steps`.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{path:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(HarnessError::Config(
                "learning_rate must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(HarnessError::Config("betas must lie in [0, 1)".into()));
        }
        self.network_config()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            resolution: self.resolution,
            channel_mult: self.channel_mult,
            shape_size: self.shape_size,
            attn_dim: self.attn_dim,
            init_seed: self.seed,
            no_refine: self.no_refine,
            paper_literal_mean: self.paper_literal_mean,
            fallback_scale: self.fallback_scale,
            fill_head: FillHead::Attentive,
        }
    }
}

/// Adam over every parameter in a store, with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: usize,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Result<Self, HarnessError> {
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, var) in store.named_vars() {
            names.push(name.clone());
            m.push(var.zeros_like().map_err(NetError::from)?);
            v.push(var.zeros_like().map_err(NetError::from)?);
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            names,
            m,
            v,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// `(name, first moment, second moment)` triples, aligned with the store.
    pub fn moments<'a>(&'a self) -> impl Iterator<Item = (&'a str, &'a Tensor, &'a Tensor)> {
        self.names
            .iter()
            .zip(self.m.iter().zip(self.v.iter()))
            .map(|(n, (m, v))| (n.as_str(), m, v))
    }

    /// Overwrites the moments from checkpointed tensors.
    pub fn restore(
        &mut self,
        store: &ParamStore,
        m: &HashMap<String, Tensor>,
        v: &HashMap<String, Tensor>,
        t: usize,
    ) -> Result<(), HarnessError> {
        for (i, (name, _)) in store.named_vars().iter().enumerate() {
            let mm = m.get(name).ok_or_else(|| {
                HarnessError::Checkpoint(format!("missing optimizer moment for {name}"))
            })?;
            let vv = v.get(name).ok_or_else(|| {
                HarnessError::Checkpoint(format!("missing optimizer moment for {name}"))
            })?;
            self.m[i] = mm.clone();
            self.v[i] = vv.clone();
        }
        self.t = t;
        Ok(())
    }

    /// One optimizer step; parameters without a gradient are treated as
    /// receiving zero gradient.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore) -> Result<(), HarnessError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, var)) in store.named_vars().iter().enumerate() {
            let grad = match grads.get(var.as_tensor()) {
                Some(g) => g.clone(),
                None => var.zeros_like().map_err(NetError::from)?,
            };
            let m = ((&self.m[i] * self.beta1).map_err(NetError::from)?
                + (&grad * (1.0 - self.beta1)).map_err(NetError::from)?)
            .map_err(NetError::from)?;
            let v = ((&self.v[i] * self.beta2).map_err(NetError::from)?
                + (grad.sqr().map_err(NetError::from)? * (1.0 - self.beta2))
                    .map_err(NetError::from)?)
            .map_err(NetError::from)?;
            let m_hat = (&m / bc1).map_err(NetError::from)?;
            let v_hat = (&v / bc2).map_err(NetError::from)?;
            let denom = (v_hat.sqrt().map_err(NetError::from)? + self.eps).map_err(NetError::from)?;
            let update = (m_hat.div(&denom).map_err(NetError::from)? * self.lr)
                .map_err(NetError::from)?;
            let new = (var.as_tensor() - update).map_err(NetError::from)?;
            var.set(&new).map_err(NetError::from)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}

/// Trainer state snapshot written beside checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub epoch: usize,
    pub last_loss: Option<LossBreakdown>,
    pub best_s_ber: Option<f64>,
    pub best_step: Option<usize>,
    /// Batch order is a pure function of (seed, step), so the seed is the
    /// entire generator state.
    pub seed: u64,
}

/// Result of a training run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub state: TrainState,
    pub history: Vec<(usize, LossBreakdown)>,
}

fn log_line(log: &mut std::fs::File, step: usize, b: &LossBreakdown) -> Result<(), HarnessError> {
    let line = serde_json::json!({
        "step": step,
        "l_reg": b.l_reg,
        "l_shape": b.l_shape,
        "l_mask": b.l_mask,
        "l_rec": b.l_rec,
        "l_total": b.l_total,
    });
    writeln!(log, "{line}")?;
    Ok(())
}

/// Trains from scratch (or resumes) according to the config.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let device = Device::Cpu;
    let net_config = config.network_config();
    let mut net;
    let mut adam;
    let start_step;
    match &config.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, &device)?;
            net = network_from_checkpoint(&ckpt, &device)?;
            adam = adam_from_checkpoint(
                &ckpt,
                net.store(),
                config.learning_rate,
                config.beta1,
                config.beta2,
            )?;
            start_step = ckpt.step;
        }
        None => {
            net = Network::new(net_config.clone(), &device)?;
            adam = Adam::new(net.store(), config.learning_rate, config.beta1, config.beta2)?;
            start_step = 0;
        }
    }
    train_loop(config, &mut net, &mut adam, start_step)
}

/// Loads a base checkpoint's parameters (not its optimizer state) and
/// trains on the configured dataset.
pub fn finetune(config: &RunConfig, base: &Path) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let device = Device::Cpu;
    let ckpt = load_checkpoint(base, &device)?;
    let mut net = network_from_checkpoint(&ckpt, &device)?;
    let mut adam = Adam::new(net.store(), config.learning_rate, config.beta1, config.beta2)?;
    train_loop(config, &mut net, &mut adam, 0)
}

fn train_loop(
    config: &RunConfig,
    net: &mut Network,
    adam: &mut Adam,
    start_step: usize,
) -> Result<TrainOutcome, HarnessError> {
    let device = net.device().clone();
    let dataset = load_prepared(
        &config.train_data,
        net.config.resolution,
        net.config.shape_size,
    )?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(config.out_dir.join("train_log.jsonl"))?;

    let n = dataset.tuples.len();
    let per_epoch = n.div_ceil(config.batch_size);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_path = None;

    for step in start_step..config.steps {
        let indices = batch_indices(n, config.batch_size, config.seed, step);
        let batch = assemble_batch(&dataset, &indices, &device)?;
        let outputs = net.forward(&batch.inputs)?;
        let targets = BatchTargets {
            b_s: batch.b_s.clone(),
            m_s: batch.m_s.clone(),
            m_fs: batch.m_fs.clone(),
            i_g: batch.i_g.clone(),
        };
        let (total, breakdown) = tensor_losses(&outputs, &targets, config.rec_norm)?;
        if !breakdown.is_finite() {
            return Err(HarnessError::NonFiniteLoss {
                step,
                batch_ids: batch.ids,
            });
        }
        let grads = total.backward().map_err(NetError::from)?;
        adam.step(net.store(), &grads)?;

        log_line(&mut log, step, &breakdown)?;
        if step % config.log_every == 0 || step + 1 == config.steps {
            println!(
                "step {step:>6}  total {:.5}  reg {:.5}  shape {:.5}  mask {:.5}  rec {:.6}",
                breakdown.l_total, breakdown.l_reg, breakdown.l_shape, breakdown.l_mask,
                breakdown.l_rec
            );
        }
        history.push((step, breakdown));

        let next = step + 1;
        if config.checkpoint_every > 0 && next % config.checkpoint_every == 0 {
            save_checkpoint(
                &config.out_dir.join(format!("ckpt_step{next}.safetensors")),
                net,
                Some(adam),
                next,
            )?;
        }
        if config.eval_every > 0 && next % config.eval_every == 0 {
            if let Some(test_data) = &config.test_data {
                let report = evaluate(net, test_data, None, config.batch_size)?;
                let s_ber = report.aggregate.s_ber;
                if best.map(|(_, b)| s_ber < b).unwrap_or(true) {
                    best = Some((next, s_ber));
                    let path = config.out_dir.join("ckpt_best.safetensors");
                    save_checkpoint(&path, net, Some(adam), next)?;
                    best_path = Some(path);
                }
            }
        }
    }

    let final_path = config.out_dir.join("ckpt_final.safetensors");
    save_checkpoint(&final_path, net, Some(adam), config.steps)?;
    let state = TrainState {
        step: config.steps,
        epoch: config.steps / per_epoch.max(1),
        last_loss: history.last().map(|(_, b)| *b),
        best_s_ber: best.map(|(_, b)| b),
        best_step: best.map(|(s, _)| s),
        seed: config.seed,
    };
    std::fs::write(
        config.out_dir.join("train_state.json"),
        serde_json::to_string_pretty(&state)?,
    )?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        state,
        history,
    })
}

/// Per-tuple artifacts produced by an evaluation pass.
pub struct EvalArtifacts {
    pub id: String,
    pub target: EvalTarget,
    pub prediction: EvalPrediction,
    pub composite: Image,
    pub scale: [f32; 3],
    pub fallback_used: bool,
    pub attention_entropy: f64,
}

/// Runs the network over a dataset and scores it. When `out_dir` is given,
/// writes metrics files, per-tuple predictions, and diagnostics.
pub fn evaluate(
    net: &Network,
    data_dir: &Path,
    out_dir: Option<&Path>,
    batch_size: usize,
) -> Result<MetricsReport, HarnessError> {
    let artifacts = evaluate_artifacts(net, data_dir, batch_size)?;
    let cases: Vec<(EvalTarget, EvalPrediction)> = artifacts
        .iter()
        .map(|a| (a.target.clone(), a.prediction.clone()))
        .collect();
    let config_echo = serde_json::json!({
        "network": net.config,
        "data": data_dir.display().to_string(),
        "parameters": net.count_parameters(),
    });
    let report = evaluate_dataset(&cases, config_echo)?;
    if let Some(out) = out_dir {
        write_eval_outputs(out, &artifacts, &report)?;
    }
    Ok(report)
}

/// Forward passes over a dataset, returning per-tuple artifacts.
pub fn evaluate_artifacts(
    net: &Network,
    data_dir: &Path,
    batch_size: usize,
) -> Result<Vec<EvalArtifacts>, HarnessError> {
    let entries = crate::synthdata::read_dataset(data_dir)?;
    if entries.is_empty() {
        return Err(HarnessError::Data(DataError::CorruptDataset(
            "evaluation dataset is empty".into(),
        )));
    }
    let device = net.device().clone();
    let mut out = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(batch_size.max(1)) {
        let tuples: Vec<&crate::synthdata::ShadowTuple> = chunk.iter().map(|e| &e.tuple).collect();
        let inputs = batch_from_tuples(&tuples, &device)?;
        let outputs = net.forward(&inputs)?;
        let scales = outputs.scale.to_vec2::<f32>().map_err(NetError::from)?;
        let attention = outputs.attention.to_vec2::<f32>().map_err(NetError::from)?;
        for (i, entry) in chunk.iter().enumerate() {
            out.push(EvalArtifacts {
                id: entry.id.clone(),
                target: EvalTarget {
                    id: entry.id.clone(),
                    gt_image: entry.tuple.ground_truth.clone(),
                    gt_mask: entry.tuple.m_fs.clone(),
                    gt_box: entry.tuple.meta.shadow_box,
                },
                prediction: EvalPrediction {
                    image: tensor_to_image(&outputs.i_g_hat, i)?,
                    mask_refined: tensor_to_mask(&outputs.m_fs_refined, i)?,
                    mask_rough: tensor_to_mask(&outputs.m_fs_rough, i)?,
                    box_pred: outputs.b_s_hat_boxes[i],
                },
                composite: entry.tuple.composite.clone(),
                scale: [scales[i][0], scales[i][1], scales[i][2]],
                fallback_used: outputs.fallback_used[i],
                attention_entropy: attention_entropy(&attention[i]),
            });
        }
    }
    Ok(out)
}

fn image_to_png(img: &Image, path: &Path) -> Result<(), HarnessError> {
    let (h, w) = img.resolution();
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = img.pixel(r, c);
            rgb.put_pixel(
                c as u32,
                r as u32,
                image::Rgb([
                    (px[0] * 255.0).round() as u8,
                    (px[1] * 255.0).round() as u8,
                    (px[2] * 255.0).round() as u8,
                ]),
            );
        }
    }
    rgb.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| HarnessError::Data(DataError::Image(e)))?;
    Ok(())
}

fn mask_to_png(mask: &Mask, path: &Path) -> Result<(), HarnessError> {
    let (h, w) = mask.resolution();
    let mut gray = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), v) in mask.data().indexed_iter() {
        gray.put_pixel(c as u32, r as u32, image::Luma([(v * 255.0).round() as u8]));
    }
    gray.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| HarnessError::Data(DataError::Image(e)))?;
    Ok(())
}

fn write_eval_outputs(
    out_dir: &Path,
    artifacts: &[EvalArtifacts],
    report: &MetricsReport,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let table = crate::metrics::render_table(&[("eval".to_string(), &report.aggregate)]);
    std::fs::write(out_dir.join("metrics.txt"), table)?;
    let mut diag = std::fs::File::create(out_dir.join("diagnostics.jsonl"))?;
    for a in artifacts {
        let tdir = out_dir.join("tuples").join(&a.id);
        std::fs::create_dir_all(&tdir)?;
        image_to_png(&a.composite, &tdir.join("comp.png"))?;
        image_to_png(&a.target.gt_image, &tdir.join("gt.png"))?;
        image_to_png(&a.prediction.image, &tdir.join("pred.png"))?;
        mask_to_png(&a.prediction.mask_rough, &tdir.join("m_rough.png"))?;
        mask_to_png(&a.prediction.mask_refined, &tdir.join("m_refined.png"))?;
        let line = serde_json::json!({
            "id": a.id,
            "box_pred": a.prediction.box_pred,
            "scale": a.scale,
            "fallback_used": a.fallback_used,
            "attention_entropy": a.attention_entropy,
        });
        writeln!(diag, "{line}")?;
    }
    Ok(())
}

/// Inputs to a single inference call on a real composite.
pub struct InferInputs {
    pub composite: Image,
    /// One mask per foreground object; the network runs once per object and
    /// shadows accumulate.
    pub m_fo: Vec<Mask>,
    pub m_bo: Option<Mask>,
    pub m_bs: Option<Mask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferDiagnostics {
    pub pass: usize,
    pub box_pred: crate::geometry::BBox,
    pub scale: [f32; 3],
    pub fallback_used: bool,
    pub attention_entropy: f64,
}

pub struct InferOutcome {
    pub image: Image,
    pub masks: Vec<Mask>,
    pub diagnostics: Vec<InferDiagnostics>,
}

/// Generates shadows for every foreground object in turn, feeding each
/// pass's output composite into the next.
pub fn infer(net: &Network, inputs: &InferInputs) -> Result<InferOutcome, HarnessError> {
    let device = net.device().clone();
    let n = net.config.resolution;
    let (h, w) = inputs.composite.resolution();
    if (h, w) != (n, n) {
        return Err(HarnessError::Config(format!(
            "composite is {h}x{w} but the checkpoint expects {n}x{n}"
        )));
    }
    if inputs.m_fo.is_empty() {
        return Err(HarnessError::Config("at least one object mask is required".into()));
    }
    let zeros = Mask::zeros(n, n);
    let m_bo = inputs.m_bo.clone().unwrap_or_else(|| zeros.clone());
    let m_bs = inputs.m_bs.clone().unwrap_or_else(|| zeros.clone());

    let mut current = inputs.composite.clone();
    let mut masks = Vec::new();
    let mut diagnostics = Vec::new();
    for (pass, m_fo) in inputs.m_fo.iter().enumerate() {
        let b_o = bbox_from_mask(m_fo, 0.5).map_err(DataError::Geometry)?;
        let batch = BatchInputs {
            i_c: images_to_tensor(&[&current], &device)?,
            m_fo: masks_to_tensor(&[m_fo], &device)?,
            m_bo: masks_to_tensor(&[&m_bo], &device)?,
            m_bs: masks_to_tensor(&[&m_bs], &device)?,
            b_o: vec![b_o],
        };
        let outputs = net.forward(&batch)?;
        let scale = outputs.scale.to_vec2::<f32>().map_err(NetError::from)?;
        let attention = outputs.attention.to_vec2::<f32>().map_err(NetError::from)?;
        diagnostics.push(InferDiagnostics {
            pass,
            box_pred: outputs.b_s_hat_boxes[0],
            scale: [scale[0][0], scale[0][1], scale[0][2]],
            fallback_used: outputs.fallback_used[0],
            attention_entropy: attention_entropy(&attention[0]),
        });
        masks.push(tensor_to_mask(&outputs.m_fs_refined, 0)?);
        current = tensor_to_image(&outputs.i_g_hat, 0)?;
    }
    Ok(InferOutcome {
        image: current,
        masks,
        diagnostics,
    })
}

/// Writes inference outputs: final image, per-pass masks, diagnostics.
pub fn write_infer_outputs(out_dir: &Path, outcome: &InferOutcome) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    image_to_png(&outcome.image, &out_dir.join("pred.png"))?;
    for (i, mask) in outcome.masks.iter().enumerate() {
        mask_to_png(mask, &out_dir.join(format!("mask_pass{i}.png")))?;
    }
    std::fs::write(
        out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&outcome.diagnostics)?,
    )?;
    Ok(())
}

fn load_png_image(path: &Path) -> Result<Image, HarnessError> {
    let img = image::open(path).map_err(|e| HarnessError::Data(DataError::Image(e)))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = ndarray::Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        rgb.get_pixel(c as u32, r as u32).0[ch] as f32 / 255.0
    });
    Ok(Image::new(data)?)
}

fn load_png_mask(path: &Path) -> Result<Mask, HarnessError> {
    let img = image::open(path).map_err(|e| HarnessError::Data(DataError::Image(e)))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Mask::from_fn(h as usize, w as usize, |r, c| {
        if gray.get_pixel(c as u32, r as u32).0[0] > 127 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Loads inference inputs from PNG files.
pub fn load_infer_inputs(
    comp: &Path,
    m_fo: &[PathBuf],
    m_bo: Option<&Path>,
    m_bs: Option<&Path>,
) -> Result<InferInputs, HarnessError> {
    Ok(InferInputs {
        composite: load_png_image(comp)?,
        m_fo: m_fo
            .iter()
            .map(|p| load_png_mask(p))
            .collect::<Result<_, _>>()?,
        m_bo: m_bo.map(load_png_mask).transpose()?,
        m_bs: m_bs.map(load_png_mask).transpose()?,
    })
}

/// Assembles qualitative grids from a written evaluation directory:
/// columns {composite, rough mask, refined mask, prediction, ground truth},
/// one row per tuple, `rows_per_grid` tuples per image.
pub fn report(eval_dir: &Path, out_dir: &Path, rows_per_grid: usize) -> Result<(), HarnessError> {
    let metrics_path = eval_dir.join("metrics.json");
    if !metrics_path.exists() {
        return Err(HarnessError::Data(DataError::CorruptDataset(format!(
            "no metrics.json under {}",
            eval_dir.display()
        ))));
    }
    let tuples_dir = eval_dir.join("tuples");
    let mut ids: Vec<String> = std::fs::read_dir(&tuples_dir)
        .map_err(|_| {
            HarnessError::Data(DataError::CorruptDataset(format!(
                "no tuples directory under {}",
                eval_dir.display()
            )))
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().to_string())
        .collect();
    if ids.is_empty() {
        return Err(HarnessError::Data(DataError::CorruptDataset(
            "evaluation directory holds no tuples".into(),
        )));
    }
    ids.sort();
    std::fs::create_dir_all(out_dir)?;
    std::fs::copy(&metrics_path, out_dir.join("metrics.json"))?;
    if eval_dir.join("metrics.txt").exists() {
        std::fs::copy(eval_dir.join("metrics.txt"), out_dir.join("metrics.txt"))?;
    }

    let columns = ["comp.png", "m_rough.png", "m_refined.png", "pred.png", "gt.png"];
    let rows_per_grid = rows_per_grid.max(1);
    for (grid_idx, chunk) in ids.chunks(rows_per_grid).enumerate() {
        let mut cells: Vec<Vec<image::RgbImage>> = Vec::new();
        for id in chunk {
            let tdir = tuples_dir.join(id);
            let mut row = Vec::new();
            for col in &columns {
                let img = image::open(tdir.join(col))
                    .map_err(|e| HarnessError::Data(DataError::Image(e)))?
                    .to_rgb8();
                row.push(img);
            }
            cells.push(row);
        }
        let cell_w = cells[0][0].width();
        let cell_h = cells[0][0].height();
        let pad = 2u32;
        let total_w = columns.len() as u32 * (cell_w + pad) - pad;
        let total_h = cells.len() as u32 * (cell_h + pad) - pad;
        let mut grid = image::RgbImage::from_pixel(total_w, total_h, image::Rgb([255, 255, 255]));
        for (r, row) in cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                let ox = c as u32 * (cell_w + pad);
                let oy = r as u32 * (cell_h + pad);
                for (x, y, px) in cell.enumerate_pixels() {
                    grid.put_pixel(ox + x, oy + y, *px);
                }
            }
        }
        grid.save_with_format(
            out_dir.join(format!("grid_{grid_idx:03}.png")),
            image::ImageFormat::Png,
        )
        .map_err(|e| HarnessError::Data(DataError::Image(e)))?;
    }
    Ok(())
}

/// Aggregates for the three cross-domain regimes, mirroring the usual
/// results-table rows: source-only, target-only, source + finetune.
pub struct CrossDomainOutcome {
    pub pretrain_only: MetricsReport,
    pub target_only: MetricsReport,
    pub finetuned: MetricsReport,
    pub table: String,
}

/// Pretrains on the source dataset, evaluates on the target test set,
/// trains a from-scratch baseline on the small target train set, finetunes
/// the pretrained model on it, and reports all three regimes.
pub fn run_cross_domain(
    pretrain: &RunConfig,
    finetune_config: &RunConfig,
    target_test: &Path,
    out_dir: &Path,
) -> Result<CrossDomainOutcome, HarnessError> {
    let device = Device::Cpu;
    std::fs::create_dir_all(out_dir)?;

    let pre = train(pretrain)?;
    let pre_net = network_from_checkpoint(&load_checkpoint(&pre.final_checkpoint, &device)?, &device)?;
    let pretrain_only = evaluate(
        &pre_net,
        target_test,
        Some(&out_dir.join("eval_pretrain_only")),
        pretrain.batch_size,
    )?;

    let mut scratch = finetune_config.clone();
    scratch.out_dir = out_dir.join("train_target_only");
    let scratch_out = train(&scratch)?;
    let scratch_net = network_from_checkpoint(
        &load_checkpoint(&scratch_out.final_checkpoint, &device)?,
        &device,
    )?;
    let target_only = evaluate(
        &scratch_net,
        target_test,
        Some(&out_dir.join("eval_target_only")),
        finetune_config.batch_size,
    )?;

    let mut ft = finetune_config.clone();
    ft.out_dir = out_dir.join("train_finetuned");
    let ft_out = finetune(&ft, &pre.final_checkpoint)?;
    let ft_net =
        network_from_checkpoint(&load_checkpoint(&ft_out.final_checkpoint, &device)?, &device)?;
    let finetuned = evaluate(
        &ft_net,
        target_test,
        Some(&out_dir.join("eval_finetuned")),
        finetune_config.batch_size,
    )?;

    let table = crate::metrics::render_table(&[
        ("source-only".to_string(), &pretrain_only.aggregate),
        ("target-only".to_string(), &target_only.aggregate),
        ("source+finetune".to_string(), &finetuned.aggregate),
    ]);
    std::fs::write(out_dir.join("cross_domain.txt"), &table)?;
    let summary = serde_json::json!({
        "pretrain_only": pretrain_only.aggregate,
        "target_only": target_only.aggregate,
        "finetuned": finetuned.aggregate,
    });
    std::fs::write(
        out_dir.join("cross_domain.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(CrossDomainOutcome {
        pretrain_only,
        target_only,
        finetuned,
        table,
    })
}

/// Convenience wrapper: S-BER of a network on a dataset.
pub fn s_ber_on(net: &Network, data: &Path, batch: usize) -> Result<f64, HarnessError> {
    Ok(evaluate(net, data, None, batch)?.aggregate.s_ber)
}
