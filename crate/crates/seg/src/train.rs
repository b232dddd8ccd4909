//! Fine-tuning and evaluation for one fold.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use octa_core::augment::{augment, AugmentationConfig};
use octa_core::loss::{soft_skeleton, LossConfig};
use octa_core::metrics::overlap;
use octa_core::prompts::{generate_global, generate_local, select_local_target};
use octa_core::schedule::LrSchedule;
use octa_core::seed;
use octa_core::stack::{default_layer_selection, stack_projections, Image3};
use octa_core::standardize::{standardize_input, InputTransform, StandardizedInput};
use octa_core::{Grid, Mask, Mode, OctaSample, PromptGenConfig, PromptSet, SegTask};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{pick_loss, task_loss, LossKind};
use crate::model::{images_tensor, select_best, select_best_batch, AdapterCheckpoint, LoraConfig, ModelConfig, SegModel};

/// Epoch index used to derive evaluation prompt seeds.
pub const EVAL_EPOCH: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: SegTask,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
    /// Seed of the randomly initialized base model.
    pub base_seed: u64,
    /// Weight of the confidence-vs-IoU regression term.
    pub iou_weight: f64,
    /// Probability that a training batch is shown without prompts.
    pub prompt_dropout: f64,
    /// Epochs trained with plain Dice before a clDice task switches to its
    /// configured loss.
    pub dice_warmup_epochs: usize,
    /// Projection layers stacked into the three input channels; empty means
    /// the default selection.
    pub layers: Vec<String>,
    pub prompts: PromptGenConfig,
    pub augmentation: AugmentationConfig,
    pub loss: LossConfig,
    pub lora: LoraConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: SegTask::global(octa_core::TaskName::Rv),
            epochs: 20,
            batch_size: 4,
            schedule: LrSchedule::default(),
            weight_decay: 0.01,
            seed: 0,
            base_seed: 0,
            iou_weight: 0.05,
            prompt_dropout: 0.0,
            dice_warmup_epochs: 0,
            layers: Vec::new(),
            prompts: PromptGenConfig::default(),
            augmentation: AugmentationConfig::default(),
            loss: LossConfig::default(),
            lora: LoraConfig::default(),
            model: ModelConfig::desk(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale setup used for the synthetic learning runs: the small
    /// model, a trainable mask decoder (the random base has no useful
    /// decoder to keep frozen) and two Dice-only epochs before clDice.
    pub fn desk(task: SegTask) -> Self {
        let mut cfg = Self {
            task,
            dice_warmup_epochs: 2,
            ..Self::default()
        };
        cfg.lora.unfreeze_decoder = true;
        cfg
    }

    pub fn validated(mut self) -> Result<Self> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.prompt_dropout) || self.iou_weight < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("prompt_dropout must be in [0, 1]; iou_weight and weight_decay must be non-negative".into()));
        }
        self.schedule = self.schedule.validated()?;
        self.augmentation = self.augmentation.validated()?;
        self.loss = self.loss.validated()?;
        self.prompts.mode = self.task.mode();
        self.prompts = self.prompts.validated()?;
        self.lora = self.lora.validated()?;
        self.model = self.model.validated()?;
        Ok(self)
    }

    pub fn loss_kind(&self) -> LossKind {
        pick_loss(self.task.name())
    }

    fn loss_kind_at(&self, epoch: usize) -> LossKind {
        if epoch < self.dice_warmup_epochs {
            LossKind::Dice
        } else {
            self.loss_kind()
        }
    }
}

/// Source of prompt points for a label. Evaluation with prompts disabled
/// never calls it.
pub trait Prompter {
    /// Prompts and the supervision mask they describe, in label coordinates.
    fn prompts(&mut self, label: &Mask, opposing: Option<&Mask>, config: &PromptGenConfig) -> Result<(PromptSet, Mask)>;
}

/// Prompts drawn from the label by the global/local generation rules.
#[derive(Debug, Default, Clone, Copy)]
pub struct LabelPrompter;

impl Prompter for LabelPrompter {
    fn prompts(&mut self, label: &Mask, opposing: Option<&Mask>, config: &PromptGenConfig) -> Result<(PromptSet, Mask)> {
        Ok(match config.mode {
            Mode::Global => (generate_global(label, config)?, label.clone()),
            Mode::Local => generate_local(label, opposing, config)?,
        })
    }
}

/// Wraps a prompter and counts its calls.
#[derive(Debug, Default)]
pub struct CountingPrompter<P> {
    pub inner: P,
    pub calls: usize,
}

impl<P: Prompter> Prompter for CountingPrompter<P> {
    fn prompts(&mut self, label: &Mask, opposing: Option<&Mask>, config: &PromptGenConfig) -> Result<(PromptSet, Mask)> {
        self.calls += 1;
        self.inner.prompts(label, opposing, config)
    }
}

/// One sample ready for the model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sample_id: String,
    pub input: StandardizedInput,
    /// Supervision mask in model space (`S × S`).
    pub target: Mask,
    /// Supervision mask in the original image space.
    pub target_original: Mask,
    /// Points in model space.
    pub prompts: PromptSet,
}

/// Resize and pad a mask the same way the image was standardized.
pub fn standardize_mask(mask: &Mask, transform: &InputTransform) -> Result<Mask> {
    let resized = standardize_input(&Image3::gray(mask.to_plane()), transform.side)?;
    Ok(resized.image.channels[0].threshold(0.5))
}

/// Map points from original to model space (pixel containing the mapped
/// center).
pub fn map_prompts(set: &PromptSet, transform: &InputTransform) -> PromptSet {
    let max = (transform.side - 1) as f64;
    let mut out = set.clone();
    for p in &mut out.points {
        let (u, v) = transform.to_model(p.x as f64, p.y as f64);
        p.x = u.floor().clamp(0.0, max) as u32;
        p.y = v.floor().clamp(0.0, max) as u32;
    }
    out
}

fn layer_selection(config: &TrainConfig, sample: &OctaSample) -> Vec<String> {
    if config.layers.is_empty() {
        default_layer_selection(sample)
    } else {
        config.layers.clone()
    }
}

fn label_of<'a>(sample: &'a OctaSample, task: SegTask) -> Result<&'a Mask> {
    sample.label(task.name()).ok_or_else(|| Error::MissingLabel {
        id: sample.sample_id.clone(),
        task: task.name(),
    })
}

fn opposing_of(sample: &OctaSample, task: SegTask) -> Option<&Mask> {
    task.name().opposing().and_then(|t| sample.label(t))
}

/// Stack, standardize and (optionally) prompt one sample. `prompt_seed`
/// seeds both local-target selection and point generation.
pub fn prepare(
    sample: &OctaSample,
    config: &TrainConfig,
    prompt_seed: u64,
    prompter: Option<&mut dyn Prompter>,
) -> Result<Prepared> {
    let task = config.task;
    let image = stack_projections(sample, &layer_selection(config, sample))?;
    let input = standardize_input(&image, config.model.input_side)?;
    let label = label_of(sample, task)?;
    let prompt_cfg = config.prompts.clone().with_seed(prompt_seed);
    let (prompts, target_original) = match prompter {
        Some(prompter) => {
            let (set, target) = prompter.prompts(label, opposing_of(sample, task), &prompt_cfg)?;
            (map_prompts(&set, &input.transform), target)
        }
        None => {
            let target = match task.mode() {
                Mode::Global => label.clone(),
                Mode::Local => select_local_target(label, &prompt_cfg)?.local_target,
            };
            (PromptSet::empty(), target)
        }
    };
    Ok(Prepared {
        sample_id: sample.sample_id.clone(),
        target: standardize_mask(&target_original, &input.transform)?,
        target_original,
        input,
        prompts,
    })
}

fn mask_tensor(masks: &[&Mask], device: &Device) -> Result<Tensor> {
    let (w, h) = (masks[0].width(), masks[0].height());
    let data: Vec<f32> = masks.iter().flat_map(|m| m.data().iter().map(|&v| v as f32)).collect();
    Ok(Tensor::from_vec(data, (masks.len(), h, w), device)?)
}

fn skeleton_tensor(masks: &[&Mask], config: &LossConfig, device: &Device) -> Result<Tensor> {
    let (w, h) = (masks[0].width(), masks[0].height());
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        let soft = Grid::from_vec(w, h, m.data().iter().map(|&v| v as f64).collect())?;
        data.extend(soft_skeleton(&soft, config.skeleton_iterations).data().iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec(data, (masks.len(), h, w), device)?)
}

/// IoU of each thresholded candidate against its target, `(B, k)`.
fn candidate_ious(logits: &Tensor, targets: &[&Mask]) -> Result<Vec<Vec<f32>>> {
    let (b, k, _, _) = logits.dims4()?;
    let flat = logits.flatten_from(2)?.to_vec3::<f32>()?;
    let mut out = Vec::with_capacity(b);
    for (i, target) in targets.iter().enumerate() {
        let t = target.data();
        out.push(
            (0..k)
                .map(|j| {
                    let (mut inter, mut union) = (0usize, 0usize);
                    for (&l, &tv) in flat[i][j].iter().zip(t) {
                        let p = l > 0.0;
                        let tv = tv > 0;
                        inter += usize::from(p && tv);
                        union += usize::from(p || tv);
                    }
                    if union == 0 { 1.0 } else { inter as f32 / union as f32 }
                })
                .collect(),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    /// Model restored to the best validation epoch (or the initial state
    /// when no epoch ran).
    pub model: SegModel,
    pub checkpoint: AdapterCheckpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

fn check_labels(samples: &[OctaSample], task: SegTask) -> Result<()> {
    for s in samples {
        label_of(s, task)?;
    }
    Ok(())
}

/// Build the base model and install adapters as configured.
pub fn build_model(config: &TrainConfig) -> Result<SegModel> {
    let mut model = SegModel::new(config.model.clone(), config.base_seed)?;
    model.inject_lora(&config.lora)?;
    Ok(model)
}

/// One optimization step on a prepared batch. Returns the loss value.
pub fn train_step(
    model: &SegModel,
    optimizer: &mut AdamW,
    batch: &[Prepared],
    with_prompts: bool,
    loss_kind: LossKind,
    config: &TrainConfig,
) -> Result<f64> {
    let device = model.device().clone();
    let inputs: Vec<StandardizedInput> = batch.iter().map(|p| p.input.clone()).collect();
    let images = images_tensor(&inputs, &device)?;
    let sets: Vec<PromptSet> = if with_prompts {
        batch.iter().map(|p| p.prompts.clone()).collect()
    } else {
        vec![PromptSet::empty(); batch.len()]
    };
    let targets: Vec<&Mask> = batch.iter().map(|p| &p.target).collect();
    let target = mask_tensor(&targets, &device)?;
    let skeleton = match loss_kind {
        LossKind::ClDice => Some(skeleton_tensor(&targets, &config.loss, &device)?),
        LossKind::Dice => None,
    };

    let pred = model.forward(&images, &sets)?;
    let (best, _, _) = select_best_batch(&pred)?;
    let probs = candle_nn::ops::sigmoid(&best)?;
    let mut loss = task_loss(loss_kind, &probs, &target, skeleton.as_ref(), &config.loss)?.mean_all()?;
    if config.iou_weight > 0.0 {
        let ious = candidate_ious(&pred.logits.detach(), &targets)?;
        let ious = Tensor::new(ious, &device)?;
        let conf_loss = (&pred.confidences - ious)?.sqr()?.mean_all()?;
        loss = (loss + (conf_loss * config.iou_weight)?)?;
    }
    optimizer.backward_step(&loss)?;
    Ok(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// AdamW over the trainable parameters, starting at the schedule's initial rate.
pub fn new_optimizer(model: &SegModel, config: &TrainConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        model.params().trainable_vars(),
        ParamsAdamW {
            lr: config.schedule.lr_start,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        },
    )?)
}

/// Augment `sample`, falling back to the untouched sample when the
/// transform carries every foreground pixel of the task's label out of frame
/// (small targets near the border under rotation). Prompts cannot be drawn
/// from an empty target.
pub fn augment_for_training(sample: &OctaSample, task: SegTask, config: &AugmentationConfig, seed: u64) -> Result<OctaSample> {
    let augmented = augment(sample, config, seed)?;
    let erased = |s: &OctaSample| s.label(task.name()).is_some_and(|m| m.count_ones() == 0);
    Ok(if erased(&augmented) && !erased(sample) { sample.clone() } else { augmented })
}

/// Fine-tune adapters on `train`, tracking validation Dice each epoch and
/// keeping the best-scoring state.
pub fn train_fold(train: &[OctaSample], val: &[OctaSample], config: &TrainConfig) -> Result<FoldOutcome> {
    let config = config.clone().validated()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    check_labels(train, config.task)?;
    check_labels(val, config.task)?;

    let mut model = build_model(&config)?;
    let mut optimizer = new_optimizer(&model, &config)?;
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, AdapterCheckpoint)> = None;
    let mut prompter = LabelPrompter;
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = seed::rng(seed::combine(config.seed, epoch as u64));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut lr = config.schedule.lr_start;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let sample = &train[i];
                    let s = seed::derive(config.seed, &sample.sample_id, epoch as u64);
                    let augmented = augment_for_training(sample, config.task, &config.augmentation, s)?;
                    prepare(&augmented, &config, s, Some(&mut prompter))
                })
                .collect::<Result<Vec<_>>>()?;
            lr = config.schedule.lr_at(step, total_steps)?;
            optimizer.set_learning_rate(lr);
            let with_prompts = !(config.prompt_dropout > 0.0 && rng.random::<f64>() < config.prompt_dropout);
            loss_sum += train_step(&model, &mut optimizer, &batch, with_prompts, config.loss_kind_at(epoch), &config)? * chunk.len() as f64;
            step += 1;
        }
        let val_dice = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val, &config, true, config.seed, &mut prompter)?.dice_mean)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_dice,
            lr,
        });
        let score = val_dice.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, AdapterCheckpoint::from_model(&model, Some(config.task))?));
        }
    }

    let (checkpoint, best_epoch) = match best {
        Some((_, epoch, ckpt)) => {
            ckpt.apply(&mut model)?;
            (ckpt, Some(epoch))
        }
        None => (AdapterCheckpoint::from_model(&model, Some(config.task))?, None),
    };
    Ok(FoldOutcome {
        model,
        checkpoint,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub dice: f64,
    pub jaccard: f64,
    pub confidence: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub jaccard_mean: f64,
    pub jaccard_std: f64,
    pub per_sample: Vec<SampleScore>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(per_sample: Vec<SampleScore>) -> MetricSummary {
    let dice: Vec<f64> = per_sample.iter().map(|s| s.dice).collect();
    let jac: Vec<f64> = per_sample.iter().map(|s| s.jaccard).collect();
    let (dice_mean, dice_std) = mean_std(&dice);
    let (jaccard_mean, jaccard_std) = mean_std(&jac);
    MetricSummary {
        n: per_sample.len(),
        dice_mean,
        dice_std,
        jaccard_mean,
        jaccard_std,
        per_sample,
    }
}

/// Score a predicted probability map (model space) against the original
/// supervision mask.
pub fn score(probabilities: &Grid<f32>, prepared: &Prepared, threshold: f64, confidence: f32) -> Result<SampleScore> {
    let restored = prepared.input.transform.restore(probabilities)?;
    let pred = restored.map(|v| u8::from(v as f64 >= threshold));
    let counts = overlap(&pred, &prepared.target_original)?;
    Ok(SampleScore {
        sample_id: prepared.sample_id.clone(),
        dice: counts.dice(),
        jaccard: counts.jaccard(),
        confidence,
    })
}

const EVAL_BATCH: usize = 8;

/// Best-mask probabilities `(S × S)` and confidences for prepared samples.
pub fn predict_prepared(model: &SegModel, prepared: &[Prepared], with_prompts: bool) -> Result<Vec<(Grid<f32>, f32)>> {
    let side = model.config().input_side;
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(EVAL_BATCH) {
        let inputs: Vec<StandardizedInput> = chunk.iter().map(|p| p.input.clone()).collect();
        let images = images_tensor(&inputs, model.device())?;
        let sets: Vec<PromptSet> = if with_prompts {
            chunk.iter().map(|p| p.prompts.clone()).collect()
        } else {
            vec![PromptSet::empty(); chunk.len()]
        };
        let pred = model.forward(&images, &sets)?;
        let conf = pred.confidences.to_vec2::<f32>()?;
        let probs = candle_nn::ops::sigmoid(&pred.logits)?;
        for (b, row) in conf.iter().enumerate() {
            let best = select_best(row);
            let data = probs.get(b)?.get(best)?.flatten_all()?.to_vec1::<f32>()?;
            out.push((Grid::from_vec(side, side, data)?, row[best]));
        }
    }
    Ok(out)
}

/// Per-sample Dice/Jaccard of the best mask. Prompts use a fixed seed per
/// sample; with prompts disabled the prompter is never consulted.
pub fn evaluate(
    model: &SegModel,
    samples: &[OctaSample],
    config: &TrainConfig,
    prompts_enabled: bool,
    eval_seed: u64,
    prompter: &mut dyn Prompter,
) -> Result<MetricSummary> {
    check_labels(samples, config.task)?;
    let mut prepared = Vec::with_capacity(samples.len());
    for sample in samples {
        let s = seed::derive(eval_seed, &sample.sample_id, EVAL_EPOCH);
        let p = if prompts_enabled {
            prepare(sample, config, s, Some(&mut *prompter))?
        } else {
            prepare(sample, config, s, None)?
        };
        prepared.push(p);
    }
    let preds = predict_prepared(model, &prepared, prompts_enabled)?;
    let scores = prepared
        .iter()
        .zip(&preds)
        .map(|(p, (probs, conf))| score(probs, p, config.loss.metric_threshold, *conf))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(scores))
}

/// Evaluate an adapter checkpoint, rebuilding its model first.
pub fn evaluate_checkpoint(
    checkpoint: &AdapterCheckpoint,
    samples: &[OctaSample],
    config: &TrainConfig,
    prompts_enabled: bool,
    eval_seed: u64,
) -> Result<MetricSummary> {
    let mut model = build_model(config)?;
    checkpoint.apply(&mut model)?;
    evaluate(&model, samples, config, prompts_enabled, eval_seed, &mut LabelPrompter)
}

/// Per-id lookup used by cross-validation.
pub fn by_id(samples: &[OctaSample]) -> BTreeMap<&str, &OctaSample> {
    samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
}
