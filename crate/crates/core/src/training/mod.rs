//! Training loop with early stopping, dropout and augmentation wiring, plus
//! pre-train/fine-tune orchestration.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentConfig, Dataset, ImageSample};
use crate::engine::{loss, LossKind, Mode, OptimizerKind, OptimizerState, SeededRng, Tensor};
use crate::error::{io_err, Result, SddsError};
use crate::evaluation::{foreground_plane, metrics, one_vs_all_collapse, optimize_threshold_sums, Averaging};
use crate::models::{build_model, transfer_weights, HeadKind, ModelSpec, ModelState, TransferMode, TransferPlan,
    TransferReport, WeightSource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    /// Epochs without improvement tolerated before stopping.
    pub patience: usize,
    /// Minimum validation-loss decrease that counts as improvement.
    pub min_delta: f64,
    pub restore_best: bool,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { patience: 5, min_delta: 1e-4, restore_best: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Monitors validation loss. `None` runs all `max_epochs`.
    pub early_stopping: Option<EarlyStopping>,
    /// Overrides the model's dropout rate when set.
    pub dropout: Option<f64>,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 60,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            early_stopping: Some(EarlyStopping::default()),
            dropout: None,
            augment: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SddsError::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if let Some(es) = &self.early_stopping {
            if es.patience == 0 {
                return bad("patience must be at least 1");
            }
            if !(es.min_delta >= 0.0) {
                return bad("min_delta must be non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    /// Epoch with the lowest validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.epochs {
            w.serialize(e)?;
        }
        let bytes = w.into_inner().map_err(|e| SddsError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(io_err(path))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    Improved,
    Waiting,
    Stop,
}

/// Validation-loss early-stopping rule.
#[derive(Clone, Debug)]
pub struct StopTracker {
    rule: EarlyStopping,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl StopTracker {
    pub fn new(rule: EarlyStopping) -> Self {
        Self { rule, best: f64::INFINITY, best_epoch: 0, wait: 0 }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observation {
        if val_loss < self.best - self.rule.min_delta {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return Observation::Improved;
        }
        self.wait += 1;
        if self.wait >= self.rule.patience {
            Observation::Stop
        } else {
            Observation::Waiting
        }
    }
}

/// Epoch driver shared by [`train`] and tests: runs `run_epoch` until
/// `max_epochs` or the stopping rule fires, restoring the best snapshot
/// when configured.
pub fn fit<M: Clone>(
    mut model: M,
    max_epochs: usize,
    stopping: Option<&EarlyStopping>,
    mut run_epoch: impl FnMut(&mut M, usize) -> Result<EpochRecord>,
) -> Result<(M, TrainHistory)> {
    let mut tracker = stopping.cloned().map(StopTracker::new);
    let restore = stopping.is_some_and(|s| s.restore_best);
    let mut best_model: Option<M> = None;
    let mut history = TrainHistory::default();
    for epoch in 1..=max_epochs {
        let record = run_epoch(&mut model, epoch)?;
        let val_loss = record.val_loss;
        history.epochs.push(record);
        history.stopped_epoch = epoch;
        if let Some(t) = tracker.as_mut() {
            match t.observe(epoch, val_loss) {
                Observation::Improved if restore => best_model = Some(model.clone()),
                Observation::Stop => break,
                _ => {}
            }
        }
    }
    history.best_epoch = history
        .epochs
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.epoch.cmp(&b.epoch)))
        .map_or(0, |e| e.epoch);
    if let Some(t) = &tracker {
        history.best_epoch = t.best_epoch();
    }
    Ok((best_model.unwrap_or(model), history))
}

/// Checks that every sample carries what the head trains on.
pub fn check_labels(head: HeadKind, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(SddsError::Empty(format!("split of {}", data.name)));
    }
    for s in &data.samples {
        let id = || format!("part {} segment {}", s.part_id, s.segment);
        match head {
            HeadKind::Binary => {}
            HeadKind::Multiclass { classes } if (s.label as usize) < classes => {}
            HeadKind::Multiclass { classes } => {
                return Err(SddsError::InvalidTarget(format!("{}: label {} for {classes} classes", id(), s.label)))
            }
            HeadKind::Segmentation { defect_classes } => match &s.mask {
                None => return Err(SddsError::InvalidTarget(format!("{}: segmentation needs a mask", id()))),
                Some(m) if m.data().iter().any(|&v| v as usize > defect_classes) => {
                    return Err(SddsError::InvalidTarget(format!("{}: mask class above {defect_classes}", id())))
                }
                Some(_) => {}
            },
        }
    }
    Ok(())
}

fn loss_kind(head: HeadKind) -> LossKind {
    match head {
        HeadKind::Binary => LossKind::Bce,
        HeadKind::Multiclass { .. } => LossKind::Ce,
        HeadKind::Segmentation { .. } => LossKind::PixelwiseCe,
    }
}

fn batch_tensors(head: HeadKind, samples: &[&ImageSample]) -> Result<(Tensor, Tensor)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let x = Tensor::stack(&images)?;
    let n = samples.len();
    let y = match head {
        HeadKind::Binary => Tensor::new(vec![n, 1], samples.iter().map(|s| f64::from(u8::from(s.is_defective()))).collect())?,
        HeadKind::Multiclass { classes } => {
            let mut t = Tensor::zeros(&[n, classes]);
            for (i, s) in samples.iter().enumerate() {
                t.data_mut()[i * classes + s.label as usize] = 1.0;
            }
            t
        }
        HeadKind::Segmentation { defect_classes } => {
            let k = defect_classes + 1;
            let (h, w) = (samples[0].height(), samples[0].width());
            let mut t = Tensor::zeros(&[n, h, w, k]);
            let data = t.data_mut();
            for (i, s) in samples.iter().enumerate() {
                let mask = s.mask.as_ref().ok_or_else(|| SddsError::InvalidTarget("missing mask".into()))?;
                for (p, &c) in mask.data().iter().enumerate() {
                    data[(i * h * w + p) * k + c as usize] = 1.0;
                }
            }
            t
        }
    };
    Ok((x, y))
}

/// Batch size used for evaluation passes; only affects memory.
pub const EVAL_BATCH: usize = 32;

/// Eval-mode outputs per sample (batch axis dropped) plus the mean loss
/// over `data`.
pub fn evaluate(model: &ModelState, data: &Dataset) -> Result<(f64, Vec<Tensor>)> {
    check_labels(model.head(), data)?;
    let head = model.head();
    let mut total = 0.0;
    let mut outputs = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(EVAL_BATCH) {
        let refs: Vec<&ImageSample> = chunk.iter().collect();
        let (x, y) = batch_tensors(head, &refs)?;
        let out = model.predict(&x)?;
        let (l, _) = loss(loss_kind(head), &out, &y)?;
        total += l * chunk.len() as f64;
        for i in 0..chunk.len() {
            let one = out.sample(i)?;
            let shape = one.shape()[1..].to_vec();
            outputs.push(one.reshape(shape)?);
        }
    }
    Ok((total / data.len() as f64, outputs))
}

/// Per-sample defect score: sigmoid output, `1 - p(ok)`, or summed
/// foreground probability of the predicted mask.
pub fn defect_scores(head: HeadKind, outputs: &[Tensor]) -> Result<Vec<f64>> {
    outputs
        .iter()
        .map(|o| match head {
            HeadKind::Binary => Ok(o.data()[0]),
            HeadKind::Multiclass { .. } => Ok(1.0 - o.data()[0]),
            HeadKind::Segmentation { .. } => Ok(foreground_plane(o)?.sum()),
        })
        .collect()
}

/// Argmax class per sample of a classifier output.
pub fn predicted_classes(outputs: &[Tensor]) -> Vec<u8> {
    outputs
        .iter()
        .map(|o| {
            let d = o.data();
            if d.len() == 1 {
                return u8::from(d[0] > 0.5);
            }
            (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best }) as u8
        })
        .collect()
}

/// Binary verdicts from outputs. Segmentation needs a mask-sum threshold.
pub fn binary_verdicts(head: HeadKind, outputs: &[Tensor], threshold: Option<f64>) -> Result<Vec<u8>> {
    match head {
        HeadKind::Binary | HeadKind::Multiclass { .. } => Ok(predicted_classes(outputs).iter().map(|&c| u8::from(c > 0)).collect()),
        HeadKind::Segmentation { .. } => {
            let t = threshold.ok_or_else(|| SddsError::Config("segmentation verdicts need a threshold".into()))?;
            Ok(defect_scores(head, outputs)?.iter().map(|&s| u8::from(s > t)).collect())
        }
    }
}

/// Binary F1 on `data`; segmentation picks its threshold on `data` itself.
fn validation_f1(head: HeadKind, outputs: &[Tensor], data: &Dataset) -> Result<f64> {
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    let (_, y) = one_vs_all_collapse(&labels, &labels);
    let threshold = match head {
        HeadKind::Segmentation { .. } => Some(optimize_threshold_sums(&defect_scores(head, outputs)?, &y)?.0),
        _ => None,
    };
    let pred = binary_verdicts(head, outputs, threshold)?;
    Ok(metrics(&pred, &y, Averaging::Binary)?.f1)
}

fn train_epoch(
    model: &mut ModelState,
    optimizer: &mut OptimizerState,
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    let head = model.head();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(config.batch_size) {
        let owned: Vec<ImageSample>;
        let refs: Vec<&ImageSample> = match &config.augment {
            Some(cfg) => {
                owned = chunk.iter().map(|&i| augment(&data.samples[i], cfg, rng)).collect();
                owned.iter().collect()
            }
            None => chunk.iter().map(|&i| &data.samples[i]).collect(),
        };
        let (x, y) = batch_tensors(head, &refs)?;
        let out = model.forward(&x, Mode::Train, Some(rng))?;
        let (l, grad) = loss(loss_kind(head), &out, &y)?;
        model.backward(&grad)?;
        optimizer.step(model.network_mut())?;
        total += l * chunk.len() as f64;
    }
    model.network_mut().clear_tape();
    Ok(total / data.len() as f64)
}

/// Trains `model` on `train`, monitoring validation loss on `val`.
/// Augmentation touches training batches only; validation is a fixed,
/// eval-mode pass.
pub fn train(model: ModelState, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<(ModelState, TrainHistory)> {
    config.validate()?;
    check_labels(model.head(), train)?;
    check_labels(model.head(), val)?;
    let model = match config.dropout {
        Some(rate) => model.with_dropout(rate)?,
        None => model,
    };
    let head = model.head();
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate);
    fit(model, config.max_epochs, config.early_stopping.as_ref(), |m, epoch| {
        let train_loss = train_epoch(m, &mut optimizer, train, config, &mut rng)?;
        let (val_loss, outputs) = evaluate(m, val)?;
        let val_f1 = validation_f1(head, &outputs, val)?;
        Ok(EpochRecord { epoch, train_loss, val_loss, val_f1 })
    })
}

/// One training phase: architecture, data and hyperparameters.
#[derive(Clone, Debug)]
pub struct Phase<'a> {
    pub spec: ModelSpec,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub config: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: ModelState,
    pub source_history: Option<TrainHistory>,
    pub target_history: TrainHistory,
    pub transfer: Option<TransferReport>,
}

/// Seed of the fresh head after transfer, derived from the phase seed.
pub fn head_seed(seed: u64) -> u64 {
    seed ^ 0x6865_6164
}

/// Trains the source phase, hands its weights over (through `weights_path`
/// when given, in memory otherwise) and fine-tunes on the target phase.
/// Mode `none` skips the source phase entirely.
pub fn pretrain_then_finetune(
    source: Option<&Phase>,
    target: &Phase,
    mode: TransferMode,
    weights_path: Option<&Path>,
) -> Result<FinetuneOutcome> {
    let scratch = build_model(&target.spec, target.config.seed)?;
    if mode == TransferMode::None {
        let (model, target_history) = train(scratch, target.train, target.val, &target.config)?;
        return Ok(FinetuneOutcome { model, source_history: None, target_history, transfer: None });
    }
    let source = source.ok_or_else(|| SddsError::Config(format!("transfer mode {mode:?} needs a source phase")))?;
    let (src_model, source_history) =
        train(build_model(&source.spec, source.config.seed)?, source.train, source.val, &source.config)?;
    let weights = match weights_path {
        Some(p) => {
            src_model.save(p)?;
            WeightSource::File(p.to_path_buf())
        }
        None => WeightSource::Model(Box::new(src_model)),
    };
    let plan = TransferPlan::new(mode, weights, head_seed(target.config.seed));
    let (init, report) = transfer_weights(scratch, &plan)?;
    let (model, target_history) = train(init, target.train, target.val, &target.config)?;
    Ok(FinetuneOutcome { model, source_history: Some(source_history), target_history, transfer: Some(report) })
}
