//! The optimisation loop shared by training, pretraining and fine-tuning.

use hsi_core::rng::{key_u64, keyed_rng};
use hsi_core::sampler::{mixed_batch_schedule, sequential_batches, MixedBatch, SampleSource};
use hsi_core::splits::SplitTag;
use hsi_models::{BackboneHeadModel, OptimizerKind};
use hsi_nn::loss::argmax_rows;
use hsi_nn::{softmax_cross_entropy, Adam, Layer, Mode, Sgd};
use ndarray::{ArrayD, Ix2};
use serde::{Deserialize, Serialize};

use crate::config::{PretrainPlan, TrainConfig};
use crate::data::{gather, AugmentAt, PreparedConfig};
use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Unweighted mean over configurations.
    pub val_loss: f64,
    pub val_losses: Vec<f64>,
    /// Mean training-split accuracy in inference mode, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub configs: Vec<String>,
    /// Rate of the first epoch (`lr0 / N` when pretraining).
    pub base_lr: f64,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Per batch, the number of samples of each configuration.
    pub batch_counts: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

enum Optimizer {
    Adam(Adam<f32>),
    Sgd(Sgd<f32>),
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(Adam::new(lr)),
            OptimizerKind::Sgd => Self::Sgd(Sgd::new(lr, 0.9)),
        }
    }

    fn set_lr(&mut self, lr: f64) {
        match self {
            Self::Adam(o) => o.lr = lr,
            Self::Sgd(o) => o.lr = lr,
        }
    }

    fn step(&mut self, model: &mut dyn Layer<f32>) {
        match self {
            Self::Adam(o) => o.step(model),
            Self::Sgd(o) => o.step(model),
        };
    }
}

fn head_key(seed: u64, id: &str) -> [u64; 2] {
    [seed, key_u64(id, &[])]
}

/// Attaches a head for `data` unless one exists.
pub fn ensure_head(model: &mut BackboneHeadModel, data: &PreparedConfig, seed: u64) -> Result<()> {
    let id = data.id();
    if model.head(&id).is_none() {
        model.attach_head(
            &id,
            data.classes,
            data.grid.as_deref(),
            &mut keyed_rng("head-init", &head_key(seed, &id)),
        )?;
    }
    Ok(())
}

fn diverged(epoch: usize, batch: usize, config: &str, e: impl std::fmt::Display) -> TrainError {
    TrainError::Diverged { epoch, batch, config: config.to_string(), detail: e.to_string() }
}

/// Accumulates the gradient of `sum(CE) / batch size` over one mixed batch,
/// one forward/backward pass per configuration group, and returns the mean loss.
pub fn batch_gradients(
    model: &mut BackboneHeadModel,
    datas: &[&PreparedConfig],
    batch: &MixedBatch,
    augment: Option<AugmentAt<'_>>,
    position: (usize, usize),
) -> Result<f64> {
    hsi_nn::zero_grad(model);
    let total = batch.entries.len() as f32;
    let mut loss = 0.0;
    let mut slot = 0;
    for (k, d) in datas.iter().enumerate() {
        let idx: Vec<usize> = batch.entries.iter().filter(|(c, _)| *c == k).map(|(_, i)| *i).collect();
        if idx.is_empty() {
            continue;
        }
        let id = d.id();
        model.switch_head(&id)?;
        let (x, labels) = gather(d.train.as_ref(), &idx, augment, slot);
        slot += idx.len();
        let (y, cache) = model.forward(x, Mode::Train)?;
        let logits = y.into_dimensionality::<Ix2>().map_err(|e| TrainError::Invalid(e.to_string()))?;
        let (losses, grad) =
            softmax_cross_entropy(logits.view(), &labels).map_err(|e| diverged(position.0, position.1, &id, e))?;
        model.backward(cache, (grad / total).into_dyn())?;
        loss += losses.iter().sum::<f64>();
    }
    if !loss.is_finite() {
        return Err(diverged(position.0, position.1, "batch", format!("loss {loss}")));
    }
    Ok(loss / total as f64)
}

/// Accuracy, mean loss and confusion matrix of `src` through head `head`.
pub fn evaluate_source(
    model: &mut BackboneHeadModel,
    src: &dyn SampleSource,
    head: &str,
    batch_size: usize,
) -> Result<Evaluation> {
    if src.is_empty() {
        return Err(TrainError::EmptySplit { config: src.config().id(), split: src.split().as_str() });
    }
    model.switch_head(head)?;
    let classes = model.head(head).map(|h| h.classes).unwrap_or(src.class_count());
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut loss = 0.0;
    for range in sequential_batches(src.len(), batch_size) {
        let idx: Vec<usize> = range.collect();
        let (x, labels) = gather(src, &idx, None, 0);
        let (y, _) = model.forward(x, Mode::Eval)?;
        let logits = y.into_dimensionality::<Ix2>().map_err(|e| TrainError::Invalid(e.to_string()))?;
        let (l, _) = softmax_cross_entropy(logits.view(), &labels)?;
        loss += l.iter().sum::<f64>();
        for (t, p) in labels.iter().zip(argmax_rows(logits.view())) {
            confusion[*t][p] += 1;
        }
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let n = src.len();
    Ok(Evaluation {
        samples: n,
        correct: correct as usize,
        accuracy: correct as f64 / n as f64,
        mean_loss: loss / n as f64,
        confusion,
    })
}

/// Evaluates split `tag` of `data` through its head.
pub fn evaluate(
    model: &mut BackboneHeadModel,
    data: &PreparedConfig,
    tag: SplitTag,
    batch_size: usize,
) -> Result<Evaluation> {
    evaluate_source(model, data.source(tag).as_ref(), &data.id(), batch_size)
}

fn fit(
    model: &mut BackboneHeadModel,
    datas: &[&PreparedConfig],
    cfg: &TrainConfig,
    base_lr: f64,
    seed: u64,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let n = datas.len();
    if cfg.batch_size < 2 * n {
        return Err(TrainError::Invalid(format!(
            "batch size {} leaves fewer than two samples per configuration for {n} configurations",
            cfg.batch_size
        )));
    }
    for d in datas {
        d.check_isolation()?;
        if d.train.split() != SplitTag::Train || d.val.split() != SplitTag::Val {
            return Err(TrainError::Leak(format!("{}: sources are not tagged train/val", d.id())));
        }
        if model.head(&d.id()).is_none() {
            return Err(TrainError::Invalid(format!("no head attached for {}", d.id())));
        }
    }
    let labels: Vec<Vec<u16>> = datas.iter().map(|d| d.train.labels()).collect();
    let classes: Vec<usize> = datas.iter().map(|d| d.classes).collect();
    let schedule = mixed_batch_schedule(&labels, &classes, cfg.batch_size, seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, base_lr);
    let mut out = FitOutcome {
        configs: datas.iter().map(|d| d.id()).collect(),
        base_lr,
        history: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        epochs_run: 0,
        stopped_early: false,
        batch_counts: Vec::new(),
    };
    let mut best_state: Option<Vec<(String, ArrayD<f32>)>> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_from(base_lr, epoch);
        opt.set_lr(lr);
        let mut train_loss = 0.0;
        let batches = schedule.epoch_len();
        for b in 0..batches {
            let mb = schedule.batch(epoch, b);
            out.batch_counts.push((0..n).map(|k| mb.count_for(k)).collect());
            let aug = cfg.augment.as_ref().map(|spec| AugmentAt { spec, seed, epoch, batch: b });
            train_loss += batch_gradients(model, datas, &mb, aug, (epoch, b))?;
            opt.step(model);
        }
        let val_losses = datas
            .iter()
            .map(|d| evaluate(model, d, SplitTag::Val, cfg.eval_batch_size).map(|e| e.mean_loss))
            .collect::<Result<Vec<_>>>()?;
        let val_loss = val_losses.iter().sum::<f64>() / n as f64;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, batches, "validation", format!("loss {val_loss}")));
        }
        let train_accuracy = if cfg.track_train_accuracy {
            let accs = datas
                .iter()
                .map(|d| evaluate(model, d, SplitTag::Train, cfg.eval_batch_size).map(|e| e.accuracy))
                .collect::<Result<Vec<_>>>()?;
            Some(accs.iter().sum::<f64>() / n as f64)
        } else {
            None
        };
        let train_loss = train_loss / batches.max(1) as f64;
        log::debug!("epoch {epoch}: lr {lr:e} train {train_loss:.4} val {val_loss:.4}");
        out.history.push(EpochLog { epoch, lr, train_loss, val_loss, val_losses, train_accuracy });
        out.epochs_run = epoch + 1;
        if val_loss < out.best_val_loss {
            out.best_val_loss = val_loss;
            out.best_epoch = epoch;
            best_state = Some(hsi_nn::state_dict(model as &dyn Layer<f32>));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                out.stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }
    if let Some(state) = best_state {
        hsi_nn::load_state(model as &mut dyn Layer<f32>, &state)?;
    }
    if let Some(d) = datas.first() {
        model.switch_head(&d.id())?;
    }
    Ok(out)
}

/// Trains on one configuration and restores the best-validation state.
pub fn train(model: &mut BackboneHeadModel, data: &PreparedConfig, cfg: &TrainConfig, seed: u64) -> Result<FitOutcome> {
    ensure_head(model, data, seed)?;
    fit(model, &[data], cfg, cfg.lr0, seed)
}

/// Joint training on all `datas` with one head each and rate `lr0 / N`.
/// Wavelength coverage of every configuration is checked before any step.
pub fn pretrain(
    model: &mut BackboneHeadModel,
    datas: &[&PreparedConfig],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let plan = PretrainPlan::new(datas.iter().map(|d| d.id()).collect())?;
    for d in datas {
        if model.is_wavelength_based() && d.grid.is_none() {
            return Err(TrainError::Invalid(format!("{}: preprocessing discards wavelengths", d.id())));
        }
        ensure_head(model, d, seed)?;
    }
    fit(model, datas, cfg, plan.lr(cfg.lr0), seed)
}

/// Replaces the heads by a fresh one for `target` and trains end to end.
pub fn finetune(
    model: &mut BackboneHeadModel,
    target: &PreparedConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome> {
    let id = target.id();
    model.reinit_head_for_finetune(
        &id,
        target.classes,
        target.grid.as_deref(),
        &mut keyed_rng("head-init", &head_key(seed, &id)),
    )?;
    fit(model, &[target], cfg, cfg.lr0, seed)
}
