use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::autodiff::{Tape, Var};
use crate::model::{argmax, Dropout, ForwardOutput, VisionTransformer};
use crate::rng::{streams, SeedRng};
use crate::tensor::Tensor;
use crate::train::{
    layerdrop_mask, shuffle_layers, total_loss, AdamConfig, AdamState, PositionTarget, TrainMode,
};

/// Extra stream for the adapters added to a model before training.
const ADAPTER_STREAM: u64 = 101;
const VALIDATION_STREAM: u64 = 102;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Validate every this many epochs (the last epoch always validates).
    pub validate_every: usize,
    /// Restrict training and validation to these layers (zero-based).
    pub layers_subset: Option<Vec<usize>>,
    /// Where `train` writes the best checkpoint, if anywhere.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Baseline,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            lr: AdamConfig::default().lr,
            validate_every: 1,
            layers_subset: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, layers: usize) -> Result<()> {
        self.mode.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.validate_every == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch size and validation cadence must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.lr)));
        }
        if let Some(subset) = &self.layers_subset {
            crate::model::validate_order(subset, layers)?;
            if subset.is_empty() {
                return Err(Error::InvalidConfig("empty layer subset".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl EpochMetrics {
    /// `epoch, train_loss, val_loss, val_acc, mode, seed`, tab-separated.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.epoch, self.train_loss, self.val_loss, self.val_acc, self.mode, self.seed
        )
    }
}

pub fn metrics_log(log: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for m in log {
        writeln!(out, "{}", m.to_line()).unwrap();
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss seen.
    pub best: VisionTransformer,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub log: Vec<EpochMetrics>,
}

/// Adds whatever adapters `mode` needs and that `model` lacks.
pub fn prepare_model(model: &mut VisionTransformer, mode: TrainMode, seed: u64) {
    let mut rng = SeedRng::stream(seed, ADAPTER_STREAM);
    let cfg = model.config.clone();
    match mode {
        TrainMode::LayerShufflePosition => model.params.add_position_encoding(&cfg, &mut rng),
        TrainMode::LayerShufflePredict => model.params.add_position_predictor(&cfg, &mut rng),
        _ => {}
    }
}

/// One optimizer update on a batch with a fixed layer order. Returns the
/// batch loss.
pub fn train_step(
    model: &mut VisionTransformer,
    adam: &mut AdamState,
    images: &[&[f32]],
    labels: &[usize],
    order: &[usize],
    dropout_rng: &mut SeedRng,
) -> Result<f64> {
    let p = model.config.dropout;
    let (mut tape, bound, out) = model.run(images, order, &mut Dropout::train(p, dropout_rng))?;
    let loss = objective(&mut tape, model, &out, labels, order.len())?;
    let value = tape.value(loss).item() as f64;
    let grads = tape.backward(loss)?;
    let grads: Vec<Option<Tensor>> = bound
        .leaves()
        .into_iter()
        .map(|&v| grads.get(v).cloned())
        .collect();
    adam.step_params(&mut model.params, &grads)?;
    Ok(value)
}

/// Layers available to a run: the configured subset or all of them.
fn base_layers(cfg: &TrainConfig, layers: usize) -> Vec<usize> {
    match &cfg.layers_subset {
        Some(s) => {
            let mut s = s.clone();
            s.sort_unstable();
            s
        }
        None => (0..layers).collect(),
    }
}

/// Execution order for one training batch under `mode`.
pub fn training_order(mode: TrainMode, base: &[usize], rng: &mut SeedRng) -> Vec<usize> {
    match mode {
        TrainMode::Baseline => base.to_vec(),
        TrainMode::LayerDrop(p) => layerdrop_mask(rng, base.len(), p)
            .into_iter()
            .map(|i| base[i])
            .collect(),
        _ => shuffle_layers(rng, base),
    }
}

/// The training loss: classification cross-entropy plus, for models with
/// position predictors, every layer's position cross-entropy.
fn objective(
    tape: &mut Tape<f32>,
    model: &VisionTransformer,
    out: &ForwardOutput,
    labels: &[usize],
    depth: usize,
) -> Result<Var> {
    let predictions: Vec<PositionTarget> = out
        .layers
        .iter()
        .filter_map(|r| {
            r.position_logits.map(|logits| PositionTarget {
                logits,
                position: r.position,
            })
        })
        .collect();
    let required = model.params.has_predictor().then_some(depth);
    total_loss(tape, out.logits, labels, &predictions, required)
}

/// Mean loss (the training objective) and accuracy on `split`, batch by batch. Shuffling
/// modes draw a fresh order per batch from `rng`; the rest run `base` in
/// order.
pub fn validate(
    model: &VisionTransformer,
    split: &Split,
    mode: TrainMode,
    base: &[usize],
    batch_size: usize,
    rng: &mut SeedRng,
) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let order = if mode.shuffles() {
            shuffle_layers(rng, base)
        } else {
            base.to_vec()
        };
        let labels = split.labels_of(chunk);
        let (mut tape, _, out) = model.run(&split.images(chunk), &order, &mut Dropout::off())?;
        let ce = objective(&mut tape, model, &out, &labels, order.len())?;
        loss_sum += tape.value(ce).item() as f64 * chunk.len() as f64;
        let logits = tape.value(out.logits);
        correct += labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(logits.row(i)) == y)
            .count();
    }
    Ok((loss_sum / split.len() as f64, correct as f64 / split.len() as f64))
}

/// Adam training with best-validation-loss model selection.
pub fn train(
    mut model: VisionTransformer,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model.config.validate()?;
    cfg.validate(model.layers())?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    prepare_model(&mut model, cfg.mode, cfg.seed);

    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    };
    let mut adam = AdamState::new(adam_cfg, &model.params.leaves());
    let mut batch_rng = SeedRng::stream(cfg.seed, streams::BATCHES);
    let mut order_rng = SeedRng::stream(cfg.seed, streams::SHUFFLE);
    let mut dropout_rng = SeedRng::stream(cfg.seed, streams::DROPOUT);
    let base = base_layers(cfg, model.layers());

    let mut best: Option<(f64, usize, VisionTransformer)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut batch_rng);
        let mut loss_sum = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let order = training_order(cfg.mode, &base, &mut order_rng);
            let images = data.train.images(chunk);
            let labels = data.train.labels_of(chunk);
            let loss = train_step(
                &mut model,
                &mut adam,
                &images,
                &labels,
                &order,
                &mut dropout_rng,
            )?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / data.train.len() as f64;

        if epoch % cfg.validate_every != 0 && epoch != cfg.epochs {
            continue;
        }
        // Same validation orders every epoch so losses are comparable.
        let mut val_rng = SeedRng::stream(cfg.seed, VALIDATION_STREAM);
        let (val_loss, val_acc) =
            validate(&model, &data.val, cfg.mode, &base, cfg.batch_size, &mut val_rng)?;
        log.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            mode: cfg.mode,
            seed: cfg.seed,
        });
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.clone()));
        }
    }

    let (best_val_loss, best_epoch, best) = best.expect("at least one validation");
    if let Some(path) = &cfg.checkpoint_path {
        crate::checkpoint::Checkpoint::from_model(&best, cfg.mode, cfg.seed, best_val_loss)
            .with_data_seed(data.spec.seed)
            .save(path)?;
    }
    Ok(TrainOutcome {
        best,
        best_val_loss,
        best_epoch,
        log,
    })
}
