//! Test-time evaluation under sequential, arbitrary, fixed and pruned layer
//! orders, plus the class-token contribution and embedding analyses.

mod analysis;

pub use analysis::{
    contribution_analysis, dump_embeddings, sample_indices, ContributionRecord,
    ContributionReport, ContributionSummary, EmbeddingDump, EmbeddingRecord, HISTOGRAM_BINS,
};

use std::fmt;

use rand::seq::index;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::{argmax, validate_order, Permutation, VisionTransformer};
use crate::rng::{streams, SeedRng};
use crate::train::shuffle_layers;

/// Images per forward pass when the order does not change between images.
const EVAL_BATCH: usize = 100;

/// Subsets drawn per keep count in [`prune_curve`].
pub const PRUNE_SUBSETS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderMode {
    Sequential,
    Arbitrary,
}

impl fmt::Display for OrderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderMode::Sequential => "sequential",
            OrderMode::Arbitrary => "arbitrary",
        })
    }
}

/// Which layers survive pruning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeepSpec {
    /// This many layers, chosen uniformly without replacement per repeat.
    Count(usize),
    /// Exactly these layers (zero-based).
    Subset(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalOrderSpec {
    Sequential,
    /// Fresh uniform permutation for every image.
    ArbitraryPerPass,
    Fixed(Permutation),
    Pruned { keep: KeepSpec, order: OrderMode },
}

impl EvalOrderSpec {
    pub fn validate(&self, layers: usize) -> Result<()> {
        match self {
            EvalOrderSpec::Fixed(p) if p.len() != layers => Err(Error::InvalidArgument(format!(
                "fixed order has {} layers, model has {layers}",
                p.len()
            ))),
            EvalOrderSpec::Pruned {
                keep: KeepSpec::Count(k),
                ..
            } if *k == 0 || *k > layers => Err(Error::InvalidArgument(format!(
                "keep count {k} outside 1..={layers}"
            ))),
            EvalOrderSpec::Pruned {
                keep: KeepSpec::Subset(s),
                ..
            } => {
                if s.is_empty() {
                    return Err(Error::InvalidArgument("empty layer subset".into()));
                }
                validate_order(s, layers)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub accuracies: Vec<f64>,
    /// Predicted class per image, one vector per repeat.
    pub predictions: Vec<Vec<usize>>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Predicted classes for every image in `split`, with a fixed layer order.
pub fn predict_fixed(model: &VisionTransformer, split: &Split, order: &[usize]) -> Result<Vec<usize>> {
    let indices: Vec<usize> = (0..split.len()).collect();
    let mut out = Vec::with_capacity(split.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = model.logits(&split.images(chunk), order)?;
        out.extend((0..chunk.len()).map(|i| argmax(logits.row(i))));
    }
    Ok(out)
}

/// Predicted classes with a fresh shuffle of `layers` for each image,
/// drawn from `rng` in image order.
pub fn predict_shuffled(
    model: &VisionTransformer,
    split: &Split,
    layers: &[usize],
    rng: &mut SeedRng,
) -> Result<Vec<usize>> {
    (0..split.len())
        .map(|i| {
            let order = shuffle_layers(rng, layers);
            let logits = model.logits(&[split.image(i)], &order)?;
            Ok(argmax(logits.row(0)))
        })
        .collect()
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Zero-based surviving layers in increasing order.
fn surviving(keep: &KeepSpec, layers: usize, rng: &mut SeedRng) -> Vec<usize> {
    let mut s = match keep {
        KeepSpec::Count(k) => index::sample(rng, layers, *k).into_vec(),
        KeepSpec::Subset(s) => s.clone(),
    };
    s.sort_unstable();
    s
}

/// Classification accuracy over `repeats` passes through `split`.
///
/// Per-image orders come from the `ORDER` stream of `seed` and pruned
/// subsets from the `SUBSET` stream, so `Pruned { keep: Count(L), .. }`
/// reproduces the unpruned result exactly. Dropout is off.
pub fn evaluate(
    model: &VisionTransformer,
    split: &Split,
    spec: &EvalOrderSpec,
    repeats: usize,
    seed: u64,
) -> Result<EvalSummary> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let layers = model.layers();
    spec.validate(layers)?;
    let all: Vec<usize> = (0..layers).collect();
    let mut order_rng = SeedRng::stream(seed, streams::ORDER);
    let mut subset_rng = SeedRng::stream(seed, streams::SUBSET);

    let mut predictions = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let preds = match spec {
            EvalOrderSpec::Sequential => predict_fixed(model, split, &all)?,
            EvalOrderSpec::Fixed(p) => predict_fixed(model, split, p.as_slice())?,
            EvalOrderSpec::ArbitraryPerPass => predict_shuffled(model, split, &all, &mut order_rng)?,
            EvalOrderSpec::Pruned { keep, order } => {
                let subset = surviving(keep, layers, &mut subset_rng);
                match order {
                    OrderMode::Sequential => predict_fixed(model, split, &subset)?,
                    OrderMode::Arbitrary => {
                        predict_shuffled(model, split, &subset, &mut order_rng)?
                    }
                }
            }
        };
        predictions.push(preds);
    }
    let accuracies: Vec<f64> = predictions
        .iter()
        .map(|p| accuracy(p, &split.labels))
        .collect();
    let (mean, std) = mean_std(&accuracies);
    Ok(EvalSummary {
        mean,
        std,
        accuracies,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrunePoint {
    pub keep: usize,
    pub mean: f64,
    pub std: f64,
}

/// Accuracy against number of kept layers, averaged over
/// [`PRUNE_SUBSETS`] random subsets per count.
pub fn prune_curve(
    model: &VisionTransformer,
    split: &Split,
    keep_counts: &[usize],
    order: OrderMode,
    seed: u64,
) -> Result<Vec<PrunePoint>> {
    keep_counts
        .iter()
        .map(|&keep| {
            let spec = EvalOrderSpec::Pruned {
                keep: KeepSpec::Count(keep),
                order,
            };
            let s = evaluate(model, split, &spec, PRUNE_SUBSETS, seed)?;
            Ok(PrunePoint {
                keep,
                mean: s.mean,
                std: s.std,
            })
        })
        .collect()
}

/// Fraction of (pass, layer) pairs whose predicted position equals the
/// realized one. Pass `i` uses image `i mod len` under a fresh permutation.
pub fn position_prediction_accuracy(
    model: &VisionTransformer,
    split: &Split,
    passes: usize,
    seed: u64,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !model.params.has_predictor() {
        return Err(Error::InvalidArgument("model has no position predictors".into()));
    }
    let all: Vec<usize> = (0..model.layers()).collect();
    let mut rng = SeedRng::stream(seed, streams::ORDER);
    let (mut correct, mut total) = (0usize, 0usize);
    for pass in 0..passes {
        let order = shuffle_layers(&mut rng, &all);
        let image = split.image(pass % split.len());
        let (tape, _, out) = model.run(&[image], &order, &mut crate::model::Dropout::off())?;
        for rec in &out.layers {
            let logits = rec.position_logits.expect("every layer has a predictor");
            correct += usize::from(argmax(tape.value(logits).row(0)) == rec.position);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}
