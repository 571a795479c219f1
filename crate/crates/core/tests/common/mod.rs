#![allow(dead_code)]

use layershuffle::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape};
use layershuffle::model::{forward_layers, patch_batch, Dropout};
use layershuffle::train::{prepare_model, total_loss, PositionTarget};
use layershuffle::{ModelConfig, Tensor, TrainMode, VisionTransformer};

/// Random images in `[0, 1]`.
pub fn images(n: usize, cfg: &ModelConfig, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = layershuffle::SeedRng::new(seed);
    (0..n)
        .map(|_| (0..cfg.image_len()).map(|_| rng.uniform() as f32).collect())
        .collect()
}

/// Default desk model with the adapters `mode` trains.
pub fn desk_model(mode: TrainMode, seed: u64) -> VisionTransformer {
    let mut model = VisionTransformer::init(ModelConfig::default(), seed).unwrap();
    prepare_model(&mut model, mode, seed);
    model
}

/// Finite-difference check of the full training loss (classification plus
/// position terms) in f64, with dropout disabled.
pub fn model_grad_check(
    model: &VisionTransformer,
    order: &[usize],
    batch: usize,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let model: VisionTransformer<f64> = model.cast();
    let cfg = model.config.clone();
    let imgs = images(batch, &cfg, 17);
    let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
    let labels: Vec<usize> = (0..batch).map(|i| (3 * i + 1) % cfg.classes).collect();
    let names = model.params.names();
    let leaves: Vec<Tensor<f64>> = model.params.leaves().into_iter().cloned().collect();
    grad_check(
        &names,
        &leaves,
        |xs, want| {
            let params = model.params.with_leaves(xs);
            let mut tape = Tape::<f64>::new();
            let bound = params.map(&mut |_, t| tape.param(t.clone()));
            let patches = tape.constant(patch_batch(&refs, &cfg)?);
            let out = forward_layers(&mut tape, &cfg, &bound, patches, batch, order, &mut Dropout::off())?;
            let preds: Vec<PositionTarget> = out
                .layers
                .iter()
                .filter_map(|r| r.position_logits.map(|logits| PositionTarget { logits, position: r.position }))
                .collect();
            let loss = total_loss(&mut tape, out.logits, &labels, &preds, None)?;
            let value = tape.value(loss).item();
            if !want {
                return Ok((value, None));
            }
            let g = tape.backward(loss)?;
            let grads = bound.leaves().into_iter().zip(xs).map(|(&v, x)| g.get_or_zeros(v, x)).collect();
            Ok((value, Some(grads)))
        },
        opts,
    )
    .unwrap()
}
