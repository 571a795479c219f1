//! Trains a baseline and a shuffle-refined model on the bar dataset and
//! prints their accuracy under sequential, arbitrary and pruned execution.
//!
//! ```text
//! cargo run --release --example order_robustness -- [seed] [refine_epochs] [refine_lr]
//! ```

use std::time::Instant;

use layershuffle::eval::{prune_curve, OrderMode};
use layershuffle::{
    evaluate, generate_dataset, train, EvalOrderSpec, ModelConfig, SyntheticDatasetSpec, TrainConfig,
    TrainMode, VisionTransformer,
};

fn main() -> layershuffle::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().expect("seed"));
    let refine_epochs: usize = args.get(2).map_or(15, |s| s.parse().expect("refine epochs"));
    let refine_lr: f64 = args.get(3).map_or(1e-3, |s| s.parse().expect("refine lr"));
    let data = generate_dataset(&SyntheticDatasetSpec::with_seed(seed))?;
    let recipe = |mode, epochs, lr| TrainConfig {
        mode,
        epochs,
        lr,
        seed,
        batch_size: 64,
        ..Default::default()
    };

    let t = Instant::now();
    let init = VisionTransformer::init(ModelConfig::default(), seed)?;
    let baseline = train(init, &data, &recipe(TrainMode::Baseline, 30, 3e-3))?.best;
    println!("baseline trained in {:.0?}", t.elapsed());

    let mut models = vec![("baseline", baseline.clone())];
    for mode in [TrainMode::LayerShuffle, TrainMode::LayerDrop(0.2)] {
        let t = Instant::now();
        let refined = train(baseline.clone(), &data, &recipe(mode, refine_epochs, refine_lr))?.best;
        println!("{mode} refined in {:.0?}", t.elapsed());
        models.push((if mode == TrainMode::LayerShuffle { "shuffle" } else { "layerdrop" }, refined));
    }

    println!("\nmodel      sequential  arbitrary");
    for (name, model) in &models {
        let seq = evaluate(model, &data.test, &EvalOrderSpec::Sequential, 1, seed)?;
        let arb = evaluate(model, &data.test, &EvalOrderSpec::ArbitraryPerPass, 1, seed)?;
        println!("{name:<10} {:>10.3} {:>10.3}", seq.mean, arb.mean);
    }

    let keeps: Vec<usize> = (1..=6).rev().collect();
    for order in [OrderMode::Sequential, OrderMode::Arbitrary] {
        println!("\npruned, {order} order (layers kept: mean accuracy)");
        for (name, model) in &models {
            let points = prune_curve(model, &data.test, &keeps, order, seed)?;
            let row: Vec<String> = points.iter().map(|p| format!("{}:{:.3}", p.keep, p.mean)).collect();
            println!("{name:<10} {}", row.join("  "));
        }
    }
    Ok(())
}
