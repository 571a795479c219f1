mod common;

use layershuffle::autodiff::GradCheckOptions;
use layershuffle::train::sample_permutation;
use layershuffle::{SeedRng, TrainMode};

#[test]
fn desk_model_gradients_all_modes() {
    let mut rng = SeedRng::new(11);
    for mode in [
        TrainMode::Baseline,
        TrainMode::LayerShuffle,
        TrainMode::LayerShufflePosition,
        TrainMode::LayerShufflePredict,
    ] {
        let model = common::desk_model(mode, 3);
        let order = sample_permutation(&mut rng, 6);
        let opts = GradCheckOptions { max_entries: Some(8), step: 1e-4, ..Default::default() };
        let report = common::model_grad_check(&model, order.as_slice(), 2, &opts);
        println!("{mode}: worst {:?}", report.worst());
        assert!(report.passed, "{mode}: {:?}", report.worst());
    }
}
