mod common;

use proptest::prelude::*;

use layershuffle::data::{generate_dataset, Dataset, SyntheticDatasetSpec};
use layershuffle::eval::{evaluate, EvalOrderSpec, KeepSpec, OrderMode};
use layershuffle::sim::{assign_layers, AssignStrategy};
use layershuffle::train::{layerdrop_mask, sample_permutation, shuffle_layers};
use layershuffle::{Checkpoint, ModelConfig, Permutation, SeedRng, TrainMode, VisionTransformer};

fn tiny_cfg(layers: usize) -> ModelConfig {
    ModelConfig {
        image_height: 8,
        image_width: 8,
        patch_size: 4,
        latent_dim: 8,
        heads: 2,
        layers,
        mlp_hidden: 8,
        position_dim: 4,
        ..Default::default()
    }
}

fn tiny_data(seed: u64) -> Dataset {
    generate_dataset(&SyntheticDatasetSpec {
        height: 8,
        width: 8,
        train_size: 10,
        val_size: 10,
        test_size: 20,
        seed,
        ..Default::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_permutations_are_bijections(seed in any::<u64>(), layers in 1usize..12) {
        let p = sample_permutation(&mut SeedRng::new(seed), layers);
        let mut sorted = p.as_slice().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..layers).collect::<Vec<_>>());
        let inv = p.inverse();
        for i in 0..layers {
            prop_assert_eq!(inv.as_slice()[p.as_slice()[i]], i);
        }
    }

    #[test]
    fn one_based_parser_accepts_exactly_permutations(order in prop::collection::vec(0usize..8, 1..8)) {
        let n = order.len();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        let is_perm = sorted == (1..=n).collect::<Vec<_>>();
        prop_assert_eq!(Permutation::from_one_based(&order).is_ok(), is_perm);
    }

    #[test]
    fn display_roundtrips_through_parser(seed in any::<u64>(), layers in 1usize..10) {
        let p = sample_permutation(&mut SeedRng::new(seed), layers);
        let parsed: Vec<usize> = p.to_string().split(',').map(|s| s.parse().unwrap()).collect();
        prop_assert_eq!(Permutation::from_one_based(&parsed).unwrap(), p);
    }

    #[test]
    fn shuffled_subsets_keep_their_members(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 6)) {
        let subset: Vec<usize> = (0..6).filter(|&i| mask[i]).collect();
        let mut order = shuffle_layers(&mut SeedRng::new(seed), &subset);
        order.sort_unstable();
        prop_assert_eq!(order, subset);
    }

    #[test]
    fn layerdrop_masks_are_sorted_nonempty(seed in any::<u64>(), p in 0.0f64..0.99) {
        let kept = layerdrop_mask(&mut SeedRng::new(seed), 6, p);
        prop_assert!(!kept.is_empty());
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(kept.iter().all(|&l| l < 6));
    }

    #[test]
    fn node_plans_are_total(layers in 1usize..20, nodes in 1usize..20, contiguous in any::<bool>()) {
        prop_assume!(nodes <= layers);
        let strategy = if contiguous { AssignStrategy::Contiguous } else { AssignStrategy::RoundRobin };
        let plan = assign_layers(layers, nodes, strategy).unwrap();
        let mut covered = 0;
        for n in 0..nodes {
            let on = plan.layers_on(n);
            prop_assert!(!on.is_empty());
            covered += on.len();
        }
        prop_assert_eq!(covered, layers);
        let sizes: Vec<usize> = (0..nodes).map(|n| plan.layers_on(n).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn modules_preserve_shape_for_any_order(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 4), batch in 1usize..4) {
        let model = VisionTransformer::<f32>::init(tiny_cfg(4), seed).unwrap();
        let subset: Vec<usize> = (0..4).filter(|&i| mask[i]).collect();
        let order = shuffle_layers(&mut SeedRng::new(seed), &subset);
        let imgs = common::images(batch, &model.config, seed);
        let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
        let (tape, _, out) = model.run(&refs, &order, &mut layershuffle::model::Dropout::off()).unwrap();
        let cfg = &model.config;
        for rec in &out.layers {
            prop_assert_eq!(tape.value(rec.output).shape(), &[batch * cfg.tokens(), cfg.latent_dim][..]);
        }
        prop_assert_eq!(tape.value(out.logits).shape(), &[batch, cfg.classes][..]);
        prop_assert!(tape.value(out.logits).all_finite());
    }

    #[test]
    fn checkpoint_roundtrip_any_variant(seed in any::<u64>(), layers in 1usize..4, variant in 0usize..4, loss in 0.0f64..10.0) {
        let mode = [TrainMode::Baseline, TrainMode::LayerShufflePosition, TrainMode::LayerShufflePredict, TrainMode::LayerDrop(0.3)][variant];
        let mut model = VisionTransformer::<f32>::init(tiny_cfg(layers), seed).unwrap();
        layershuffle::train::prepare_model(&mut model, mode, seed);
        let ck = Checkpoint::from_model(&model, mode, seed, loss).with_data_seed(seed ^ 1);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.to_model().unwrap(), model);
    }

    #[test]
    fn accuracy_in_unit_interval(seed in any::<u64>(), spec_kind in 0usize..4, repeats in 1usize..3) {
        let model = VisionTransformer::<f32>::init(tiny_cfg(3), seed).unwrap();
        let data = tiny_data(seed);
        let spec = match spec_kind {
            0 => EvalOrderSpec::Sequential,
            1 => EvalOrderSpec::ArbitraryPerPass,
            2 => EvalOrderSpec::Pruned { keep: KeepSpec::Count(2), order: OrderMode::Arbitrary },
            _ => EvalOrderSpec::Fixed(sample_permutation(&mut SeedRng::new(seed), 3)),
        };
        let s = evaluate(&model, &data.test, &spec, repeats, seed).unwrap();
        prop_assert!(s.accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
        prop_assert!(s.std >= 0.0);
        if spec_kind == 0 || spec_kind == 3 {
            prop_assert_eq!(s.std, 0.0);
        }
    }

    #[test]
    fn pruned_full_depth_is_unpruned(seed in any::<u64>(), arbitrary in any::<bool>()) {
        let model = VisionTransformer::<f32>::init(tiny_cfg(3), seed).unwrap();
        let data = tiny_data(seed);
        let (order, plain) = if arbitrary {
            (OrderMode::Arbitrary, EvalOrderSpec::ArbitraryPerPass)
        } else {
            (OrderMode::Sequential, EvalOrderSpec::Sequential)
        };
        let pruned = EvalOrderSpec::Pruned { keep: KeepSpec::Count(3), order };
        let a = evaluate(&model, &data.test, &pruned, 2, seed).unwrap();
        let b = evaluate(&model, &data.test, &plain, 2, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dataset_file_roundtrip(seed in any::<u64>()) {
        let d = tiny_data(seed);
        let bytes = d.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.checksum(), d.checksum());
        prop_assert_eq!(back.to_bytes(), bytes);
    }
}

/// Chi-square test of permutation uniformity for L = 3 (5 degrees of
/// freedom; 20.5 is the 0.999 quantile).
#[test]
fn permutations_are_uniform() {
    let mut rng = SeedRng::new(2024);
    let mut counts = std::collections::HashMap::new();
    let draws = 60_000;
    for _ in 0..draws {
        *counts.entry(sample_permutation(&mut rng, 3)).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 6);
    let expected = draws as f64 / 6.0;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 20.5, "chi2 = {chi2}");
}

/// Each layer lands in each position with probability 1/L.
#[test]
fn positions_are_uniform_per_layer() {
    let mut rng = SeedRng::new(7);
    let mut counts = [[0usize; 6]; 6];
    let draws = 60_000;
    for _ in 0..draws {
        let p = sample_permutation(&mut rng, 6);
        for (pos, &layer) in p.as_slice().iter().enumerate() {
            counts[layer][pos] += 1;
        }
    }
    for row in counts {
        for c in row {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }
}
