//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Pass a substring (e.g. `criterion_4`) to run a subset.

mod common;

use std::time::{Duration, Instant};

use layershuffle::autodiff::GradCheckOptions;
use layershuffle::eval::{
    contribution_analysis, evaluate, position_prediction_accuracy, prune_curve, EvalOrderSpec,
    KeepSpec, OrderMode, PrunePoint,
};
use layershuffle::sim::{assign_layers, simulate, AssignStrategy, OrderPolicy, SimConfig};
use layershuffle::train::{sample_permutation, train_step, AdamConfig, AdamState};
use layershuffle::{
    generate_dataset, Checkpoint, Dataset, ModelConfig, SeedRng, SyntheticDatasetSpec, TrainConfig,
    TrainMode, VisionTransformer,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BATCH: usize = 64;
const BASE_EPOCHS: usize = 30;
const BASE_LR: f64 = 3e-3;
const REFINE_EPOCHS: usize = 15;
const REFINE_LR: f64 = 1e-3;
// The position terms dominate the predict loss early on.
const PREDICT_EPOCHS: usize = 60;
const CHANCE: f64 = 0.1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn dataset(seed: u64) -> Dataset {
    generate_dataset(&SyntheticDatasetSpec::with_seed(seed)).unwrap()
}

fn fit(model: VisionTransformer, data: &Dataset, mode: TrainMode, seed: u64, epochs: usize, lr: f64) -> VisionTransformer {
    let cfg = TrainConfig {
        mode,
        epochs,
        batch_size: BATCH,
        lr,
        seed,
        ..Default::default()
    };
    layershuffle::train(model, data, &cfg).unwrap().best
}

fn baseline(data: &Dataset, seed: u64) -> VisionTransformer {
    let model = VisionTransformer::init(ModelConfig::default(), seed).unwrap();
    fit(model, data, TrainMode::Baseline, seed, BASE_EPOCHS, BASE_LR)
}

/// Continues from the baseline weights under another training mode.
fn refine(base: &VisionTransformer, data: &Dataset, mode: TrainMode, seed: u64) -> VisionTransformer {
    fit(base.clone(), data, mode, seed, REFINE_EPOCHS, REFINE_LR)
}

fn accuracy(model: &VisionTransformer, data: &Dataset, spec: EvalOrderSpec, seed: u64) -> f64 {
    evaluate(model, &data.test, &spec, 1, seed).unwrap().mean
}

fn curve(points: &[PrunePoint]) -> String {
    points
        .iter()
        .map(|p| format!("{}:{:.3}", p.keep, p.mean))
        .collect::<Vec<_>>()
        .join(" ")
}

struct SeedRun {
    data: Dataset,
    baseline: VisionTransformer,
    shuffle: VisionTransformer,
    base_seq: f64,
    base_arb: f64,
    shuffle_seq: f64,
    shuffle_arb: f64,
    elapsed: Duration,
}

fn seed_run(seed: u64) -> SeedRun {
    let t = Instant::now();
    let data = dataset(seed);
    let baseline = baseline(&data, seed);
    let shuffle = refine(&baseline, &data, TrainMode::LayerShuffle, seed);
    let run = SeedRun {
        base_seq: accuracy(&baseline, &data, EvalOrderSpec::Sequential, seed),
        base_arb: accuracy(&baseline, &data, EvalOrderSpec::ArbitraryPerPass, seed),
        shuffle_seq: accuracy(&shuffle, &data, EvalOrderSpec::Sequential, seed),
        shuffle_arb: accuracy(&shuffle, &data, EvalOrderSpec::ArbitraryPerPass, seed),
        data,
        baseline,
        shuffle,
        elapsed: t.elapsed(),
    };
    println!(
        "  seed {seed}: baseline seq {:.3} arb {:.3} | shuffle seq {:.3} arb {:.3} ({:.0?})",
        run.base_seq, run.base_arb, run.shuffle_seq, run.shuffle_arb, run.elapsed
    );
    run
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = SeedRng::new(2024);
    let opts = GradCheckOptions {
        max_entries: Some(6),
        step: 1e-4,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for mode in [
        TrainMode::Baseline,
        TrainMode::LayerShuffle,
        TrainMode::LayerShufflePosition,
        TrainMode::LayerShufflePredict,
    ] {
        let model = common::desk_model(mode, 31);
        for _ in 0..5 {
            let perm = sample_permutation(&mut rng, model.config.layers);
            let report = common::model_grad_check(&model, perm.as_slice(), 2, &opts);
            if let Some(w) = report.worst() {
                worst = worst.max(w.max_rel_error);
            }
            if !report.passed {
                failures.push(format!("{mode} {perm}"));
            }
        }
    }
    let elapsed = t.elapsed();
    verdict(
        failures.is_empty() && worst < 1e-3 && elapsed < Duration::from_secs(120),
        format!("20 checks, worst rel err {worst:.2e}, {elapsed:.1?}, failures {failures:?}"),
    )
}

fn criterion_2() -> Verdict {
    let cfg = ModelConfig::default();
    let model = VisionTransformer::<f32>::init(cfg.clone(), 77).unwrap();
    let imgs = common::images(4, &cfg, 77);
    let refs: Vec<&[f32]> = imgs.iter().map(|v| v.as_slice()).collect();
    let identity: Vec<usize> = (0..cfg.layers).collect();
    let mut rng = SeedRng::new(77);
    let mut forward = 0.0f64;
    for _ in 0..20 {
        let perm = sample_permutation(&mut rng, cfg.layers);
        let a = model.logits(&refs, perm.as_slice()).unwrap();
        let b = model.reordered(&perm).logits(&refs, &identity).unwrap();
        forward = forward.max(a.max_abs_diff(&b));
    }

    let labels: Vec<usize> = (0..4).collect();
    let perm = sample_permutation(&mut rng, cfg.layers);
    let mut shuffled = model.clone();
    let mut adam = AdamState::new(AdamConfig::default(), &shuffled.params.leaves());
    train_step(&mut shuffled, &mut adam, &refs, &labels, perm.as_slice(), &mut SeedRng::new(5)).unwrap();
    let mut reordered = model.reordered(&perm);
    let mut adam = AdamState::new(AdamConfig::default(), &reordered.params.leaves());
    train_step(&mut reordered, &mut adam, &refs, &labels, &identity, &mut SeedRng::new(5)).unwrap();
    let after = shuffled.reordered(&perm);
    let step = after
        .params
        .leaves()
        .iter()
        .zip(reordered.params.leaves())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    verdict(
        forward <= 1e-6 && step <= 1e-6,
        format!("forward max diff {forward:.1e} over 20 perms, train step max diff {step:.1e}"),
    )
}

fn criterion_3(runs: &[SeedRun]) -> Verdict {
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let base_seq = mean(|r| r.base_seq);
    let base_arb = mean(|r| r.base_arb);
    let ls_seq = mean(|r| r.shuffle_seq);
    let ls_arb = mean(|r| r.shuffle_arb);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let checks = [
        ("baseline seq >= 0.90", base_seq >= 0.90),
        ("baseline arb <= 0.20", base_arb <= 0.20),
        ("shuffle arb >= 0.70", ls_arb >= 0.70),
        ("ordering", base_seq > ls_seq && ls_seq >= ls_arb && ls_arb > base_arb),
        ("<= 10 min per seed", slowest <= Duration::from_secs(600)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "means over {} seeds: baseline seq {base_seq:.3} arb {base_arb:.3}, shuffle seq {ls_seq:.3} arb {ls_arb:.3}, slowest seed {slowest:.0?}; failed {failed:?}",
            runs.len()
        ),
    )
}

fn criterion_4(run: &SeedRun, seed: u64) -> Verdict {
    let model = fit(
        run.baseline.clone(),
        &run.data,
        TrainMode::LayerShufflePredict,
        seed,
        PREDICT_EPOCHS,
        REFINE_LR,
    );
    let acc = position_prediction_accuracy(&model, &run.data.test, 10_000, seed).unwrap();
    verdict(acc >= 0.95, format!("position accuracy {acc:.4} over 10000 passes"))
}

fn criterion_5(run: &SeedRun, seed: u64) -> Verdict {
    let layers = run.shuffle.config.layers;
    let ls = prune_curve(&run.shuffle, &run.data.test, &[layers, layers / 2], OrderMode::Arbitrary, seed).unwrap();
    let keeps: Vec<usize> = (1..=layers).rev().collect();
    let base = prune_curve(&run.baseline, &run.data.test, &keeps, OrderMode::Arbitrary, seed).unwrap();
    let ls_ok = ls[0].mean > ls[1].mean && ls[1].mean > 2.0 * CHANCE;
    let base_ok = base.iter().all(|p| p.mean <= 0.20);
    verdict(
        ls_ok && base_ok,
        format!("shuffle arb {} | baseline arb {}", curve(&ls), curve(&base)),
    )
}

fn criterion_6(run: &SeedRun, seed: u64) -> Verdict {
    let layers = run.shuffle.config.layers;
    let drop = refine(&run.baseline, &run.data, TrainMode::LayerDrop(0.2), seed);
    let keeps = [layers, layers - 2];
    let ls_seq = prune_curve(&run.shuffle, &run.data.test, &keeps, OrderMode::Sequential, seed).unwrap();
    let ld_seq = prune_curve(&drop, &run.data.test, &keeps, OrderMode::Sequential, seed).unwrap();
    let ld_arb = accuracy(&drop, &run.data, EvalOrderSpec::ArbitraryPerPass, seed);
    let close = ls_seq.iter().zip(&ld_seq).all(|(a, b)| (a.mean - b.mean).abs() <= 0.05);
    let gap = run.shuffle_arb - ld_arb;
    verdict(
        close && gap >= 0.15,
        format!(
            "sequential pruned shuffle {} vs layerdrop {}; arbitrary full depth shuffle {:.3} vs layerdrop {ld_arb:.3} (gap {gap:.3})",
            curve(&ls_seq),
            curve(&ld_seq),
            run.shuffle_arb
        ),
    )
}

fn criterion_7(run: &SeedRun, seed: u64) -> Verdict {
    let layers = run.shuffle.config.layers;
    let images: Vec<usize> = (0..200).collect();
    let report = contribution_analysis(&run.shuffle, &run.data.test, &images, 1, seed).unwrap();
    let mut structure = report.records.len() == images.len() * layers;
    for pass in report.records.chunks(layers) {
        let mut ids: Vec<usize> = pass.iter().map(|r| r.layer).collect();
        ids.sort_unstable();
        let total: f64 = pass.iter().map(|r| r.normalized).sum();
        structure &= ids == (0..layers).collect::<Vec<_>>() && (total - 1.0).abs() <= 1e-6;
        structure &= pass.iter().all(|r| r.pass == pass[0].pass);
    }

    // Zeroing every weight of a layer turns it into the identity.
    let mut silenced = run.shuffle.clone();
    silenced.params.visit_mut(&mut |name, t| {
        if name.starts_with("layers.3.") {
            t.data_mut().fill(0.0);
        }
    });
    let zero = contribution_analysis(&silenced, &run.data.test, &images[..20], 2, seed).unwrap();
    let zero_ok = zero
        .records
        .iter()
        .filter(|r| r.layer == 3)
        .all(|r| r.raw == 0.0 && r.normalized == 0.0);

    let base = contribution_analysis(&run.baseline, &run.data.test, &images, 1, seed).unwrap();
    let higher = (0..layers)
        .filter(|&l| report.summary.variance_across_positions(l) > base.summary.variance_across_positions(l))
        .count();
    verdict(
        structure && zero_ok,
        format!(
            "{} records, sums to 1, zero-gain layer raw 0: {zero_ok}; informational: {higher}/{layers} shuffle layers vary more across positions than baseline",
            report.records.len()
        ),
    )
}

fn criterion_8(run: &SeedRun, seed: u64) -> Verdict {
    let model = &run.shuffle;
    let test = &run.data.test;
    let plan = assign_layers(model.config.layers, 3, AssignStrategy::RoundRobin).unwrap();
    let mut equal = true;
    for (policy, spec) in [
        (OrderPolicy::ArrivalRandom, EvalOrderSpec::ArbitraryPerPass),
        (OrderPolicy::PlanSequential, EvalOrderSpec::Sequential),
    ] {
        let cfg = SimConfig { fail_prob: 0.0, policy, trials: test.len(), seed };
        let report = simulate(model, test, &plan, &cfg).unwrap();
        let eval = evaluate(model, test, &spec, 1, seed).unwrap();
        let preds: Vec<usize> = report.trace.iter().map(|t| t.prediction).collect();
        equal &= report.buckets.len() == 1
            && report.buckets[0].accuracy() == eval.mean
            && preds == eval.predictions[0];
    }

    let nodes = 6;
    let p = 0.2;
    let six = assign_layers(model.config.layers, nodes, AssignStrategy::RoundRobin).unwrap();
    let cfg = SimConfig { fail_prob: p, policy: OrderPolicy::ArrivalRandom, trials: 20_000, seed };
    let report = simulate(model, test, &six, &cfg).unwrap();
    let mean = report.trace.iter().map(|t| t.failed_nodes.len() as f64).sum::<f64>() / cfg.trials as f64;
    let expected = nodes as f64 * p;
    let binomial = (mean - expected).abs() <= 0.02 * expected;

    let contiguous = assign_layers(model.config.layers, 3, AssignStrategy::Contiguous).unwrap();
    let failed = [1];
    let survivors = contiguous.surviving_layers(&failed);
    let mut single = true;
    for (policy, order) in [
        (OrderPolicy::ArrivalRandom, OrderMode::Arbitrary),
        (OrderPolicy::PlanSequential, OrderMode::Sequential),
    ] {
        let mut rng = SeedRng::stream(seed, layershuffle::rng::streams::ORDER);
        let sim: Vec<usize> = (0..test.len())
            .map(|i| {
                layershuffle::sim::run_inference(model, test.image(i), &contiguous, &failed, policy, &mut rng)
                    .unwrap()
                    .0
            })
            .collect();
        let spec = EvalOrderSpec::Pruned { keep: KeepSpec::Subset(survivors.clone()), order };
        single &= sim == evaluate(model, test, &spec, 1, seed).unwrap().predictions[0];
    }
    verdict(
        equal && binomial && single,
        format!(
            "fail-free equals evaluate: {equal}; mean failed nodes {mean:.4} vs {expected:.2}; single-node failure equals pruned subset {survivors:?}: {single}"
        ),
    )
}

fn criterion_9() -> Verdict {
    let spec = SyntheticDatasetSpec {
        train_size: 200,
        val_size: 50,
        test_size: 50,
        ..SyntheticDatasetSpec::with_seed(9)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.lshf", "b.lshf"] {
        let data = generate_dataset(&spec).unwrap();
        let mut model = VisionTransformer::init(ModelConfig::default(), 9).unwrap();
        layershuffle::train::prepare_model(&mut model, TrainMode::LayerShufflePosition, 9);
        let cfg = TrainConfig {
            mode: TrainMode::LayerShufflePosition,
            epochs: 2,
            batch_size: 32,
            lr: 1e-3,
            seed: 9,
            checkpoint_path: Some(dir.path().join(name)),
            ..Default::default()
        };
        layershuffle::train(model, &data, &cfg).unwrap();
        files.push(std::fs::read(dir.path().join(name)).unwrap());
    }
    let identical = files[0] == files[1];
    let ck = Checkpoint::from_bytes(&files[0]).unwrap();
    let resaved = ck.to_bytes().unwrap() == files[0];
    let model = ck.to_model().unwrap();
    let cfg = &model.config;
    let (d, l, f) = (cfg.latent_dim, cfg.layers, cfg.position_dim);
    let per_layer = 2 * d + 3 * d * d + d * d + 2 * d + 2 * d * cfg.mlp_hidden + cfg.mlp_hidden + d
        + l * f + 2 * (d + f) + (d + f) * d;
    let analytic = cfg.patch_dim() * d + cfg.tokens() * d + d + l * per_layer + d * cfg.classes;
    let counted: usize = ck.tensors.iter().map(|(_, t)| t.len()).sum();
    verdict(
        identical && resaved && counted == analytic,
        format!(
            "repeat run identical: {identical}; load/save identical: {resaved}; {counted} stored floats vs analytic {analytic}"
        ),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut report = |name: &'static str, v: Verdict| {
        println!("{name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };

    if wanted("criterion_1") {
        report("criterion_1 gradient correctness", criterion_1());
    }
    if wanted("criterion_2") {
        report("criterion_2 permutation oracle", criterion_2());
    }
    if wanted("criterion_9") {
        report("criterion_9 determinism and persistence", criterion_9());
    }
    let trained = ["criterion_3", "criterion_4", "criterion_5", "criterion_6", "criterion_7", "criterion_8"];
    if trained.iter().any(|n| wanted(n)) {
        let runs: Vec<SeedRun> = if wanted("criterion_3") {
            SEEDS.iter().map(|&s| seed_run(s)).collect()
        } else {
            vec![seed_run(SEEDS[0])]
        };
        let (first, seed) = (&runs[0], SEEDS[0]);
        if wanted("criterion_3") {
            report("criterion_3 order robustness table", criterion_3(&runs));
        }
        if wanted("criterion_4") {
            report("criterion_4 position prediction", criterion_4(first, seed));
        }
        if wanted("criterion_5") {
            report("criterion_5 graceful pruning", criterion_5(first, seed));
        }
        if wanted("criterion_6") {
            report("criterion_6 layerdrop comparison", criterion_6(first, seed));
        }
        if wanted("criterion_7") {
            report("criterion_7 contribution analysis", criterion_7(first, seed));
        }
        if wanted("criterion_8") {
            report("criterion_8 simulator consistency", criterion_8(first, seed));
        }
    }

    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
