use std::path::PathBuf;

use layershuffle::data::{generate_dataset, render_bar, Dataset, SyntheticDatasetSpec};
use layershuffle::{Error, SeedRng};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/seed0_first_image.txt")
}

fn render(label: usize, pixels: &[f32]) -> String {
    let mut out = format!("label {label}\n");
    for row in pixels.chunks(16) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9e}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Set `LAYERSHUFFLE_BLESS=1` to rewrite the reference after an intentional
/// generator change.
#[test]
fn first_image_of_seed_zero_matches_golden() {
    let data = generate_dataset(&SyntheticDatasetSpec::with_seed(0)).unwrap();
    let actual = render(data.train.labels[0], data.train.image(0));
    if std::env::var_os("LAYERSHUFFLE_BLESS").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &actual).unwrap();
    }
    let expected = std::fs::read_to_string(golden_path()).unwrap();
    let mut lines = expected.lines();
    let label: usize = lines.next().unwrap().strip_prefix("label ").unwrap().parse().unwrap();
    let pixels: Vec<f32> = lines
        .flat_map(|l| l.split_whitespace().map(|v| v.parse::<f32>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(label, data.train.labels[0]);
    assert_eq!(pixels.as_slice(), data.train.image(0));
}

#[test]
fn same_seed_same_checksum() {
    let spec = SyntheticDatasetSpec {
        train_size: 50,
        val_size: 20,
        test_size: 30,
        ..SyntheticDatasetSpec::with_seed(12)
    };
    let a = generate_dataset(&spec).unwrap();
    let b = generate_dataset(&spec).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let other = generate_dataset(&SyntheticDatasetSpec { seed: 13, ..spec }).unwrap();
    assert_ne!(a.checksum(), other.checksum());
}

#[test]
fn splits_are_exact_and_balanced() {
    let spec = SyntheticDatasetSpec {
        train_size: 120,
        val_size: 40,
        test_size: 60,
        ..SyntheticDatasetSpec::with_seed(1)
    };
    let data = generate_dataset(&spec).unwrap();
    for (split, n) in [(&data.train, 120), (&data.val, 40), (&data.test, 60)] {
        assert_eq!(split.len(), n);
        assert_eq!(split.pixels.len(), n * 256);
        let mut hist = [0usize; 10];
        split.labels.iter().for_each(|&l| hist[l] += 1);
        assert!(hist.iter().all(|&h| h == n / 10), "{hist:?}");
    }
    assert!(data.train.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn invalid_sizes_are_rejected() {
    let spec = SyntheticDatasetSpec {
        val_size: 0,
        ..Default::default()
    };
    assert!(matches!(generate_dataset(&spec), Err(Error::InvalidConfig(_))));
}

/// Noise-free bars: the brightest pixels line up with the class angle.
#[test]
fn bar_orientation_follows_label() {
    let spec = SyntheticDatasetSpec {
        noise_std: 0.0,
        center_jitter: 0.0,
        min_length: 12.0,
        min_contrast: 1.0,
        ..Default::default()
    };
    let mut rng = SeedRng::new(3);
    for label in 0..10 {
        let img = render_bar(&spec, label, &mut rng);
        // Second moments of the intensity give the principal axis (y up).
        let (mut sxx, mut syy, mut sxy, mut total) = (0.0f64, 0.0, 0.0, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                let w = img[y * 16 + x] as f64;
                let (dx, dy) = (x as f64 + 0.5 - 8.0, 8.0 - (y as f64 + 0.5));
                sxx += w * dx * dx;
                syy += w * dy * dy;
                sxy += w * dx * dy;
                total += w;
            }
        }
        assert!(total > 0.0);
        let axis = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let want = (label as f64 * 18.0).to_radians();
        let diff = (axis - want).rem_euclid(std::f64::consts::PI);
        let diff = diff.min(std::f64::consts::PI - diff);
        assert!(diff < 0.1, "label {label}: axis {axis} want {want}");
    }
}

#[test]
fn corrupted_files_are_rejected() {
    let spec = SyntheticDatasetSpec {
        train_size: 10,
        val_size: 10,
        test_size: 10,
        ..Default::default()
    };
    let bytes = generate_dataset(&spec).unwrap().to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Dataset::from_bytes(&bad).is_err());
    assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
