//! Deterministic synthetic image classification data: anti-aliased bars
//! whose orientation encodes the class.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::rng::{streams, SeedRng};

const MAGIC: [u8; 4] = *b"LSDS";
const VERSION: u32 = 1;

/// Anti-aliasing supersampling factor per axis.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Orientation step between consecutive classes, in degrees.
    pub angle_step_deg: f64,
    pub noise_std: f64,
    /// Maximum offset of the bar centre from the image centre, in pixels.
    pub center_jitter: f64,
    pub min_length: f64,
    pub max_length: f64,
    pub thickness: f64,
    /// Range of the bar's peak intensity above the background.
    pub min_contrast: f64,
    pub max_contrast: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            classes: 10,
            height: 16,
            width: 16,
            angle_step_deg: 18.0,
            noise_std: 0.1,
            center_jitter: 2.0,
            min_length: 6.0,
            max_length: 12.0,
            thickness: 1.5,
            min_contrast: 0.4,
            max_contrast: 1.0,
            train_size: 3000,
            val_size: 500,
            test_size: 1000,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn with_seed(seed: u64) -> Self {
        SyntheticDatasetSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("empty image or class set".into()));
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "split sizes must be positive, got {}/{}/{}",
                self.train_size, self.val_size, self.test_size
            )));
        }
        if self.min_length > self.max_length || self.min_contrast > self.max_contrast {
            return Err(Error::InvalidConfig("inverted parameter range".into()));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width
    }
}

/// Images stored back to back as flat `H x W x 1` arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub image_len: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.image_len..(i + 1) * self.image_len]
    }

    pub fn images(&self, indices: &[usize]) -> Vec<&[f32]> {
        indices.iter().map(|&i| self.image(i)).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// First `n` examples.
    pub fn take(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            image_len: self.image_len,
            pixels: self.pixels[..n * self.image_len].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticDatasetSpec,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    /// FNV-1a over the labels and the pixel bit patterns of all splits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for split in [&self.train, &self.val, &self.test] {
            for &l in &split.labels {
                eat(&(l as u32).to_le_bytes());
            }
            for &p in &split.pixels {
                eat(&p.to_le_bytes());
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// `LSDS`, u32 version, u32 height, u32 width, u32 classes, u64 seed,
    /// then train/val/test as u32 count followed by per-example u32 label
    /// and `H*W` f32 pixels. Little-endian. The generator parameters other
    /// than the seed are the defaults.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&MAGIC);
        w.u32(VERSION);
        w.u32(self.spec.height as u32);
        w.u32(self.spec.width as u32);
        w.u32(self.spec.classes as u32);
        w.u64(self.spec.seed);
        for split in [&self.train, &self.val, &self.test] {
            w.u32(split.len() as u32);
            for i in 0..split.len() {
                w.u32(split.labels[i] as u32);
                for &p in split.image(i) {
                    w.f32(p);
                }
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let seed = r.u64()?;
        let image_len = height * width;
        let mut splits = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = r.u32()? as usize;
            r.require(n.saturating_mul(4 + 4 * image_len))?;
            let mut split = Split {
                image_len,
                pixels: Vec::with_capacity(n * image_len),
                labels: Vec::with_capacity(n),
            };
            for _ in 0..n {
                let label = r.u32()? as usize;
                if label >= classes {
                    return Err(Error::Malformed(format!("label {label} >= {classes} classes")));
                }
                split.labels.push(label);
                for _ in 0..image_len {
                    split.pixels.push(r.f32()?);
                }
            }
            splits.push(split);
        }
        r.finish()?;
        let test = splits.pop().unwrap();
        let val = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        let spec = SyntheticDatasetSpec {
            classes,
            height,
            width,
            train_size: train.len(),
            val_size: val.len(),
            test_size: test.len(),
            seed,
            ..Default::default()
        };
        Ok(Dataset {
            spec,
            train,
            val,
            test,
        })
    }
}

pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SeedRng::stream(spec.seed, streams::DATA);
    let train = generate_split(spec, spec.train_size, &mut rng);
    let val = generate_split(spec, spec.val_size, &mut rng);
    let test = generate_split(spec, spec.test_size, &mut rng);
    Ok(Dataset {
        spec: spec.clone(),
        train,
        val,
        test,
    })
}

fn generate_split(spec: &SyntheticDatasetSpec, n: usize, rng: &mut SeedRng) -> Split {
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(rng);
    let mut pixels = Vec::with_capacity(n * spec.image_len());
    for &label in &labels {
        pixels.extend(render_bar(spec, label, rng));
    }
    Split {
        image_len: spec.image_len(),
        pixels,
        labels,
    }
}

/// One image of class `label`: a bar at angle `label * angle_step`.
pub fn render_bar(spec: &SyntheticDatasetSpec, label: usize, rng: &mut SeedRng) -> Vec<f32> {
    let angle = (label as f64 * spec.angle_step_deg).to_radians();
    let (dx, dy) = (angle.cos(), angle.sin());
    let jitter = |rng: &mut SeedRng| (rng.uniform() * 2.0 - 1.0) * spec.center_jitter;
    let cx = spec.width as f64 / 2.0 + jitter(rng);
    let cy = spec.height as f64 / 2.0 + jitter(rng);
    let half_len = 0.5 * (spec.min_length + rng.uniform() * (spec.max_length - spec.min_length));
    let contrast = spec.min_contrast + rng.uniform() * (spec.max_contrast - spec.min_contrast);
    let half_thick = spec.thickness / 2.0;
    let noise = Normal::new(0.0, spec.noise_std).expect("valid noise std");

    let mut out = Vec::with_capacity(spec.image_len());
    for y in 0..spec.height {
        for x in 0..spec.width {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
                    // Image y grows downwards; flip so angles run counter-clockwise.
                    let along = px * dx - py * dy;
                    let across = px * dy + py * dx;
                    if along.abs() <= half_len && across.abs() <= half_thick {
                        hits += 1;
                    }
                }
            }
            let coverage = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let value = contrast * coverage + noise.sample(rng);
            out.push(value.clamp(0.0, 1.0) as f32);
        }
    }
    out
}
