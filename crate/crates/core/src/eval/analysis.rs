use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::model::{Dropout, VisionTransformer};
use crate::rng::{streams, SeedRng};
use crate::train::sample_permutation;

pub const HISTOGRAM_BINS: usize = 10;

const DUMP_MAGIC: [u8; 4] = *b"LSED";
const DUMP_VERSION: u32 = 1;

/// `n` distinct indices below `len`, drawn from the `SAMPLES` stream.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} images from a split of {len}"
        )));
    }
    let mut rng = SeedRng::stream(seed, streams::SAMPLES);
    Ok(index::sample(&mut rng, len, n).into_vec())
}

/// One layer's change to the class token during one pass. Layer and
/// position are zero-based; the CSV output is one-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionRecord {
    pub layer: usize,
    pub position: usize,
    pub raw: f64,
    /// `raw` over the sum of all raw values of the same pass.
    pub normalized: f64,
    pub pass: usize,
}

/// Normalized contributions grouped by layer and realized position.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionSummary {
    pub layers: usize,
    /// `[layer][position]` record counts.
    pub counts: Vec<Vec<usize>>,
    /// `[layer][position]` mean normalized contribution.
    pub means: Vec<Vec<f64>>,
    /// `[layer][position][bin]` counts over `[0, 1]`.
    pub histogram: Vec<Vec<[usize; HISTOGRAM_BINS]>>,
}

impl ContributionSummary {
    pub fn from_records(layers: usize, records: &[ContributionRecord]) -> Self {
        let mut counts = vec![vec![0usize; layers]; layers];
        let mut sums = vec![vec![0.0; layers]; layers];
        let mut histogram = vec![vec![[0usize; HISTOGRAM_BINS]; layers]; layers];
        for r in records {
            counts[r.layer][r.position] += 1;
            sums[r.layer][r.position] += r.normalized;
            let bin = ((r.normalized * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[r.layer][r.position][bin] += 1;
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| {
                s.iter()
                    .zip(c)
                    .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                    .collect()
            })
            .collect();
        ContributionSummary {
            layers,
            counts,
            means,
            histogram,
        }
    }

    /// Population variance of a layer's mean contribution over the
    /// positions it was observed at.
    pub fn variance_across_positions(&self, layer: usize) -> f64 {
        let seen: Vec<f64> = self.means[layer]
            .iter()
            .zip(&self.counts[layer])
            .filter(|(_, &c)| c > 0)
            .map(|(&m, _)| m)
            .collect();
        super::mean_std(&seen).1.powi(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionReport {
    pub records: Vec<ContributionRecord>,
    pub summary: ContributionSummary,
}

impl ContributionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_id,position,raw_norm,normalized_norm,pass_id\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.layer + 1,
                r.position + 1,
                r.raw,
                r.normalized,
                r.pass
            )
            .unwrap();
        }
        out
    }
}

/// Class-token contribution of every layer, `passes` times per image, each
/// pass a single image under a fresh permutation from the `ORDER` stream.
pub fn contribution_analysis(
    model: &VisionTransformer,
    split: &Split,
    images: &[usize],
    passes: usize,
    seed: u64,
) -> Result<ContributionReport> {
    let layers = model.layers();
    let dim = model.config.latent_dim;
    let mut rng = SeedRng::stream(seed, streams::ORDER);
    let mut records = Vec::with_capacity(images.len() * passes * layers);
    let mut pass = 0;
    for &i in images {
        for _ in 0..passes {
            let order = sample_permutation(&mut rng, layers);
            let (tape, _, out) =
                model.run(&[split.image(i)], order.as_slice(), &mut Dropout::off())?;
            let start = records.len();
            for rec in &out.layers {
                let before = &tape.value(rec.input).data()[..dim];
                let after = &tape.value(rec.output).data()[..dim];
                let raw = before
                    .iter()
                    .zip(after)
                    .map(|(&a, &b)| (b as f64 - a as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                records.push(ContributionRecord {
                    layer: rec.layer,
                    position: rec.position,
                    raw,
                    normalized: 0.0,
                    pass,
                });
            }
            let total: f64 = records[start..].iter().map(|r| r.raw).sum();
            if total > 0.0 {
                for r in &mut records[start..] {
                    r.normalized = r.raw / total;
                }
            }
            pass += 1;
        }
    }
    let summary = ContributionSummary::from_records(layers, &records);
    Ok(ContributionReport { records, summary })
}

/// Output of the tracked layer for one image. Zero-based in memory,
/// one-based on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDump {
    pub vector_len: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingDump {
    /// `LSED`, u32 version, u32 vector_len, u32 record_count, then per
    /// record u32 layer_id, u32 position, `vector_len` f32. Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&DUMP_MAGIC);
        w.u32(DUMP_VERSION);
        w.u32(self.vector_len as u32);
        w.u32(self.records.len() as u32);
        for r in &self.records {
            w.u32(r.layer as u32 + 1);
            w.u32(r.position as u32 + 1);
            for &v in &r.vector {
                w.f32(v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(DUMP_MAGIC)?;
        let version = r.u32()?;
        if version != DUMP_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let vector_len = r.u32()? as usize;
        let count = r.u32()? as usize;
        r.require(count.saturating_mul(vector_len.saturating_mul(4).saturating_add(8)))?;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let layer = r.u32()? as usize;
            let position = r.u32()? as usize;
            if layer == 0 || position == 0 {
                return Err(Error::Malformed("layer and position ids are one-based".into()));
            }
            let vector = (0..vector_len).map(|_| r.f32()).collect::<Result<_>>()?;
            records.push(EmbeddingRecord {
                layer: layer - 1,
                position: position - 1,
                vector,
            });
        }
        r.finish()?;
        Ok(EmbeddingDump {
            vector_len,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Flattened `(N+1) x D` output of `layer` for each image, each image run
/// once under a fresh permutation from the `ORDER` stream.
pub fn dump_embeddings(
    model: &VisionTransformer,
    split: &Split,
    images: &[usize],
    layer: usize,
    seed: u64,
) -> Result<EmbeddingDump> {
    let layers = model.layers();
    if layer >= layers {
        return Err(Error::InvalidArgument(format!(
            "layer {} outside 1..={layers}",
            layer + 1
        )));
    }
    let vector_len = model.config.tokens() * model.config.latent_dim;
    let mut rng = SeedRng::stream(seed, streams::ORDER);
    let mut records = Vec::with_capacity(images.len());
    for &i in images {
        let order = sample_permutation(&mut rng, layers);
        let (tape, _, out) = model.run(&[split.image(i)], order.as_slice(), &mut Dropout::off())?;
        let rec = out
            .layers
            .iter()
            .find(|r| r.layer == layer)
            .expect("full permutation runs every layer");
        records.push(EmbeddingRecord {
            layer,
            position: rec.position,
            vector: tape.value(rec.output).data().to_vec(),
        });
    }
    Ok(EmbeddingDump {
        vector_len,
        records,
    })
}
