//! Single-file binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LSHF"  u32 version = 1
//! u32 config_len, config_len bytes of UTF-8 `key=value` lines
//! u32 tensor_count
//! per tensor: u16 name_len, name, u8 dtype (0 = f32), u8 rank,
//!             rank x u32 dims, row-major f32 data
//! ```
//!
//! Every declared length is checked against the bytes actually present
//! before anything is allocated for it.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::model::{ModelConfig, Params, PredictorInput, VisionTransformer};
use crate::rng::SeedRng;
use crate::tensor::Tensor;
use crate::train::TrainMode;

pub const MAGIC: [u8; 4] = *b"LSHF";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mode: TrainMode,
    pub seed: u64,
    /// Seed of the synthetic dataset the model was trained on.
    pub data_seed: u64,
    pub best_val_loss: f64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(model: &VisionTransformer, mode: TrainMode, seed: u64, best_val_loss: f64) -> Self {
        let names = model.params.names();
        let tensors = names
            .into_iter()
            .zip(model.params.leaves())
            .map(|(n, t)| (n, t.clone()))
            .collect();
        Checkpoint {
            config: model.config.clone(),
            mode,
            seed,
            data_seed: seed,
            best_val_loss,
            tensors,
        }
    }

    pub fn with_data_seed(mut self, data_seed: u64) -> Self {
        self.data_seed = data_seed;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds the model; the tensor table must match the architecture
    /// exactly.
    pub fn to_model(&self) -> Result<VisionTransformer> {
        self.config.validate()?;
        let table: BTreeMap<&str, &Tensor<f32>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut params = Params::init(&self.config, &mut SeedRng::new(0));
        let mut rng = SeedRng::new(0);
        if table.keys().any(|n| n.contains(".position.")) {
            params.add_position_encoding(&self.config, &mut rng);
        }
        if table.keys().any(|n| n.contains(".predictor.")) {
            params.add_position_predictor(&self.config, &mut rng);
        }
        let expected = params.names();
        if expected.len() != table.len() {
            return Err(Error::Malformed(format!(
                "checkpoint has {} tensors, architecture needs {}",
                table.len(),
                expected.len()
            )));
        }
        let mut problem = None;
        params.visit_mut(&mut |name, slot| match table.get(name) {
            Some(t) if t.shape() == slot.shape() => *slot = (*t).clone(),
            Some(t) => {
                problem.get_or_insert(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            None => {
                problem.get_or_insert(format!("missing tensor {name}"));
            }
        });
        if let Some(p) = problem {
            return Err(Error::Malformed(p));
        }
        Ok(VisionTransformer {
            config: self.config.clone(),
            params,
        })
    }

    pub fn config_document(&self) -> String {
        let c = &self.config;
        let drop_prob = match self.mode {
            TrainMode::LayerDrop(p) => p,
            _ => 0.0,
        };
        let entries: [(&str, String); 17] = [
            ("image_height", c.image_height.to_string()),
            ("image_width", c.image_width.to_string()),
            ("channels", c.channels.to_string()),
            ("patch_size", c.patch_size.to_string()),
            ("latent_dim", c.latent_dim.to_string()),
            ("heads", c.heads.to_string()),
            ("layers", c.layers.to_string()),
            ("mlp_hidden", c.mlp_hidden.to_string()),
            ("classes", c.classes.to_string()),
            ("position_dim", c.position_dim.to_string()),
            ("dropout", c.dropout.to_string()),
            ("predictor_input", c.predictor_input.as_str().to_string()),
            ("mode", self.mode.name().to_string()),
            ("drop_prob", drop_prob.to_string()),
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("best_val_loss", self.best_val_loss.to_string()),
        ];
        entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn parse_config_document(doc: &str) -> Result<(ModelConfig, TrainMode, u64, u64, f64)> {
        let mut kv = BTreeMap::new();
        for line in doc.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("config line {line:?}")))?;
            if kv.insert(k.trim(), v.trim()).is_some() {
                return Err(Error::Malformed(format!("duplicate config key {k:?}")));
            }
        }
        fn get<'a, V: std::str::FromStr>(kv: &mut BTreeMap<&'a str, &'a str>, key: &str) -> Result<V> {
            let raw = kv
                .remove(key)
                .ok_or_else(|| Error::Malformed(format!("missing config key {key:?}")))?;
            raw.parse()
                .map_err(|_| Error::Malformed(format!("bad value {raw:?} for {key:?}")))
        }
        let predictor_raw: String = get(&mut kv, "predictor_input")?;
        let config = ModelConfig {
            image_height: get(&mut kv, "image_height")?,
            image_width: get(&mut kv, "image_width")?,
            channels: get(&mut kv, "channels")?,
            patch_size: get(&mut kv, "patch_size")?,
            latent_dim: get(&mut kv, "latent_dim")?,
            heads: get(&mut kv, "heads")?,
            layers: get(&mut kv, "layers")?,
            mlp_hidden: get(&mut kv, "mlp_hidden")?,
            classes: get(&mut kv, "classes")?,
            position_dim: get(&mut kv, "position_dim")?,
            dropout: get(&mut kv, "dropout")?,
            predictor_input: PredictorInput::parse(&predictor_raw)
                .ok_or_else(|| Error::Malformed(format!("predictor_input {predictor_raw:?}")))?,
        };
        let mode_name: String = get(&mut kv, "mode")?;
        let drop_prob: f64 = get(&mut kv, "drop_prob")?;
        let mode = TrainMode::parse(&mode_name, drop_prob)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        let seed = get(&mut kv, "seed")?;
        let data_seed = get(&mut kv, "data_seed")?;
        let best = get(&mut kv, "best_val_loss")?;
        if let Some(k) = kv.keys().next() {
            return Err(Error::Malformed(format!("unknown config key {k:?}")));
        }
        Ok((config, mode, seed, data_seed, best))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = HashSet::new();
        let mut w = ByteWriter::new();
        w.bytes(&MAGIC);
        w.u32(VERSION);
        let doc = self.config_document();
        w.u32(doc.len() as u32);
        w.bytes(doc.as_bytes());
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateTensor(name.clone()));
            }
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {name}")))?;
            w.u16(name_len);
            w.bytes(name.as_bytes());
            w.u8(DTYPE_F32);
            w.u8(t.rank() as u8);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            for &v in t.data() {
                w.f32(v);
            }
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let doc_len = r.u32()? as usize;
        let doc = std::str::from_utf8(r.take(doc_len)?)
            .map_err(|_| Error::Malformed("config document is not UTF-8".into()))?;
        let (config, mode, seed, data_seed, best_val_loss) = Self::parse_config_document(doc)?;
        let count = r.u32()? as usize;
        // Smallest possible tensor record is 2 + 1 + 1 + 1 + 4 + 4 bytes.
        r.require(count.saturating_mul(13))?;
        let mut tensors = Vec::with_capacity(count);
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::DuplicateTensor(name));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Malformed(format!("tensor {name}: unknown dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            if !(1..=3).contains(&rank) {
                return Err(Error::Malformed(format!("tensor {name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Malformed(format!("tensor {name}: shape {shape:?}")))?;
            r.require(n.saturating_mul(4))?;
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<f32>>>()?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        r.finish()?;
        Ok(Checkpoint {
            config,
            mode,
            seed,
            data_seed,
            best_val_loss,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
