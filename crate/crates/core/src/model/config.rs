use crate::error::{Error, Result};

/// Architectural hyperparameters of the vision transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
    /// Width of the learned per-position layer embedding.
    pub position_dim: usize,
    pub dropout: f64,
    /// Which tokens feed the position predictors.
    pub predictor_input: PredictorInput,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PredictorInput {
    #[default]
    ClassToken,
    MeanToken,
}

impl PredictorInput {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorInput::ClassToken => "class",
            PredictorInput::MeanToken => "mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "class" => Some(PredictorInput::ClassToken),
            "mean" => Some(PredictorInput::MeanToken),
            _ => None,
        }
    }
}

impl Default for ModelConfig {
    /// The desk-scale configuration: 16x16 grey images, 4x4 patches,
    /// 6 layers of width 32 with 4 heads.
    fn default() -> Self {
        ModelConfig {
            image_height: 16,
            image_width: 16,
            channels: 1,
            patch_size: 4,
            latent_dim: 32,
            heads: 4,
            layers: 6,
            mlp_hidden: 64,
            classes: 10,
            position_dim: 32,
            dropout: 0.1,
            predictor_input: PredictorInput::ClassToken,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("latent_dim", self.latent_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("mlp_hidden", self.mlp_hidden),
            ("classes", self.classes),
            ("position_dim", self.position_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidConfig(format!(
                "patch size {} does not divide image {}x{}",
                self.patch_size, self.image_height, self.image_width
            )));
        }
        if !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "{} heads do not divide latent dim {}",
                self.heads, self.latent_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Number of patches `N`.
    pub fn patches(&self) -> usize {
        (self.image_height / self.patch_size) * (self.image_width / self.patch_size)
    }

    /// Sequence length `N + 1` including the class token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.heads
    }

    /// Length of one flattened patch, `P^2 * C`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width * self.channels
    }
}
