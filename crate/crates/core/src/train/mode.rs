use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Training regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainMode {
    /// Layers always run in their stored order.
    Baseline,
    /// A fresh uniformly random layer order for every batch.
    LayerShuffle,
    /// Shuffled order; each layer also receives its current position.
    LayerShufflePosition,
    /// Shuffled order; each layer also predicts its current position.
    LayerShufflePredict,
    /// Stored order; each layer is skipped independently with the given
    /// probability.
    LayerDrop(f64),
}

impl TrainMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TrainMode::LayerDrop(p) if !(0.0..1.0).contains(&p) => Err(Error::InvalidConfig(
                format!("layer drop probability {p} outside [0, 1)"),
            )),
            _ => Ok(()),
        }
    }

    /// Whether training (and matching validation) permutes the layers.
    pub fn shuffles(&self) -> bool {
        matches!(
            self,
            TrainMode::LayerShuffle
                | TrainMode::LayerShufflePosition
                | TrainMode::LayerShufflePredict
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::LayerShuffle => "shuffle",
            TrainMode::LayerShufflePosition => "shuffle-position",
            TrainMode::LayerShufflePredict => "shuffle-predict",
            TrainMode::LayerDrop(_) => "layerdrop",
        }
    }

    /// Parses a CLI mode name. `layerdrop` takes `drop_prob`.
    pub fn parse(name: &str, drop_prob: f64) -> Result<Self> {
        let mode = match name {
            "baseline" => TrainMode::Baseline,
            "shuffle" => TrainMode::LayerShuffle,
            "shuffle-position" => TrainMode::LayerShufflePosition,
            "shuffle-predict" => TrainMode::LayerShufflePredict,
            "layerdrop" => TrainMode::LayerDrop(drop_prob),
            other => {
                return Err(Error::InvalidArgument(format!("unknown train mode {other:?}")))
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    /// Accepts the CLI names; `layerdrop` may carry its probability as
    /// `layerdrop:0.2` and defaults to 0.2.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("layerdrop", p)) => {
                let p = p
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad drop probability {p:?}")))?;
                TrainMode::parse("layerdrop", p)
            }
            _ => TrainMode::parse(s, 0.2),
        }
    }
}
