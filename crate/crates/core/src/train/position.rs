//! Per-layer adapters of the position-aware training variants.

use crate::autodiff::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::model::{Dropout, ModelConfig, PositionEncoding, PositionPredictor, PredictorInput};
use crate::real::Real;
use crate::tensor::Tensor;

/// Injects the embedding of `position` (zero-based) into every token:
/// `Dropout(GELU(LN(concat(z, e_p)) W_proj)) + z`.
pub fn position_encoding_forward<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    position: usize,
    params: &PositionEncoding<Var>,
    cfg: &ModelConfig,
    batch: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    let table_rows = tape.value(params.embeddings).rows();
    if position >= table_rows {
        return Err(Error::InvalidArgument(format!(
            "layer position {} outside 1..={table_rows}",
            position + 1
        )));
    }
    let embedding = tape.gather_rows(params.embeddings, &[position])?;
    let repeated = tape.tile_rows(embedding, batch * cfg.tokens())?;
    let h = tape.concat_last(&[z, repeated])?;
    let h = tape.layer_norm(h, params.norm_gain, params.norm_bias, LAYER_NORM_EPS)?;
    let h = tape.matmul(h, params.projection)?;
    let h = tape.gelu(h);
    let h = dropout.apply(tape, h)?;
    tape.add(h, z)
}

/// `u = LN(z_t) W_pred` on the class token (or the token mean) of each of
/// `batch` sequences; returns `[batch x L]` logits.
pub fn position_predict<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    params: &PositionPredictor<Var>,
    cfg: &ModelConfig,
    batch: usize,
) -> Result<Var> {
    let tokens = cfg.tokens();
    let pooled = match cfg.predictor_input {
        PredictorInput::ClassToken => {
            let rows: Vec<usize> = (0..batch).map(|b| b * tokens).collect();
            tape.gather_rows(z, &rows)?
        }
        PredictorInput::MeanToken => {
            let mut avg = vec![T::zero(); batch * batch * tokens];
            let w = T::of(1.0 / tokens as f64);
            for b in 0..batch {
                for t in 0..tokens {
                    avg[b * batch * tokens + b * tokens + t] = w;
                }
            }
            let avg = tape.constant(Tensor::new(&[batch, batch * tokens], avg)?);
            tape.matmul(avg, z)?
        }
    };
    let normed = tape.layer_norm(pooled, params.norm_gain, params.norm_bias, LAYER_NORM_EPS)?;
    tape.matmul(normed, params.weight)
}
