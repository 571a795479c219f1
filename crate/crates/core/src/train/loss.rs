use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Position-prediction logits of one layer and the position it actually
/// held (zero-based), shared by every row of the batch.
#[derive(Clone, Copy, Debug)]
pub struct PositionTarget {
    pub logits: Var,
    pub position: usize,
}

/// `L_out + sum_i L_i`. With `required = Some(n)` the predictor list must
/// have exactly `n` entries. An empty list returns the plain classification
/// loss node itself.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    predictions: &[PositionTarget],
    required: Option<usize>,
) -> Result<Var> {
    if let Some(n) = required {
        if predictions.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} position predictions, got {}",
                predictions.len()
            )));
        }
    }
    let mut loss = tape.cross_entropy(logits, targets)?;
    for p in predictions {
        let positions = vec![p.position; targets.len()];
        let term = tape.cross_entropy(p.logits, &positions)?;
        loss = tape.add(loss, term)?;
    }
    Ok(loss)
}
