use super::{Label, TrainingError};
use crate::numerics::{Array, Tape, Var};

/// Laplace negative log-likelihood of `target` under location `mean` and
/// scale `scale`, averaged over every element. All three are `[T̂, 2]`.
pub fn regression_loss(tape: &mut Tape, mean: Var, scale: Var, target: Var) -> Result<Var, TrainingError> {
    if tape.value(scale).data().iter().any(|&b| !(b > 0.0)) {
        return Err(TrainingError::InvalidArgument("Laplace scale must be positive".into()));
    }
    let diff = tape.sub(target, mean)?;
    let abs = tape.abs(diff)?;
    let ratio = tape.div(abs, scale)?;
    let twice = tape.scale(scale, 2.0)?;
    let log = tape.ln(twice)?;
    let nll = tape.add(ratio, log)?;
    Ok(tape.mean(nll)?)
}

/// Binary focal loss (gamma 2) averaged over the non-ignored modes, computed
/// from pre-sigmoid logits (`[1, 1]` each). Returns a gradient-free zero
/// when every mode is ignored.
pub fn confidence_loss(tape: &mut Tape, logits: &[Var], labels: &[Label]) -> Result<Var, TrainingError> {
    if logits.len() != labels.len() {
        return Err(TrainingError::InvalidArgument(format!(
            "{} confidences for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (&z, &label) in logits.iter().zip(labels) {
        // With u = z for negatives and u = -z for positives, the probability
        // of the wrong class is sigmoid(u) and the log loss is softplus(u).
        let u = match label {
            Label::Ignored => continue,
            Label::Positive => tape.scale(z, -1.0)?,
            Label::Negative => z,
        };
        let wrong = tape.sigmoid(u)?;
        let weight = tape.square(wrong)?;
        let nll = tape.softplus(u)?;
        let term = tape.mul(weight, nll)?;
        terms.push(tape.reshape(term, &[1, 1])?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(Array::scalar(0.0))?);
    }
    let all = tape.concat_rows(&terms)?;
    Ok(tape.mean(all)?)
}
