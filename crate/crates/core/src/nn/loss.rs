//! Forecast losses and the recurrent-activation penalty, recorded on a tape.

use super::{NnError, NodeId, Tape};

/// Which forecast loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Ssmape,
    Mae,
}

impl LossKind {
    pub fn tag(self) -> &'static str {
        match self {
            LossKind::Ssmape => "ssmape",
            LossKind::Mae => "mae",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ssmape" => Ok(LossKind::Ssmape),
            "mae" => Ok(LossKind::Mae),
            other => Err(NnError::UnknownLoss(other.to_string())),
        }
    }
}

fn check_same(tape: &Tape, f: NodeId, a: NodeId) -> Result<(), NnError> {
    let (sf, sa) = (tape.value(f).shape(), tape.value(a).shape());
    if sf != sa {
        return Err(NnError::ShapeMismatch(format!(
            "forecast {sf:?} vs actual {sa:?}"
        )));
    }
    Ok(())
}

/// `mean |F − A|`.
pub fn loss_mae(tape: &mut Tape, forecast: NodeId, actual: NodeId) -> Result<NodeId, NnError> {
    check_same(tape, forecast, actual)?;
    let d = tape.sub(forecast, actual)?;
    let ad = tape.abs(d);
    Ok(tape.mean(ad))
}

/// `mean 2|F − A| / (|F| + |A|)`. Undefined where both sides are zero.
pub fn loss_smape(tape: &mut Tape, forecast: NodeId, actual: NodeId) -> Result<NodeId, NnError> {
    check_same(tape, forecast, actual)?;
    let fv = tape.value(forecast).data();
    let av = tape.value(actual).data();
    if let Some(i) = fv
        .iter()
        .zip(av)
        .position(|(f, a)| f.abs() + a.abs() == 0.0)
    {
        return Err(NnError::DivisionByZeroTerm(i));
    }
    let d = tape.sub(forecast, actual)?;
    let ad = tape.abs(d);
    let num = tape.scale(ad, 2.0);
    let af = tape.abs(forecast);
    let aa = tape.abs(actual);
    let den = tape.add(af, aa)?;
    let terms = tape.div(num, den)?;
    Ok(tape.mean(terms))
}

/// Smoothed SMAPE: `mean 2|F − A| / max(|F| + |A| + ε, 0.5 + ε)`. Defined
/// everywhere, including `F = A = 0`.
pub fn loss_ssmape(
    tape: &mut Tape,
    forecast: NodeId,
    actual: NodeId,
    epsilon: f64,
) -> Result<NodeId, NnError> {
    check_same(tape, forecast, actual)?;
    if !(epsilon > 0.0) {
        return Err(NnError::InvalidHyperparameter(format!(
            "epsilon = {epsilon}"
        )));
    }
    let d = tape.sub(forecast, actual)?;
    let ad = tape.abs(d);
    let num = tape.scale(ad, 2.0);
    let af = tape.abs(forecast);
    let aa = tape.abs(actual);
    let s = tape.add(af, aa)?;
    let s = tape.add_scalar(s, epsilon);
    let den = tape.max_scalar(s, 0.5 + epsilon);
    let terms = tape.div(num, den)?;
    Ok(tape.mean(terms))
}

/// Per-example quadratic cost `½ Σ_j (a_j − y_j)²`, averaged over rows.
pub fn loss_quadratic(
    tape: &mut Tape,
    forecast: NodeId,
    actual: NodeId,
) -> Result<NodeId, NnError> {
    check_same(tape, forecast, actual)?;
    let rows = tape.value(forecast).rows() as f64;
    let d = tape.sub(forecast, actual)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 0.5 / rows))
}

/// `(β/2) Σ R²` over every recurrent output in `outputs`.
pub fn l2_activation_penalty(
    tape: &mut Tape,
    outputs: &[NodeId],
    beta: f64,
) -> Result<NodeId, NnError> {
    if !(beta >= 0.0) {
        return Err(NnError::InvalidHyperparameter(format!("beta = {beta}")));
    }
    let (first, rest) = outputs
        .split_first()
        .ok_or_else(|| NnError::ShapeMismatch("activation penalty over no outputs".into()))?;
    let sq = tape.square(*first);
    let mut total = tape.sum(sq);
    for r in rest {
        let sq = tape.square(*r);
        let s = tape.sum(sq);
        total = tape.add(total, s)?;
    }
    Ok(tape.scale(total, beta / 2.0))
}

/// Plain per-element SMAPE terms, for evaluation outside a tape.
pub fn smape_terms(forecast: &[f64], actual: &[f64]) -> Result<Vec<f64>, NnError> {
    if forecast.len() != actual.len() {
        return Err(NnError::ShapeMismatch(format!(
            "forecast {} vs actual {}",
            forecast.len(),
            actual.len()
        )));
    }
    forecast
        .iter()
        .zip(actual)
        .enumerate()
        .map(|(i, (f, a))| {
            let den = f.abs() + a.abs();
            if den == 0.0 {
                Err(NnError::DivisionByZeroTerm(i))
            } else {
                Ok(2.0 * (f - a).abs() / den)
            }
        })
        .collect()
}
