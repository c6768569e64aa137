//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the loss value, so it shares nothing
//! with the backward sweep it is checking.

use super::{NnError, NodeId, ParamSet, Tape};

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `∂loss/∂p` from [`Tape::backward`] with central differences of
/// the loss built by `build` for every entry of every parameter.
pub fn check_gradients<F>(params: &mut ParamSet, build: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<NodeId, NnError>,
{
    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |params: &ParamSet| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let loss = build(params, &mut tape)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| NnError::NotScalarLoss(tape.value(loss).shape().to_vec()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    let ids: Vec<_> = (0..params.len()).collect();
    for pi in ids {
        let id = super::ParamId(pi);
        let n = probe.get(id).value.len();
        for k in 0..n {
            let orig = probe.get(id).value.data()[k];
            probe.get_mut(id).value.data_mut()[k] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[pi][k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((probe.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
