use super::graph::{Graph, Perturbation, Real, Var};
use super::ParamSet;
use crate::error::{Error, Result};

/// A scalar loss that can be built on a graph of any precision.
pub trait LossGraph {
    fn build<T: Real>(&self, g: &mut Graph<'_, T>) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over trainable scalars of |analytic - numeric| / max(1e-8, |numeric|)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub scalars_checked: usize,
}

fn eval_loss<T: Real, L: LossGraph>(loss: &L, params: &ParamSet, p: Option<Perturbation>) -> Result<f64> {
    let mut g = match p {
        Some(p) => Graph::<T>::with_perturbation(params, p),
        None => Graph::<T>::new(params),
    };
    let v = loss.build(&mut g)?;
    let value = g.scalar_value(v).as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("gradcheck loss".into()));
    }
    Ok(value)
}

/// Compares reverse-mode gradients with central differences of step `eps`,
/// computing both in precision `T`.
pub fn gradcheck_in<T: Real, L: LossGraph>(loss: &L, params: &ParamSet, eps: f64) -> Result<GradCheckReport> {
    let mut g = Graph::<T>::new(params);
    let v = loss.build(&mut g)?;
    if !g.scalar_value(v).as_f64().is_finite() {
        return Err(Error::NonFinite("gradcheck loss".into()));
    }
    let analytic = g.backward(v)?;
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        scalars_checked: 0,
    };
    for (name, grad) in &analytic {
        for (i, a) in grad.iter().enumerate() {
            let plus = eval_loss::<T, L>(loss, params, Some(Perturbation { name: name.clone(), index: i, delta: eps }))?;
            let minus = eval_loss::<T, L>(loss, params, Some(Perturbation { name: name.clone(), index: i, delta: -eps }))?;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a.as_f64() - numeric).abs() / numeric.abs().max(1e-8);
            report.scalars_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Gradient check in `f64`. Single-precision central differences have a
/// rounding floor of roughly `ulp(loss) / eps`, far above 1e-3 relative for
/// small gradient entries, so verification runs the same graph at double
/// precision.
pub fn gradcheck<L: LossGraph>(loss: &L, params: &ParamSet, eps: f64) -> Result<GradCheckReport> {
    gradcheck_in::<f64, L>(loss, params, eps)
}
