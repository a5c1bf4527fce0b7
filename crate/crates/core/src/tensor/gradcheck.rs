//! Central-difference verification of tape gradients.

use super::{Graph, ParameterStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of scalar entries probed.
    pub checked: usize,
}

/// Compare the tape gradient of `model_fn` with `(f(θ+ε) − f(θ−ε)) / 2ε` for
/// every entry of every parameter. The error for one entry is
/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`; the worst one is reported.
pub fn finite_diff_check<S, F>(model_fn: F, params: &ParameterStore<S>, eps: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &ParameterStore<S>) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::contract(format!("finite difference step must be positive, got {eps}")));
    }
    let mut work = params.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let loss = model_fn(&mut g, &work)?;
    g.backward(loss)?;
    work.accumulate_grads(&g)?;
    let analytic: Vec<(String, Vec<f64>)> = work
        .iter()
        .map(|(n, t)| {
            let grad = t.grad().map(|g| g.iter().map(|x| x.to_f64_lossy()).collect()).unwrap_or_else(|| vec![0.0; t.numel()]);
            (n.to_string(), grad)
        })
        .collect();

    let probe = |store: &ParameterStore<S>| -> Result<f64> {
        let mut g = Graph::new();
        let v = model_fn(&mut g, store)?;
        let x = g.scalar_value(v).to_f64_lossy();
        if !x.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {x} while probing")));
        }
        Ok(x)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (name, grad) in &analytic {
        for (i, &a) in grad.iter().enumerate() {
            let orig = work.get(name).expect("own parameter").data()[i];
            work.get_mut(name).expect("own parameter").data_mut()[i] = orig + S::of(eps);
            let plus = probe(&work)?;
            work.get_mut(name).expect("own parameter").data_mut()[i] = orig - S::of(eps);
            let minus = probe(&work)?;
            work.get_mut(name).expect("own parameter").data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
