use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` where the maximum was attained.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar-valued graph against central
/// differences with step `eps`, over every element of every input.
///
/// `build` receives a fresh graph and one leaf per input, and must return the
/// scalar loss. It is called `1 + 2 * total elements` times.
pub fn grad_check<T, F>(inputs: &[Tensor<T>], eps: f64, mut build: F) -> Result<GradCheckReport>
where
    T: Element,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut eval = |values: &[Tensor<T>], grad: bool| -> Result<(f64, Vec<Option<Tensor<T>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), grad)).collect();
        let loss = build(&mut g, &vars)?;
        let value = g.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        if !grad {
            return Ok((value, Vec::new()));
        }
        g.backward(loss)?;
        Ok((value, vars.iter().map(|&v| g.grad(v)).collect()))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.len() {
            let orig = input.data()[ei];
            work[ti].data_mut()[ei] = T::from_f64(orig.as_f64() + eps);
            let (plus, _) = eval(&work, false)?;
            work[ti].data_mut()[ei] = T::from_f64(orig.as_f64() - eps);
            let (minus, _) = eval(&work, false)?;
            work[ti].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti]
                .as_ref()
                .map(|g| g.data()[ei].as_f64())
                .unwrap_or(0.0);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite("grad_check gradient".into()));
            }
            let err = relative_error(a, numeric);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((ti, ei));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
