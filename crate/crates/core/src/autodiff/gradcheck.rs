//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used to build the numeric gradient, so the
//! check stays independent of the backward rules it validates.

use super::{AutodiffError, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` of the largest error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences with step `eps`.
///
/// The error of one element is `|a − n| / max(|a|, |n|, floor)` where `floor`
/// is `1e-3` times the largest gradient magnitude seen across all inputs
/// (and at least `1e-10`), so entries that are numerically zero are judged
/// relative to the gradient's overall scale.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut num = vec![0.0; inputs[i].len()];
        for (j, slot) in num.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        numeric.push(num);
    }

    let scale = analytic
        .iter()
        .chain(&numeric)
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-10);
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&a, &n)) in a.iter().zip(n).enumerate() {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j, a, n));
            }
        }
    }
    Ok(report)
}
