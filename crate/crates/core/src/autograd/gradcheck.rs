use crate::error::{Error, Result};

use super::{Graph, Tensor, Var};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over every checked element.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, element, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Relative error with the denominator floored at `1e-8`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(build: &F, inputs: &[Tensor<f64>], with_grad: bool, fault: Option<&str>) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::<f64>::new();
    g.set_check_finite(true);
    if let Some(f) = fault {
        g.inject_fault(f);
    }
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(&t.clone().with_requires_grad(with_grad)))
        .collect();
    let out = build(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(g.shape(out).to_vec()));
    }
    Ok((g, vars, out))
}

/// Checks every element of every input of the scalar function `build`.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(build, inputs, eps, None)
}

/// As [`grad_check`], with the backward rule of `fault` deliberately corrupted.
pub fn grad_check_with_fault<F>(build: F, inputs: &[Tensor<f64>], eps: f64, fault: Option<&str>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = eval(&build, inputs, true, fault)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        for (j, &a) in analytic[k].iter().enumerate().take(t.numel()) {
            let orig = t.data()[j];
            probe[k].data_mut()[j] = orig + eps;
            let (gp, _, op) = eval(&build, &probe, false, None)?;
            let fp = gp.scalar(op);
            probe[k].data_mut()[j] = orig - eps;
            let (gm, _, om) = eval(&build, &probe, false, None)?;
            let fm = gm.scalar(om);
            probe[k].data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let e = rel_error(a, numeric);
            report.checked += 1;
            if e > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = e;
                report.worst = Some((k, j, a, numeric));
            }
        }
    }
    Ok(report)
}
