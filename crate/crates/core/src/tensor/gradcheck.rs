use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use serde::Serialize;

/// Outcome of comparing backward gradients with central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// `(param index, entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a-b| / (|a|+|b|+1e-12)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-12)
}

/// Checks the gradient of the scalar built by `f` against central
/// differences `(f(p+h) - f(p-h)) / 2h` over every entry of `params`.
///
/// `f` receives a fresh graph and one leaf per parameter, in order.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if h <= 0.0 || h.is_nan() {
        return Err(Error::Param(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.item(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| g.leaf(p.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for pi in 0..params.len() {
        for (j, &a) in analytic[pi].iter().enumerate() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            checked += 1;
            if err > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(err);
                worst = Some((pi, j));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
        worst,
        tolerance: tol,
        passed: max_rel_error < tol,
    })
}
