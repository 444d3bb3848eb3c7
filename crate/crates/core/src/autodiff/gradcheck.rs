use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Compare reverse-mode gradients of a scalar function against central
/// differences.
///
/// `f` receives a fresh graph and the grad-enabled input leaf holding `x`.
/// Returns the largest `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`
/// over all components of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    Ok(grad_pairs(f, x, eps)?
        .into_iter()
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + 1e-12))
        .fold(0.0, f64::max))
}

/// `(analytic, numeric)` derivative for every component of `x`.
pub fn grad_pairs<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !x.is_finite() {
        return Err(Error::Validation("grad_check input must be finite".into()));
    }
    let mut g = Graph::new();
    let leaf = g.input(x.clone(), true);
    let out = f(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros_like(x));

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::inference();
        let leaf = g.input(probe, false);
        let out = f(&mut g, leaf)?;
        g.value(out).item()
    };

    let mut out = Vec::with_capacity(x.numel());
    for k in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[k] += eps;
        let mut minus = x.clone();
        minus.data_mut()[k] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        out.push((analytic.data()[k], numeric));
    }
    Ok(out)
}
