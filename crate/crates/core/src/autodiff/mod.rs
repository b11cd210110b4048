//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod graph;
pub mod kernels;

pub use graph::{gelu, sigmoid, Graph, Var};

use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient check of a scalar-valued graph function.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over all
/// coordinates of `input`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.leaf(&input.clone().with_grad());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; input.numel()]);

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(t);
        let y = f(&mut g, x)?;
        Ok(g.scalar(y))
    };
    let mut probe = input.clone();
    let mut worst = 0.0f64;
    for i in 0..input.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}
