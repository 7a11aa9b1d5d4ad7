use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::params::{BoundParams, ParamSet};

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must construct the scalar loss from freshly bound parameters;
/// it is re-invoked on perturbed copies, so it has to be a pure function
/// of the bound values. Returns the largest relative error seen, or an
/// error naming the first coordinate that exceeds `tol`.
///
/// Relative error uses max(1, |analytic|, |numeric|) in the denominator
/// so near-zero gradients are compared absolutely.
pub fn gradcheck<F>(params: &ParamSet, build: F, eps: f64, tol: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &BoundParams) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let bound = BoundParams::bind(&mut graph, params);
    let root = build(&mut graph, &bound)?;
    graph.backward(root)?;
    let analytic = bound.grads(&graph);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let b = BoundParams::bind(&mut g, p);
        let r = build(&mut g, &b)?;
        Ok(g.value(r).item())
    };

    let mut max_rel: f64 = 0.0;
    let flat = params.flatten();
    let grad_flat = analytic.flatten();
    // Offset -> (name, local index) for error messages.
    let mut coords = Vec::with_capacity(flat.len());
    for (name, tensor) in params.iter() {
        for i in 0..tensor.numel() {
            coords.push((name.clone(), i));
        }
    }

    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += eps;
        let mut minus = flat.clone();
        minus[i] -= eps;
        let loss_plus = eval(&params.unflatten_like(&plus)?)?;
        let loss_minus = eval(&params.unflatten_like(&minus)?)?;
        let numeric = (loss_plus - loss_minus) / (2.0 * eps);
        let denom = 1.0f64.max(grad_flat[i].abs()).max(numeric.abs());
        let rel = (grad_flat[i] - numeric).abs() / denom;
        if rel > tol {
            let (name, index) = coords[i].clone();
            return Err(Error::GradCheck { name, index, analytic: grad_flat[i], numeric });
        }
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    #[test]
    fn passes_on_composite_expression() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![0.3, -0.8, 1.1, 0.4]).unwrap());
        p.insert("x", Tensor::row(vec![0.7, -0.2]));
        let max_rel = gradcheck(
            &p,
            |g, b| {
                let w = b.node("w")?;
                let x = b.node("x")?;
                let h = g.matmul(x, w)?;
                let a = g.tanh(h)?;
                let s = g.sigmoid(a)?;
                g.mean_all(s)
            },
            1e-5,
            1e-7,
        )
        .unwrap();
        assert!(max_rel < 1e-7);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // Clamp with the value sitting outside the band has zero true
        // gradient through that coordinate; pairing it with an offset
        // whose gradient is 1 makes sum finite. A deliberately wrong
        // rule would be caught; here we instead check the checker flags
        // disagreement by comparing against a non-differentiable kink.
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(0.0));
        // |x| has no well-defined gradient at 0; central differences
        // report 0 while... reverse mode has no abs op, so emulate the
        // mismatch with clamp boundary exactly at the value.
        let err = gradcheck(
            &p,
            |g, b| {
                let x = b.node("x")?;
                let y = g.clamp(x, 0.0, 1.0)?;
                g.sum_all(y)
            },
            1e-5,
            1e-7,
        );
        // Analytic says 1 (inside closed band), numeric says 0.5.
        assert!(matches!(err, Err(Error::GradCheck { .. })));
    }
}
