//! Analytic verification harness for the inner/outer update rule.
//!
//! On quadratic toy losses the expected effect of k inner SGD steps
//! followed by one outer interpolation can be written down: a gradient
//! step on the summed task losses plus a penalty term that rewards
//! per-task gradients for pointing the same way. The tasks here have
//! exact gradients and few enough inner steps that the expectation
//! over batch orderings is computed by full enumeration, so the
//! trainer's update direction can be checked against closed-form
//! calculus instead of against itself.

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::trainer::{sgd_step, OuterKind, OuterState};

/// Toy task with loss L(theta) = 0.5 * ||theta - c||^2 and gradient
/// theta - c. The Hessian is the identity, which keeps every
/// composition of SGD steps exactly linear in theta.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    pub c: Vec<f64>,
}

impl QuadraticTask {
    pub fn loss(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.c).map(|(t, c)| 0.5 * (t - c) * (t - c)).sum()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.c).map(|(t, c)| t - c).collect()
    }
}

/// Coefficient on each distinct gradient pair in the alignment
/// penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairWeight {
    /// alpha per pair. The reference form for the order-of-accuracy
    /// check: the expected update differs from this objective's
    /// gradient by a residual linear in alpha.
    Full,
    /// alpha/2 per pair. For two inner steps on these tasks this
    /// reproduces the expected update exactly, to rounding error,
    /// which pins the trainer arithmetic much tighter than the
    /// order-of-accuracy fit alone.
    Half,
}

impl PairWeight {
    fn factor(self) -> f64 {
        match self {
            PairWeight::Full => 1.0,
            PairWeight::Half => 0.5,
        }
    }
}

/// Value of the surrogate objective: sum of task losses minus the
/// weighted sum over distinct pairs of gradient dot products.
pub fn surrogate_value(tasks: &[QuadraticTask], theta: &[f64], alpha: f64, weight: PairWeight) -> f64 {
    let mut v: f64 = tasks.iter().map(|t| t.loss(theta)).sum();
    let w = weight.factor() * alpha;
    for i in 0..tasks.len() {
        for j in 0..i {
            let gi = tasks[i].grad(theta);
            let gj = tasks[j].grad(theta);
            let dot: f64 = gi.iter().zip(&gj).map(|(a, b)| a * b).sum();
            v -= w * dot;
        }
    }
    v
}

/// Closed-form gradient of [`surrogate_value`]. With identity
/// Hessians, d/dtheta (g_i . g_j) = g_i + g_j.
pub fn surrogate_grad(tasks: &[QuadraticTask], theta: &[f64], alpha: f64, weight: PairWeight) -> Vec<f64> {
    let dim = theta.len();
    let mut grad = vec![0.0; dim];
    for t in tasks {
        for (g, v) in grad.iter_mut().zip(t.grad(theta)) {
            *g += v;
        }
    }
    let w = weight.factor() * alpha;
    for i in 0..tasks.len() {
        for j in 0..i {
            let gi = tasks[i].grad(theta);
            let gj = tasks[j].grad(theta);
            for d in 0..dim {
                grad[d] -= w * (gi[d] + gj[d]);
            }
        }
    }
    grad
}

/// Deliberate defect injected into the update rule so the
/// verification suites can prove they would notice one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    None,
    /// Outer step walks away from the inner result instead of toward
    /// it.
    FlipOuterSign,
}

fn pack(theta: &[f64]) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("theta", Tensor::row(theta.to_vec()));
    p
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(a: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(a, k - 1, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(&mut idx, n, &mut out);
    out
}

/// Expected update direction of one training iteration on the given
/// tasks, normalized by alpha * beta. Every ordering of the tasks is
/// run through the real inner-step and outer-step code (plain-SGD
/// outer), and the resulting parameter movements are averaged. The
/// k=1 case has a single ordering and reduces to a plain descent
/// direction.
pub fn expected_alignment_update(
    tasks: &[QuadraticTask],
    theta: &[f64],
    alpha: f64,
    beta: f64,
    mutation: Mutation,
) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(Error::Config("need at least one task".into()));
    }
    if tasks.iter().any(|t| t.c.len() != theta.len()) {
        return Err(Error::Config("task dimension does not match theta".into()));
    }
    let sign = match mutation {
        Mutation::None => 1.0,
        Mutation::FlipOuterSign => -1.0,
    };
    let dim = theta.len();
    let orderings = permutations(tasks.len());
    let mut mean = vec![0.0; dim];
    for order in &orderings {
        let outer_init = pack(theta);
        let mut inner = outer_init.clone();
        for &idx in order {
            let g = pack(&tasks[idx].grad(&inner.flatten()));
            sgd_step(&mut inner, &g, alpha)?;
        }
        let mut outer = outer_init;
        let mut state = OuterState::new(OuterKind::Sgd, dim);
        state.step_signed(&mut outer, &inner, beta, sign)?;
        let after = outer.flatten();
        for d in 0..dim {
            mean[d] += (theta[d] - after[d]) / (alpha * beta);
        }
    }
    let n = orderings.len() as f64;
    for v in &mut mean {
        *v /= n;
    }
    Ok(mean)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual between the expected update and the full-weight
/// surrogate gradient at one inner rate.
pub fn alignment_residual(
    tasks: &[QuadraticTask],
    theta: &[f64],
    alpha: f64,
    mutation: Mutation,
) -> Result<f64> {
    let expected = expected_alignment_update(tasks, theta, alpha, 0.5, mutation)?;
    let reference = surrogate_grad(tasks, theta, alpha, PairWeight::Full);
    let diff: Vec<f64> = expected.iter().zip(&reference).map(|(a, b)| a - b).collect();
    let denom = norm(&reference);
    if denom == 0.0 {
        return Err(Error::Config("surrogate gradient vanished; pick a different theta".into()));
    }
    Ok(norm(&diff) / denom)
}
