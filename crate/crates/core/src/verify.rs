//! Bundled self-verification suites.
//!
//! These are the checks a release must pass: finite-difference
//! validation of every gradient path, the order-of-accuracy fit tying
//! the training update to its closed-form surrogate, and detachment
//! checks on the adversarial objective. The CLI `verify` command runs
//! them all; the `mutation` knob exists so tests can prove the suites
//! would catch a planted defect.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, seed_for, BoundParams, Graph, ParamSet};
use crate::encoders::{Encoder, EncoderKind, SequenceEncoder};
use crate::error::Result;
use crate::objectives::{adversarial_losses, bce_loss, disc_init_params, disc_loglik, MiniBatch};
use crate::trainer::oracle::{
    alignment_residual, expected_alignment_update, surrogate_grad, Mutation, PairWeight,
    QuadraticTask,
};

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    /// Largest deviation the suite observed, in its own units.
    pub max_error: f64,
    pub detail: String,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "pass" } else { "FAIL" };
        write!(f, "{status}  {:<24} max error {:.3e}  {}", self.name, self.max_error, self.detail)
    }
}

/// One random small model-plus-batch instance.
struct Instance {
    encoder: Encoder,
    params: ParamSet,
    batch: MiniBatch,
}

fn random_instance(rng: &mut ChaCha8Rng, kind: EncoderKind, seed: u64) -> Instance {
    let dim = rng.random_range(1..=4usize);
    let window = rng.random_range(1..=5usize);
    let vocab = rng.random_range(2..=10u32);
    let batch_size = rng.random_range(1..=2usize);
    let n_neg = rng.random_range(1..=2usize);
    let encoder = Encoder::new(kind, dim, window);
    // One merged set so a single bound graph serves encoder and
    // discriminator paths alike; the name prefixes keep them apart.
    let mut merged = ParamSet::new();
    for (name, t) in encoder.init_params(vocab, seed).iter() {
        merged.insert(name.clone(), t.clone());
    }
    for (name, t) in disc_init_params(dim, rng.random_range(1..=3usize), seed ^ 0x9e37).iter() {
        merged.insert(name.clone(), t.clone());
    }
    let mut windows = Vec::with_capacity(batch_size);
    let mut targets = Vec::with_capacity(batch_size);
    let mut negatives = Vec::with_capacity(batch_size);
    let mut head = Vec::with_capacity(batch_size);
    for b in 0..batch_size {
        let pad = rng.random_range(0..window);
        let mut w = vec![0u32; pad];
        while w.len() < window {
            w.push(rng.random_range(1..=vocab));
        }
        windows.push(w);
        targets.push(rng.random_range(1..=vocab));
        negatives.push((0..n_neg).map(|_| rng.random_range(1..=vocab)).collect());
        head.push(b % 2 == 0);
    }
    Instance { encoder, params: merged, batch: MiniBatch { windows, targets, negatives, head } }
}

/// Finite-difference check over `instances` random small models,
/// rotating through both encoders and three loss paths: prediction
/// loss, discriminator log-likelihood, and their weighted combination.
/// Reports the largest relative error seen; fails if any coordinate
/// exceeds `tol`.
pub fn gradcheck_suite(instances: usize, seed: u64) -> SuiteReport {
    let tol = 1e-4;
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, "verify:gradcheck"));
    let mut max_rel = 0.0f64;
    for i in 0..instances {
        let kind = if i % 2 == 0 { EncoderKind::Recurrent } else { EncoderKind::Attention };
        let inst = random_instance(&mut rng, kind, seed.wrapping_add(i as u64));
        let path = i % 3;
        let lambda = 0.3;
        let run = gradcheck(
            &inst.params,
            |g, bound| {
                let reprs = inst.encoder.encode(g, bound, &inst.batch.windows)?;
                match path {
                    0 => {
                        let emb = bound.node("enc.emb")?;
                        bce_loss(g, emb, reprs, &inst.batch.targets, &inst.batch.negatives)
                    }
                    1 => disc_loglik(g, bound, reprs, &inst.batch.head),
                    _ => {
                        let emb = bound.node("enc.emb")?;
                        let bce = bce_loss(g, emb, reprs, &inst.batch.targets, &inst.batch.negatives)?;
                        let ll = disc_loglik(g, bound, reprs, &inst.batch.head)?;
                        let scaled = g.scale(ll, lambda)?;
                        g.add(bce, scaled)
                    }
                }
            },
            eps,
            tol,
        );
        match run {
            Ok(rel) => max_rel = max_rel.max(rel),
            Err(e) => {
                return SuiteReport {
                    name: "gradcheck",
                    passed: false,
                    max_error: f64::INFINITY,
                    detail: format!("instance {i} ({kind}, path {path}): {e}"),
                };
            }
        }
    }
    SuiteReport {
        name: "gradcheck",
        passed: max_rel < tol,
        max_error: max_rel,
        detail: format!("{instances} instances, tol {tol:.0e}"),
    }
}

/// Order-of-accuracy fit: on two-parameter quadratic tasks with two
/// inner steps, the relative gap between the expected update and the
/// full-weight surrogate gradient must fall by a factor in [5, 20]
/// per decade of the inner rate. The half-weight surrogate must match
/// the expected update to rounding error.
pub fn surrogate_suite(mutation: Mutation) -> SuiteReport {
    let alphas = [1e-2, 1e-3, 1e-4];
    let fixtures: Vec<(Vec<QuadraticTask>, Vec<f64>)> = vec![
        (
            vec![QuadraticTask { c: vec![1.0, -0.5] }, QuadraticTask { c: vec![-0.3, 2.0] }],
            vec![0.9, 0.1],
        ),
        (
            vec![QuadraticTask { c: vec![0.2, 0.7] }, QuadraticTask { c: vec![-1.1, 0.4] }],
            vec![-0.6, 1.3],
        ),
        (
            vec![QuadraticTask { c: vec![3.0, 0.0] }, QuadraticTask { c: vec![0.0, -2.0] }],
            vec![0.5, 0.5],
        ),
    ];
    let mut worst_factor_gap = 0.0f64;
    let mut worst_exact = 0.0f64;
    for (tasks, theta) in &fixtures {
        let residuals: Result<Vec<f64>> =
            alphas.iter().map(|&a| alignment_residual(tasks, theta, a, mutation)).collect();
        let residuals = match residuals {
            Ok(r) => r,
            Err(e) => {
                return SuiteReport {
                    name: "surrogate",
                    passed: false,
                    max_error: f64::INFINITY,
                    detail: format!("{e}"),
                };
            }
        };
        for w in residuals.windows(2) {
            let factor = w[0] / w[1];
            if !(5.0..=20.0).contains(&factor) {
                return SuiteReport {
                    name: "surrogate",
                    passed: false,
                    max_error: factor,
                    detail: format!("decade factor {factor:.2} outside [5, 20]; residuals {residuals:?}"),
                };
            }
            worst_factor_gap = worst_factor_gap.max((factor - 10.0).abs());
        }
        // Half-weight exactness at the largest alpha.
        let e = expected_alignment_update(tasks, theta, alphas[0], 0.5, mutation)
            .expect("fixture update");
        let g = surrogate_grad(tasks, theta, alphas[0], PairWeight::Half);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let diff = e
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / gn;
        worst_exact = worst_exact.max(diff);
        if diff > 1e-10 {
            return SuiteReport {
                name: "surrogate",
                passed: false,
                max_error: diff,
                detail: "half-weight surrogate no longer matches the expected update".into(),
            };
        }
    }
    SuiteReport {
        name: "surrogate",
        passed: true,
        max_error: worst_exact,
        detail: format!(
            "{} fixtures; worst decade-factor deviation from 10: {worst_factor_gap:.2}",
            fixtures.len()
        ),
    }
}

/// Detachment checks on the adversarial objective: gradients never
/// cross sides, and the lambda = 0 predictor gradient is exactly the
/// plain prediction-loss gradient.
pub fn stop_gradient_suite() -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(3, "verify:stopgrad"));
    let mut max_err = 0.0f64;
    for trial in 0..4u64 {
        let kind = if trial % 2 == 0 { EncoderKind::Recurrent } else { EncoderKind::Attention };
        let inst = random_instance(&mut rng, kind, 77 + trial);
        let (enc_params, disc_params) = crate::trainer::split_params(&inst.params);

        let with_term =
            adversarial_losses(&inst.encoder, &enc_params, &disc_params, &inst.batch, 0.5);
        let without =
            adversarial_losses(&inst.encoder, &enc_params, &disc_params, &inst.batch, 0.0);
        let (with_term, without) = match (with_term, without) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                return SuiteReport {
                    name: "stop-gradient",
                    passed: false,
                    max_error: f64::INFINITY,
                    detail: format!("trial {trial}: {e}"),
                };
            }
        };
        // No side owns the other's parameters.
        let crossed = with_term.pred_grads.names().any(|n| n.starts_with("disc."))
            || with_term.disc_grads.names().any(|n| n.starts_with("enc."));
        if crossed {
            return SuiteReport {
                name: "stop-gradient",
                passed: false,
                max_error: f64::INFINITY,
                detail: format!("trial {trial}: gradient crossed between predictor and discriminator"),
            };
        }
        // lambda = 0: predictor gradient equals the pure prediction
        // loss gradient computed on a fresh graph.
        let pure = {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &enc_params);
            let reprs = inst.encoder.encode(&mut g, &bound, &inst.batch.windows).unwrap();
            let emb = bound.node("enc.emb").unwrap();
            let loss =
                bce_loss(&mut g, emb, reprs, &inst.batch.targets, &inst.batch.negatives).unwrap();
            g.backward(loss).unwrap();
            bound.grads(&g)
        };
        let diff = without.pred_grads.minus(&pure).map(|d| d.norm()).unwrap_or(f64::INFINITY);
        max_err = max_err.max(diff);
        if diff > 1e-12 {
            return SuiteReport {
                name: "stop-gradient",
                passed: false,
                max_error: diff,
                detail: format!("trial {trial}: lambda=0 gradient differs from plain prediction gradient"),
            };
        }
        // The discriminator gradient must not depend on lambda.
        let disc_diff = with_term
            .disc_grads
            .minus(&without.disc_grads)
            .map(|d| d.norm())
            .unwrap_or(f64::INFINITY);
        max_err = max_err.max(disc_diff);
        if disc_diff > 1e-12 {
            return SuiteReport {
                name: "stop-gradient",
                passed: false,
                max_error: disc_diff,
                detail: format!("trial {trial}: discriminator gradient changed with lambda"),
            };
        }
    }
    SuiteReport {
        name: "stop-gradient",
        passed: true,
        max_error: max_err,
        detail: "4 trials across both encoders".into(),
    }
}

/// Run every suite. `mutation` plants a defect in the update rule so
/// callers can verify the suites have teeth; production callers pass
/// [`Mutation::None`].
pub fn run_all(gradcheck_instances: usize, mutation: Mutation) -> Vec<SuiteReport> {
    vec![
        gradcheck_suite(gradcheck_instances, 11),
        surrogate_suite(mutation),
        stop_gradient_suite(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_gradcheck_sweep_passes() {
        let report = gradcheck_suite(12, 5);
        assert!(report.passed, "{report}");
        assert!(report.max_error < 1e-4);
    }

    #[test]
    fn surrogate_suite_passes_clean() {
        let report = surrogate_suite(Mutation::None);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn surrogate_suite_catches_flipped_outer_sign() {
        let report = surrogate_suite(Mutation::FlipOuterSign);
        assert!(!report.passed, "planted defect went unnoticed: {report}");
    }

    #[test]
    fn stop_gradient_suite_passes() {
        let report = stop_gradient_suite();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn run_all_reports_every_suite() {
        let reports = run_all(6, Mutation::None);
        assert_eq!(reports.len(), 3);
        assert!(reports.iter().all(|r| r.passed));
        let display = reports.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("\n");
        assert!(display.contains("gradcheck") && display.contains("surrogate"));
    }
}
