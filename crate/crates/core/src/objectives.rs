//! Training objectives: binary cross-entropy over sampled negatives for
//! next-item prediction, and the head/tail discriminator with its
//! adversarial coupling to the predictor.
//!
//! Score and logit values are clamped to [-30, 30] before any log or
//! sigmoid that feeds a log, so losses stay finite for arbitrary
//! parameter values. Outside the band the clamp blocks the gradient,
//! which is the standard saturation behavior.

use crate::autodiff::{BoundParams, Graph, NodeId, ParamSet, Tensor};
use crate::encoders::{score_items, Encoder, SequenceEncoder};
use crate::error::{Error, Result};

/// Numerical guard band for scores and discriminator logits.
pub const LOGIT_CLAMP: f64 = 30.0;

/// One training batch: aligned windows, their target items, sampled
/// negatives, and the head(1)/tail(0) label of each window's user.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub windows: Vec<Vec<u32>>,
    pub targets: Vec<u32>,
    pub negatives: Vec<Vec<u32>>,
    pub head: Vec<bool>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Incompatible("empty batch".into()));
        }
        if self.targets.len() != self.len()
            || self.negatives.len() != self.len()
            || self.head.len() != self.len()
        {
            return Err(Error::Incompatible(format!(
                "batch fields disagree: {} windows, {} targets, {} negative lists, {} labels",
                self.len(),
                self.targets.len(),
                self.negatives.len(),
                self.head.len()
            )));
        }
        let n = self.negatives[0].len();
        if self.negatives.iter().any(|negs| negs.len() != n) {
            return Err(Error::Incompatible("negative lists have unequal lengths".into()));
        }
        if self.targets.iter().any(|&t| t == 0) {
            return Err(Error::Incompatible("target item 0 is the padding id".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy with sampled negatives.
///
/// Per window: `-log sigmoid(s_target) - sum_j log(1 - sigmoid(s_neg_j))`,
/// then the mean over windows. With every score at zero this is
/// `(1 + n) ln 2`. `reprs` is the `[B, d]` encoder output.
pub fn bce_loss(
    g: &mut Graph,
    emb: NodeId,
    reprs: NodeId,
    targets: &[u32],
    negatives: &[Vec<u32>],
) -> Result<NodeId> {
    let batch = targets.len();
    if g.value(reprs).shape()[0] != batch || negatives.len() != batch {
        return Err(Error::Incompatible(format!(
            "bce: {} representations, {} targets, {} negative lists",
            g.value(reprs).shape()[0],
            targets.len(),
            negatives.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for i in 0..batch {
        let row = g.gather(reprs, &[i])?;
        let st = score_items(g, emb, row, &[targets[i]])?;
        let st = g.clamp(st, -LOGIT_CLAMP, LOGIT_CLAMP)?;
        let pt = g.sigmoid(st)?;
        let lt = g.log(pt)?;
        let mut window_ll = g.sum_all(lt)?;
        if !negatives[i].is_empty() {
            let sn = score_items(g, emb, row, &negatives[i])?;
            let sn = g.clamp(sn, -LOGIT_CLAMP, LOGIT_CLAMP)?;
            // 1 - sigmoid(s) == sigmoid(-s)
            let neg_sn = g.scale(sn, -1.0)?;
            let pn = g.sigmoid(neg_sn)?;
            let ln = g.log(pn)?;
            let ln_sum = g.sum_all(ln)?;
            window_ll = g.add(window_ll, ln_sum)?;
        }
        total = Some(match total {
            Some(acc) => g.add(acc, window_ll)?,
            None => window_ll,
        });
    }
    let total = total.expect("batch validated non-empty");
    g.scale(total, -1.0 / batch as f64)
}

// ── Discriminator ───────────────────────────────────────────────────

/// Fresh discriminator parameters: one tanh hidden layer and a sigmoid
/// output, operating on a `[1, dim]` representation.
pub fn disc_init_params(dim: usize, hidden: usize, seed: u64) -> ParamSet {
    let mut params = ParamSet::new();
    let bound1 = (6.0 / (dim + hidden) as f64).sqrt();
    let bound2 = (6.0 / (hidden + 1) as f64).sqrt();
    params.insert_uniform("disc.w1", &[dim, hidden], bound1, seed);
    params.insert("disc.b1", Tensor::zeros(&[1, hidden]));
    params.insert_uniform("disc.w2", &[hidden, 1], bound2, seed);
    params.insert("disc.b2", Tensor::zeros(&[1, 1]));
    params
}

/// Head probability for each representation row: `[B, 1]` of
/// `sigmoid(clamp(tanh(x W1 + b1) W2 + b2))`, strictly inside (0, 1).
pub fn disc_forward(g: &mut Graph, p: &BoundParams, reprs: NodeId) -> Result<NodeId> {
    let w1 = p.node("disc.w1")?;
    let b1 = p.node("disc.b1")?;
    let w2 = p.node("disc.w2")?;
    let b2 = p.node("disc.b2")?;
    let rows = g.value(reprs).shape()[0];
    let mut outs = Vec::with_capacity(rows);
    for i in 0..rows {
        let x = g.gather(reprs, &[i])?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.tanh(h)?;
        let logit = g.matmul(h, w2)?;
        let logit = g.add(logit, b2)?;
        let logit = g.clamp(logit, -LOGIT_CLAMP, LOGIT_CLAMP)?;
        outs.push(g.sigmoid(logit)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat(&outs, 0)
    }
}

/// Mean per-row log-likelihood of the labels under the discriminator:
/// `mean_i [ R_i log f_i + (1 - R_i) log(1 - f_i) ]`, always <= 0.
pub fn disc_loglik(g: &mut Graph, p: &BoundParams, reprs: NodeId, head: &[bool]) -> Result<NodeId> {
    let rows = g.value(reprs).shape()[0];
    if head.len() != rows {
        return Err(Error::Incompatible(format!(
            "disc: {} representations but {} labels",
            rows,
            head.len()
        )));
    }
    let fd = disc_forward(g, p, reprs)?;
    loglik_from_probs(g, fd, head)
}

/// Label log-likelihood given already-computed head probabilities.
pub fn loglik_from_probs(g: &mut Graph, fd: NodeId, head: &[bool]) -> Result<NodeId> {
    let rows = g.value(fd).shape()[0];
    if head.len() != rows {
        return Err(Error::Incompatible(format!(
            "disc: {} probabilities but {} labels",
            rows,
            head.len()
        )));
    }
    let r_vals: Vec<f64> = head.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    let ones = g.constant(Tensor::new(vec![rows, 1], vec![1.0; rows])?);
    let r = g.constant(Tensor::new(vec![rows, 1], r_vals)?);
    let log_f = g.log(fd)?;
    let pos = g.mul(r, log_f)?;
    let one_minus_f = g.sub(ones, fd)?;
    let log_omf = g.log(one_minus_f)?;
    let one_minus_r = g.sub(ones, r)?;
    let neg = g.mul(one_minus_r, log_omf)?;
    let ll = g.add(pos, neg)?;
    g.mean_all(ll)
}

/// Gradients and loss values for one simultaneous adversarial step.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    /// d(pred_loss)/d(encoder params); names mirror the encoder set.
    pub pred_grads: ParamSet,
    /// d(disc_loss)/d(discriminator params); names mirror the disc set.
    pub disc_grads: ParamSet,
    pub bce: f64,
    pub pred_loss: f64,
    pub disc_loss: f64,
    /// Fraction of batch rows where thresholding the head probability
    /// at 0.5 reproduces the label.
    pub disc_accuracy: f64,
}

/// Compute both sides of the adversarial objective at the *same*
/// pre-update parameter values.
///
/// Predictor side: `bce + lambda * mean(loglik)` with the discriminator
/// frozen; minimizing pushes representations the discriminator cannot
/// separate. With `lambda == 0` the discriminator term is never built.
///
/// Discriminator side: `-mean(loglik)` with representations recomputed
/// from frozen encoder parameters, so its gradient cannot leak into the
/// encoder and both updates see the same snapshot.
pub fn adversarial_losses(
    encoder: &Encoder,
    enc_params: &ParamSet,
    disc_params: &ParamSet,
    batch: &MiniBatch,
    lambda: f64,
) -> Result<BatchGrads> {
    batch.validate()?;

    let mut ga = Graph::new();
    let enc_bound = BoundParams::bind(&mut ga, enc_params);
    let reprs = encoder.encode(&mut ga, &enc_bound, &batch.windows)?;
    let emb = enc_bound.node("enc.emb")?;
    let bce = bce_loss(&mut ga, emb, reprs, &batch.targets, &batch.negatives)?;
    let pred_root = if lambda != 0.0 {
        let disc_frozen = BoundParams::bind_frozen(&mut ga, disc_params);
        let ll = disc_loglik(&mut ga, &disc_frozen, reprs, &batch.head)?;
        let scaled = ga.scale(ll, lambda)?;
        ga.add(bce, scaled)?
    } else {
        bce
    };
    ga.backward(pred_root)?;
    let pred_grads = enc_bound.grads(&ga);
    let bce_value = ga.value(bce).item();
    let pred_loss = ga.value(pred_root).item();

    let mut gb = Graph::new();
    let enc_frozen = BoundParams::bind_frozen(&mut gb, enc_params);
    let reprs_b = encoder.encode(&mut gb, &enc_frozen, &batch.windows)?;
    let disc_bound = BoundParams::bind(&mut gb, disc_params);
    let fd = disc_forward(&mut gb, &disc_bound, reprs_b)?;
    let correct = gb
        .value(fd)
        .values()
        .iter()
        .zip(&batch.head)
        .filter(|&(&p, &h)| (p > 0.5) == h)
        .count();
    let disc_accuracy = correct as f64 / batch.len() as f64;
    let ll = loglik_from_probs(&mut gb, fd, &batch.head)?;
    let disc_root = gb.scale(ll, -1.0)?;
    gb.backward(disc_root)?;
    let disc_grads = disc_bound.grads(&gb);
    let disc_loss = gb.value(disc_root).item();

    Ok(BatchGrads { pred_grads, disc_grads, bce: bce_value, pred_loss, disc_loss, disc_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::encoders::{EncoderKind, RecurrentEncoder};

    fn batch(n_negs: usize) -> MiniBatch {
        MiniBatch {
            windows: vec![vec![0, 2, 3], vec![1, 4, 5]],
            targets: vec![1, 2],
            negatives: vec![vec![5; n_negs], vec![3; n_negs]],
            head: vec![true, false],
        }
    }

    #[test]
    fn zero_scores_give_ln2_per_term() {
        // Zeroed encoder -> zero representations -> all scores zero.
        let enc = RecurrentEncoder { dim: 3 };
        let mut params = enc.init_params(6, 0);
        let n = params.numel();
        params.assign_flat(&vec![0.0; n]).unwrap();
        let b = batch(4);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let reprs = enc.encode(&mut g, &bound, &b.windows).unwrap();
        let emb = bound.node("enc.emb").unwrap();
        let loss = bce_loss(&mut g, emb, reprs, &b.targets, &b.negatives).unwrap();
        let expected = 5.0 * std::f64::consts::LN_2;
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_direct_formula() {
        // One window, hand-placed embeddings, loss recomputed in scalar
        // arithmetic straight from its definition.
        let d = 2;
        let mut g = Graph::new();
        let emb_t = Tensor::matrix(4, d, vec![0.0, 0.0, 0.8, -0.4, -0.3, 1.2, 0.5, 0.5]).unwrap();
        let emb = g.leaf(emb_t.clone());
        let repr = g.leaf(Tensor::row(vec![1.5, -0.7]));
        let loss = bce_loss(&mut g, emb, repr, &[1], &[vec![2, 3]]).unwrap();

        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let r = [1.5, -0.7];
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let st = dot(&r, &[0.8, -0.4]);
        let s2 = dot(&r, &[-0.3, 1.2]);
        let s3 = dot(&r, &[0.5, 0.5]);
        let expected = -sigmoid(st).ln() - (1.0 - sigmoid(s2)).ln() - (1.0 - sigmoid(s3)).ln();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_is_finite_at_extreme_scores() {
        let mut g = Graph::new();
        let emb = g.leaf(Tensor::matrix(3, 1, vec![0.0, 1e3, -1e3]).unwrap());
        let repr = g.leaf(Tensor::row(vec![1e3]));
        // Target score 1e6, negative score -1e6; clamp keeps logs finite.
        let loss = bce_loss(&mut g, emb, repr, &[1], &[vec![2]]).unwrap();
        assert!(g.value(loss).item().is_finite());
        g.backward(loss).unwrap();
        assert!(g.grad(emb).all_finite());
    }

    #[test]
    fn gradcheck_bce_through_encoder() {
        let enc = RecurrentEncoder { dim: 3 };
        let params = enc.init_params(6, 5);
        let b = batch(2);
        let wrapped = Encoder::Recurrent(enc);
        let max_rel = gradcheck(
            &params,
            |g, bound| {
                let reprs = wrapped.encode(g, bound, &b.windows)?;
                let emb = bound.node("enc.emb")?;
                bce_loss(g, emb, reprs, &b.targets, &b.negatives)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(max_rel < 1e-6);
    }

    #[test]
    fn disc_loglik_matches_hand_value_and_is_nonpositive() {
        let dim = 2;
        let disc = disc_init_params(dim, 3, 7);
        let reprs_t = Tensor::matrix(2, dim, vec![0.4, -0.9, -1.1, 0.2]).unwrap();
        let head = [true, false];

        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &disc);
        let reprs = g.constant(reprs_t.clone());
        let fd = disc_forward(&mut g, &bound, reprs).unwrap();
        let f = g.value(fd).values().to_vec();
        let ll = disc_loglik(&mut g, &bound, reprs, &head).unwrap();
        let expected = 0.5 * (f[0].ln() + (1.0 - f[1]).ln());
        assert!((g.value(ll).item() - expected).abs() < 1e-12);
        assert!(g.value(ll).item() <= 0.0);
    }

    #[test]
    fn gradcheck_disc_loglik() {
        let disc = disc_init_params(3, 4, 2);
        let reprs_t = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.9, -0.5, 0.1, 0.4]).unwrap();
        let head = [false, true];
        let max_rel = gradcheck(
            &disc,
            |g, bound| {
                let reprs = g.constant(reprs_t.clone());
                disc_loglik(g, bound, reprs, &head)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(max_rel < 1e-6);
    }

    #[test]
    fn adversarial_grads_stay_on_their_own_side() {
        let encoder = Encoder::new(EncoderKind::Recurrent, 3, 4);
        let enc_params = encoder.init_params(6, 1);
        let disc_params = disc_init_params(3, 3, 1);
        let out = adversarial_losses(&encoder, &enc_params, &disc_params, &batch(2), 0.5).unwrap();
        let pred_names: Vec<&String> = out.pred_grads.names().collect();
        assert!(pred_names.iter().all(|n| n.starts_with("enc.")));
        assert_eq!(out.pred_grads.len(), enc_params.len());
        let disc_names: Vec<&String> = out.disc_grads.names().collect();
        assert!(disc_names.iter().all(|n| n.starts_with("disc.")));
        assert_eq!(out.disc_grads.len(), disc_params.len());
        // The adversarial term moved the predictor loss off pure bce.
        assert!((out.pred_loss - out.bce).abs() > 1e-12);
        assert!(out.disc_loss >= 0.0);
    }

    #[test]
    fn lambda_zero_reduces_to_pure_bce() {
        let encoder = Encoder::new(EncoderKind::Recurrent, 3, 4);
        let enc_params = encoder.init_params(6, 1);
        let disc_params = disc_init_params(3, 3, 1);
        let with = adversarial_losses(&encoder, &enc_params, &disc_params, &batch(2), 0.0).unwrap();
        assert_eq!(with.pred_loss, with.bce);

        // Gradients equal a bce-only backward pass exactly.
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &enc_params);
        let b = batch(2);
        let reprs = encoder.encode(&mut g, &bound, &b.windows).unwrap();
        let emb = bound.node("enc.emb").unwrap();
        let loss = bce_loss(&mut g, emb, reprs, &b.targets, &b.negatives).unwrap();
        g.backward(loss).unwrap();
        let pure = bound.grads(&g);
        assert_eq!(pure.flatten(), with.pred_grads.flatten());
        // Discriminator still gets a usable gradient.
        assert!(with.disc_grads.flatten().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn adversarial_pull_opposes_disc_confidence() {
        // With lambda > 0 the predictor gradient differs from pure bce:
        // it carries the term that degrades the discriminator.
        let encoder = Encoder::new(EncoderKind::Recurrent, 3, 4);
        let enc_params = encoder.init_params(6, 1);
        let disc_params = disc_init_params(3, 3, 1);
        let without = adversarial_losses(&encoder, &enc_params, &disc_params, &batch(2), 0.0).unwrap();
        let with = adversarial_losses(&encoder, &enc_params, &disc_params, &batch(2), 2.0).unwrap();
        let diff: Vec<f64> = with
            .pred_grads
            .flatten()
            .iter()
            .zip(without.pred_grads.flatten())
            .map(|(a, b)| a - b)
            .collect();
        assert!(diff.iter().any(|v| v.abs() > 1e-9));
        // Same batch, same parameters: discriminator side is unaffected
        // by lambda.
        assert_eq!(with.disc_grads.flatten(), without.disc_grads.flatten());
    }

    #[test]
    fn batch_validation_catches_misalignment() {
        let mut b = batch(2);
        b.targets.pop();
        assert!(b.validate().is_err());
        let mut b2 = batch(2);
        b2.negatives[1].pop();
        assert!(b2.validate().is_err());
        let mut b3 = batch(2);
        b3.targets[0] = 0;
        assert!(b3.validate().is_err());
    }
}
