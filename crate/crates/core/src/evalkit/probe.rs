//! Activity probing of frozen sequence embeddings.
//!
//! Measures how much head/tail membership the per-window sequence
//! embeddings still leak: a fresh classifier is trained on the frozen
//! window encodings of half the users and scored on windows of the
//! other half, so the probe is judged on users it never saw. The
//! score is balanced accuracy (mean of per-class hit rates), so the
//! 20/80 cohort split cannot be gamed by majority voting: chance is
//! 0.5 no matter the imbalance, and an embedding that erases activity
//! information pins the probe there.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{seed_for, BoundParams, Graph, ParamSet, Tensor};
use crate::dataio::DatasetBundle;
use crate::encoders::{Encoder, SequenceEncoder};
use crate::error::{Error, Result};
use crate::objectives::{disc_forward, disc_init_params};

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        // Window embeddings are squashing-activation outputs, so their
        // coordinates are bounded and full-batch descent at this rate
        // converges within a few hundred epochs.
        ProbeConfig { hidden: 8, epochs: 400, lr: 0.5, seed: 101 }
    }
}

fn class_indices(labels: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    let head: Vec<usize> = labels.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i).collect();
    let tail: Vec<usize> = labels.iter().enumerate().filter(|(_, &h)| !h).map(|(i, _)| i).collect();
    if head.is_empty() || tail.is_empty() {
        return Err(Error::Incompatible("probe needs both classes present".into()));
    }
    Ok((head, tail))
}

/// Train a fresh classifier on (representation, label) rows with a
/// class-balanced log-likelihood: each class contributes its mean
/// log-probability equally, regardless of size. Full-batch gradient
/// descent, deterministic for a given seed.
pub fn train_probe(reprs: &Tensor, labels: &[bool], cfg: &ProbeConfig) -> Result<ParamSet> {
    let rows = reprs.shape()[0];
    let dim = reprs.shape()[1];
    if rows != labels.len() {
        return Err(Error::Incompatible(format!("{rows} representations but {} labels", labels.len())));
    }
    let (head_idx, tail_idx) = class_indices(labels)?;
    let mut probe = disc_init_params(dim, cfg.hidden, seed_for(cfg.seed, "probe:init"));
    for _ in 0..cfg.epochs {
        let mut g = Graph::new();
        let x = g.constant(reprs.clone());
        let bound = BoundParams::bind(&mut g, &probe);
        let fd = disc_forward(&mut g, &bound, x)?;
        let fh = g.gather(fd, &head_idx)?;
        let lh = g.log(fh)?;
        let mh = g.mean_all(lh)?;
        let ft = g.gather(fd, &tail_idx)?;
        let ones = g.constant(Tensor::new(vec![tail_idx.len(), 1], vec![1.0; tail_idx.len()])?);
        let omf = g.sub(ones, ft)?;
        let lt = g.log(omf)?;
        let mt = g.mean_all(lt)?;
        let s = g.add(mh, mt)?;
        let loss = g.scale(s, -0.5)?;
        g.backward(loss)?;
        let grads = bound.grads(&g);
        probe.add_scaled(&grads, -cfg.lr)?;
        if !probe.all_finite() {
            return Err(Error::NonFinite { op: "probe update" });
        }
    }
    Ok(probe)
}

/// Balanced accuracy of a trained probe at threshold 0.5: the mean of
/// the head hit rate and the tail hit rate.
pub fn balanced_accuracy(probe: &ParamSet, reprs: &Tensor, labels: &[bool]) -> Result<f64> {
    let rows = reprs.shape()[0];
    if rows != labels.len() {
        return Err(Error::Incompatible(format!("{rows} representations but {} labels", labels.len())));
    }
    let (head_idx, tail_idx) = class_indices(labels)?;
    let mut g = Graph::new();
    let x = g.constant(reprs.clone());
    let bound = BoundParams::bind_frozen(&mut g, probe);
    let fd = disc_forward(&mut g, &bound, x)?;
    let probs = g.value(fd).values();
    let head_hits = head_idx.iter().filter(|&&i| probs[i] > 0.5).count();
    let tail_hits = tail_idx.iter().filter(|&&i| probs[i] <= 0.5).count();
    Ok(0.5 * (head_hits as f64 / head_idx.len() as f64 + tail_hits as f64 / tail_idx.len() as f64))
}

/// Cap on encoded windows per user, so heavy users cannot flood the
/// probe sample with near-duplicate windows.
const WINDOWS_PER_USER: usize = 24;
/// Cap on probe rows per class per side, to bound probe cost.
const ROWS_PER_CLASS: usize = 600;

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn select_rows(reprs: &Tensor, rows: &[(usize, bool)]) -> Result<(Tensor, Vec<bool>)> {
    let dim = reprs.shape()[1];
    let mut flat = Vec::with_capacity(rows.len() * dim);
    let mut sel = Vec::with_capacity(rows.len());
    for &(r, label) in rows {
        flat.extend_from_slice(&reprs.values()[r * dim..(r + 1) * dim]);
        sel.push(label);
    }
    Ok((Tensor::new(vec![rows.len(), dim], flat)?, sel))
}

/// Downsample the majority class so both classes contribute equally,
/// then truncate to the per-class row budget.
fn balance(rows: &mut Vec<(usize, bool)>, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut head: Vec<(usize, bool)> = rows.iter().copied().filter(|&(_, h)| h).collect();
    let mut tail: Vec<(usize, bool)> = rows.iter().copied().filter(|&(_, h)| !h).collect();
    if head.is_empty() || tail.is_empty() {
        return Err(Error::Incompatible("probe needs both classes present".into()));
    }
    shuffle(&mut head, rng);
    shuffle(&mut tail, rng);
    let n = head.len().min(tail.len()).min(ROWS_PER_CLASS);
    head.truncate(n);
    tail.truncate(n);
    *rows = head;
    rows.extend(tail);
    Ok(())
}

/// Full probing protocol: split training users in half with a seeded
/// shuffle, encode a capped sample of each user's training windows
/// under frozen parameters, balance the classes, fit the probe on one
/// half's windows and report balanced accuracy on the other half's.
pub fn probe_balanced_accuracy(
    encoder: &Encoder,
    params: &ParamSet,
    bundle: &DatasetBundle,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let users: Vec<(u32, bool)> = bundle
        .head
        .iter()
        .filter(|(u, _)| bundle.tasks.get(u).is_some_and(|t| !t.is_empty()))
        .map(|(&u, &h)| (u, h))
        .collect();
    if users.len() < 4 {
        return Err(Error::Incompatible(format!(
            "only {} users; probe split needs at least 4",
            users.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, "probe:split"));
    let mut order = users;
    shuffle(&mut order, &mut rng);
    let half = order.len() / 2;

    let mut windows: Vec<Vec<u32>> = Vec::new();
    let mut sides: [Vec<(usize, bool)>; 2] = [Vec::new(), Vec::new()];
    for (i, &(user, is_head)) in order.iter().enumerate() {
        let tasks = &bundle.tasks[&user];
        let mut picks: Vec<usize> = (0..tasks.len()).collect();
        if picks.len() > WINDOWS_PER_USER {
            shuffle(&mut picks, &mut rng);
            picks.truncate(WINDOWS_PER_USER);
        }
        let side = &mut sides[usize::from(i >= half)];
        for t in picks {
            side.push((windows.len(), is_head));
            windows.push(tasks[t].window.clone());
        }
    }
    let [mut fit_rows, mut eval_rows] = sides;
    balance(&mut fit_rows, &mut rng)?;
    balance(&mut eval_rows, &mut rng)?;

    let mut g = Graph::new();
    let bound = BoundParams::bind_frozen(&mut g, params);
    let reprs = encoder.encode(&mut g, &bound, &windows)?;
    let all = g.value(reprs);

    let (fit_x, fit_y) = select_rows(&all, &fit_rows)?;
    let (eval_x, eval_y) = select_rows(&all, &eval_rows)?;
    let probe = train_probe(&fit_x, &fit_y, cfg)?;
    balanced_accuracy(&probe, &eval_x, &eval_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> ProbeConfig {
        ProbeConfig { hidden: 4, epochs: 150, lr: 0.5, seed: 5 }
    }

    fn clustered_data(n: usize, gap: f64, seed: u64) -> (Tensor, Vec<bool>) {
        // 20% head at +gap along every axis, 80% tail at -gap, plus
        // deterministic jitter.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let mut flat = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let head = i % 5 == 0;
            let center = if head { gap } else { -gap };
            for _ in 0..d {
                flat.push(center + rng.random_range(-0.5..0.5));
            }
            labels.push(head);
        }
        (Tensor::new(vec![n, d], flat).unwrap(), labels)
    }

    #[test]
    fn separable_classes_are_learned() {
        let (x, y) = clustered_data(100, 2.0, 1);
        let probe = train_probe(&x, &y, &quick_cfg()).unwrap();
        let acc = balanced_accuracy(&probe, &x, &y).unwrap();
        assert!(acc > 0.95, "separable data should be learnable, got {acc}");
    }

    #[test]
    fn pure_noise_stays_near_chance() {
        // Featureless labels: balanced accuracy must hover at 0.5 even
        // though majority voting would score 0.8 raw accuracy.
        let (x, _) = clustered_data(200, 0.0, 2);
        let y: Vec<bool> = (0..200).map(|i| i % 5 == 0).collect();
        let probe = train_probe(&x, &y, &quick_cfg()).unwrap();
        let (hold_x, _) = clustered_data(200, 0.0, 3);
        let acc = balanced_accuracy(&probe, &hold_x, &y).unwrap();
        assert!((0.3..=0.7).contains(&acc), "noise probe drifted to {acc}");
    }

    #[test]
    fn probe_is_deterministic() {
        let (x, y) = clustered_data(60, 1.0, 4);
        let cfg = quick_cfg();
        let a = train_probe(&x, &y, &cfg).unwrap();
        let b = train_probe(&x, &y, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = clustered_data(20, 1.0, 6);
        let y = vec![true; 20];
        assert!(train_probe(&x, &y, &quick_cfg()).is_err());
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let (x, mut y) = clustered_data(20, 1.0, 7);
        y.pop();
        assert!(train_probe(&x, &y, &quick_cfg()).is_err());
    }
}
