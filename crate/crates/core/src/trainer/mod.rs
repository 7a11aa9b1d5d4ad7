//! Inner/outer alignment training loop.
//!
//! Each iteration snapshots the parameters, performs `k` inner SGD
//! steps on freshly drawn users (predictor descends its loss, the
//! discriminator descends its own), and then feeds the pseudo-gradient
//! (snapshot minus inner result) to the outer optimizer for both
//! parameter sets. All randomness derives from per-step sub-seeds, so
//! trajectories are bit-reproducible for a given config.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{seed_for, ParamSet};
use crate::dataio::{sample_negative_lists, DatasetBundle};
use crate::encoders::{Encoder, EncoderKind, SequenceEncoder};
use crate::error::{Error, Result};
use crate::objectives::{adversarial_losses, disc_init_params, MiniBatch};

pub mod oracle;

/// Positive or negative alignment between two parameter gradients:
/// the flat dot product. Positive means the updates reinforce each
/// other, negative means they interfere.
pub fn transfer_dot(grad_i: &ParamSet, grad_j: &ParamSet) -> Result<f64> {
    grad_i.dot(grad_j)
}

/// One plain SGD descent step: params -= alpha * grads.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, alpha: f64) -> Result<()> {
    params.add_scaled(grads, -alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Inner/outer alignment training with the adversarial objective.
    Tp,
    /// Classic joint training; structurally tp with k=1, lambda=0,
    /// plain-SGD outer, beta=1.
    Joint,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainMode::Tp => write!(f, "tp"),
            TrainMode::Joint => write!(f, "joint"),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tp" => Ok(TrainMode::Tp),
            "joint" => Ok(TrainMode::Joint),
            other => Err(Error::Config(format!("unknown mode {other:?}, expected tp or joint"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterKind {
    Adam,
    Sgd,
}

impl std::fmt::Display for OuterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OuterKind::Adam => write!(f, "adam"),
            OuterKind::Sgd => write!(f, "sgd"),
        }
    }
}

impl std::str::FromStr for OuterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OuterKind::Adam),
            "sgd" => Ok(OuterKind::Sgd),
            other => Err(Error::Config(format!("unknown outer optimizer {other:?}, expected adam or sgd"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    pub encoder: EncoderKind,
    /// Embedding / representation dimension.
    pub dim: usize,
    /// Window length L.
    pub window: usize,
    /// Inner updates per iteration.
    pub k: usize,
    /// Inner learning rate.
    pub alpha: f64,
    /// Outer learning rate.
    pub beta: f64,
    /// Adversarial weight.
    pub lambda: f64,
    /// Windows per inner batch.
    pub batch: usize,
    /// Negatives per window.
    pub negatives: usize,
    pub iterations: u64,
    pub seed: u64,
    /// Fraction of training users labeled head.
    pub head_frac: f64,
    /// Fraction of users kept as existing (training) users.
    pub train_frac: f64,
    pub outer: OuterKind,
    pub disc_hidden: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: TrainMode::Tp,
            encoder: EncoderKind::Recurrent,
            dim: 16,
            window: 5,
            k: 2,
            alpha: 0.1,
            beta: 0.05,
            lambda: 0.1,
            batch: 4,
            negatives: 3,
            iterations: 1000,
            seed: 7,
            head_frac: 0.2,
            train_frac: 0.8,
            outer: OuterKind::Adam,
            disc_hidden: 16,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
            Ok(())
        }
        positive("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.head_frac > 0.0 && self.head_frac < 1.0) {
            return Err(Error::Config(format!("head fraction {} outside (0, 1)", self.head_frac)));
        }
        if !(self.train_frac > 0.0 && self.train_frac <= 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1]", self.train_frac)));
        }
        for (name, v) in [
            ("dim", self.dim),
            ("window", self.window),
            ("batch", self.batch),
            ("negatives", self.negatives),
            ("disc_hidden", self.disc_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// The config the loop actually runs. Joint mode is tp with the
    /// meta-structure collapsed: one inner step whose result the outer
    /// step adopts wholesale, and no adversarial term.
    pub fn effective(&self) -> TrainerConfig {
        match self.mode {
            TrainMode::Tp => self.clone(),
            TrainMode::Joint => TrainerConfig {
                k: 1,
                lambda: 0.0,
                outer: OuterKind::Sgd,
                beta: 1.0,
                ..self.clone()
            },
        }
    }
}

/// Outer optimizer state over one flattened parameter vector.
#[derive(Debug, Clone)]
pub struct OuterState {
    kind: OuterKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OuterState {
    pub fn new(kind: OuterKind, numel: usize) -> Self {
        OuterState { kind, m: vec![0.0; numel], v: vec![0.0; numel], t: 0 }
    }

    /// Move `theta` by feeding the pseudo-gradient (theta - inner) to
    /// the optimizer with learning rate `beta`. Plain SGD computes
    /// `theta - beta * (theta - inner)` exactly.
    pub fn step(&mut self, theta: &mut ParamSet, inner: &ParamSet, beta: f64) -> Result<()> {
        self.step_signed(theta, inner, beta, 1.0)
    }

    /// `sign` scales the applied update; -1 reverses the outer
    /// direction. Only the verification suites pass anything but 1.
    pub(crate) fn step_signed(
        &mut self,
        theta: &mut ParamSet,
        inner: &ParamSet,
        beta: f64,
        sign: f64,
    ) -> Result<()> {
        let pseudo = theta.minus(inner)?;
        let g = pseudo.flatten();
        if g.len() != self.m.len() {
            return Err(Error::ParamMismatch(format!(
                "outer state sized for {} values, got {}",
                self.m.len(),
                g.len()
            )));
        }
        let mut flat = theta.flatten();
        match self.kind {
            OuterKind::Sgd => {
                for (x, gi) in flat.iter_mut().zip(&g) {
                    *x -= sign * beta * gi;
                }
            }
            OuterKind::Adam => {
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..g.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    flat[i] -= sign * beta * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        theta.assign_flat(&flat)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: u64,
    pub pred_loss: f64,
    pub disc_loss: f64,
    pub disc_accuracy: f64,
    pub pseudo_grad_norm: f64,
}

/// Render the training log as CSV text.
pub fn training_log_csv(rows: &[IterationLog]) -> String {
    let mut out = String::from("iteration,pred_loss,disc_loss,disc_accuracy,pseudo_grad_norm\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            r.iteration, r.pred_loss, r.disc_loss, r.disc_accuracy, r.pseudo_grad_norm
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub enc_params: ParamSet,
    pub disc_params: ParamSet,
    pub log: Vec<IterationLog>,
}

/// Merge encoder and discriminator parameters into one set for
/// checkpointing; prefixes keep the namespaces disjoint.
pub fn merge_params(enc: &ParamSet, disc: &ParamSet) -> ParamSet {
    let mut all = ParamSet::new();
    for (name, tensor) in enc.iter().chain(disc.iter()) {
        all.insert(name.clone(), tensor.clone());
    }
    all
}

/// Inverse of [`merge_params`], splitting on the name prefix.
pub fn split_params(all: &ParamSet) -> (ParamSet, ParamSet) {
    let mut enc = ParamSet::new();
    let mut disc = ParamSet::new();
    for (name, tensor) in all.iter() {
        if name.starts_with("disc.") {
            disc.insert(name.clone(), tensor.clone());
        } else {
            enc.insert(name.clone(), tensor.clone());
        }
    }
    (enc, disc)
}

/// Assemble the batch for inner step `inner_idx` of iteration `iter`.
/// All draws come from a sub-seed of (seed, iter, inner_idx), in a
/// fixed order: user, then windows, then negatives.
fn draw_batch(
    bundle: &DatasetBundle,
    cfg: &TrainerConfig,
    iter: u64,
    inner_idx: usize,
) -> Result<(u32, MiniBatch)> {
    let sub = seed_for(cfg.seed, &format!("step:{iter}:{inner_idx}"));
    let mut rng = ChaCha8Rng::seed_from_u64(sub);
    let users: Vec<u32> = bundle.tasks.keys().copied().collect();
    let user = users[rng.random_range(0..users.len())];
    let tasks = &bundle.tasks[&user];
    let mut windows = Vec::with_capacity(cfg.batch);
    let mut targets = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let task = &tasks[rng.random_range(0..tasks.len())];
        windows.push(task.window.clone());
        targets.push(task.target);
    }
    let negatives = sample_negative_lists(
        &mut rng,
        user,
        &bundle.dataset.sequences[user as usize],
        bundle.dataset.vocab(),
        cfg.negatives,
        cfg.batch,
    )?;
    let head = vec![bundle.head[&user]; cfg.batch];
    Ok((user, MiniBatch { windows, targets, negatives, head }))
}

/// Run the full training loop.
pub fn train(bundle: &DatasetBundle, cfg: &TrainerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let some_window = bundle
        .tasks
        .values()
        .next()
        .and_then(|t| t.first())
        .map(|t| t.window.len())
        .ok_or_else(|| Error::Config("bundle has no training tasks".into()))?;
    if some_window != cfg.window {
        return Err(Error::Incompatible(format!(
            "bundle windows have length {some_window}, config says {}",
            cfg.window
        )));
    }

    let encoder = Encoder::new(cfg.encoder, cfg.dim, cfg.window);
    let mut enc_params = encoder.init_params(bundle.dataset.vocab(), cfg.seed);
    let mut disc_params = disc_init_params(cfg.dim, cfg.disc_hidden, cfg.seed);
    let mut outer_enc = OuterState::new(cfg.outer, enc_params.numel());
    let mut outer_disc = OuterState::new(cfg.outer, disc_params.numel());

    let mut log = Vec::with_capacity(cfg.iterations as usize);
    for iter in 0..cfg.iterations {
        let row = train_iteration(
            bundle,
            &cfg,
            &encoder,
            iter,
            &mut enc_params,
            &mut disc_params,
            &mut outer_enc,
            &mut outer_disc,
        )?;
        log.push(row);
    }
    Ok(TrainOutcome { enc_params, disc_params, log })
}

#[allow(clippy::too_many_arguments)]
fn train_iteration(
    bundle: &DatasetBundle,
    cfg: &TrainerConfig,
    encoder: &Encoder,
    iter: u64,
    enc_params: &mut ParamSet,
    disc_params: &mut ParamSet,
    outer_enc: &mut OuterState,
    outer_disc: &mut OuterState,
) -> Result<IterationLog> {
    let mut enc_cur = enc_params.clone();
    let mut disc_cur = disc_params.clone();
    let mut pred_sum = 0.0;
    let mut disc_sum = 0.0;
    let mut acc_sum = 0.0;
    for j in 0..cfg.k {
        let (_, batch) = draw_batch(bundle, cfg, iter, j)?;
        let out = adversarial_losses(encoder, &enc_cur, &disc_cur, &batch, cfg.lambda)?;
        if !out.pred_grads.all_finite() || !out.disc_grads.all_finite() {
            return Err(Error::TrainAborted {
                iteration: iter,
                msg: format!("non-finite gradient in inner step {j}"),
            });
        }
        sgd_step(&mut enc_cur, &out.pred_grads, cfg.alpha)?;
        sgd_step(&mut disc_cur, &out.disc_grads, cfg.alpha)?;
        pred_sum += out.pred_loss;
        disc_sum += out.disc_loss;
        acc_sum += out.disc_accuracy;
    }
    let pseudo_enc = enc_params.minus(&enc_cur)?;
    let pseudo_disc = disc_params.minus(&disc_cur)?;
    let pseudo_grad_norm =
        (pseudo_enc.norm().powi(2) + pseudo_disc.norm().powi(2)).sqrt();
    outer_enc.step(enc_params, &enc_cur, cfg.beta)?;
    outer_disc.step(disc_params, &disc_cur, cfg.beta)?;
    if !enc_params.all_finite() || !disc_params.all_finite() {
        return Err(Error::TrainAborted { iteration: iter, msg: "non-finite parameters after outer step".into() });
    }
    let k = cfg.k as f64;
    Ok(IterationLog {
        iteration: iter,
        pred_loss: pred_sum / k,
        disc_loss: disc_sum / k,
        disc_accuracy: acc_sum / k,
        pseudo_grad_norm,
    })
}
