//! Training loops.
//!
//! One generic loop covers the single-user case (`users == 1`, a single Adam
//! state) and the multi-user case, where `M + 1` Adam states are kept: `O_0`
//! minimises the summed loss and `O_i` minimises user `i`'s loss alone. Each
//! iteration picks the optimizer with [`fairness_select_optimizer`] applied
//! to per-user losses averaged over the last `window` iterations.
//!
//! Every iteration draws one SNR uniformly from the configured range, a fresh
//! payload batch per user and the channel noise, each from its own named
//! random stream keyed by the iteration index.

use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, ParameterSet, Tape, Tensor};
use crate::channels::{draw_normals, snr_to_noise_var, ChannelError};
use crate::checkpoint::{Checkpoint, CheckpointError, ModelMeta};
use crate::objectives::{bce_step_loss, mse_step_loss, multiuser_loss, progtr_loss, ObjectiveError};
use crate::rng::{standard_normal, stream};
use crate::transceiver::{run_link, InputKind, Model, NoiseDraw, TransceiverError};

pub const MIN_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("fairness selector: {0}")]
    Fairness(String),
    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String, checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Transceiver(#[from] TransceiverError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Payload distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceSpec {
    /// Independent fair bits.
    BernoulliBits,
    /// Zero-mean, identity-covariance Gaussian.
    Gaussian,
}

impl SourceSpec {
    pub fn for_kind(kind: InputKind) -> Self {
        match kind {
            InputKind::Bits => SourceSpec::BernoulliBits,
            InputKind::Reals => SourceSpec::Gaussian,
        }
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            SourceSpec::BernoulliBits => InputKind::Bits,
            SourceSpec::Gaussian => InputKind::Reals,
        }
    }

    /// `[batch, b]` i.i.d. payload rows.
    pub fn sample_batch<R: Rng + ?Sized>(self, b: usize, batch: usize, rng: &mut R) -> Tensor {
        let data = match self {
            SourceSpec::BernoulliBits => (0..b * batch).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
            SourceSpec::Gaussian => (0..b * batch).map(|_| standard_normal(rng)).collect(),
        };
        Tensor::new(vec![batch, b], data).expect("shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessConfig {
    pub psi: f64,
    /// Iterations of per-user loss averaged before the selection test.
    pub window: usize,
    /// Restrict `O_i` to user `i`'s own transmitter and receiver.
    pub own_pair_only: bool,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self { psi: 1.1, window: 50, own_pair_only: false }
    }
}

/// Returns `i` (1-based) when user `i`'s loss exceeds `psi` times every other
/// user's loss, otherwise 0 (the joint optimizer).
pub fn fairness_select_optimizer(losses: &[f64], psi: f64) -> Result<usize, TrainingError> {
    if losses.len() < 2 {
        return Err(TrainingError::Fairness(format!("needs at least two users, got {}", losses.len())));
    }
    if !(psi > 1.0) {
        return Err(TrainingError::Fairness(format!("psi must exceed 1, got {psi}")));
    }
    if losses.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(TrainingError::Fairness(format!("losses must be positive, got {losses:?}")));
    }
    for (i, &li) in losses.iter().enumerate() {
        if losses.iter().enumerate().all(|(j, &lj)| j == i || li > psi * lj) {
            return Ok(i + 1);
        }
    }
    Ok(0)
}

/// Sliding-window loss averages feeding the selector.
#[derive(Clone, Debug)]
pub struct FairnessScheduler {
    config: FairnessConfig,
    recent: VecDeque<Vec<f64>>,
}

impl FairnessScheduler {
    pub fn new(config: FairnessConfig) -> Self {
        Self { config, recent: VecDeque::new() }
    }

    pub fn record(&mut self, losses: &[f64]) {
        if self.recent.len() == self.config.window.max(1) {
            self.recent.pop_front();
        }
        self.recent.push_back(losses.to_vec());
    }

    pub fn smoothed(&self) -> Option<Vec<f64>> {
        let first = self.recent.front()?;
        let mut mean = vec![0.0; first.len()];
        for row in &self.recent {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.recent.len() as f64;
        Some(mean.into_iter().map(|m| m / n).collect())
    }

    /// Optimizer for the next iteration; 0 until any loss has been recorded.
    pub fn select(&self) -> Result<usize, TrainingError> {
        match self.smoothed() {
            Some(l) if l.len() >= 2 => fairness_select_optimizer(&l, self.config.psi),
            _ => Ok(0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub meta: ModelMeta,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    /// When set, the step size decays geometrically from `lr` to this value
    /// over the run.
    pub lr_final: Option<f64>,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub fairness: FairnessConfig,
    /// Reuse iteration 0's payloads, SNR and noise on every iteration.
    pub frozen_batch: bool,
    /// Record history every this many iterations (the last is always kept).
    pub history_every: usize,
}

impl TrainConfig {
    pub fn new(meta: ModelMeta) -> Self {
        Self {
            meta,
            batch_size: 512,
            iterations: 200_000,
            lr: 1e-3,
            lr_final: None,
            seed: 0,
            checkpoint: None,
            fairness: FairnessConfig::default(),
            frozen_batch: false,
            history_every: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let m = &self.meta;
        m.transceiver.validate()?;
        m.channel.validate()?;
        m.weights.validate()?;
        let bad = |s: String| Err(TrainingError::Config(s));
        if m.weights.channel_uses() != m.transceiver.channel_uses {
            return bad(format!("{} loss weights for T={}", m.weights.channel_uses(), m.transceiver.channel_uses));
        }
        if m.users == 0 || m.channel.users() != m.users {
            return bad(format!("channel has {} inputs for {} users", m.channel.users(), m.users));
        }
        let (lo, hi) = m.snr_range_db;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("snr range [{lo}, {hi}]"));
        }
        if self.batch_size < MIN_BATCH {
            return bad(format!("batch_size {} below {MIN_BATCH}", self.batch_size));
        }
        if !(self.lr > 0.0) || self.lr_final.is_some_and(|l| !(l > 0.0)) {
            return bad(format!("lr {} (final {:?})", self.lr, self.lr_final));
        }
        if m.users > 1 && !(self.fairness.psi > 1.0) {
            return bad(format!("psi {}", self.fairness.psi));
        }
        Ok(())
    }
}

/// One history record: loss and mean power of one user at one channel use.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub optimizer: usize,
    pub user: usize,
    pub t: usize,
    pub loss: f64,
    pub mean_power: f64,
    pub snr_db: f64,
}

pub fn write_history_csv<W: Write>(rows: &[HistoryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,optimizer_index,user,t,loss,mean_power_t,snr_db")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{:?},{:?},{:?}", r.iter, r.optimizer, r.user, r.t, r.loss, r.mean_power, r.snr_db)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: Vec<HistoryRow>,
    /// Per-user total loss averaged over the last fairness window.
    pub final_losses: Vec<f64>,
    /// Per-user, per-use distortion of the last iteration.
    pub final_step_losses: Vec<Vec<f64>>,
    /// How often each optimizer acted.
    pub optimizer_counts: Vec<usize>,
}

struct Batch {
    snr_db: f64,
    payloads: Vec<Tensor>,
    noise: NoiseDraw,
}

fn draw_batch(cfg: &TrainConfig, iteration: usize) -> Batch {
    let m = &cfg.meta;
    let shard = iteration as u64;
    let (lo, hi) = m.snr_range_db;
    let snr_db = if hi > lo { stream(cfg.seed, "snr", shard).random_range(lo..=hi) } else { lo };
    let source = SourceSpec::for_kind(m.transceiver.input_kind);
    let mut prng = stream(cfg.seed, "payload", shard);
    let payloads =
        (0..m.users).map(|_| source.sample_batch(m.transceiver.payload_len, cfg.batch_size, &mut prng)).collect();
    let mut nrng = stream(cfg.seed, "noise", shard);
    let normals = (0..m.transceiver.channel_uses).map(|_| draw_normals(&mut nrng, cfg.batch_size)).collect();
    Batch { snr_db, payloads, noise: NoiseDraw { noise_var: snr_to_noise_var(snr_db, m.weights.p_max), normals } }
}

/// Builds a freshly initialised model for `meta` with the given seed.
pub fn initialise(meta: &ModelMeta, seed: u64) -> Result<(Model, ParameterSet), TrainingError> {
    let mut params = ParameterSet::new();
    let model = Model::build(meta.transceiver.clone(), meta.users, &mut params, &mut stream(seed, "init", 0))?;
    Ok((model, params))
}

/// Trains a single Tx/Rx pair (`cfg.meta.users` must be 1).
pub fn train_single_user(cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    if cfg.meta.users != 1 {
        return Err(TrainingError::Config(format!("single-user training with {} users", cfg.meta.users)));
    }
    train(cfg)
}

/// Trains `cfg.meta.users` pairs over a shared channel.
pub fn train_multi_user(cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    train(cfg)
}

/// Generic trainer for any number of users.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    let meta = &cfg.meta;
    let users = meta.users;
    let t_max = meta.transceiver.channel_uses;
    let (model, mut params) = initialise(meta, cfg.seed)?;

    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let n_opt = if users > 1 { users + 1 } else { 1 };
    let mut optimizers: Vec<AdamState> = (0..n_opt).map(|_| AdamState::new(&params, adam_cfg)).collect();
    let masks: Vec<Option<Vec<bool>>> =
        (0..n_opt).map(|k| (k > 0 && cfg.fairness.own_pair_only).then(|| model.user_mask(&params, k - 1))).collect();
    let mut scheduler = FairnessScheduler::new(cfg.fairness.clone());
    let mut history = Vec::new();
    let mut counts = vec![0usize; n_opt];
    let mut final_step = vec![vec![0.0; t_max]; users];
    let frozen = cfg.frozen_batch.then(|| draw_batch(cfg, 0));

    for it in 0..cfg.iterations {
        let fresh;
        let batch = match &frozen {
            Some(b) => b,
            None => {
                fresh = draw_batch(cfg, it);
                &fresh
            }
        };
        let k = if users > 1 { scheduler.select()? } else { 0 };
        let numeric = |e: String| TrainingError::Numeric { iteration: it, detail: e, checkpoint: None };

        let mut tape = Tape::new();
        let out = match run_link(&mut tape, &params, &model, &batch.payloads, batch.snr_db, &meta.channel, &batch.noise)
        {
            Ok(o) => o,
            Err(e) => return Err(abort(cfg, &params, numeric(e.to_string()))),
        };
        let mut user_losses = Vec::with_capacity(users);
        let mut step_vals = vec![vec![0.0; t_max]; users];
        for m in 0..users {
            let target = tape.constant(batch.payloads[m].clone())?;
            let mut steps = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let est = out.estimates[m][t].estimate;
                let l = match meta.transceiver.input_kind {
                    InputKind::Bits => bce_step_loss(&mut tape, target, est)?,
                    InputKind::Reals => mse_step_loss(&mut tape, target, est)?,
                };
                step_vals[m][t] = tape.value(l).item();
                steps.push(l);
            }
            user_losses.push(progtr_loss(&mut tape, &steps, &out.mean_power[m], &meta.weights)?);
        }
        let loss = if k == 0 { multiuser_loss(&mut tape, &user_losses)? } else { user_losses[k - 1] };
        if let Err(e) = tape.backward(loss, &mut params) {
            params.zero_grads();
            return Err(abort(cfg, &params, numeric(e.to_string())));
        }
        optimizers[k].config.lr = step_size(cfg, it);
        optimizers[k].step(&mut params, masks[k].as_deref())?;
        counts[k] += 1;

        let totals: Vec<f64> = user_losses.iter().map(|&l| tape.value(l).item()).collect();
        scheduler.record(&totals);
        let every = cfg.history_every.max(1);
        if it % every == 0 || it + 1 == cfg.iterations {
            for m in 0..users {
                for t in 0..t_max {
                    history.push(HistoryRow {
                        iter: it,
                        optimizer: k,
                        user: m,
                        t: t + 1,
                        loss: step_vals[m][t],
                        mean_power: tape.value(out.mean_power[m][t]).item(),
                        snr_db: batch.snr_db,
                    });
                }
            }
        }
        final_step = step_vals;
    }

    let checkpoint = Checkpoint { meta: meta.clone(), params };
    if let Some(path) = &cfg.checkpoint {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        model,
        final_losses: scheduler.smoothed().unwrap_or_else(|| vec![f64::NAN; users]),
        checkpoint,
        history,
        final_step_losses: final_step,
        optimizer_counts: counts,
    })
}

fn step_size(cfg: &TrainConfig, it: usize) -> f64 {
    match cfg.lr_final {
        Some(end) if cfg.iterations > 1 => cfg.lr * (end / cfg.lr).powf(it as f64 / (cfg.iterations - 1) as f64),
        _ => cfg.lr,
    }
}

/// Persists the last good parameters (if a path is configured) and returns
/// the numeric error annotated with where they went.
fn abort(cfg: &TrainConfig, params: &ParameterSet, err: TrainingError) -> TrainingError {
    let TrainingError::Numeric { iteration, detail, .. } = err else { return err };
    let saved = cfg.checkpoint.as_ref().and_then(|path| {
        let ck = Checkpoint { meta: cfg.meta.clone(), params: params.clone() };
        ck.save(path).ok().map(|_| path.clone())
    });
    TrainingError::Numeric { iteration, detail, checkpoint: saved }
}
