//! Recurrent transmitter and receiver.
//!
//! The transmitter sees the whole payload plus an SNR feature at every
//! channel use and emits one complex symbol per use from a dense head on its
//! top recurrent layer. The receiver sees each received symbol plus the same
//! SNR feature and emits a correction `o[t]` that is added to a running
//! accumulator; the estimate is `sigmoid(accumulator)` for bit payloads and
//! the accumulator itself for real payloads.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Dense, GruStack, ParameterSet, Tape, Tensor, Var};
use crate::channels::{ChannelError, ChannelSpec};

/// SNR in dB is presented to both networks as `snr_db / SNR_FEATURE_SCALE`.
pub const SNR_FEATURE_SCALE: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransceiverError {
    #[error("invalid transceiver config: {0}")]
    Config(String),
    #[error("payload does not match input kind {kind:?}: {detail}")]
    InputKind { kind: InputKind, detail: String },
    #[error("channel use {t}: {source}")]
    Step { t: usize, source: Box<TransceiverError> },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Bits,
    Reals,
}

impl InputKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InputKind::Bits => "bits",
            InputKind::Reals => "reals",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bits" => Some(InputKind::Bits),
            "reals" => Some(InputKind::Reals),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransceiverConfig {
    /// Payload length `b`.
    pub payload_len: usize,
    /// Channel uses `T`.
    pub channel_uses: usize,
    pub input_kind: InputKind,
    pub layers: usize,
    pub state_size: usize,
}

impl TransceiverConfig {
    pub fn new(payload_len: usize, channel_uses: usize, input_kind: InputKind) -> Self {
        Self { payload_len, channel_uses, input_kind, layers: 3, state_size: 64 }
    }

    pub fn validate(&self) -> Result<(), TransceiverError> {
        if self.payload_len == 0 || self.channel_uses == 0 || self.layers == 0 || self.state_size == 0 {
            return Err(TransceiverError::Config(format!(
                "b={}, T={}, layers={}, state_size={} must all be >= 1",
                self.payload_len, self.channel_uses, self.layers, self.state_size
            )));
        }
        Ok(())
    }
}

pub fn snr_feature(snr_db: f64) -> f64 {
    snr_db / SNR_FEATURE_SCALE
}

fn snr_column(rows: usize, snr_db: f64) -> Tensor {
    Tensor::filled(&[rows, 1], snr_feature(snr_db))
}

/// Per-layer hidden states of one network.
#[derive(Clone, Debug)]
pub struct RecurrentState {
    pub hidden: Vec<Var>,
}

pub type TxState = RecurrentState;
pub type RxState = RecurrentState;

/// Receiver output after a channel use.
#[derive(Clone, Copy, Debug)]
pub struct SoftEstimate {
    /// Running sum of corrections (pre-sigmoid for bits).
    pub accumulator: Var,
    pub estimate: Var,
}

#[derive(Clone, Debug)]
pub struct Transmitter {
    pub stack: GruStack,
    pub head: Dense,
    pub payload_len: usize,
    pub input_kind: InputKind,
}

impl Transmitter {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        cfg: &TransceiverConfig,
        rng: &mut R,
    ) -> Result<Self, TransceiverError> {
        let stack = GruStack::new(params, prefix, cfg.payload_len + 1, cfg.state_size, cfg.layers, rng)?;
        let head = Dense::new(params, &format!("{prefix}.head"), cfg.state_size, 2, rng)?;
        Ok(Self { stack, head, payload_len: cfg.payload_len, input_kind: cfg.input_kind })
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Result<TxState, TransceiverError> {
        Ok(RecurrentState { hidden: self.stack.initial_state(tape, batch)? })
    }

    /// Records `[payload | snr feature]` as the per-step input.
    pub fn input(&self, tape: &mut Tape, payload: &Tensor, snr_db: f64) -> Result<Var, TransceiverError> {
        check_payload(payload, self.payload_len, self.input_kind)?;
        let d = tape.constant(payload.clone())?;
        let s = tape.constant(snr_column(payload.rows(), snr_db))?;
        Ok(tape.concat_cols(&[d, s])?)
    }

    /// One channel use: returns the `[batch, 2]` symbol.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        input: Var,
        state: &mut TxState,
    ) -> Result<Var, TransceiverError> {
        let top = self.stack.step(tape, params, input, &mut state.hidden)?;
        Ok(self.head.forward(tape, params, top)?)
    }
}

/// Checks width and, for bits, that every entry is 0 or 1.
pub fn check_payload(payload: &Tensor, b: usize, kind: InputKind) -> Result<(), TransceiverError> {
    if payload.shape().len() != 2 || payload.cols() != b {
        return Err(TransceiverError::InputKind {
            kind,
            detail: format!("expected [batch, {b}], got {:?}", payload.shape()),
        });
    }
    if kind == InputKind::Bits && payload.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TransceiverError::InputKind { kind, detail: "bit payload holds values other than 0/1".into() });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Receiver {
    pub stack: GruStack,
    pub head: Dense,
    pub payload_len: usize,
    pub input_kind: InputKind,
}

impl Receiver {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        prefix: &str,
        cfg: &TransceiverConfig,
        rng: &mut R,
    ) -> Result<Self, TransceiverError> {
        let stack = GruStack::new(params, prefix, 3, cfg.state_size, cfg.layers, rng)?;
        let head = Dense::new(params, &format!("{prefix}.head"), cfg.state_size, cfg.payload_len, rng)?;
        Ok(Self { stack, head, payload_len: cfg.payload_len, input_kind: cfg.input_kind })
    }

    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Result<RxState, TransceiverError> {
        Ok(RecurrentState { hidden: self.stack.initial_state(tape, batch)? })
    }

    /// Estimate before any channel use: zero accumulator.
    pub fn initial_estimate(&self, tape: &mut Tape, batch: usize) -> Result<SoftEstimate, TransceiverError> {
        let accumulator = tape.constant(Tensor::zeros(&[batch, self.payload_len]))?;
        let estimate = self.activate(tape, accumulator)?;
        Ok(SoftEstimate { accumulator, estimate })
    }

    fn activate(&self, tape: &mut Tape, acc: Var) -> Result<Var, TransceiverError> {
        Ok(match self.input_kind {
            InputKind::Bits => tape.sigmoid(acc)?,
            InputKind::Reals => acc,
        })
    }

    /// Correction `o[t]` from the received symbol.
    pub fn correction(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        y: Var,
        snr_db: f64,
        state: &mut RxState,
    ) -> Result<Var, TransceiverError> {
        let rows = tape.value(y).rows();
        let s = tape.constant(snr_column(rows, snr_db))?;
        let input = tape.concat_cols(&[y, s])?;
        let top = self.stack.step(tape, params, input, &mut state.hidden)?;
        Ok(self.head.forward(tape, params, top)?)
    }

    /// Folds a correction into the previous estimate.
    pub fn update(
        &self,
        tape: &mut Tape,
        prev: &SoftEstimate,
        correction: Var,
    ) -> Result<SoftEstimate, TransceiverError> {
        let accumulator = tape.add(prev.accumulator, correction)?;
        let estimate = self.activate(tape, accumulator)?;
        Ok(SoftEstimate { accumulator, estimate })
    }

    /// One channel use: correction then differential update.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &ParameterSet,
        y: Var,
        snr_db: f64,
        state: &mut RxState,
        prev: &SoftEstimate,
    ) -> Result<SoftEstimate, TransceiverError> {
        let o = self.correction(tape, params, y, snr_db, state)?;
        self.update(tape, prev, o)
    }
}

/// One transmitter/receiver pair.
#[derive(Clone, Debug)]
pub struct Link {
    pub tx: Transmitter,
    pub rx: Receiver,
}

/// `M` transmitter/receiver pairs sharing one configuration.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: TransceiverConfig,
    pub links: Vec<Link>,
}

/// Parameter-name prefix of user `m` in an `M`-user model.
pub fn user_prefix(users: usize, m: usize) -> String {
    if users == 1 {
        String::new()
    } else {
        format!("user{m}.")
    }
}

impl Model {
    /// Builds the networks, appending freshly initialised weights to `params`.
    pub fn build<R: Rng + ?Sized>(
        config: TransceiverConfig,
        users: usize,
        params: &mut ParameterSet,
        rng: &mut R,
    ) -> Result<Self, TransceiverError> {
        config.validate()?;
        if users == 0 {
            return Err(TransceiverError::Config("at least one user".into()));
        }
        let mut links = Vec::with_capacity(users);
        for m in 0..users {
            let p = user_prefix(users, m);
            let tx = Transmitter::new(params, &format!("{p}tx"), &config, rng)?;
            let rx = Receiver::new(params, &format!("{p}rx"), &config, rng)?;
            links.push(Link { tx, rx });
        }
        Ok(Self { config, links })
    }

    /// Rebinds a model to an existing parameter set (e.g. a loaded
    /// checkpoint); names and shapes must match what `build` would create.
    pub fn bind(config: TransceiverConfig, users: usize, params: &ParameterSet) -> Result<Self, TransceiverError> {
        let mut fresh = ParameterSet::new();
        let mut rng = crate::rng::stream(0, "bind", 0);
        let model = Self::build(config, users, &mut fresh, &mut rng)?;
        let same = fresh.len() == params.len()
            && fresh.iter().zip(params.iter()).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !same {
            return Err(TransceiverError::Config("parameter set does not match the model layout".into()));
        }
        Ok(model)
    }

    pub fn users(&self) -> usize {
        self.links.len()
    }

    /// Parameter indices owned by user `m` (its transmitter and receiver).
    pub fn user_mask(&self, params: &ParameterSet, m: usize) -> Vec<bool> {
        let users = self.users();
        let prefix = user_prefix(users, m);
        params.iter().map(|p| users == 1 || p.name.starts_with(&prefix)).collect()
    }
}

/// Everything a forward pass over all `T` uses produces, indexed `[user][t]`.
#[derive(Clone, Debug)]
pub struct LinkOutput {
    pub symbols: Vec<Vec<Var>>,
    pub received: Vec<Var>,
    pub estimates: Vec<Vec<SoftEstimate>>,
    pub mean_power: Vec<Vec<Var>>,
}

/// Channel realisation for one batch: noise variance plus `T` blocks of
/// `[batch, 2]` standard normals.
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub noise_var: f64,
    pub normals: Vec<Tensor>,
}

/// Unrolled Tx -> channel -> Rx over all channel uses on one tape.
pub fn run_link(
    tape: &mut Tape,
    params: &ParameterSet,
    model: &Model,
    payloads: &[Tensor],
    snr_db: f64,
    channel: &ChannelSpec,
    noise: &NoiseDraw,
) -> Result<LinkOutput, TransceiverError> {
    let users = model.users();
    let t_max = model.config.channel_uses;
    if payloads.len() != users || channel.users() != users {
        return Err(TransceiverError::Config(format!(
            "{} payloads and {} channel inputs for {} users",
            payloads.len(),
            channel.users(),
            users
        )));
    }
    if noise.normals.len() != t_max {
        return Err(TransceiverError::Config(format!("{} noise blocks for T={}", noise.normals.len(), t_max)));
    }
    let batch = payloads[0].rows();

    let mut tx_in = Vec::with_capacity(users);
    let mut tx_state = Vec::with_capacity(users);
    let mut rx_state = Vec::with_capacity(users);
    let mut est = Vec::with_capacity(users);
    for (link, d) in model.links.iter().zip(payloads) {
        tx_in.push(link.tx.input(tape, d, snr_db)?);
        tx_state.push(link.tx.initial_state(tape, batch)?);
        rx_state.push(link.rx.initial_state(tape, batch)?);
        est.push(link.rx.initial_estimate(tape, batch)?);
    }

    let mut out = LinkOutput {
        symbols: vec![Vec::with_capacity(t_max); users],
        received: Vec::with_capacity(t_max),
        estimates: vec![Vec::with_capacity(t_max); users],
        mean_power: vec![Vec::with_capacity(t_max); users],
    };
    for t in 0..t_max {
        let wrap = |e: TransceiverError| TransceiverError::Step { t: t + 1, source: Box::new(e) };
        let mut xs = Vec::with_capacity(users);
        for m in 0..users {
            let x = model.links[m].tx.step(tape, params, tx_in[m], &mut tx_state[m]).map_err(wrap)?;
            let p = tape.mean_row_norm_sq(x).map_err(|e| wrap(e.into()))?;
            out.symbols[m].push(x);
            out.mean_power[m].push(p);
            xs.push(x);
        }
        let y = channel.apply(tape, &xs, noise.noise_var, &noise.normals[t]).map_err(|e| wrap(e.into()))?;
        out.received.push(y);
        for m in 0..users {
            let e = model.links[m].rx.step(tape, params, y, snr_db, &mut rx_state[m], &est[m]).map_err(wrap)?;
            est[m] = e;
            out.estimates[m].push(e);
        }
    }
    Ok(out)
}

/// Transmitter outputs only, `[t]` blocks of `[batch, 2]`, for user `m`.
pub fn transmit(
    params: &ParameterSet,
    model: &Model,
    user: usize,
    payload: &Tensor,
    snr_db: f64,
) -> Result<Vec<Tensor>, TransceiverError> {
    let mut tape = Tape::new();
    let tx = &model.links[user].tx;
    let input = tx.input(&mut tape, payload, snr_db)?;
    let mut state = tx.initial_state(&mut tape, payload.rows())?;
    let mut out = Vec::with_capacity(model.config.channel_uses);
    for _ in 0..model.config.channel_uses {
        let x = tx.step(&mut tape, params, input, &mut state)?;
        out.push(tape.value(x).clone());
    }
    Ok(out)
}
