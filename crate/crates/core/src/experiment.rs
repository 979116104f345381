//! Scenario presets and the experiment config file.
//!
//! The config format is flat `key = value` text with `[section]` headers and
//! `#` comments:
//!
//! ```text
//! scenario = discrete_t2b8
//!
//! [model]
//! layers = 2
//! state_size = 32
//!
//! [train]
//! iterations = 5000
//! seed = 7
//! ```
//!
//! A named scenario pins the payload length, channel uses, user count, loss
//! weights and channel; only `custom` accepts those keys.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::channels::{ChannelKind, ChannelSpec, TwtaParams};
use crate::checkpoint::ModelMeta;
use crate::objectives::LossWeights;
use crate::training::TrainConfig;
use crate::transceiver::{InputKind, TransceiverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    DiscreteT2b8,
    DiscreteT4b16,
    GaussB2t1,
    GaussB1t1,
    GaussB2t2,
    GaussB4t2,
    TwtaT2b8,
    MacM4t4b6,
    Custom,
}

pub const SCENARIOS: [Scenario; 9] = [
    Scenario::DiscreteT2b8,
    Scenario::DiscreteT4b16,
    Scenario::GaussB2t1,
    Scenario::GaussB1t1,
    Scenario::GaussB2t2,
    Scenario::GaussB4t2,
    Scenario::TwtaT2b8,
    Scenario::MacM4t4b6,
    Scenario::Custom,
];

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::DiscreteT2b8 => "discrete_t2b8",
            Scenario::DiscreteT4b16 => "discrete_t4b16",
            Scenario::GaussB2t1 => "gauss_b2t1",
            Scenario::GaussB1t1 => "gauss_b1t1",
            Scenario::GaussB2t2 => "gauss_b2t2",
            Scenario::GaussB4t2 => "gauss_b4t2",
            Scenario::TwtaT2b8 => "twta_t2b8",
            Scenario::MacM4t4b6 => "mac_m4t4b6",
            Scenario::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SCENARIOS.into_iter().find(|c| c.as_str() == s)
    }

    /// Model, channel and loss settings of the scenario at full network size
    /// (3 layers of 64 units) and the default SNR range.
    pub fn preset(self) -> ModelMeta {
        let (b, t, kind, users, alpha, lambda, channel): (usize, usize, InputKind, usize, Vec<f64>, f64, ChannelSpec) =
            match self {
                Scenario::DiscreteT2b8 | Scenario::Custom => {
                    (8, 2, InputKind::Bits, 1, vec![10.0, 25.0], 1e3, ChannelSpec::awgn())
                }
                Scenario::DiscreteT4b16 => {
                    (16, 4, InputKind::Bits, 1, vec![10.0, 25.0, 50.0, 100.0], 1e3, ChannelSpec::awgn())
                }
                Scenario::GaussB2t1 => (2, 1, InputKind::Reals, 1, vec![1000.0], 1e3, ChannelSpec::awgn()),
                Scenario::GaussB1t1 => (1, 1, InputKind::Reals, 1, vec![1000.0], 1e3, ChannelSpec::awgn()),
                Scenario::GaussB2t2 => (2, 2, InputKind::Reals, 1, vec![0.0, 5000.0], 5e4, ChannelSpec::awgn()),
                Scenario::GaussB4t2 => (4, 2, InputKind::Reals, 1, vec![10.0, 25.0], 1e3, ChannelSpec::awgn()),
                Scenario::TwtaT2b8 => {
                    (8, 2, InputKind::Bits, 1, vec![10.0, 25.0], 1e3, ChannelSpec::twta(TwtaParams::default()))
                }
                Scenario::MacM4t4b6 => {
                    (6, 4, InputKind::Bits, 4, vec![10.0, 25.0, 50.0, 100.0], 1e3, ChannelSpec::mac(4))
                }
            };
        ModelMeta {
            scenario: self.as_str().to_string(),
            transceiver: TransceiverConfig {
                payload_len: b,
                channel_uses: t,
                input_kind: kind,
                layers: 3,
                state_size: 64,
            },
            users,
            channel,
            weights: LossWeights { alpha, lambda, p_max: 1.0 },
            snr_range_db: (0.0, 30.0),
        }
    }
}

/// Evaluation settings carried by a config file.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub snr_db: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub metrics: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { snr_db: snr_grid(0.0, 30.0, 2.0).expect("grid"), samples: 100_000, seed: 0, metrics: vec![] }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn from_scenario(scenario: Scenario) -> Self {
        Self { scenario, train: TrainConfig::new(scenario.preset()), out_dir: None, eval: EvalSettings::default() }
    }
}

/// `lo:hi:step`, inclusive of `hi` when it lies on the grid.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number {x:?} in SNR grid {s:?}"));
    match parts.as_slice() {
        [_] => s.split(',').map(num).collect(),
        [lo, hi, step] => snr_grid(num(lo)?, num(hi)?, num(step)?),
        _ => Err(format!("SNR grid {s:?} must be lo:hi:step or a list")),
    }
}

pub fn snr_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0) || !(lo <= hi) {
        return Err(format!("SNR grid {lo}:{hi}:{step} is empty"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

fn floats(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| format!("expected numbers, got {v:?}"))).collect()
}

fn float(v: &str) -> Result<f64, String> {
    v.parse().map_err(|_| format!("expected a number, got {v:?}"))
}

fn uint(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true/false, got {v:?}")),
    }
}

const PINNED: [&str; 8] = [
    "model.b",
    "model.t",
    "model.input_kind",
    "model.users",
    "loss.alpha",
    "loss.lambda",
    "channel.kind",
    "channel.twta",
];

/// Parses a config file; errors carry 1-based line numbers.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut section = String::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or(ConfigError::Line { line: line_no, msg: "unterminated section header".into() })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Line { line: line_no, msg: format!("expected key = value, got {line:?}") })?;
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if let Some(prev) = seen.insert(key.clone(), line_no) {
            return Err(ConfigError::Line { line: line_no, msg: format!("{key} already set on line {prev}") });
        }
        entries.push((line_no, key, v.trim().to_string()));
    }

    let scenario = match entries.iter().find(|e| e.1 == "scenario") {
        Some((line, _, v)) => {
            Scenario::parse(v).ok_or(ConfigError::Line { line: *line, msg: format!("unknown scenario {v:?}") })?
        }
        None => return Err(ConfigError::Invalid("config must set `scenario`".into())),
    };
    let mut cfg = ExperimentConfig::from_scenario(scenario);
    let mut twta = TwtaParams::default();
    let mut channel_kind: Option<String> = None;
    let (mut snr_lo, mut snr_hi) = cfg.train.meta.snr_range_db;

    for (line, key, v) in &entries {
        let at = |msg: String| ConfigError::Line { line: *line, msg };
        if scenario != Scenario::Custom && PINNED.contains(&key.as_str()) {
            return Err(at(format!("{key} is fixed by scenario {}", scenario.as_str())));
        }
        let meta = &mut cfg.train.meta;
        let r: Result<(), String> = (|| {
            match key.as_str() {
                "scenario" => {}
                "model.b" => meta.transceiver.payload_len = uint(v)?,
                "model.t" => meta.transceiver.channel_uses = uint(v)?,
                "model.input_kind" => {
                    meta.transceiver.input_kind =
                        InputKind::parse(v).ok_or(format!("input_kind must be bits or reals, got {v:?}"))?
                }
                "model.users" => meta.users = uint(v)?,
                "model.layers" => meta.transceiver.layers = uint(v)?,
                "model.state_size" => meta.transceiver.state_size = uint(v)?,
                "loss.alpha" => meta.weights.alpha = floats(v)?,
                "loss.lambda" => meta.weights.lambda = float(v)?,
                "loss.p_max" => meta.weights.p_max = float(v)?,
                "channel.kind" => channel_kind = Some(v.clone()),
                "channel.twta" => {
                    let p = floats(v)?;
                    if p.len() != 4 {
                        return Err("twta needs alpha_rho, beta_rho, alpha_psi, beta_psi".into());
                    }
                    twta = TwtaParams { alpha_rho: p[0], beta_rho: p[1], alpha_psi: p[2], beta_psi: p[3] };
                }
                "train.snr_lo" => snr_lo = float(v)?,
                "train.snr_hi" => snr_hi = float(v)?,
                "train.batch_size" => cfg.train.batch_size = uint(v)?,
                "train.iterations" => cfg.train.iterations = uint(v)?,
                "train.lr" => cfg.train.lr = float(v)?,
                "train.lr_final" => cfg.train.lr_final = Some(float(v)?),
                "train.seed" => cfg.train.seed = v.parse().map_err(|_| format!("bad seed {v:?}"))?,
                "train.psi" => cfg.train.fairness.psi = float(v)?,
                "train.window" => cfg.train.fairness.window = uint(v)?,
                "train.own_pair_only" => cfg.train.fairness.own_pair_only = boolean(v)?,
                "train.frozen_batch" => cfg.train.frozen_batch = boolean(v)?,
                "train.history_every" => cfg.train.history_every = uint(v)?,
                "output.dir" => cfg.out_dir = Some(PathBuf::from(v)),
                "eval.snr" => cfg.eval.snr_db = parse_snr_grid(v)?,
                "eval.samples" => cfg.eval.samples = uint(v)?,
                "eval.seed" => cfg.eval.seed = v.parse().map_err(|_| format!("bad seed {v:?}"))?,
                "eval.metrics" => cfg.eval.metrics = v.split(',').map(|m| m.trim().to_string()).collect(),
                other => return Err(format!("unknown key {other:?}")),
            }
            Ok(())
        })();
        r.map_err(at)?;
    }

    let meta = &mut cfg.train.meta;
    meta.snr_range_db = (snr_lo, snr_hi);
    if scenario == Scenario::Custom {
        let users = meta.users;
        meta.channel = match channel_kind.as_deref().unwrap_or(if users > 1 { "mac_awgn" } else { "awgn" }) {
            "awgn" => ChannelSpec::awgn(),
            "twta_awgn" => ChannelSpec::twta(twta),
            "mac_awgn" => ChannelSpec::mac(users),
            other => return Err(ConfigError::Invalid(format!("unknown channel kind {other:?}"))),
        };
        if matches!(meta.channel.kind, ChannelKind::Awgn | ChannelKind::TwtaAwgn(_)) && users != 1 {
            return Err(ConfigError::Invalid(format!("{users} users need channel.kind = mac_awgn")));
        }
    }
    cfg.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}
