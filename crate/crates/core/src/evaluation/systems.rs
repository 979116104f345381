use num_complex::Complex64;

use super::EvalError;
use crate::autodiff::{ParameterSet, Tape, Tensor};
use crate::baselines::{
    power_scale, predistort, DecodeMetric, JointDecoder, MultiUseScheme, RepetitionGaussian, UncodedGaussian,
};
use crate::channels::{snr_to_noise_var, ChannelKind, ChannelSpec};
use crate::checkpoint::Checkpoint;
use crate::transceiver::{run_link, InputKind, Model, NoiseDraw};

/// Receiver output for one user after one channel use.
#[derive(Clone, Debug)]
pub struct StepEstimate {
    /// `[batch, b]` soft (bits) or real-valued estimates.
    pub values: Tensor,
    /// Payload positions not yet carried by any use (count as coin flips).
    pub erased: Vec<bool>,
}

/// Result of pushing one batch through a system.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// `[user][t]`
    pub estimates: Vec<Vec<StepEstimate>>,
    /// `[user][t]` per-sample `|x[t]|^2` of the transmitted symbols.
    pub powers: Vec<Vec<Vec<f64>>>,
}

/// Anything that maps payloads to per-use estimates over a noisy channel.
pub trait LinkSystem {
    fn name(&self) -> &str;
    fn payload_len(&self) -> usize;
    fn channel_uses(&self) -> usize;
    fn input_kind(&self) -> InputKind;
    fn users(&self) -> usize {
        1
    }
    /// `payloads[m]` is `[batch, b]`; `normals[t]` is `[batch, 2]` standard
    /// normals for channel use `t`.
    fn run(&self, payloads: &[Tensor], snr_db: f64, normals: &[Tensor]) -> Result<RunOutput, EvalError>;
}

/// A trained transceiver loaded from a checkpoint.
#[derive(Clone, Debug)]
pub struct ProgTrSystem {
    name: String,
    model: Model,
    params: ParameterSet,
    channel: ChannelSpec,
    p_max: f64,
}

impl ProgTrSystem {
    pub fn from_checkpoint(name: &str, ck: &Checkpoint) -> Result<Self, EvalError> {
        let model = Model::bind(ck.meta.transceiver.clone(), ck.meta.users, &ck.params)?;
        Ok(Self {
            name: name.to_string(),
            model,
            params: ck.params.clone(),
            channel: ck.meta.channel.clone(),
            p_max: ck.meta.weights.p_max,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }
}

impl LinkSystem for ProgTrSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn payload_len(&self) -> usize {
        self.model.config.payload_len
    }

    fn channel_uses(&self) -> usize {
        self.model.config.channel_uses
    }

    fn input_kind(&self) -> InputKind {
        self.model.config.input_kind
    }

    fn users(&self) -> usize {
        self.model.users()
    }

    fn run(&self, payloads: &[Tensor], snr_db: f64, normals: &[Tensor]) -> Result<RunOutput, EvalError> {
        let mut tape = Tape::new();
        let noise = NoiseDraw { noise_var: snr_to_noise_var(snr_db, self.p_max), normals: normals.to_vec() };
        let out = run_link(&mut tape, &self.params, &self.model, payloads, snr_db, &self.channel, &noise)?;
        let b = self.payload_len();
        let estimates = out
            .estimates
            .iter()
            .map(|per_t| {
                per_t
                    .iter()
                    .map(|e| StepEstimate { values: tape.value(e.estimate).clone(), erased: vec![false; b] })
                    .collect()
            })
            .collect();
        let powers = out
            .symbols
            .iter()
            .map(|per_t| {
                per_t
                    .iter()
                    .map(|&x| {
                        let v = tape.value(x);
                        (0..v.rows()).map(|r| v.at(r, 0).powi(2) + v.at(r, 1).powi(2)).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(RunOutput { estimates, powers })
    }
}

fn received(x: Complex64, ch: &ChannelSpec, noise_var: f64, n: &[f64]) -> Complex64 {
    let x = match &ch.kind {
        ChannelKind::TwtaAwgn(p) => p.distort(x),
        _ => x,
    };
    let sd = (noise_var / 2.0).sqrt();
    ch.fading[0] * x + Complex64::new(n[0], n[1]) * sd
}

/// A fixed QAM scheme with minimum-distance decoding. Over an amplifier
/// channel the constellation is scaled to the peak invertible amplitude and
/// pre-distorted.
#[derive(Clone, Debug)]
pub struct SchemeSystem {
    decoder: JointDecoder,
    metric: DecodeMetric,
    channel: ChannelSpec,
    p_max: f64,
}

impl SchemeSystem {
    pub fn new(scheme: MultiUseScheme, channel: ChannelSpec, metric: DecodeMetric) -> Result<Self, EvalError> {
        channel.validate()?;
        if channel.users() != 1 {
            return Err(EvalError::Incompatible("classical schemes are single-user".into()));
        }
        let scheme = match &channel.kind {
            ChannelKind::TwtaAwgn(p) => {
                let s = power_scale(scheme.max_amplitude(), p);
                scheme.with_scale(s)
            }
            _ => scheme,
        };
        Ok(Self { decoder: JointDecoder::new(scheme)?, metric, channel, p_max: 1.0 })
    }

    pub fn scheme(&self) -> &MultiUseScheme {
        self.decoder.scheme()
    }
}

impl LinkSystem for SchemeSystem {
    fn name(&self) -> &str {
        self.decoder.scheme().name()
    }

    fn payload_len(&self) -> usize {
        self.decoder.scheme().payload_len()
    }

    fn channel_uses(&self) -> usize {
        self.decoder.scheme().channel_uses()
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Bits
    }

    fn run(&self, payloads: &[Tensor], snr_db: f64, normals: &[Tensor]) -> Result<RunOutput, EvalError> {
        let scheme = self.decoder.scheme();
        let (b, t_max) = (scheme.payload_len(), scheme.channel_uses());
        let d = &payloads[0];
        let rows = d.rows();
        let noise_var = snr_to_noise_var(snr_db, self.p_max);
        let mut values = vec![vec![0.0; rows * b]; t_max];
        let mut powers = vec![vec![0.0; rows]; t_max];
        let mut ys = Vec::with_capacity(t_max);
        for r in 0..rows {
            let bits: Vec<u8> = d.row(r).iter().map(|&v| v as u8).collect();
            let xs = scheme.encode(&bits)?;
            ys.clear();
            for (t, &x) in xs.iter().enumerate() {
                let tx = match &self.channel.kind {
                    ChannelKind::TwtaAwgn(p) => predistort(x, p)?,
                    _ => x,
                };
                powers[t][r] = tx.norm_sqr();
                ys.push(received(tx, &self.channel, noise_var, normals[t].row(r)));
            }
            for t in 0..t_max {
                let dec = self.decoder.decode(&ys[..t + 1], self.metric);
                for (i, v) in dec.into_iter().enumerate() {
                    values[t][r * b + i] = v.map_or(0.5, f64::from);
                }
            }
        }
        let estimates = values
            .into_iter()
            .enumerate()
            .map(|(t, v)| {
                let sent = scheme.sent_by(t + 1);
                StepEstimate {
                    values: Tensor::new(vec![rows, b], v).expect("shape"),
                    erased: sent.into_iter().map(|s| !s).collect(),
                }
            })
            .collect();
        Ok(RunOutput { estimates: vec![estimates], powers: vec![powers] })
    }
}

/// Linear transmission of Gaussian payloads: uncoded (`b = 2`) or
/// repetition (`b = 1`), one channel use, AWGN.
#[derive(Clone, Debug)]
pub struct LinearGaussianSystem {
    name: String,
    b: usize,
    p_max: f64,
}

impl LinearGaussianSystem {
    pub fn uncoded(p_max: f64) -> Self {
        Self { name: "uncoded".into(), b: 2, p_max }
    }

    pub fn repetition(p_max: f64) -> Self {
        Self { name: "repetition".into(), b: 1, p_max }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "uncoded" => Some(Self::uncoded(1.0)),
            "repetition" => Some(Self::repetition(1.0)),
            _ => None,
        }
    }
}

impl LinkSystem for LinearGaussianSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn payload_len(&self) -> usize {
        self.b
    }

    fn channel_uses(&self) -> usize {
        1
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Reals
    }

    fn run(&self, payloads: &[Tensor], snr_db: f64, normals: &[Tensor]) -> Result<RunOutput, EvalError> {
        let d = &payloads[0];
        let rows = d.rows();
        let nv = snr_to_noise_var(snr_db, self.p_max);
        let awgn = ChannelSpec::awgn();
        let mut values = Vec::with_capacity(rows * self.b);
        let mut powers = Vec::with_capacity(rows);
        for r in 0..rows {
            let n = normals[0].row(r);
            if self.b == 2 {
                let u = UncodedGaussian { p_max: self.p_max };
                let x = u.encode([d.at(r, 0), d.at(r, 1)]);
                powers.push(x.norm_sqr());
                values.extend_from_slice(&u.estimate(received(x, &awgn, nv, n), nv));
            } else {
                let g = RepetitionGaussian { p_max: self.p_max };
                let x = g.encode(d.at(r, 0));
                powers.push(x.norm_sqr());
                values.push(g.estimate(received(x, &awgn, nv, n), nv));
            }
        }
        let est = StepEstimate {
            values: Tensor::new(vec![rows, self.b], values).expect("shape"),
            erased: vec![false; self.b],
        };
        Ok(RunOutput { estimates: vec![vec![est]], powers: vec![vec![powers]] })
    }
}
