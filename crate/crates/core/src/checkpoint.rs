//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PROGTRCK"
//! version  u32
//! meta     u64 length + UTF-8 `key=value` lines
//! count    u64
//! param    u32 name length, name, u32 rank, u64 dims..., f64 values...
//! ```
//!
//! Floats in the metadata are written with Rust's shortest round-trip
//! formatting, so save -> load -> save is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::autodiff::{ParameterSet, Tensor};
use crate::channels::{ChannelKind, ChannelSpec, TwtaParams};
use crate::objectives::LossWeights;
use crate::transceiver::{InputKind, TransceiverConfig};

pub const MAGIC: &[u8; 8] = b"PROGTRCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

/// Everything needed to rebuild and evaluate a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub scenario: String,
    pub transceiver: TransceiverConfig,
    pub users: usize,
    pub channel: ChannelSpec,
    pub weights: LossWeights,
    pub snr_range_db: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: ModelMeta,
    pub params: ParameterSet,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ModelMeta {
    fn to_text(&self) -> String {
        let c = &self.transceiver;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("scenario", self.scenario.clone());
        kv("b", c.payload_len.to_string());
        kv("t", c.channel_uses.to_string());
        kv("input_kind", c.input_kind.as_str().into());
        kv("layers", c.layers.to_string());
        kv("state_size", c.state_size.to_string());
        kv("users", self.users.to_string());
        let (kind, twta) = match &self.channel.kind {
            ChannelKind::Awgn => ("awgn", None),
            ChannelKind::TwtaAwgn(p) => ("twta_awgn", Some(*p)),
            ChannelKind::MacAwgn => ("mac_awgn", None),
        };
        kv("channel", kind.into());
        if let Some(p) = twta {
            kv("twta", join(&[p.alpha_rho, p.beta_rho, p.alpha_psi, p.beta_psi]));
        }
        let fading: Vec<f64> = self.channel.fading.iter().flat_map(|h| [h.re, h.im]).collect();
        kv("fading", join(&fading));
        kv("alpha", join(&self.weights.alpha));
        kv("lambda", format!("{:?}", self.weights.lambda));
        kv("p_max", format!("{:?}", self.weights.p_max));
        kv("snr_range_db", join(&[self.snr_range_db.0, self.snr_range_db.1]));
        s
    }

    fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("bad meta line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| map.get(k).cloned().ok_or_else(|| corrupt(format!("meta key {k} missing")));
        let num = |k: &str| -> Result<usize, CheckpointError> {
            get(k)?.parse().map_err(|_| corrupt(format!("meta key {k} is not an integer")))
        };
        let floats = |k: &str| -> Result<Vec<f64>, CheckpointError> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| x.parse::<f64>().map_err(|_| corrupt(format!("meta key {k} is not a float list"))))
                .collect()
        };
        let one = |k: &str| -> Result<f64, CheckpointError> {
            let v = floats(k)?;
            if v.len() != 1 {
                return Err(corrupt(format!("meta key {k} needs one value")));
            }
            Ok(v[0])
        };
        let input_kind = InputKind::parse(&get("input_kind")?).ok_or_else(|| corrupt("unknown input kind"))?;
        let fading_raw = floats("fading")?;
        if fading_raw.len() % 2 != 0 {
            return Err(corrupt("odd fading list"));
        }
        let fading = fading_raw.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let kind = match get("channel")?.as_str() {
            "awgn" => ChannelKind::Awgn,
            "mac_awgn" => ChannelKind::MacAwgn,
            "twta_awgn" => {
                let p = floats("twta")?;
                if p.len() != 4 {
                    return Err(corrupt("twta needs four values"));
                }
                ChannelKind::TwtaAwgn(TwtaParams { alpha_rho: p[0], beta_rho: p[1], alpha_psi: p[2], beta_psi: p[3] })
            }
            other => return Err(corrupt(format!("unknown channel {other}"))),
        };
        let snr = floats("snr_range_db")?;
        if snr.len() != 2 {
            return Err(corrupt("snr_range_db needs two values"));
        }
        Ok(Self {
            scenario: get("scenario")?,
            transceiver: TransceiverConfig {
                payload_len: num("b")?,
                channel_uses: num("t")?,
                input_kind,
                layers: num("layers")?,
                state_size: num("state_size")?,
            },
            users: num("users")?,
            channel: ChannelSpec { kind, fading },
            weights: LossWeights { alpha: floats("alpha")?, lambda: one("lambda")?, p_max: one("p_max")? },
            snr_range_db: (snr[0], snr[1]),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = self.meta.to_text();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let meta_len = r.len()?;
        let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|_| corrupt("meta is not UTF-8"))?;
        let meta = ModelMeta::from_text(meta)?;
        let count = r.len()?;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| corrupt("name is not UTF-8"))?.to_string();
            let rank = r.u32()? as usize;
            if rank > 2 {
                return Err(corrupt(format!("rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len()?);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let value = Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))?;
            params.add(name, value).map_err(|e| corrupt(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| io_err(dir, source))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_bytes(&bytes)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| corrupt("length overflow"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::transceiver::Model;

    fn sample() -> Checkpoint {
        let cfg = TransceiverConfig {
            payload_len: 3,
            channel_uses: 2,
            input_kind: InputKind::Bits,
            layers: 2,
            state_size: 4,
        };
        let mut params = ParameterSet::new();
        Model::build(cfg.clone(), 1, &mut params, &mut stream(1, "init", 0)).unwrap();
        Checkpoint {
            meta: ModelMeta {
                scenario: "custom".into(),
                transceiver: cfg,
                users: 1,
                channel: ChannelSpec::twta(TwtaParams::default()),
                weights: LossWeights::new(vec![10.0, 25.0], 1000.0, 1.0).unwrap(),
                snr_range_db: (0.0, 30.0),
            },
            params,
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in back.params.iter().zip(ck.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn truncated_and_versioned_files_fail() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 12, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CheckpointError::Corrupt(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(CheckpointError::Version { found: 2 })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert!(matches!(Checkpoint::load(&dir.path().join("none")), Err(CheckpointError::Io { .. })));
    }
}
