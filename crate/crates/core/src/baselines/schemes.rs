use num_complex::Complex64;

use super::qam::{bits_to_label, label_to_bits, QamConstellation};
use super::BaselineError;

/// One channel use: a constellation and the payload bits (0-based) that
/// form its label, real-axis bits first.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelUse {
    pub order: usize,
    pub bits: Vec<usize>,
}

/// A fixed multi-use QAM transmission scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiUseScheme {
    name: String,
    payload_len: usize,
    uses: Vec<ChannelUse>,
    constellations: Vec<QamConstellation>,
    scale: f64,
}

/// Second-use permutation for 8 bits: `(b3, b8, b1, b6)` on the real axis,
/// `(b7, b4, b5, b2)` on the imaginary axis.
pub const INTERLEAVE_8: [usize; 8] = [2, 7, 0, 5, 6, 3, 4, 1];

pub const SCHEME_NAMES: [&str; 4] =
    ["t2b8_qam16_split", "t2b8_qam256_interleaved", "t4b16_qam16_seq", "t4b16_qam256_interleaved"];

fn span(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

fn interleaved(offset: usize) -> Vec<usize> {
    INTERLEAVE_8.iter().map(|&i| i + offset).collect()
}

impl MultiUseScheme {
    pub fn new(name: &str, payload_len: usize, uses: Vec<ChannelUse>) -> Result<Self, BaselineError> {
        let mut covered = vec![false; payload_len];
        let mut constellations = Vec::with_capacity(uses.len());
        for u in &uses {
            let q = QamConstellation::new(u.order)?;
            if q.bits() != u.bits.len() {
                return Err(BaselineError::BitCount { expected: q.bits(), got: u.bits.len() });
            }
            for &b in &u.bits {
                if b >= payload_len {
                    return Err(BaselineError::Scheme(format!("bit index {b} outside payload of {payload_len}")));
                }
                covered[b] = true;
            }
            constellations.push(q);
        }
        if uses.is_empty() || covered.iter().any(|c| !c) {
            return Err(BaselineError::Scheme(format!("{name}: every payload bit must be sent at least once")));
        }
        Ok(Self { name: name.to_string(), payload_len, uses, constellations, scale: 1.0 })
    }

    /// Looks a scheme up by name (see [`SCHEME_NAMES`]).
    pub fn by_name(name: &str) -> Result<Self, BaselineError> {
        let q = |order: usize, bits: Vec<usize>| ChannelUse { order, bits };
        let uses = match name {
            "t2b8_qam16_split" => vec![q(16, span(0, 4)), q(16, span(4, 4))],
            "t2b8_qam256_interleaved" => vec![q(256, span(0, 8)), q(256, interleaved(0))],
            "t4b16_qam16_seq" => (0..4).map(|t| q(16, span(4 * t, 4))).collect(),
            "t4b16_qam256_interleaved" => {
                vec![q(256, span(0, 8)), q(256, span(8, 8)), q(256, interleaved(0)), q(256, interleaved(8))]
            }
            other => return Err(BaselineError::UnknownScheme(other.to_string())),
        };
        let b = if name.starts_with("t2b8") { 8 } else { 16 };
        Self::new(name, b, uses)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    pub fn channel_uses(&self) -> usize {
        self.uses.len()
    }

    pub fn uses(&self) -> &[ChannelUse] {
        &self.uses
    }

    pub fn constellation(&self, t: usize) -> &QamConstellation {
        &self.constellations[t]
    }

    /// Amplitude factor applied to every transmitted point.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn max_amplitude(&self) -> f64 {
        self.constellations.iter().map(|q| q.max_amplitude()).fold(0.0, f64::max) * self.scale
    }

    fn point(&self, t: usize, bits: &[u8]) -> Complex64 {
        let label = self.uses[t].bits.iter().fold(0usize, |acc, &i| (acc << 1) | (bits[i] & 1) as usize);
        self.constellations[t].point(label) * self.scale
    }

    /// Noiseless symbols for every channel use.
    pub fn encode(&self, bits: &[u8]) -> Result<Vec<Complex64>, BaselineError> {
        if bits.len() != self.payload_len {
            return Err(BaselineError::BitCount { expected: self.payload_len, got: bits.len() });
        }
        Ok((0..self.uses.len()).map(|t| self.point(t, bits)).collect())
    }

    /// Bits carried by at least one of the first `t` uses.
    pub fn sent_by(&self, t: usize) -> Vec<bool> {
        let mut sent = vec![false; self.payload_len];
        for u in &self.uses[..t.min(self.uses.len())] {
            for &b in &u.bits {
                sent[b] = true;
            }
        }
        sent
    }
}

/// Decision rule over the uses received so far.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMetric {
    /// Minimum summed squared distance over all received uses.
    Joint,
    /// Independent nearest-point decision per use; later uses override
    /// earlier decisions on shared bits.
    PerUse,
}

#[derive(Clone, Debug)]
struct Component {
    uses: Vec<usize>,
    bits: Vec<usize>,
    /// `table[c][k]` is the symbol of candidate `c` on `uses[k]`.
    table: Vec<Vec<Complex64>>,
}

/// Minimum-distance decoder factorised over groups of uses that share bits.
///
/// The summed metric separates across groups with disjoint bit sets, so the
/// joint argmin over all payloads equals the per-group argmins.
#[derive(Clone, Debug)]
pub struct JointDecoder {
    scheme: MultiUseScheme,
    components: Vec<Component>,
}

const MAX_COMPONENT_BITS: usize = 20;

impl JointDecoder {
    pub fn new(scheme: MultiUseScheme) -> Result<Self, BaselineError> {
        let n = scheme.channel_uses();
        let mut group: Vec<usize> = (0..n).collect();
        fn root(g: &mut [usize], mut i: usize) -> usize {
            while g[i] != i {
                g[i] = g[g[i]];
                i = g[i];
            }
            i
        }
        for a in 0..n {
            for b in a + 1..n {
                if scheme.uses[a].bits.iter().any(|x| scheme.uses[b].bits.contains(x)) {
                    let (ra, rb) = (root(&mut group, a), root(&mut group, b));
                    group[rb] = ra;
                }
            }
        }
        let mut components = Vec::new();
        for r in 0..n {
            let uses: Vec<usize> = (0..n).filter(|&u| root(&mut group, u) == r).collect();
            if uses.is_empty() {
                continue;
            }
            let mut bits: Vec<usize> = uses.iter().flat_map(|&u| scheme.uses[u].bits.iter().copied()).collect();
            bits.sort_unstable();
            bits.dedup();
            if bits.len() > MAX_COMPONENT_BITS {
                return Err(BaselineError::Scheme(format!("{} bits in one decoding group", bits.len())));
            }
            let mut payload = vec![0u8; scheme.payload_len];
            let table = (0..1usize << bits.len())
                .map(|c| {
                    for (k, &b) in bits.iter().enumerate() {
                        payload[b] = ((c >> (bits.len() - 1 - k)) & 1) as u8;
                    }
                    uses.iter().map(|&u| scheme.point(u, &payload)).collect()
                })
                .collect();
            components.push(Component { uses, bits, table });
        }
        Ok(Self { scheme, components })
    }

    pub fn scheme(&self) -> &MultiUseScheme {
        &self.scheme
    }

    /// Decision after the first `received.len()` uses; `None` marks bits
    /// that no received use has carried yet.
    pub fn decode(&self, received: &[Complex64], metric: DecodeMetric) -> Vec<Option<u8>> {
        let t = received.len().min(self.scheme.channel_uses());
        let mut out = vec![None; self.scheme.payload_len];
        match metric {
            DecodeMetric::Joint => {
                for comp in &self.components {
                    let seen: Vec<usize> = (0..comp.uses.len()).filter(|&k| comp.uses[k] < t).collect();
                    if seen.is_empty() {
                        continue;
                    }
                    let mut best = (f64::INFINITY, 0usize);
                    for (c, syms) in comp.table.iter().enumerate() {
                        let mut d = 0.0;
                        for &k in &seen {
                            d += (received[comp.uses[k]] - syms[k]).norm_sqr();
                            if d >= best.0 {
                                break;
                            }
                        }
                        if d < best.0 {
                            best = (d, c);
                        }
                    }
                    let n = comp.bits.len();
                    for &k in &seen {
                        for &b in &self.scheme.uses[comp.uses[k]].bits {
                            let pos = comp.bits.binary_search(&b).expect("bit in component");
                            out[b] = Some(((best.1 >> (n - 1 - pos)) & 1) as u8);
                        }
                    }
                }
            }
            DecodeMetric::PerUse => {
                for (u, &y) in received.iter().enumerate().take(t) {
                    let q = &self.scheme.constellations[u];
                    let label = q.demodulate(y / self.scheme.scale);
                    for (&b, bit) in self.scheme.uses[u].bits.iter().zip(label_to_bits(label, q.bits())) {
                        out[b] = Some(bit);
                    }
                }
            }
        }
        out
    }

    /// Reference decoder that scores every payload; exponential in `b`.
    pub fn decode_brute_force(&self, received: &[Complex64]) -> Vec<Option<u8>> {
        let b = self.scheme.payload_len;
        let t = received.len().min(self.scheme.channel_uses());
        let mut best = (f64::INFINITY, 0usize);
        for label in 0..1usize << b {
            let bits = label_to_bits(label, b);
            let d: f64 = (0..t).map(|u| (received[u] - self.scheme.point(u, &bits)).norm_sqr()).sum();
            if d < best.0 {
                best = (d, label);
            }
        }
        let bits = label_to_bits(best.1, b);
        let sent = self.scheme.sent_by(t);
        bits.into_iter().zip(sent).map(|(v, s)| s.then_some(v)).collect()
    }
}

/// Per-bit error contribution: 0 or 1 for decided bits, 0.5 for erased.
pub fn bit_error(truth: u8, decision: Option<u8>) -> f64 {
    match decision {
        Some(v) if v == truth => 0.0,
        Some(_) => 1.0,
        None => 0.5,
    }
}

/// Packs a payload label into bits, first bit most significant.
pub fn payload_bits(label: usize, b: usize) -> Vec<u8> {
    label_to_bits(label, b)
}

pub fn payload_label(bits: &[u8]) -> usize {
    bits_to_label(bits)
}
