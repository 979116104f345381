//! Monte-Carlo metrics over trained models and baselines.
//!
//! Every system sees the same payloads and the same standard-normal noise
//! draws for a given `(seed, shard)`, so curves from different systems (and
//! different SNR points) are paired sample by sample.

mod mi;
mod systems;

use std::io::Write;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::baselines::BaselineError;
use crate::channels::{db_to_linear, draw_normals, ChannelError};
use crate::rng::stream;
use crate::training::SourceSpec;
use crate::transceiver::{InputKind, TransceiverError};

pub use mi::{
    bmi_matrix, mutual_information, plugin_cmi, plugin_mi, quantile_bins, vector_mi, MiConfig, MiEstimate,
    MIN_RELIABLE_SAMPLES,
};
pub use systems::{LinearGaussianSystem, LinkSystem, ProgTrSystem, RunOutput, SchemeSystem, StepEstimate};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric {metric} needs a {needed} system but {system} carries {actual}")]
    Mode { metric: &'static str, needed: &'static str, system: String, actual: &'static str },
    #[error("incompatible systems: {0}")]
    Incompatible(String),
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Transceiver(#[from] TransceiverError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Ber,
    Mse,
    Mi,
    Bmi,
    Power,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ber" => Metric::Ber,
            "mse" => Metric::Mse,
            "mi" => Metric::Mi,
            "bmi" => Metric::Bmi,
            "power" => Metric::Power,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ber => "ber",
            Metric::Mse => "mse",
            Metric::Mi => "mi",
            Metric::Bmi => "bmi",
            Metric::Power => "power",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub snr_db: Vec<f64>,
    pub samples: usize,
    pub shard_size: usize,
    pub seed: u64,
    pub mi: MiConfig,
}

impl EvalConfig {
    pub fn new(snr_db: Vec<f64>, samples: usize, seed: u64) -> Self {
        Self { snr_db, samples, shard_size: 4096, seed, mi: MiConfig::default() }
    }
}

/// One metric value; `stderr` is NaN where no Monte-Carlo error is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub system: String,
    pub snr_db: f64,
    pub t: usize,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BmiRow {
    pub snr_db: f64,
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub mi_bits: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub bmi: Vec<BmiRow>,
}

impl Evaluation {
    /// First row matching `(metric, snr_db, t)`.
    pub fn get(&self, metric: &str, snr_db: f64, t: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.metric == metric && r.snr_db == snr_db && r.t == t)
    }

    pub fn bmi_matrix(&self, snr_db: f64, t: usize, b: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; b]; b];
        for r in self.bmi.iter().filter(|r| r.snr_db == snr_db && r.t == t) {
            m[r.i - 1][r.j - 1] = r.mi_bits;
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    sum: f64,
    sumsq: f64,
    n: usize,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sumsq += x * x;
        self.n += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = ((self.sumsq / n - self.mean().powi(2)) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Payloads (one block per user) and `T` noise blocks for one shard.
pub fn draw_eval_batch(
    seed: u64,
    shard: u64,
    users: usize,
    b: usize,
    t: usize,
    rows: usize,
    kind: InputKind,
) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut prng = stream(seed, "eval-payload", shard);
    let src = SourceSpec::for_kind(kind);
    let payloads = (0..users).map(|_| src.sample_batch(b, rows, &mut prng)).collect();
    let mut nrng = stream(seed, "eval-noise", shard);
    let normals = (0..t).map(|_| draw_normals(&mut nrng, rows)).collect();
    (payloads, normals)
}

fn check_mode(system: &dyn LinkSystem, metric: Metric) -> Result<(), EvalError> {
    let kind = system.input_kind();
    let needed = match metric {
        Metric::Ber | Metric::Bmi => InputKind::Bits,
        Metric::Mse => InputKind::Reals,
        Metric::Mi | Metric::Power => return Ok(()),
    };
    if kind != needed {
        return Err(EvalError::Mode {
            metric: metric.as_str(),
            needed: needed.as_str(),
            system: system.name().to_string(),
            actual: kind.as_str(),
        });
    }
    Ok(())
}

fn user_suffix(users: usize, m: usize) -> String {
    if users == 1 {
        String::new()
    } else {
        format!("_u{}", m + 1)
    }
}

/// Runs `system` over the SNR grid and computes the requested metrics.
pub fn evaluate(system: &dyn LinkSystem, metrics: &[Metric], cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    for &m in metrics {
        check_mode(system, m)?;
    }
    if cfg.samples == 0 || cfg.shard_size == 0 {
        return Err(EvalError::Config("samples and shard size must be positive".into()));
    }
    let (b, t_max, users, kind) = (system.payload_len(), system.channel_uses(), system.users(), system.input_kind());
    let want = |m: Metric| metrics.contains(&m);
    let collect = want(Metric::Mi) || want(Metric::Bmi);
    let mut out = Evaluation::default();
    let name = system.name().to_string();

    for &snr in &cfg.snr_db {
        let mut err = vec![vec![Moments::default(); t_max]; users];
        let mut per_var = vec![vec![vec![Moments::default(); b]; t_max]; users];
        let mut power = vec![vec![Moments::default(); t_max]; users];
        let mut kept_payload: Vec<Vec<f64>> = vec![Vec::new(); users];
        let mut kept_est: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); t_max]; users];

        let mut done = 0;
        let mut shard = 0u64;
        while done < cfg.samples {
            let rows = cfg.shard_size.min(cfg.samples - done);
            let (payloads, normals) = draw_eval_batch(cfg.seed, shard, users, b, t_max, rows, kind);
            let run = system.run(&payloads, snr, &normals)?;
            for m in 0..users {
                let d = &payloads[m];
                if collect {
                    kept_payload[m].extend_from_slice(d.data());
                }
                for t in 0..t_max {
                    let est = &run.estimates[m][t];
                    for r in 0..rows {
                        let (dr, er) = (d.row(r), est.values.row(r));
                        match kind {
                            InputKind::Bits => {
                                let mut e = 0.0;
                                for i in 0..b {
                                    e += if est.erased[i] {
                                        0.5
                                    } else {
                                        let hard = if er[i] > 0.5 { 1.0 } else { 0.0 };
                                        (hard - dr[i]).abs()
                                    };
                                }
                                err[m][t].push(e / b as f64);
                            }
                            InputKind::Reals => {
                                let mut s = 0.0;
                                for i in 0..b {
                                    let sq = (er[i] - dr[i]).powi(2);
                                    per_var[m][t][i].push(sq);
                                    s += sq;
                                }
                                err[m][t].push(s / b as f64);
                            }
                        }
                        power[m][t].push(run.powers[m][t][r]);
                    }
                    if collect {
                        kept_est[m][t].extend_from_slice(est.values.data());
                    }
                }
            }
            done += rows;
            shard += 1;
        }

        for m in 0..users {
            let sfx = user_suffix(users, m);
            let n = cfg.samples;
            let payload =
                collect.then(|| Tensor::new(vec![n, b], std::mem::take(&mut kept_payload[m])).expect("shape"));
            for t in 0..t_max {
                let mut row = |metric: String, value: f64, stderr: f64| {
                    out.rows.push(MetricRow { system: name.clone(), snr_db: snr, t: t + 1, metric, value, stderr, n });
                };
                if want(Metric::Ber) {
                    row(format!("ber{sfx}"), err[m][t].mean(), err[m][t].stderr());
                }
                if want(Metric::Mse) {
                    row(format!("mse{sfx}"), err[m][t].mean(), err[m][t].stderr());
                    for (i, v) in per_var[m][t].iter().enumerate() {
                        row(format!("mse_var{}{sfx}", i + 1), v.mean(), v.stderr());
                    }
                }
                if want(Metric::Power) {
                    row(format!("power{sfx}"), power[m][t].mean(), power[m][t].stderr());
                }
                if let Some(payload) = &payload {
                    let est = Tensor::new(vec![n, b], std::mem::take(&mut kept_est[m][t])).expect("shape");
                    if want(Metric::Mi) {
                        let mi = vector_mi(payload, &est, kind == InputKind::Bits, &cfg.mi);
                        row(format!("mi{sfx}"), mi.bits, f64::NAN);
                    }
                    if want(Metric::Bmi) && m == 0 {
                        for (i, r) in bmi_matrix(payload, &est, &cfg.mi).into_iter().enumerate() {
                            for (j, v) in r.into_iter().enumerate() {
                                out.bmi.push(BmiRow { snr_db: snr, t: t + 1, i: i + 1, j: j + 1, mi_bits: v });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn ber_curve(system: &dyn LinkSystem, cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    evaluate(system, &[Metric::Ber], cfg)
}

pub fn mse_curve(system: &dyn LinkSystem, cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    evaluate(system, &[Metric::Mse], cfg)
}

/// Evaluates several systems on identical draws; they must agree on
/// payload length, channel uses and input kind.
pub fn compare(systems: &[&dyn LinkSystem], metrics: &[Metric], cfg: &EvalConfig) -> Result<Evaluation, EvalError> {
    let first = systems.first().ok_or_else(|| EvalError::Incompatible("no systems given".into()))?;
    for s in systems {
        if s.payload_len() != first.payload_len()
            || s.channel_uses() != first.channel_uses()
            || s.input_kind() != first.input_kind()
        {
            return Err(EvalError::Incompatible(format!(
                "{} is (b={}, T={}, {}) but {} is (b={}, T={}, {})",
                s.name(),
                s.payload_len(),
                s.channel_uses(),
                s.input_kind().as_str(),
                first.name(),
                first.payload_len(),
                first.channel_uses(),
                first.input_kind().as_str()
            )));
        }
    }
    let mut all = Evaluation::default();
    for s in systems {
        let e = evaluate(*s, metrics, cfg)?;
        all.rows.extend(e.rows);
        all.bmi.extend(e.bmi);
    }
    Ok(all)
}

/// Shannon capacity `log2(1 + snr)` in bits per complex use.
pub fn capacity_bits(snr_db: f64) -> f64 {
    (1.0 + db_to_linear(snr_db)).log2()
}

/// Smallest MSE for one unit-variance real Gaussian over one complex use,
/// `(1 + snr)^-2`.
pub fn rd_lower_bound(snr_db: f64) -> f64 {
    (1.0 + db_to_linear(snr_db)).powi(-2)
}

/// Capacity and distortion-bound rows for a grid.
pub fn reference_rows(snr_db: &[f64]) -> Vec<MetricRow> {
    snr_db
        .iter()
        .flat_map(|&s| {
            [("capacity", capacity_bits(s)), ("rd_bound", rd_lower_bound(s))].map(|(m, v)| MetricRow {
                system: "reference".into(),
                snr_db: s,
                t: 0,
                metric: m.into(),
                value: v,
                stderr: 0.0,
                n: 0,
            })
        })
        .collect()
}

/// `snr_db,t,metric,value,stderr,n`, with a leading `system` column when
/// `with_system` is set.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], with_system: bool, mut w: W) -> std::io::Result<()> {
    if with_system {
        write!(w, "system,")?;
    }
    writeln!(w, "snr_db,t,metric,value,stderr,n")?;
    for r in rows {
        if with_system {
            write!(w, "{},", r.system)?;
        }
        writeln!(w, "{},{},{},{},{},{}", r.snr_db, r.t, r.metric, r.value, r.stderr, r.n)?;
    }
    Ok(())
}

pub fn write_bmi_csv<W: Write>(rows: &[BmiRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "snr_db,t,i,j,mi_bits")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.snr_db, r.t, r.i, r.j, r.mi_bits)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{gray16_ber, qpsk_ber, ChannelUse, DecodeMetric, MultiUseScheme};
    use crate::channels::{snr_to_noise_var, ChannelSpec};

    #[test]
    fn reference_values() {
        assert!((capacity_bits(0.0) - 1.0).abs() < 1e-12);
        assert!((capacity_bits(10.0) - 3.4594).abs() < 1e-4);
        assert!((rd_lower_bound(10.0) - 8.264e-3).abs() < 1e-6);
        assert_eq!(reference_rows(&[0.0, 10.0]).len(), 4);
    }

    #[test]
    fn noiseless_scheme_has_zero_final_ber() {
        let sys = SchemeSystem::new(
            MultiUseScheme::by_name("t2b8_qam16_split").unwrap(),
            ChannelSpec::awgn(),
            DecodeMetric::Joint,
        )
        .unwrap();
        let e = ber_curve(&sys, &EvalConfig::new(vec![300.0], 2000, 1)).unwrap();
        assert_eq!(e.get("ber", 300.0, 2).unwrap().value, 0.0);
        // unsent half of the payload at t = 1
        assert_eq!(e.get("ber", 300.0, 1).unwrap().value, 0.25);
        let hi = ber_curve(&sys, &EvalConfig::new(vec![40.0], 20_000, 2)).unwrap();
        assert!((hi.get("ber", 40.0, 1).unwrap().value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn qpsk_matches_q_function() {
        let scheme = MultiUseScheme::new("qpsk", 2, vec![ChannelUse { order: 4, bits: vec![0, 1] }]).unwrap();
        let sys = SchemeSystem::new(scheme, ChannelSpec::awgn(), DecodeMetric::Joint).unwrap();
        let e = ber_curve(&sys, &EvalConfig::new(vec![6.0], 200_000, 3)).unwrap();
        let r = e.get("ber", 6.0, 1).unwrap();
        let want = qpsk_ber(snr_to_noise_var(6.0, 1.0));
        assert!((r.value - want).abs() < 3.0 * r.stderr, "{} vs {want} ({})", r.value, r.stderr);
    }

    #[test]
    fn gray16_matches_closed_form() {
        let sys = SchemeSystem::new(
            MultiUseScheme::by_name("t2b8_qam16_split").unwrap(),
            ChannelSpec::awgn(),
            DecodeMetric::Joint,
        )
        .unwrap();
        let e = ber_curve(&sys, &EvalConfig::new(vec![10.0], 100_000, 4)).unwrap();
        let r = e.get("ber", 10.0, 2).unwrap();
        let want = gray16_ber(snr_to_noise_var(10.0, 1.0));
        assert!((r.value - want).abs() < 3.0 * r.stderr, "{} vs {want}", r.value);
    }

    #[test]
    fn mode_mismatch_and_compatibility() {
        let sys = LinearGaussianSystem::uncoded(1.0);
        assert!(matches!(ber_curve(&sys, &EvalConfig::new(vec![0.0], 10, 0)), Err(EvalError::Mode { .. })));
        let scheme = SchemeSystem::new(
            MultiUseScheme::by_name("t2b8_qam16_split").unwrap(),
            ChannelSpec::awgn(),
            DecodeMetric::Joint,
        )
        .unwrap();
        let other = SchemeSystem::new(
            MultiUseScheme::by_name("t4b16_qam16_seq").unwrap(),
            ChannelSpec::awgn(),
            DecodeMetric::Joint,
        )
        .unwrap();
        let r = compare(&[&scheme, &other], &[Metric::Ber], &EvalConfig::new(vec![0.0], 10, 0));
        assert!(matches!(r, Err(EvalError::Incompatible(_))));
    }

    #[test]
    fn uncoded_mse_and_paired_draws() {
        let sys = LinearGaussianSystem::uncoded(1.0);
        let cfg = EvalConfig::new(vec![9.542_425_094_393_248], 200_000, 5);
        let e = evaluate(&sys, &[Metric::Mse, Metric::Power], &cfg).unwrap();
        let r = e.get("mse", cfg.snr_db[0], 1).unwrap();
        assert!((r.value - 0.1).abs() < 0.002, "{r:?}");
        assert!(e.get("mse_var2", cfg.snr_db[0], 1).is_some());
        assert!((e.get("power", cfg.snr_db[0], 1).unwrap().value - 1.0).abs() < 0.01);
        let again = evaluate(&sys, &[Metric::Mse, Metric::Power], &cfg).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn stderr_halves_with_four_times_samples() {
        let sys = LinearGaussianSystem::repetition(1.0);
        let small = mse_curve(&sys, &EvalConfig::new(vec![5.0], 50_000, 6)).unwrap();
        let large = mse_curve(&sys, &EvalConfig::new(vec![5.0], 200_000, 6)).unwrap();
        let ratio = small.get("mse", 5.0, 1).unwrap().stderr / large.get("mse", 5.0, 1).unwrap().stderr;
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn csv_is_stable() {
        let rows = vec![MetricRow {
            system: "s".into(),
            snr_db: 10.0,
            t: 1,
            metric: "ber".into(),
            value: 0.25,
            stderr: 0.01,
            n: 100,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, false, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "snr_db,t,metric,value,stderr,n\n10,1,ber,0.25,0.01,100\n");
        let mut buf = Vec::new();
        write_bmi_csv(&[BmiRow { snr_db: 20.0, t: 2, i: 1, j: 1, mi_bits: 0.5 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "snr_db,t,i,j,mi_bits\n20,2,1,1,0.5\n");
    }
}
