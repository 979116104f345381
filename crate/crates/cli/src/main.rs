use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use progtr::autodiff::Tensor;
use progtr::baselines::{DecodeMetric, MultiUseScheme, SCHEME_NAMES};
use progtr::channels::{ChannelSpec, TwtaParams};
use progtr::checkpoint::{Checkpoint, CheckpointError};
use progtr::evaluation::{
    compare, evaluate, write_bmi_csv, write_metrics_csv, EvalConfig, EvalError, Evaluation, LinearGaussianSystem,
    LinkSystem, Metric, ProgTrSystem, SchemeSystem,
};
use progtr::experiment::{parse_config, parse_snr_grid, ConfigError};
use progtr::rng::stream;
use progtr::training::{train, write_history_csv, SourceSpec, TrainingError};
use progtr::transceiver::{transmit, InputKind, Model};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "PROGTR_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "progtr-out";

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_INCOMPATIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "progtr", version, about = "Train and evaluate progressive transmission models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes a checkpoint and a history CSV.
    Train {
        config: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the config's `output.dir`, then $PROGTR_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one checkpoint or baseline over an SNR grid.
    Eval {
        #[command(flatten)]
        system: SystemArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Metric CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate several systems on shared payloads and noise.
    Compare {
        /// Checkpoint path or baseline name; repeat for each system.
        #[arg(long = "system", required = true)]
        systems: Vec<String>,
        #[arg(long, value_enum, default_value = "awgn")]
        channel: BaselineChannel,
        #[arg(long, value_enum, default_value = "joint")]
        decode: Decode,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump transmitted symbols per channel use.
    Constellation {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated SNRs or lo:hi:step.
        #[arg(long, default_value = "10")]
        snr: String,
        /// Random payloads per (snr, t) for continuous models with b > 1.
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct SystemArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Baseline name: a QAM scheme, `uncoded` or `repetition`.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(clap::Args)]
struct GridArgs {
    /// Comma-separated metrics: ber, mse, mi, bmi, power.
    #[arg(long, default_value = "ber")]
    metrics: String,
    /// SNR grid in dB, lo:hi:step or a comma-separated list.
    #[arg(long, default_value = "0:30:2")]
    snr: String,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineChannel {
    Awgn,
    TwtaAwgn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decode {
    Joint,
    PerUse,
}

/// Error tagged with a process exit code.
#[derive(Debug)]
struct Coded(u8, String);

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Coded {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Coded(EXIT_CONFIG, msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(Coded(code, _)) = cause.downcast_ref() {
            return *code;
        }
        if cause.is::<ConfigError>() || cause.is::<CheckpointError>() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<TrainingError>() {
            Some(TrainingError::Numeric { .. }) => return EXIT_NUMERIC,
            Some(TrainingError::Config(_) | TrainingError::Checkpoint(_)) => return EXIT_CONFIG,
            _ => {}
        }
        match cause.downcast_ref::<EvalError>() {
            Some(EvalError::Mode { .. } | EvalError::Incompatible(_)) => return EXIT_INCOMPATIBLE,
            Some(EvalError::Config(_)) => return EXIT_CONFIG,
            _ => {}
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, iterations, seed, out } => cmd_train(&config, iterations, seed, out),
        Command::Eval { system, grid, out } => cmd_eval(system, &grid, out),
        Command::Compare { systems, channel, decode, grid, out } => cmd_compare(&systems, channel, decode, &grid, out),
        Command::Constellation { checkpoint, snr, inputs, seed, out } => {
            cmd_constellation(&checkpoint, &snr, inputs, seed, out)
        }
    }
}

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn create_file(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_train(config: &Path, iterations: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let text =
        fs::read_to_string(config).map_err(|e| config_err(format!("cannot read config {}: {e}", config.display())))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dir = out_dir(out.or(cfg.out_dir.clone()));
    let stem = cfg.scenario.as_str();
    let ck_path = dir.join(format!("{stem}.ckpt"));
    cfg.train.checkpoint = Some(ck_path.clone());

    let outcome = train(&cfg.train)?;
    let hist_path = dir.join(format!("{stem}_history.csv"));
    write_history_csv(&outcome.history, create_file(&hist_path)?)?;

    let users = outcome.final_step_losses.len();
    for (m, per_t) in outcome.final_step_losses.iter().enumerate() {
        let who = if users > 1 { format!("user {} ", m + 1) } else { String::new() };
        let losses: Vec<String> = per_t.iter().enumerate().map(|(t, l)| format!("t={} {l:.6}", t + 1)).collect();
        println!("final {who}losses: {}", losses.join(", "));
    }
    println!("checkpoint: {}", ck_path.display());
    println!("history: {}", hist_path.display());
    Ok(())
}

fn eval_config(grid: &GridArgs) -> Result<(Vec<Metric>, EvalConfig)> {
    let metrics = grid
        .metrics
        .split(',')
        .map(|m| Metric::parse(m.trim()).ok_or_else(|| config_err(format!("unknown metric {m:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let snr = parse_snr_grid(&grid.snr).map_err(config_err)?;
    Ok((metrics, EvalConfig::new(snr, grid.samples, grid.seed)))
}

fn load_system(source: &str, channel: &ChannelSpec, decode: DecodeMetric) -> Result<Box<dyn LinkSystem>> {
    if let Some(lin) = LinearGaussianSystem::by_name(source) {
        return Ok(Box::new(lin));
    }
    if SCHEME_NAMES.contains(&source) {
        let scheme = MultiUseScheme::by_name(source)?;
        return Ok(Box::new(SchemeSystem::new(scheme, channel.clone(), decode)?));
    }
    let path = Path::new(source);
    if !path.exists() {
        bail!(config_err(format!(
            "{source:?} is neither a checkpoint nor a baseline (uncoded, repetition, {})",
            SCHEME_NAMES.join(", ")
        )));
    }
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let name = path.file_stem().map_or_else(|| source.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Box::new(ProgTrSystem::from_checkpoint(&name, &ck)?))
}

fn write_outputs(ev: &Evaluation, with_system: bool, path: &Path) -> Result<()> {
    let mut f = create_file(path)?;
    write_metrics_csv(&ev.rows, with_system, &mut f)?;
    f.flush()?;
    if !ev.bmi.is_empty() {
        let bmi_path = path.with_file_name(format!(
            "{}_bmi.csv",
            path.file_stem().map_or_else(|| "eval".into(), |s| s.to_string_lossy().into_owned())
        ));
        write_bmi_csv(&ev.bmi, create_file(&bmi_path)?)?;
        println!("bmi: {}", bmi_path.display());
    }
    println!("metrics: {}", path.display());
    Ok(())
}

fn cmd_eval(system: SystemArgs, grid: &GridArgs, out: Option<PathBuf>) -> Result<()> {
    let (metrics, cfg) = eval_config(grid)?;
    let source = match (&system.checkpoint, &system.scheme) {
        (Some(p), _) => p.to_string_lossy().into_owned(),
        (None, Some(s)) if SCHEME_NAMES.contains(&s.as_str()) || LinearGaussianSystem::by_name(s).is_some() => {
            s.clone()
        }
        (None, Some(s)) => bail!(config_err(format!("unknown baseline {s:?}"))),
        (None, None) => bail!(config_err("give --checkpoint or --scheme")),
    };
    let sys = load_system(&source, &ChannelSpec::awgn(), DecodeMetric::Joint)?;
    let ev = evaluate(sys.as_ref(), &metrics, &cfg)?;
    let path = out.unwrap_or_else(|| out_dir(None).join(format!("{}_eval.csv", sys.name())));
    write_outputs(&ev, false, &path)
}

fn cmd_compare(
    specs: &[String],
    channel: BaselineChannel,
    decode: Decode,
    grid: &GridArgs,
    out: Option<PathBuf>,
) -> Result<()> {
    let (metrics, cfg) = eval_config(grid)?;
    let channel = match channel {
        BaselineChannel::Awgn => ChannelSpec::awgn(),
        BaselineChannel::TwtaAwgn => ChannelSpec::twta(TwtaParams::default()),
    };
    let decode = match decode {
        Decode::Joint => DecodeMetric::Joint,
        Decode::PerUse => DecodeMetric::PerUse,
    };
    let systems = specs.iter().map(|s| load_system(s, &channel, decode)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn LinkSystem> = systems.iter().map(|s| s.as_ref()).collect();
    let ev = compare(&refs, &metrics, &cfg)?;
    let path = out.unwrap_or_else(|| out_dir(None).join("compare.csv"));
    write_outputs(&ev, true, &path)
}

/// Number of swept inputs for continuous single-variable models.
const SWEEP_STEPS: usize = 512;
const SWEEP_RANGE: f64 = 3.0;

fn constellation_inputs(model: &Model, inputs: usize, seed: u64, user: usize) -> Result<(Tensor, bool)> {
    let b = model.config.payload_len;
    Ok(match model.config.input_kind {
        InputKind::Bits => {
            if b > 16 {
                bail!(config_err(format!("b = {b} is too large to enumerate")));
            }
            let n = 1usize << b;
            let data = (0..n).flat_map(|id| (0..b).map(move |i| ((id >> (b - 1 - i)) & 1) as f64)).collect();
            (Tensor::new(vec![n, b], data)?, false)
        }
        InputKind::Reals if b == 1 => {
            let step = 2.0 * SWEEP_RANGE / (SWEEP_STEPS - 1) as f64;
            let data = (0..SWEEP_STEPS).map(|k| -SWEEP_RANGE + k as f64 * step).collect();
            (Tensor::new(vec![SWEEP_STEPS, 1], data)?, true)
        }
        InputKind::Reals => {
            let mut rng = stream(seed, "constellation", user as u64);
            (SourceSpec::Gaussian.sample_batch(b, inputs, &mut rng), false)
        }
    })
}

fn cmd_constellation(checkpoint: &Path, snr: &str, inputs: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = Model::bind(ck.meta.transceiver.clone(), ck.meta.users, &ck.params)?;
    let snrs = parse_snr_grid(snr).map_err(config_err)?;
    let dir = out_dir(out);
    let stem = checkpoint.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    let users = model.users();
    for m in 0..users {
        let (payload, swept) = constellation_inputs(&model, inputs, seed, m)?;
        let name = if users > 1 {
            format!("{stem}_constellation_user{}.csv", m + 1)
        } else {
            format!("{stem}_constellation.csv")
        };
        let path = dir.join(name);
        let mut f = std::io::BufWriter::new(create_file(&path)?);
        writeln!(f, "snr_db,t,{},re,im", if swept { "input" } else { "input_id" })?;
        for &s in &snrs {
            let symbols = transmit(&ck.params, &model, m, &payload, s)?;
            for (t, x) in symbols.iter().enumerate() {
                for r in 0..x.rows() {
                    let id = if swept { payload.at(r, 0).to_string() } else { r.to_string() };
                    writeln!(f, "{s},{},{id},{},{}", t + 1, x.at(r, 0), x.at(r, 1))?;
                }
            }
        }
        f.flush()?;
        println!("constellation: {}", path.display());
    }
    Ok(())
}
