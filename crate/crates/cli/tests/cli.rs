use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use progtr::checkpoint::Checkpoint;
use progtr::transceiver::InputKind;

fn progtr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progtr")).args(args).env("PROGTR_OUT_DIR", dir).output().expect("run progtr")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("progtr-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn small(scenario: &str) -> String {
    format!("scenario = {scenario}\n[model]\nlayers = 1\nstate_size = 8\n[train]\nbatch_size = 256\niterations = 2\n")
}

fn train_small(dir: &Path, scenario: &str) -> PathBuf {
    let cfg = write_config(dir, &format!("{scenario}.cfg"), &small(scenario));
    let out = progtr(&["train", &cfg], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(format!("{scenario}.ckpt"))
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn zero_iterations_writes_preset_checkpoint() {
    let dir = scratch("zero");
    let cfg = write_config(&dir, "t2b8.cfg", "scenario = discrete_t2b8\n");
    let out = progtr(&["train", &cfg, "--iterations", "0"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = Checkpoint::load(&dir.join("discrete_t2b8.ckpt")).unwrap();
    let m = &ck.meta;
    assert_eq!((m.transceiver.payload_len, m.transceiver.channel_uses), (8, 2));
    assert_eq!(m.weights.alpha, vec![10.0, 25.0]);
    assert_eq!(m.weights.lambda, 1e3);
    assert_eq!(m.transceiver.input_kind, InputKind::Bits);
    let hist = fs::read_to_string(dir.join("discrete_t2b8_history.csv")).unwrap();
    assert_eq!(hist, "iter,optimizer_index,user,t,loss,mean_power_t,snr_db\n");
}

#[test]
fn train_prints_losses_and_is_reproducible() {
    let dir = scratch("repro");
    let a = train_small(&dir, "gauss_b2t2");
    let first = fs::read(&a).unwrap();
    let hist = fs::read(dir.join("gauss_b2t2_history.csv")).unwrap();
    let cfg = dir.join("gauss_b2t2.cfg").to_string_lossy().into_owned();
    let out = progtr(&["train", &cfg], &dir);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final losses: t=1 ") && stdout.contains(", t=2 "), "{stdout}");
    assert_eq!(fs::read(&a).unwrap(), first);
    assert_eq!(fs::read(dir.join("gauss_b2t2_history.csv")).unwrap(), hist);
}

#[test]
fn config_errors_exit_2() {
    let dir = scratch("cfg");
    let missing = dir.join("nope.cfg");
    let out = progtr(&["train", missing.to_str().unwrap()], &dir);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.cfg"));

    let cfg = write_config(&dir, "bad.cfg", "scenario = discrete_t2b8\n[train]\nbogus = 1\n");
    let out = progtr(&["train", &cfg], &dir);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("train.bogus"), "{err}");

    let cfg = write_config(&dir, "pinned.cfg", "scenario = discrete_t2b8\n[loss]\nlambda = 5\n");
    assert_eq!(code(&progtr(&["train", &cfg], &dir)), 2);
}

#[test]
fn numeric_failure_exits_3_and_keeps_checkpoint() {
    let dir = scratch("numeric");
    let text = format!("{}lr = 1e300\n", small("gauss_b2t1").replace("iterations = 2", "iterations = 5"));
    let cfg = write_config(&dir, "nan.cfg", &text);
    let out = progtr(&["train", &cfg], &dir);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let ck = Checkpoint::load(&dir.join("gauss_b2t1.ckpt")).unwrap();
    assert!(ck.params.iter().all(|p| p.value.is_finite()));
}

#[test]
fn eval_is_deterministic_and_checks_mode() {
    let dir = scratch("eval");
    let ck = train_small(&dir, "gauss_b2t1");
    let ck = ck.to_str().unwrap();
    let run = |out: &str| {
        let o = progtr(
            &[
                "eval",
                "--checkpoint",
                ck,
                "--metrics",
                "mse,power",
                "--snr",
                "0:10:5",
                "--samples",
                "3000",
                "--seed",
                "3",
                "--out",
                out,
            ],
            &dir,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = run(dir.join("a.csv").to_str().unwrap());
    let b = run(dir.join("b.csv").to_str().unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("snr_db,t,metric,value,stderr,n\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 4);

    let o = progtr(&["eval", "--checkpoint", ck, "--metrics", "ber", "--samples", "100"], &dir);
    assert_eq!(code(&o), 4);
}

#[test]
fn eval_baselines_standalone() {
    let dir = scratch("baseline");
    let out = dir.join("qam.csv");
    let o = progtr(
        &[
            "eval",
            "--scheme",
            "t2b8_qam16_split",
            "--metrics",
            "ber",
            "--snr",
            "12",
            "--samples",
            "2000",
            "--out",
            out.to_str().unwrap(),
        ],
        &dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let t1: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((t1[0], t1[1], t1[2]), ("12", "1", "ber"));
    let ber: f64 = t1[3].parse().unwrap();
    assert!(ber > 0.25 && ber < 0.3, "{ber}");

    let o = progtr(&["eval", "--scheme", "qam1024", "--samples", "10"], &dir);
    assert_eq!(code(&o), 2);
    assert!(progtr(&["eval", "--scheme", "uncoded", "--metrics", "mse", "--samples", "100", "--snr", "5"], &dir)
        .status
        .success());
    assert!(dir.join("uncoded_eval.csv").exists());
}

#[test]
fn compare_pairs_systems() {
    let dir = scratch("compare");
    let ck = train_small(&dir, "discrete_t2b8");
    let ck = ck.to_str().unwrap();
    let grid = ["--metrics", "ber", "--snr", "6,12", "--samples", "2000", "--seed", "1"];

    let mut args =
        vec!["compare", "--system", ck, "--system", "t2b8_qam16_split", "--system", "t2b8_qam256_interleaved"];
    args.extend(grid);
    let o = progtr(&args, &dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.join("compare.csv")).unwrap();
    assert!(text.starts_with("system,snr_db,t,metric,value,stderr,n\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 2);

    // a single system reproduces the eval output
    let single = dir.join("single.csv");
    let mut args = vec!["compare", "--system", ck, "--out", single.to_str().unwrap()];
    args.extend(grid);
    assert!(progtr(&args, &dir).status.success());
    let eval = dir.join("eval.csv");
    let mut args = vec!["eval", "--checkpoint", ck, "--out", eval.to_str().unwrap()];
    args.extend(grid);
    assert!(progtr(&args, &dir).status.success());
    let stripped: Vec<String> =
        fs::read_to_string(&single).unwrap().lines().map(|l| l.split_once(',').unwrap().1.to_string()).collect();
    let eval_lines: Vec<String> = fs::read_to_string(&eval).unwrap().lines().map(str::to_string).collect();
    assert_eq!(stripped, eval_lines);

    let mut args = vec!["compare", "--system", ck, "--system", "t4b16_qam16_seq"];
    args.extend(grid);
    assert_eq!(code(&progtr(&args, &dir)), 4);
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn constellations() {
    let dir = scratch("const");
    let ck = train_small(&dir, "discrete_t2b8");
    let o = progtr(&["constellation", "--checkpoint", ck.to_str().unwrap(), "--snr", "0,20"], &dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.join("discrete_t2b8_constellation.csv"));
    assert_eq!(rows.len(), 2 * 2 * 256);
    assert_eq!(rows.iter().filter(|r| r[0] == "20" && r[1] == "2").count(), 256);

    let ck = train_small(&dir, "gauss_b1t1");
    assert!(progtr(&["constellation", "--checkpoint", ck.to_str().unwrap()], &dir).status.success());
    let rows = data_rows(&dir.join("gauss_b1t1_constellation.csv"));
    assert_eq!(rows.len(), 512);
    assert_eq!(rows[0][2], "-3");
    assert_eq!(rows[511][2], "3");

    let cfg = write_config(&dir, "mac.cfg", "scenario = mac_m4t4b6\n");
    assert!(progtr(&["train", &cfg, "--iterations", "0"], &dir).status.success());
    let o = progtr(&["constellation", "--checkpoint", dir.join("mac_m4t4b6.ckpt").to_str().unwrap()], &dir);
    assert!(o.status.success());
    for m in 1..=4 {
        let rows = data_rows(&dir.join(format!("mac_m4t4b6_constellation_user{m}.csv")));
        assert_eq!(rows.len(), 4 * 64);
    }
}
