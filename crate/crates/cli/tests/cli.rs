use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/field_tables.json");

fn mdiqkd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdiqkd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MDIQKD_OUT_DIR")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn analyze_field_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdiqkd(&["analyze", "--input", FIXTURE], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let result = json(dir.path().join("result.json"));
    assert_eq!(result["schema"], "mdiqkd-result/1");
    let rate = result["result"]["rate_bps"].as_f64().unwrap();
    assert!((12.0..=22.0).contains(&rate), "{rate}");
    let svg = fs::read_to_string(dir.path().join("ratios.svg")).unwrap();
    assert_eq!(svg.matches("data-fraction").count(), 4);
}

#[test]
fn same_seed_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "21", "pipeline", "--method", "counts", "--feedback"];
    assert_eq!(code(&mdiqkd(&args, a.path())), 0);
    assert_eq!(code(&mdiqkd(&args, b.path())), 0);
    for name in [
        "tables.json",
        "feedback.json",
        "result.json",
        "ratios.svg",
        "reproduction.log",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let c = tempfile::tempdir().unwrap();
    let other = ["--seed", "22", "pipeline", "--method", "counts", "--feedback"];
    assert_eq!(code(&mdiqkd(&other, c.path())), 0);
    assert_ne!(
        fs::read(a.path().join("tables.json")).unwrap(),
        fs::read(c.path().join("tables.json")).unwrap()
    );
}

#[test]
fn ideal_channel_keeps_key_error_tiny() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seed = 5\n[simulation]\nmethod = \"counts\"\n\
         [session.channel]\nloss_alice_db = 0.0\nloss_bob_db = 0.0\ndark_prob = 0.0\n\
         [session.interference]\ntiming_offset_ps = 0.0\nspectral_offset_pm = 0.0\n\
         polarization_overlap = 1.0\nphase_misalignment_rad = 0.0\n",
    );
    let o = mdiqkd(&["--config", &config, "pipeline"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let result = json(dir.path().join("result.json"));
    assert!(result["result"]["key_bits"].as_f64().unwrap() > 0.0);
    assert!(result["result"]["e_signal"].as_f64().unwrap() < 1e-3);
}

#[test]
fn zero_key_exits_two_without_chart() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[session]\nduration_s = 60.0\n[session.channel]\nloss_alice_db = 30.0\nloss_bob_db = 30.0\n",
    );
    let o = mdiqkd(&["--config", &config, "pipeline"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("ratios.svg").exists());
    assert!(fs::read_to_string(dir.path().join("reproduction.log"))
        .unwrap()
        .contains("INSECURE"));
}

#[test]
fn validation_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // stochastic mode without a seed
    assert_eq!(code(&mdiqkd(&["pipeline", "--method", "counts"], dir.path())), 3);
    assert_eq!(code(&mdiqkd(&["feedback-demo"], dir.path())), 3);
    // empty table file
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    assert_eq!(
        code(&mdiqkd(&["analyze", "--input", empty.to_str().unwrap()], dir.path())),
        3
    );
    // QBER contradicting the counts
    let corrupt = dir.path().join("corrupt.json");
    let text = fs::read_to_string(FIXTURE).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["cells"][4]["errors"] = Value::from(100_000u64);
    fs::write(&corrupt, v.to_string()).unwrap();
    let o = mdiqkd(&["analyze", "--input", corrupt.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Z[alice=decoy, bob=decoy]"));
    // unknown configuration key
    let config = write_config(dir.path(), "sede = 1\n");
    assert_eq!(code(&mdiqkd(&["--config", &config, "simulate"], dir.path())), 3);
}

#[test]
fn numeric_failures_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdiqkd(&["--cutoff", "2", "simulate"], dir.path());
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(
        code(&mdiqkd(&["analyze", "--input", missing.to_str().unwrap()], dir.path())),
        1
    );
}

#[test]
fn report_rerenders_stored_result() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mdiqkd(&["analyze", "--input", FIXTURE], dir.path())), 0);
    let stored = dir.path().join("result.json");
    let again = dir.path().join("again");
    let o = mdiqkd(&["report", "--input", stored.to_str().unwrap()], &again);
    assert_eq!(code(&o), 0);
    for name in ["result.json", "ratios.svg", "reproduction.log"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mdiqkd"))
        .args(["--seed", "1", "feedback-demo"])
        .env("MDIQKD_OUT_DIR", dir.path())
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let report = json(dir.path().join("feedback.json"));
    assert_eq!(report["calibration_events"], 37);
}

#[test]
fn simulate_writes_ingestible_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdiqkd(
        &["--seed", "4", "simulate", "--method", "pulses", "--pulses", "20000"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tables = dir.path().join("tables.json");
    let t = json(tables.clone());
    let total: u64 = t["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["pulses_sent"].as_u64().unwrap())
        .sum::<u64>()
        + t["mismatched_basis"].as_u64().unwrap();
    assert_eq!(total, 20_000);
    let o = mdiqkd(&["analyze", "--input", tables.to_str().unwrap()], &dir.path().join("a"));
    // far too few pulses for a key
    assert_eq!(code(&o), 2);
}
