use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_biphoton");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BIPHOTON_OUT")
        .output()
        .expect("binary runs")
}

fn run_in(sub: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data files of a run directory, manifest excluded.
fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SMALL_GRID: [&str; 4] = ["--set", "grid.signal_points=128", "--set", "grid.idler_points=128"];
/// Small grid with resolutions above its sample spacing.
const SMALL_JSI: [&str; 8] = [
    "--set",
    "grid.signal_points=128",
    "--set",
    "grid.idler_points=128",
    "--set",
    "measurement.signal_resolution_nm=1.0",
    "--set",
    "measurement.idler_resolution_nm=1.0",
];

#[test]
fn jsa_preset_reports_reference_schmidt_number() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("jsa", dir.path(), &["--preset", "star-point.default"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("schmidt.json")).unwrap()).unwrap();
    let k = report["schmidt_number"].as_f64().unwrap();
    assert!((k - 1.087).abs() <= 0.05, "K = {k}");
    for f in ["jsa.csv", "jsa.json", "marginals.csv", "schmidt.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join(".lock").exists());
}

#[test]
fn budget_prints_intrinsic_efficiencies() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("budget", dir.path(), &["--preset", "fig4-brightness"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("0.559"), "{text}");
    assert!(text.contains("0.407"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("brightness.csv")).unwrap();
    assert!(csv.starts_with("pulse_energy_pj,mean_photons\r\n"));
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn identical_runs_give_identical_files() {
    for (sub, extra) in [
        ("jsa", SMALL_GRID.to_vec()),
        ("g2-mc", [SMALL_GRID.as_slice(), &["--set", "measurement.pulses=20000"]].concat()),
        ("jsi-sim", SMALL_JSI.to_vec()),
        ("pm-curve", vec!["--set", "analysis.pm_steps=11"]),
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let oa = run_in(sub, a.path(), &extra);
        let ob = run_in(sub, b.path(), &extra);
        assert!(oa.status.success() && ob.status.success(), "{sub}: {}", stderr(&oa));
        assert_eq!(data_files(a.path()), data_files(b.path()), "{sub}");
        let (ma, mb) = (manifest(a.path()), manifest(b.path()));
        assert_eq!(ma["config_sha256"], mb["config_sha256"]);
        assert_eq!(ma["files"], mb["files"]);
    }
}

#[test]
fn manifest_replays_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut extra = SMALL_JSI.to_vec();
    extra.extend(["--set", "measurement.seed=99", "--set", "source.length_mm=12"]);
    let first = run_in("jsi-sim", a.path(), &extra);
    assert!(first.status.success(), "{}", stderr(&first));
    let m = a.path().join("manifest.json");
    let replay = run_in("jsi-sim", b.path(), &["--config", m.to_str().unwrap()]);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(data_files(a.path()), data_files(b.path()));
    assert_eq!(manifest(a.path())["seed"], 99);
    assert_eq!(manifest(a.path())["config_sha256"], manifest(b.path())["config_sha256"]);

    // a manifest only replays its own subcommand
    let c = tempfile::tempdir().unwrap();
    let wrong = run_in("jsa", c.path(), &["--config", m.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn misspelled_keys_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[source]\nlenght_mm = 16.0\n").unwrap();
    let o = run_in("jsa", &dir.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("source.lenght_mm"), "{}", stderr(&o));

    let o = run_in("budget", &dir.path().join("out"), &["--set", "measurement.chain.signal.detector=0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("measurement.chain.signal.detector"), "{}", stderr(&o));

    let o = run_in("jsa", &dir.path().join("out"), &["--set", "source.length_mm=-4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("source.length_mm"));
}

#[test]
fn vanishing_state_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut extra = SMALL_GRID.to_vec();
    extra.extend([
        "--set",
        "source.idler_filter.kind=rectangular",
        "--set",
        "source.idler_filter.center_nm=1500.0",
        "--set",
        "source.idler_filter.width_nm=1.0",
    ]);
    let o = run_in("jsa", dir.path(), &extra);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn existing_lock_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".lock"), "").unwrap();
    let o = run_in("budget", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("another run"));
    assert!(!dir.path().join("budget.json").exists());
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(BIN)
        .args(["shaper-mask"])
        .env("BIPHOTON_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("mask.csv").exists());
    let mask = std::fs::read_to_string(target.join("mask.csv")).unwrap();
    assert!(mask.starts_with("wavelength_nm,amplitude,phase_rad"));
}

#[test]
fn calibration_fragment_is_a_usable_config() {
    let dir = tempfile::tempdir().unwrap();
    let cal = dir.path().join("cal");
    assert!(run_in("calibrate", &cal, &[]).status.success());
    let fragment = cal.join("corrections.toml");
    let pm = dir.path().join("pm");
    let o = run_in("pm-curve", &pm, &["--config", fragment.to_str().unwrap(), "--set", "analysis.pm_steps=11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&std::fs::read(pm.join("pm_curve.json")).unwrap()).unwrap();
    let star = &report["star_roots"][0];
    assert!((star["signal_nm"].as_f64().unwrap() - 1411.0).abs() < 2.0);
    assert!((star["idler_nm"].as_f64().unwrap() - 1276.0).abs() < 2.0);
}

#[test]
fn presets_are_listed_and_printable() {
    let o = run(&["presets"]);
    assert!(o.status.success());
    let names = stdout(&o);
    for n in ["star-point-default", "fig2a", "fig2b", "fig3", "fig4-brightness", "fig5", "fig6", "fig7"] {
        assert!(names.lines().any(|l| l == n), "{n}");
    }
    let o = run(&["presets", "fig5"]);
    assert!(stdout(&o).contains("[source.idler_filter]"));
    assert_eq!(run(&["presets", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["jsa", "--preset", "nope"]).status.code(), Some(2));
}
