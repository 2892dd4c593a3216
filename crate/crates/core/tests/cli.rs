use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmc_core::params::{load_params_file, MmcParams, Preset};
use mmc_core::sim::{Scenario, TraceLog};

fn mmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmc")).args(args).env_remove("MMC_CONFIG_DIR").output().expect("spawn mmc")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn short_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("short.scn");
    std::fs::write(
        &path,
        "duration_s = 0.08\n[initial]\np_ref = 1.0\nq_ref = 0.0\n\
         [[event]]\ntime_s = 0.04\nfield = \"q_ref\"\nvalue = -0.1\n",
    )
    .unwrap();
    path
}

fn read(path: &Path) -> TraceLog {
    TraceLog::read_csv(std::fs::File::open(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_configs_match_presets() {
    let c = configs();
    assert_eq!(load_params_file(&c.join("params.toml")).unwrap(), MmcParams::rated());
    assert_eq!(load_params_file(&c.join("rated_ms.toml")).unwrap(), MmcParams::preset(Preset::RatedMilliseconds));
    assert_eq!(load_params_file(&c.join("lossless.toml")).unwrap(), MmcParams::preset(Preset::Lossless));
    assert_eq!(Scenario::load(&c.join("steps.scn")).unwrap(), Scenario::steps());
}

#[test]
fn run_both_writes_two_traces_of_equal_duration() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = mmc(&["run", "--scenario", s(&sc), "--model", "both", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = read(&dir.path().join("aam.csv"));
    let b = read(&dir.path().join("ssti.csv"));
    let end = |t: &TraceLog| *t.t.last().unwrap();
    assert!((end(&a) - 0.08).abs() < 1e-9);
    assert!((end(&b) - 0.08).abs() < 1e-9);
}

#[test]
fn missing_scenario_exits_two_and_names_the_path() {
    let out = mmc(&["run", "--scenario", "/no/such/dir/missing.scn"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir/missing.scn"));
}

#[test]
fn dt_flag_sets_the_time_step() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = mmc(&["run", "--scenario", s(&sc), "--model", "ssti", "--dt", "25e-6", "--out", s(dir.path())]);
    assert!(out.status.success());
    let tr = read(&dir.path().join("ssti.csv"));
    assert!((tr.t[1] - tr.t[0] - 25e-6).abs() < 1e-12);
    assert_eq!(tr.len(), 3201);
}

#[test]
fn pu_flag_scales_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = mmc(&["run", "--scenario", s(&sc), "--model", "ssti", "--pu", "--out", s(dir.path())]);
    assert!(out.status.success());
    let tr = read(&dir.path().join("ssti.csv"));
    let vz = tr.get("v_c_sigma_z").unwrap()[0];
    assert!((vz - 0.99).abs() < 0.02, "{vz}");
}

#[test]
fn self_compare_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let sc = configs().join("steps.scn");
    assert!(mmc(&["run", "--scenario", s(&sc), "--model", "ssti", "--out", s(dir.path())]).status.success());
    let tr = dir.path().join("ssti.csv");
    let out = mmc(&["compare", "--scenario", s(&sc), "--traces", s(&tr), s(&tr), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rd = csv::Reader::from_path(dir.path().join("compare.csv")).unwrap();
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        for v in rec.iter().skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{rec:?}");
        }
        rows += 1;
    }
    assert_eq!(rows, 13);
}

#[test]
fn compare_passes_on_the_reference_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let sc = configs().join("steps.scn");
    let out = mmc(&["compare", "--scenario", s(&sc), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn injected_6w_disturbance_fails_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let sc = configs().join("steps.scn");
    let out = mmc(&["compare", "--scenario", s(&sc), "--inject-6w", "0.05", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("OVER"));
}

#[test]
fn linearize_rejects_out_of_range_power() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&["linearize", "--p", "10", "--q", "0", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("A.csv").exists());
}

#[test]
fn linearize_writes_matrices_and_stable_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&["linearize", "--p", "1", "--q", "0", "--out", s(dir.path())]);
    assert!(out.status.success());
    for f in ["equilibrium.csv", "A.csv", "B.csv", "eigenvalues.csv", "plant_A.csv", "plant_eigenvalues.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let mut rd = csv::Reader::from_path(dir.path().join("eigenvalues.csv")).unwrap();
    let re: Vec<f64> = rd.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(re.len(), 16);
    assert!(re.iter().all(|&x| x < 0.0));
}

#[test]
fn config_dir_env_selects_parameters() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(configs().join("rated_ms.toml"), dir.path().join("params.toml")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(["eig", "--p", "1"])
        .env("MMC_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let first: f64 = String::from_utf8_lossy(&out.stdout).split_whitespace().next().unwrap().parse().unwrap();
    assert!(first > 0.0, "literal-ms time constants should destabilize the loop");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let (d1, d2) = (dir.path().join("1"), dir.path().join("2"));
    for d in [&d1, &d2] {
        assert!(mmc(&["run", "--scenario", s(&sc), "--out", s(d)]).status.success());
    }
    for f in ["aam.csv", "ssti.csv"] {
        assert_eq!(std::fs::read(d1.join(f)).unwrap(), std::fs::read(d2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn lossless_plant_spectrum_has_frame_coupling_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let params = configs().join("lossless.toml");
    let out = mmc(&["--params", s(&params), "linearize", "--p", "0", "--q", "0", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("plant_eigenvalues.csv")).unwrap();
    let ev: Vec<(f64, f64)> = rd
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap())
        })
        .collect();
    let w = 2.0 * std::f64::consts::PI * 50.0;
    for &(re, im) in &ev {
        assert!(re.abs() < 1e-6 * im.abs().max(1.0), "{re} {im}");
    }
    for k in [1.0, 2.0, 3.0] {
        assert!(ev.iter().any(|&(_, im)| im > 0.0 && (im - k * w).abs() < 0.1 * k * w), "no pair near {k}ω in {ev:?}");
    }
}
