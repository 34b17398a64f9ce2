//! End-to-end runs of the `rgpe` binary on small meshes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rgpe_cli::statefile::StateFile;
use rgpe_core::{build_mesh, State};

fn rgpe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgpe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn check_battery_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = rgpe(&["check", "--mesh-n", "12", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("PASS") && !s.contains("FAIL"), "{s}");
}

#[test]
fn invalid_step_size_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rgpe(&["solve", "--mesh-n", "8", "--tau", "2.5", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn strict_admissibility_rejects_fast_rotation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fast.cfg");
    fs::write(&cfg, "model.omega = 2.0\nmodel.potential = harmonic(1, 1)\nmesh.n = 8\n").unwrap();
    let o = rgpe(&["solve", "--config", p(&cfg), "--strict-admissibility", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    // without the flag the failed check is only a warning
    let o = rgpe(&["check", "--config", p(&cfg), "--out", p(dir.path())]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "model.gamma = 1\n").unwrap();
    let o = rgpe(&["solve", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solves_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = rgpe(&["solve", "--mesh-n", "12", "--max-iters", "60", "--out", p(out)]);
        assert!([0, 3].contains(&code(&o)));
    }
    let ta = fs::read(a.join("trace.csv")).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("final_state.gpst")).unwrap(),
        fs::read(b.join("final_state.gpst")).unwrap()
    );
}

#[test]
fn state_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = build_mesh(6.0, 6.0, 5).unwrap();
    let coeffs: Vec<f64> = (0..mesh.n_dofs()).map(|k| (k as f64).sin() / 3.0 + 1e-300).collect();
    let state = State::from_coeffs(coeffs.clone());
    let path = dir.path().join("s.gpst");
    StateFile::new(&mesh, &state).write(&path).unwrap();
    let back = StateFile::read(&path).unwrap().into_state(&mesh, &path).unwrap();
    for (a, b) in back.coeffs().iter().zip(&coeffs) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let other = build_mesh(6.0, 6.0, 6).unwrap();
    assert!(StateFile::read(&path).unwrap().into_state(&other, &path).is_err());
}

#[test]
fn pipeline_on_a_small_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let n = "16";

    // an unconverged state is refused by the spectral gate
    let o = rgpe(&["solve", "--mesh-n", n, "--max-iters", "5", "--out", p(&d.join("early"))]);
    assert_eq!(code(&o), 3);
    let early = d.join("early/final_state.gpst");
    let o = rgpe(&["spectrum", "--mesh-n", n, "--state", p(&early), "--out", p(&d.join("spec_early"))]);
    assert_eq!(code(&o), 3);

    // reference ground state
    let cfg = d.join("ref.cfg");
    fs::write(&cfg, "stop.residual_tol = 1e-11\nstop.energy_tol = 1e-15\nstop.max_iters = 20000\n").unwrap();
    let o = rgpe(&["solve", "--config", p(&cfg), "--mesh-n", n, "--out", p(&d.join("ref"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reference = d.join("ref/final_state.gpst");
    assert!(fs::read_to_string(d.join("ref/summary.txt")).unwrap().contains("stop_reason = tol_reached"));

    let o = rgpe(&["spectrum", "--mesh-n", n, "--state", p(&reference), "--out", p(&d.join("spec"))]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(d.join("spec/spectral_report.txt").exists());

    let cmp = d.join("cmp.cfg");
    fs::write(&cmp, format!("reference.state = {}\nstop.max_iters = 20000\n", reference.display())).unwrap();
    let o = rgpe(&["compare", "--config", p(&cmp), "--mesh-n", n, "--svg", "--out", p(&d.join("cmp"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace_adaptive.csv", "trace_h1.csv", "comparison.csv", "comparison.svg"] {
        assert!(d.join("cmp").join(f).exists(), "{f}");
    }

    let o = rgpe(&[
        "rates",
        "--mesh-n",
        n,
        "--tau",
        "1",
        "--retain-states",
        "--max-iters",
        "20000",
        "--state",
        p(&reference),
        "--out",
        p(&d.join("rates")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rates = fs::read_to_string(d.join("rates/rates.csv")).unwrap();
    assert!(rates.lines().count() > 10);
}
