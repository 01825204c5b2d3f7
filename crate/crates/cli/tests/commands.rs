use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const E1: &str = r#"{"beta": 0.05, "maps": [
    {"type": "pwl", "knots": [[0, 0], [0.1, 0.5], [1, 1]]},
    {"type": "pwl", "knots": [[0, 0], [0.9, 0.5], [1, 1]]}
], "probs": [0.5, 0.5]}"#;

// Lebesgue measure is not invariant here, so the solver needs many steps.
const SKEW: &str = r#"{"maps": [
    {"type": "pwl", "knots": [[0, 0], [0.2, 0.6], [1, 1]]},
    {"type": "moebius", "lambda": 0.55}
], "probs": [0.4, 0.6]}"#;

const IDENTITY_PAIR: &str = r#"{"maps": [
    {"type": "pwl", "knots": [[0, 0], [1, 1]]},
    {"type": "pwl", "knots": [[0, 0], [1, 1]]}
], "probs": [0.5, 0.5]}"#;

fn ifslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifslab"))
        .args(args)
        .env("IFSLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in output:\n{text}"))
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let out = ifslab(&["check", s(&e1)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let lyap0: f64 = value(&text, "lyap0").parse().unwrap();
    assert!((lyap0 - (5.0f64 / 3.0).ln()).abs() < 1e-12);
    assert_eq!(value(&text, "admissible"), "true");
    let delta0: f64 = value(&text, "delta0").parse().unwrap();
    assert!((delta0 - 2.0 / 45.0).abs() < 1e-9);

    let id = write_config(&dir, "id.json", IDENTITY_PAIR);
    assert_eq!(ifslab(&["check", s(&id)]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let out = ifslab(&["check", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn bad_config_names_the_field() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(
        &dir,
        "bad.json",
        r#"{"maps": [{"type": "moebius", "lambda": -1}], "probs": [1]}"#,
    );
    let out = ifslab(&["check", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("maps[0]"));
    assert_eq!(ifslab(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn solve_writes_a_measure_at_distance_zero_from_itself() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let csv = dir.path().join("mu.csv");
    let out = ifslab(&["solve", s(&e1), "--n-cells", "1024", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    let residual: f64 = value(&stdout(&out), "residual").parse().unwrap();
    assert!(residual <= 1e-6);

    let fm = ifslab(&["fm", s(&csv), s(&csv)]);
    assert_eq!(fm.status.code(), Some(0));
    assert_eq!(stdout(&fm).trim().parse::<f64>().unwrap(), 0.0);
}

#[test]
fn nonconvergence_exits_3_without_output() {
    let dir = TempDir::new().unwrap();
    let skew = write_config(&dir, "skew.json", SKEW);
    let csv = dir.path().join("mu.csv");
    let out = ifslab(&["solve", s(&skew), "--n-cells", "512", "--max-iter", "1", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!csv.exists());
    // Only the output file itself: no temp files left behind.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

    let out = ifslab(&["solve", s(&skew), "--n-cells", "512", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(csv.exists());
}

#[test]
fn tailbound_prints_the_certificate() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let out = ifslab(&["tailbound", s(&e1)]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let num = |k: &str| value(&text, k).parse::<f64>().unwrap();
    assert_eq!(num("x0"), 0.1);
    assert_eq!(num("alpha"), 0.5);
    assert!((num("M") - 3.1623).abs() < 1e-4);
    assert!((num("F_alpha") - 0.8944).abs() < 1e-4);
}

#[test]
fn sampling_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let run = |mode: &str, name: &str, seed: &str| {
        let path = dir.path().join(name);
        let out = ifslab(&["sample", s(&e1), "--mode", mode, "--trials", "500", "--seed", seed, "--out", s(&path)]);
        assert_eq!(out.status.code(), Some(0));
        (fs::read(&path).unwrap(), stdout(&out))
    };
    let (a, a_out) = run("backward", "a.csv", "11");
    let (b, b_out) = run("backward", "b.csv", "11");
    let (c, _) = run("backward", "c.csv", "12");
    assert_eq!(a, b);
    assert_eq!(a_out, b_out);
    assert_ne!(a, c);
    let header = String::from_utf8_lossy(&a).lines().next().unwrap().to_string();
    assert_eq!(header, "trial,seed,v,n_stop,final_diameter");

    let (f1, _) = run("forward", "f1.csv", "5");
    let (f2, _) = run("forward", "f2.csv", "5");
    assert_eq!(f1, f2);
}

#[test]
fn perturb_emits_loadable_configs() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let out_dir = dir.path().join("family");
    let out = ifslab(&[
        "perturb", s(&e1), "--u", "0.45", "--v", "0.55", "--eps", "0.25", "--m-ladder", "4,16", "--n-cells", "1024",
        "--out-dir", s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(value(&stdout(&out), "fm_decreasing"), "true");
    for name in ["limit.json", "gamma_m4.json", "gamma_m16.json"] {
        let check = ifslab(&["check", s(&out_dir.join(name))]);
        // The plateau limit is not a homeomorphism system but still admissible.
        assert_eq!(check.status.code(), Some(0), "{name}");
    }
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
}

#[test]
fn singularity_csv_to_stdout() {
    let dir = TempDir::new().unwrap();
    let e1 = write_config(&dir, "e1.json", E1);
    let out = ifslab(&["singularity", s(&e1), "--ladder", "256,512"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("N,q,L\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}
