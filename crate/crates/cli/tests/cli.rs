//! End-to-end checks of the command-line driver: output formats, byte-level
//! determinism, and the documented exit codes.

use std::process::Command;

fn ovm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ovm"))
}

#[test]
fn cumulant_json_has_inputs_and_errors() {
    let out = ovm()
        .args([
            "cumulant", "--method", "both", "--k", "1", "--g", "0.05", "--eps", "0.1", "--seed",
            "42", "--n-max", "6",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "cumulant");
    assert_eq!(v["inputs"]["g_mod"], 0.05);
    let results = v["results"].as_array().unwrap();
    assert!(results.len() >= 3);
    for r in results {
        assert!(r["error"].is_number(), "every value carries an error field");
    }
    // Oracle and expansion agree to the documented level.
    let diff = results.iter().find(|r| r["name"] == "difference").unwrap()["value_re"]
        .as_f64()
        .unwrap();
    assert!(diff < 1e-4, "difference {diff}");
    // No timing field by default (byte determinism).
    assert!(v["timing_s"].is_null());
}

#[test]
fn identical_seed_gives_byte_identical_output() {
    let run = || {
        ovm()
            .args([
                "lve",
                "--k",
                "1",
                "--g",
                "0.05",
                "--eps",
                "0.1",
                "--n-max",
                "7",
                "--seed",
                "7",
                "--threads",
                "2",
            ])
            .output()
            .unwrap()
    };
    let a = run();
    let b = run();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout, "outputs differ across identical runs");
}

#[test]
fn domain_curve_csv_format() {
    let out = ovm()
        .args(["domain", "--curve", "--xi", "0.5", "--steps", "16"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "phi,rho,xi");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 17);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 3);
        let rho: f64 = cols[1].parse().unwrap();
        assert!(rho > 0.0);
    }
}

#[test]
fn series_csv_has_tail_estimates() {
    let out = ovm()
        .args([
            "series", "--k", "1", "--g", "0.05", "--q-max", "3", "--n-max", "4",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("q,a_re,a_im,order_tail_estimate\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn domain_violation_exits_2() {
    let out = ovm()
        .args([
            "partition",
            "--g",
            "0.1",
            "--g-arg",
            "3.0",
            "--eps",
            "0.2",
            "--psi",
            "0.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_error_exits_4() {
    let out = ovm()
        .args([
            "cumulant", "--g", "0.05", "--eps", "0.1", "--method", "nonsense",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    // Unknown flags are configuration errors too.
    let out = ovm().args(["cumulant", "--bogus", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = std::env::temp_dir().join(format!("ovm-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("ovm.conf");
    std::fs::write(&cfg, "# defaults\nthreads = 1\nseed = 99\n").unwrap();
    let with_cfg = ovm()
        .args([
            "lve", "--k", "1", "--g", "0.05", "--eps", "0.1", "--n-max", "7", "--config",
        ])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(
        with_cfg.status.success(),
        "{}",
        String::from_utf8_lossy(&with_cfg.stderr)
    );
    let explicit = ovm()
        .args([
            "lve", "--k", "1", "--g", "0.05", "--eps", "0.1", "--n-max", "7", "--seed", "99",
        ])
        .output()
        .unwrap();
    assert_eq!(
        with_cfg.stdout, explicit.stdout,
        "config seed must act as the default"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn verify_suite_passes_and_exits_zero() {
    let out = ovm()
        .args(["verify", "--suite", "combinatorics", "--nmax", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn output_file_is_written() {
    let dir = std::env::temp_dir().join(format!("ovm-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("z.json");
    let out = ovm()
        .args([
            "partition",
            "--g",
            "0.1",
            "--eps",
            "0.5",
            "--t",
            "0.3",
            "--out",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["command"], "partition");
    std::fs::remove_dir_all(&dir).ok();
}
