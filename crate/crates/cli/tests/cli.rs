use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_she-renorm"))
}

#[test]
fn simulate_zero_is_heat_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "simulate", "--g", "zero", "--paths", "2", "--times", "0.05,0.1", "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("deterministic check: pass"), "{stdout}");
    for f in [
        "results.csv",
        "manifest.json",
        "summary.txt",
        "trajectories.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn constants_exit_status_reflects_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["constants", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let failed = csv.lines().any(|l| l.ends_with(",false"));
    assert_eq!(out.status.code(), Some(if failed { 1 } else { 0 }));
    assert!(csv.starts_with(
        "suite,parameters,quantity,estimate,ci_half_width,target,tolerance,rule,pass\n"
    ));
}

#[test]
fn manifest_replay_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = bin()
        .args([
            "simulate", "--paths", "3", "--times", "0.02", "--seed", "9", "--out",
        ])
        .arg(a.path())
        .output()
        .unwrap();
    assert!(first.status.success());
    let second = bin()
        .args(["simulate", "--config"])
        .arg(a.path().join("manifest.json"))
        .arg("--out")
        .arg(b.path())
        .env("SHE_RENORM_WORKERS", "2")
        .output()
        .unwrap();
    assert!(second.status.success());
    let x = std::fs::read(a.path().join("results.csv")).unwrap();
    let y = std::fs::read(b.path().join("results.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn schema_errors_name_the_field() {
    let out = bin()
        .args(["beta-stats", "--set", "pathz=3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pathz"));
    let out = bin()
        .args(["beta-stats", "--set", "epsilons=\"a\""])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilons"));
}

#[test]
fn every_subcommand_has_help() {
    for s in [
        "constants",
        "heat-check",
        "blowup-curve",
        "beta-stats",
        "simulate",
        "converge",
        "decompose",
        "sewing-check",
        "holder-norms",
    ] {
        let out = bin().args([s, "--help"]).output().unwrap();
        assert!(out.status.success(), "{s}");
    }
}
