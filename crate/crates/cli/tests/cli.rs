use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "scenario.region.n_side=8",
    "--set",
    "fusion.max_mann=3",
    "--set",
    "fusion.n_bim=1",
    "--set",
    "fusion.admm_max_iters=50",
    "--set",
    "pilots.design=false",
];

fn emsense(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emsense"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn show_config_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = emsense(&["show-config", "--set", "fusion.rho=0.3", "--set", "run.snr_db=12"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("rho = 0.3"), "{text}");
    assert!(text.contains("snr_db = 12"), "{text}");

    // The printed TOML loads back as a config file.
    std::fs::write(dir.path().join("exp.toml"), &text).unwrap();
    let again = emsense(&["show-config", "--config", "exp.toml"], dir.path());
    assert!(again.status.success());
    assert_eq!(stdout(&again), text);
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = emsense(&["show-config", "--set", "fusion.no_such_key=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = emsense(&["show-config", "--preset", "huge"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = emsense(&["report", "missing.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_classify_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--k", "2", "--n-bs", "1", "--output", "out"];
    args.extend_from_slice(TINY);
    let out = emsense(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.starts_with("config_hash,"));
    assert_eq!(text.lines().count(), 2);

    let root = dir.path().join("out");
    let csv = std::fs::read_to_string(root.join("reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let point = std::fs::read_dir(&root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .expect("point directory");
    for f in ["eps_r.pgm", "sigma_scaled.pgm", "eps_minus_one.csv", "sigma_scaled.csv", "report.json", "convergence.csv"] {
        assert!(point.join(f).exists(), "{f}");
    }

    let mut args = vec!["classify", "--estimate", point.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let cls = emsense(&args, dir.path());
    assert!(cls.status.success(), "{}", String::from_utf8_lossy(&cls.stderr));
    assert!(stdout(&cls).contains("accuracy"));

    let rep = emsense(&["report", "out/reports.csv"], dir.path());
    assert!(rep.status.success());
    assert!(stdout(&rep).lines().count() >= 2);
}

#[test]
fn sweep_reports_failed_points_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--snr", "10,20", "--n-bs", "1,9", "--k", "2"];
    args.extend_from_slice(TINY);
    let out = emsense(&args, dir.path());
    assert_eq!(out.status.code(), Some(1));
    // The two valid points still report.
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn classify_rejects_a_mismatched_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--k", "2", "--n-bs", "1", "--output", "out"];
    args.extend_from_slice(TINY);
    assert!(emsense(&args, dir.path()).status.success());
    let point = std::fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.is_dir())
        .unwrap();
    let out = emsense(&["classify", "--estimate", point.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
