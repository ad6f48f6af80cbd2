use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sls-bench"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn constrained_closed_loop_synthesis_is_an_expected_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth-cl"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("infeasible"));
    assert!(!dir.path().join("clmaps.txt").exists());

    let cfg = dir.path().join("strict.toml");
    std::fs::write(&cfg, "[output]\nexpect_infeasible = false\n").unwrap();
    let o = run(dir.path(), &["--config", cfg.to_str().unwrap(), "synth-cl"]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(dir.path(), &["synth-cl", "--no-mask"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("clmaps.txt").exists());
}

#[test]
fn implementation_pipeline_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth-impl", "--order", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["implementation.txt", "delta_c.txt", "diagnostics.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.txt")).unwrap();
    assert!(diag.contains("objective = ") && diag.contains("spectral_radius = "));

    let imp = dir.path().join("implementation.txt");
    let imp = imp.to_str().unwrap();
    let o = run(dir.path(), &["check-stability", "--implementation", imp, "--processors", "4"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("verdict = certified"));
    let trace = std::fs::read_to_string(dir.path().join("stability_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "k,global_norm,verdict_so_far");
    assert!(lines.last().unwrap().ends_with(",certified"));
    assert!(lines[1..lines.len() - 1].iter().all(|l| l.ends_with(",running")));

    let o = run(dir.path(), &["simulate", "--implementation", imp, "--impulse", "3", "--steps", "30"]);
    assert!(o.status.success());
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = traj.lines().collect();
    assert!(lines[0].starts_with("t,x1,") && lines[0].ends_with(",u3"));
    assert_eq!(lines.len(), 31);
}

#[test]
fn bench_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["bench", "fig2", "--orders", "2,3", "--no-plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("fig2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(!dir.path().join("fig2.svg").exists());

    let o = run(dir.path(), &["bench", "fig2", "--orders", "2"]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(dir.path().join("fig2.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.contains("<svg"));

    let o = run(dir.path(), &["bench", "table1"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(csv.contains("constrained_cl_map,infeasible"));
    assert!(csv.contains("virtually_local,external baseline - not computed"));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["synth-impl", "--horizon", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
    let missing = dir.path().join("nope.txt");
    let o = run(dir.path(), &["check-stability", "--implementation", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(dir.path(), &["--config", missing.to_str().unwrap(), "bench", "table1"]);
    assert_eq!(o.status.code(), Some(1));
}
