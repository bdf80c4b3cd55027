//! The `roadbird` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn roadbird(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadbird")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn specs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

#[test]
fn run_writes_reports_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let params = specs().join("params.txt");
    let mut dirs = Vec::new();
    for rep in 0..2 {
        let out = tmp.path().join(format!("r{rep}"));
        ok(&roadbird(&[
            "run",
            "--topology",
            "dhaka",
            "--params",
            params.to_str().unwrap(),
            "--seed",
            "7",
            "--duration",
            "300",
            "--out",
            out.to_str().unwrap(),
        ]));
        dirs.push(out);
    }
    for f in ["link_metrics.csv", "vehicle_metrics.csv", "summary.csv", "events.log"] {
        assert_eq!(read(&dirs[0].join(f)), read(&dirs[1].join(f)), "{f}");
    }
    let links = read(&dirs[0].join("link_metrics.csv"));
    assert_eq!(links.lines().next().unwrap(), "link_id,avg_speed_kmh,avg_wait_s,flow_vph,n_crossings");
    assert_eq!(links.lines().count(), 19);
    let summary = read(&dirs[0].join("summary.csv"));
    let rows: Vec<_> = summary.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["row", "seed", "mean", "std_err", "n"]);
    assert!(read(&dirs[0].join("events.log")).contains(" SPAWN "));
}

#[test]
fn empty_run_writes_empty_fields_not_zeros() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    // nobody reaches the end of a 200 m side street in 5 s
    ok(&roadbird(&["run", "--topology", "dhaka", "--duration", "5", "--out", out.to_str().unwrap()]));
    let links = read(&out.join("link_metrics.csv"));
    for line in links.lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        assert_eq!((f[1], f[2], f[4]), ("", "", "0"), "{line}");
    }
    let summary = read(&out.join("summary.csv"));
    let seed_row: Vec<_> = summary.lines().nth(1).unwrap().split(',').collect();
    // avg_link_speed_kmh, avg_link_wait_s
    assert_eq!((seed_row[3], seed_row[4]), ("", ""));
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "SlowVehicle=50\nMediumVehicle=40\nFastVehicle=5\n").unwrap();
    let out = roadbird(&[
        "run",
        "--topology",
        "dhaka",
        "--params",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("95"));

    let out = roadbird(&["run", "--topology", tmp.path().join("none").to_str().unwrap(), "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = roadbird(&["run", "--topology", "dhaka", "--profile", "paris", "--out", "x"]);
    assert!(!out.status.success());

    let out = roadbird(&["validate", "--observed", "missing.csv", "--simulated", "missing.csv", "--out", "x"]);
    assert!(!out.status.success());
}

fn write_spec(dir: &Path, threads: usize) -> std::path::PathBuf {
    let p = dir.join(format!("spec{threads}.toml"));
    fs::write(
        &p,
        format!(
            "topology = \"dhaka\"\nduration = 120\nseeds = [1, 2]\nthreads = {threads}\n\
             [sweep]\nstrip_width = [2.5, 0.5]\ndemand = [1]\npedestrian_mode = [\"on\"]\n"
        ),
    )
    .unwrap();
    p
}

#[test]
fn batch_comparison_is_sorted_and_schedule_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for threads in [1, 3] {
        let spec = write_spec(tmp.path(), threads);
        let out = tmp.path().join(format!("b{threads}"));
        ok(&roadbird(&["batch", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]));
        tables.push(read(&out.join("comparison.csv")));
        let point = out.join("w0.5_d1_params_pedon");
        assert!(point.join("seed_2/events.log").exists());
        assert_eq!(read(&point.join("summary.csv")).lines().count(), 6);
    }
    assert_eq!(tables[0], tables[1]);
    let rows: Vec<Vec<&str>> = tables[0].lines().skip(1).map(|l| l.split(',').collect()).collect();
    // two points, seven metrics each
    assert_eq!(rows.len(), 14);
    assert!(rows[..7].iter().all(|r| r[0] == "0.5"));
    assert!(rows[7..].iter().all(|r| r[0] == "2.5"));
    let metrics: Vec<&str> = rows[..7].iter().map(|r| r[4]).collect();
    let mut sorted = metrics.clone();
    sorted.sort();
    assert_eq!(metrics, sorted);
    assert!(rows.iter().all(|r| r[7] == "2" && r[8] == "2"));
}

#[test]
fn validate_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let obs = specs().join("observed_example.csv");
    let sim = specs().join("simulated_example.csv");
    ok(&roadbird(&[
        "validate",
        "--observed",
        obs.to_str().unwrap(),
        "--simulated",
        sim.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]));
    let report = read(&tmp.path().join("validation.csv"));
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "route,direction,vehicle_type,regime,n_observed,n_simulated,p_t,p_ks,ME,MAE,RMSE,MAPE,RMSPE"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        assert_eq!((r[4], r[5]), ("15", "20"));
        let p: f64 = r[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        let (me, mae, rmse): (f64, f64, f64) = (r[8].parse().unwrap(), r[9].parse().unwrap(), r[10].parse().unwrap());
        assert!(mae >= me.abs() && rmse >= mae);
    }
}
