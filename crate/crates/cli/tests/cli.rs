use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn hyl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyl")).args(args).output().expect("failed to run hyl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hyl-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn two_point_grid_gives_two_rows() {
    let o = hyl(&["phase-diagram", "--b", "1", "--grid", "0.1:0.2:2"]);
    assert!(o.status.success());
    let (header, rows) = csv_rows(&stdout(&o));
    assert_eq!(header, ["rho", "rho_bar", "rho_free", "branch"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let o = hyl(&["phase-diagram", "--b", "1", "--grid", "0.1:0.3:3"]);
    let (_, rows) = csv_rows(&stdout(&o));
    for row in rows {
        let mantissa = row[0].split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17, "{}", row[0]);
        let back: f64 = row[0].parse().unwrap();
        assert_eq!(format!("{back:.16e}"), row[0]);
    }
}

#[test]
fn three_dimensional_diagram_jumps_below_rho_c() {
    let o = hyl(&["phase-diagram", "--d", "3", "--b", "1", "--grid", "0.01:0.33:200"]);
    let (_, rows) = csv_rows(&stdout(&o));
    let bar: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let rho: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let first = bar.iter().position(|&b| b > 0.0).expect("no condensate on the grid");
    assert!(first > 0);
    assert!(bar[..first].iter().all(|&b| b == 0.0));
    // ρ_c ≈ 0.1659 in d = 3 at β = 1
    assert!(rho[first] < 0.1659);
    assert!(bar[first] > 0.01, "onset is not a jump: {}", bar[first]);
}

#[test]
fn five_dimensional_weak_counter_term_has_continuous_onset() {
    // b_c ≈ 37.88 in d = 5
    let o = hyl(&["phase-diagram", "--d", "5", "--b", "10", "--grid", "0.001:0.05:400"]);
    let (_, rows) = csv_rows(&stdout(&o));
    let bar: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let rho: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let first = bar.iter().position(|&b| b > 0.0).unwrap();
    let step = (0.05 - 0.001) / 399.0;
    // onset at ρ_c ≈ 0.013557, with slope 1/(1 − b/b_c) above it
    assert!((rho[first] - 0.013557).abs() <= step);
    assert!(bar[first] <= 2.0 * step, "jump of {} at onset", bar[first]);
}

#[test]
fn grand_canonical_json_echoes_config() {
    let o = hyl(&[
        "phase-diagram",
        "--ensemble",
        "gc",
        "--a",
        "2",
        "--b",
        "1",
        "--grid",
        "-1:0.5:4",
        "--output",
        "json",
    ]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["config"]["a"], 2.0);
    assert_eq!(v["config"]["grid"]["points"], 4);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let rho: Vec<f64> = rows.iter().map(|r| r["rho_gc"].as_f64().unwrap()).collect();
    assert!(rho.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn pressure_gap_suite_passes() {
    let o = hyl(&["validate", "pressure-gap"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let (_, rows) = csv_rows(&stdout(&o));
    let gap: f64 = rows[0][1].parse().unwrap();
    assert!(gap < -1e-8);
}

#[test]
fn asymptotics_suite_reports_the_stated_forms() {
    let o = hyl(&["validate", "asymptotics", "--d", "3"]);
    let (_, rows) = csv_rows(&stdout(&o));
    let pass = |name: &str| rows.iter().find(|r| r[0] == name).unwrap()[4] == "true";
    assert!(pass("mu_near_rho_c"));
    assert!(pass("rate_near_rho_c (rederived)"));
    assert!(!pass("rate_near_rho_c"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hyl(&["validate"]).status.code(), Some(2));
    assert_eq!(hyl(&["validate", "nonsense"]).status.code(), Some(2));
    assert_eq!(hyl(&["phase-diagram", "--b", "1", "--grid", "0.2:0.1:5"]).status.code(), Some(2));
    assert_eq!(hyl(&["phase-diagram", "--b", "1", "--grid", "0.1:0.2:1"]).status.code(), Some(2));
    assert_eq!(hyl(&["phase-diagram", "--b", "-1"]).status.code(), Some(2));
    assert_eq!(
        hyl(&["simulate", "--sweeps", "10", "--burn-in", "10", "--N", "5", "--V", "20"]).status.code(),
        Some(2)
    );
    assert_eq!(hyl(&["simulate", "--V", "20"]).status.code(), Some(2));
}

#[test]
fn simulation_is_reproducible() {
    let run = |tag: &str| {
        let trace = scratch(&format!("trace-{tag}.csv"));
        let report = scratch(&format!("report-{tag}.json"));
        let o = hyl(&[
            "simulate",
            "--V",
            "60",
            "--N",
            "20",
            "--sweeps",
            "300",
            "--seed",
            "9",
            "--chains",
            "2",
            "--flat-histogram",
            "--trace",
            trace.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(trace).unwrap(), std::fs::read_to_string(report).unwrap())
    };
    let (t1, r1) = run("a");
    let (t2, r2) = run("b");
    assert_eq!(t1, t2);
    let strip = |s: &str| {
        let mut v: Value = serde_json::from_str(s).unwrap();
        v["config"]["trace"] = Value::Null;
        v["config"]["out"] = Value::Null;
        v
    };
    assert_eq!(strip(&r1), strip(&r2));
    let report = strip(&r1);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["n"], 20);
    assert!(report["exact_long_density"].is_number());
    assert!(report["long_density"]["std_error"].is_number());
    let (header, rows) = csv_rows(std::str::from_utf8(&t1).unwrap());
    assert_eq!(header.len(), 7);
    assert_eq!(rows.len(), 600);
}

#[test]
fn grand_canonical_simulation_reports_targets() {
    let o = hyl(&["simulate", "--ensemble", "gc", "--mu", "-1", "--V", "30", "--sweeps", "200"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["rho_gc"].as_f64().unwrap() > 0.0);
    assert!(v["exact_density"].as_f64().unwrap() > 0.0);
    assert_eq!(v["config"]["ensemble"], "gc");
}

#[test]
fn free_pmf_sums_to_one() {
    let o = hyl(&["pmf", "--kind", "free", "--V", "10", "--mu", "-0.5", "--N", "200"]);
    assert!(o.status.success());
    let (_, rows) = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 201);
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
}

#[test]
fn hyl_long_spectrum_is_a_distribution() {
    let o = hyl(&["pmf", "--kind", "hyl-long", "--V", "100", "--N", "25", "--output", "json"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let total: f64 = v["rows"].as_array().unwrap().iter().map(|r| r["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(v["config"]["q"], 32);
}
