use std::collections::BTreeMap;
use std::fs;
use std::process::Command;

use bcp::cli::main_with_args;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["bcp"];
    argv.extend_from_slice(args);
    let code = main_with_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn values(stdout: &str) -> BTreeMap<String, String> {
    stdout
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn value(stdout: &str, key: &str) -> f64 {
    values(stdout)[key].parse().unwrap()
}

#[test]
fn compute_daniels_reports_reference_error() {
    let (code, out, _) = run(&["compute", "--boundary", "daniels", "--n", "64"]);
    assert_eq!(code, 0);
    assert!(value(&out, "abs_error") < 2e-5);
    let p = value(&out, "probability");
    assert!((p + value(&out, "crossing") - 1.0).abs() < 1e-15);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.conf");
    fs::write(&path, "# strip\nboundary = flat\nc = 1.0\nn = 32\n").unwrap();
    let conf = path.to_str().unwrap();
    let (_, base, _) = run(&["compute", "--config", conf]);
    let (_, wide, _) = run(&["compute", "--config", conf, "--c", "1.5"]);
    assert!(value(&wide, "probability") > value(&base, "probability"));
    assert!(value(&base, "abs_error") < 1e-4);
}

#[test]
fn study_writes_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("study.csv");
    let (code, out, _) =
        run(&["study", "--boundary", "daniels", "--n_list", "16,32,64", "--out", csv_path.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(value(&out, "slope") < -1.5);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["n", "probability", "abs_error", "seconds"]);
    let ns: Vec<usize> = reader.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(ns, [16, 32, 64]);
}

#[test]
fn surface_csv_matches_probability() {
    let (code, out, _) = run(&["surface", "--boundary", "flat", "--c", "1", "--n", "8"]);
    assert_eq!(code, 0);
    let mut reader = csv::Reader::from_reader(out.as_bytes());
    let mut last_k = 0usize;
    let mut mass_at_end = 0.0;
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        rows += 1;
        let k: usize = rec[0].parse().unwrap();
        assert!(k >= last_k);
        last_k = k;
        if k == 8 {
            mass_at_end += rec[3].parse::<f64>().unwrap();
        }
    }
    assert_eq!(last_k, 8);
    assert!(rows > 8);
    let (_, compute, _) = run(&["compute", "--boundary", "flat", "--c", "1", "--n", "8"]);
    assert!(mass_at_end > 0.0);
    assert!(value(&compute, "probability") > 0.0);
}

#[test]
fn mc_repeats_for_a_seed_and_thread_count() {
    let args = ["mc", "--boundary", "flat", "--c", "1", "--n", "16", "--paths", "5000", "--seed", "9"];
    let (_, a, _) = run(&args);
    let mut with_threads = args.to_vec();
    with_threads.extend(["--threads", "2"]);
    let (_, b, _) = run(&with_threads);
    assert_eq!(values(&a)["estimate"], values(&b)["estimate"]);
    assert!(value(&a, "z").abs() < 5.0);
}

#[test]
fn bound_reports_constants() {
    let (code, out, _) = run(&["bound", "--n", "64", "--gamma", "2", "--delta", "0.25", "--rho", "1"]);
    assert_eq!(code, 0);
    assert!((value(&out, "drop_bound") / 6.557142073701794e-33 - 1.0).abs() < 1e-9);
    let (_, out0, _) = run(&["bound", "--n", "256", "--gamma", "1", "--delta", "0"]);
    assert!(values(&out0).contains_key("leading_error"));
}

#[test]
fn invalid_configuration_exits_2() {
    let (code, _, err) = run(&["compute", "--delta", "0.6"]);
    assert_eq!(code, 2);
    assert!(!err.is_empty());
    let (code, _, _) = run(&["compute", "--scheme", "midpoint"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn missing_config_file_and_unwritable_output() {
    let (code, _, err) = run(&["compute", "--config", "/nonexistent/bcp.conf"]);
    assert_eq!(code, 2);
    assert!(err.contains("bcp.conf"));
    let (code, _, _) = run(&["compute", "--n", "8", "--out", "/nonexistent/dir/out.csv"]);
    assert_eq!(code, 1);
}

#[test]
fn binary_runs_end_to_end() {
    let output = Command::new(env!("CARGO_BIN_EXE_bcp"))
        .args(["compute", "--boundary", "ou_psi", "--n", "32"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let out = String::from_utf8(output.stdout).unwrap();
    assert!(value(&out, "abs_error") < 2e-4);
}
