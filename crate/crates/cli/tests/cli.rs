use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::{Command, Output};

fn dhjlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhjlab")).args(args).output().expect("binary runs")
}

fn report(args: &[&str]) -> Value {
    let out = dhjlab(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dhjlab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn write_json(name: &str, v: &Value) -> String {
    let p = scratch(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn without_metadata(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("metadata");
    v
}

#[test]
fn line_count_is_bare_number() {
    let out = dhjlab(&["lines", "--n", "2", "--count"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "7\n");
    let out = dhjlab(&["lines", "--n", "5", "--count"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), (4u64.pow(5) - 3u64.pow(5)).to_string());
}

#[test]
fn envelope_fields() {
    let r = report(&["lines", "--n", "1"]);
    assert_eq!(r["tool"], "dhjlab");
    assert_eq!(r["command"], "lines");
    assert_eq!(r["seed"], Value::Null);
    assert_eq!(r["params"]["alpha"], "1/3");
    assert_eq!(r["result"]["lines"], json!(["*"]));
    assert!(r["metadata"]["elapsed_ms"].is_u64());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dhjlab(&["lines", "--n", "2", "--bogus"]).status.code(), Some(2));
    assert_eq!(dhjlab(&["nonsense"]).status.code(), Some(2));
    // randomized commands refuse to run without a seed
    assert_eq!(dhjlab(&["drive", "--random-n", "3"]).status.code(), Some(2));
    assert_eq!(dhjlab(&["measure", "--set", "/nonexistent/set.json"]).status.code(), Some(2));
    let cfg = write_json("bad_config.json", &json!({"alpha": "1/3", "no_such_field": 1}));
    assert_eq!(dhjlab(&["--config", &cfg, "lines", "--n", "1"]).status.code(), Some(2));
}

#[test]
fn extremal_n3_is_18_with_certificate() {
    let cert = scratch("cert.json");
    let r = report(&["extremal", "--n", "3", "--certificate", cert.to_str().unwrap()]);
    assert_eq!(r["result"]["size"], 18);
    assert_eq!(r["result"]["verified"], true);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert_eq!(saved["claimed_size"], 18);
    assert_eq!(saved["set"]["points"].as_array().unwrap().len(), 18);
    // the certificate set is line-free
    let set = write_json("cert_set.json", &saved["set"]);
    let lines = report(&["lines", "--set", &set]);
    assert_eq!(lines["result"]["lines"]["count"], 0);
}

#[test]
fn verify_all_passes() {
    let out = dhjlab(&["verify", "--all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["result"]["all_pass"], true);
    assert_eq!(r["result"]["passed"], r["result"]["total"]);
}

#[test]
fn verify_single_claim() {
    let r = report(&["verify", "--claim", "mu2_marginals"]);
    assert_eq!(r["result"]["total"], 1);
    assert_eq!(r["result"]["claims"]["mu2_marginals"]["status"], "PASS");
    assert_eq!(dhjlab(&["verify", "--claim", "no_such_claim"]).status.code(), Some(2));
}

#[test]
fn measure_and_boxprod() {
    let s = write_json("s.json", &json!({"n": 2, "side": "full", "points": ["00", "12", "22"]}));
    let r = report(&["measure", "--set", &s]);
    assert_eq!(r["result"]["measure"], "1/3");
    let r = report(&["measure", "--set", &s, "--coord", "1/2,1/4,1/4"]);
    // 1/4 + 1/16 + 1/16
    assert_eq!(r["result"]["measure"], "3/8");
    let e1 = write_json("e1.json", &json!({"n": 1, "side": "zero-one", "points": ["1"]}));
    let e2 = write_json("e2.json", &json!({"n": 1, "side": "zero-two", "points": ["0", "2"]}));
    let r = report(&["boxprod", "--e1", &e1, "--e2", &e2]);
    // x with pi1(x) = 1 and pi2(x) anything: just {1}
    assert_eq!(r["result"]["set"]["points"], json!(["1"]));
}

#[test]
fn restrict_outputs_are_sound() {
    let r = report(&["restrict", "--random-n", "4", "--seed", "5", "--density", "7/10", "--coords", "0,2", "--z", "1,2"]);
    assert_eq!(r["result"]["unsound_line"], Value::Null);
    assert_eq!(r["result"]["set"]["n"], 2);
    let r = report(&["restrict", "--random-n", "4", "--seed", "5", "--collapse", "0,1;2,3"]);
    assert_eq!(r["result"]["unsound_line"], Value::Null);
    assert_eq!(r["result"]["set"]["n"], 2);
    let r = report(&["restrict", "--random-n", "6", "--seed", "5", "--keep", "1/2"]);
    assert_eq!(r["result"]["unsound_line"], Value::Null);
}

#[test]
fn dist_reports() {
    let r = report(&["dist"]);
    assert_eq!(r["result"]["support_size"], 4);
    // the four line atoms are pairwise at Hamming distance at least two
    assert_eq!(r["result"]["connected"], false);
    assert_eq!(r["result"]["pairwise"]["pairwise_connected"], false);
    let r = report(&["dist", "--marginal", "x"]);
    assert_eq!(r["result"]["law"]["rows"].as_array().unwrap().len(), 3);
    let r = report(&["dist", "--duplicate", "z"]);
    assert_eq!(r["result"]["support_size"], 6);
    let r = report(&["dist", "--chain", "0,5", "--chain-n", "100"]);
    assert_eq!(r["result"]["bounds"]["cross_mass_ok"], true);
    assert_eq!(r["result"]["bounds"]["diagonal_ok"], true);
}

#[test]
fn product_correlation_of_a_product_is_one() {
    // P(0) = 1, P(1) = i, P(2) = -1 on one coordinate, tensored twice
    let p = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    let values: Vec<[f64; 2]> = (0..9)
        .map(|w| {
            let (a, b) = (p[w / 3], p[w % 3]);
            [a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0]]
        })
        .collect();
    let f = write_json("f.json", &json!({"n": 2, "alphabet": [0, 1, 2], "values": values}));
    let r = report(&["--seed", "1", "corr", "--f", &f, "--product"]);
    let v = r["result"]["abs"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 1e-9, "{v}");
}

#[test]
fn reruns_are_identical_apart_from_metadata() {
    for args in [
        &["--seed", "3", "drive", "--random-n", "5", "--density", "9/10", "--steps", "2"][..],
        &["--seed", "7", "pseudo", "--random-n", "6", "--n-prime", "2"][..],
        &["--seed", "2", "restrict", "--random-n", "5", "--keep", "1/3"][..],
    ] {
        let a = without_metadata(report(args));
        let b = without_metadata(report(args));
        assert_eq!(a, b, "{args:?}");
    }
}

#[test]
fn drive_writes_trace() {
    let trace = scratch("trace.jsonl");
    let r = report(&["--seed", "4", "drive", "--random-n", "4", "--density", "9/10", "--trace", trace.to_str().unwrap()]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), r["result"]["trace"].as_array().unwrap().len());
    assert_ne!(r["result"]["outcome"], "LIFT_MISMATCH");
    if r["result"]["outcome"] == "LINE_FOUND" {
        assert_eq!(r["result"]["verified"], true);
    }
}

#[test]
fn out_flag_writes_file() {
    let out = scratch("out.json");
    let o = dhjlab(&["--out", out.to_str().unwrap(), "lines", "--n", "2"]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["result"]["count"], 7);
}

#[test]
fn csv_format_flattens_the_report() {
    let out = dhjlab(&["--format", "csv", "lines", "--n", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("path,value"));
    let rows: Vec<&str> = rows.collect();
    assert!(rows.contains(&"result.count,7"));
    assert!(rows.contains(&"command,lines"));
    assert!(rows.contains(&"result.lines.0,0*"));
}
