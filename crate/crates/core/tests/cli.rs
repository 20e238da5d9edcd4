use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sl2lab::cli::RunConfig;

fn sl2lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sl2lab"))
        .args(args)
        .output()
        .expect("spawn sl2lab")
}

fn write_config(dir: &Path, body: serde_json::Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn group_info_prints_order_and_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = sl2lab(&["group-info", "--q", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("q = 5: order = 120, dim E_q = 119"), "{text}");
    assert!(out.join("report.json").exists());
    assert!(out.join("group_q5.csv").exists());
}

#[test]
fn invalid_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), serde_json::json!({ "L": 1 }));
    let o = sl2lab(&["opnorm", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("L"));

    let cfg = write_config(tmp.path(), serde_json::json!({ "unknown_field": true }));
    assert_eq!(sl2lab(&["group-info", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let cfg = write_config(
            tmp.path(),
            serde_json::json!({ "q_list": [4, 5], "outputs": { "dir": out } }),
        );
        let o = sl2lab(&["sweep-q", "--config", &cfg]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{o:?}");
        let csv = fs::read(out.join("sweep.csv")).unwrap();
        let mut report: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
        report["config"]["outputs"] = serde_json::Value::Null;
        (csv, report)
    };
    let (csv_a, rep_a) = run("a");
    let (csv_b, rep_b) = run("b");
    assert_eq!(csv_a, csv_b);
    assert_eq!(rep_a, rep_b);
}

#[test]
fn guarded_modulus_is_skipped_with_empty_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        serde_json::json!({
            "q_list": [5, 11],
            "guards": { "max_modulus": 8 },
            "outputs": { "dir": out },
        }),
    );
    let o = sl2lab(&["group-info", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("SKIP group_order_q11"));

    let mut rdr = csv::Reader::from_path(out.join("group_info.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][1], "120");
    assert_eq!(&rows[1][0], "11");
    assert!(rows[1].iter().skip(1).take(3).all(str::is_empty));
    assert!(!rows[1][4].is_empty());
}

#[test]
fn report_config_echo_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        serde_json::json!({ "q_list": [4], "L": 3, "seed": 7, "outputs": { "dir": out } }),
    );
    assert!(sl2lab(&["group-info", "--config", &cfg]).status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let echoed = RunConfig::from_json_str(&report["config"].to_string()).unwrap();
    assert_eq!(echoed.q_list, vec![4]);
    assert_eq!(echoed.l, 3);
    assert_eq!(echoed.seed, 7);
    assert_eq!(report["command"], "group-info");
}
