use std::path::Path;
use std::process::{Command, Output};

fn hte(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hte-policy"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = hte(dir.path(), &["datagen", "--n", "400", "--seed", "3", "--out", "data.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hte(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(hte(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(hte(dir.path(), &["learn", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hte(dir.path(), &[]).status.code(), Some(64));
    assert_eq!(hte(dir.path(), &["learn", "--input", "x.csv"]).status.code(), Some(64));
    assert_eq!(
        hte(dir.path(), &["learn", "--method", "bogus", "--input", "x.csv", "--out", "p.json"]).status.code(),
        Some(64)
    );
}

#[test]
fn missing_file_exits_74() {
    let dir = tempfile::tempdir().unwrap();
    let o = hte(dir.path(), &["ope", "--policy", "absent.json", "--input", "absent.csv"]);
    assert_eq!(o.status.code(), Some(74));
    assert!(stderr(&o).contains("absent.json"), "{}", stderr(&o));
}

#[test]
fn mismatched_oracle_exits_2_and_reports_counts() {
    let dir = prepared();
    let o = hte(dir.path(), &["datagen", "--n", "300", "--seed", "4", "--out", "small.csv"]);
    assert!(o.status.success());
    hte(dir.path(), &["learn", "--method", "no-hte-greedy", "--input", "data.csv", "--out", "p.json"]);
    let o = hte(
        dir.path(),
        &["evaluate", "--input", "data.csv", "--oracle", "small.oracle.csv", "--policy", "p.json", "--out", "m.json"],
    );
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("300") && msg.contains("400"), "{msg}");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn malformed_csv_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "f_x0,w,y0\n0.5,0,1.0\n0.7,1,oops\n").unwrap();
    let o = hte(dir.path(), &["learn", "--method", "no-hte-greedy", "--input", "bad.csv", "--out", "p.json"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("row 1") && msg.contains("y0"), "{msg}");
}

#[test]
fn policy_with_wrong_feature_count_is_rejected() {
    let dir = prepared();
    let policy = r#"{"kind":"tree","feature_names":["a","b","c"],"root":{"feature":2,"threshold":0.0,"left":{"arm":0},"right":{"arm":1}}}"#;
    std::fs::write(dir.path().join("p.json"), policy).unwrap();
    let o = hte(dir.path(), &["ope", "--policy", "p.json", "--input", "data.csv"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn ope_prints_value_and_manifest_records_run() {
    let dir = prepared();
    hte(dir.path(), &["learn", "--method", "no-hte-iterative", "--input", "data.csv", "--out", "rules.json"]);
    let o = hte(dir.path(), &["ope", "--policy", "rules.json", "--input", "data.csv", "--out", "ope.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("ope.json")).unwrap()).unwrap();
    assert_eq!(report["value"].as_f64().unwrap(), printed);
    assert_eq!(report["n"], 400);

    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let commands: Vec<String> = manifest
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["command"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(commands, ["datagen", "learn", "ope"]);
}

#[test]
fn explain_writes_tree_segments_and_text() {
    let dir = prepared();
    for args in [
        &["teach", "--train", "data.csv", "--n-trees", "20", "--out", "t.json"][..],
        &["predict", "--model", "t.json", "--input", "data.csv", "--out", "pred.csv"],
        &["explain", "--input", "data.csv", "--predictions", "pred.csv", "--depth", "2", "--out-dir", "."],
    ] {
        let o = hte(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for f in ["explain_1.json", "segments_1.json", "explain_1.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("explain_1.txt")).unwrap();
    assert!(text.contains("effect"), "{text}");
}

#[test]
fn config_toml_drives_datagen() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("gen.toml"),
        "n = 50\np = 3\nk_arms = 2\nnoise_sd = 0.1\nseed = 5\n\n[baseline]\nkind = \"zero\"\n\n[effect]\nkind = \"constant\"\nvalue = 1.0\n",
    )
    .unwrap();
    let o = hte(dir.path(), &["datagen", "--config", "gen.toml", "--out", "d.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = hte_policy::io::read_table(dir.path().join("d.csv")).unwrap();
    assert_eq!((table.n_rows(), table.n_features(), table.n_arms()), (50, 3, 3));
}
