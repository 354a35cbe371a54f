//! Black-box tests of the binary: exit codes, diagnostics, and the
//! smaller command-level behaviors the acceptance suite does not cover.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use entswap_core::victim::{RemoteVictim, Victim};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entswap"))
}

fn fixture_dir() -> PathBuf {
    static FIXTURE: std::sync::OnceLock<tempfile::TempDir> = std::sync::OnceLock::new();
    FIXTURE
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("fx");
            let status = bin()
                .args([
                    "gen-fixtures",
                    "--out",
                    out.to_str().unwrap(),
                    "--classes",
                    "4",
                    "--entities-per-class",
                    "18",
                    "--columns",
                    "12",
                    "--rows",
                    "6",
                    "--seed",
                    "9",
                ])
                .status()
                .unwrap();
            assert!(status.success());
            let status = bin()
                .args([
                    "train-victim",
                    "--train",
                    out.join("train.jsonl").to_str().unwrap(),
                    "--embeddings",
                    out.join("embeddings.txt").to_str().unwrap(),
                    "--out",
                    out.join("model.json").to_str().unwrap(),
                ])
                .status()
                .unwrap();
            assert!(status.success());
            dir
        })
        .path()
        .join("fx")
}

fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let out = bin().arg("attack").output().unwrap(); // missing required flags
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn schema_violations_exit_two_and_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"table_id":"a","headers":["h"],"rows":[["x"]],"annotations":{"0":["k"]}}"#;
    let bad = r#"{"table_id":"b","headers":["h"],"rows":[["x","y"]],"annotations":{}}"#;
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    std::fs::write(&train, format!("{good}\n")).unwrap();
    std::fs::write(&test, format!("{good}\n{bad}\n")).unwrap();
    let out = bin()
        .args([
            "audit-leakage",
            "--train",
            path_str(&train),
            "--test",
            path_str(&test),
            "--out",
            path_str(&dir.path().join("report.csv")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "diagnostic names the line: {stderr}");
}

#[test]
fn empty_test_corpus_exits_two() {
    let fx = fixture_dir();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = bin()
        .args([
            "audit-leakage",
            "--train",
            path_str(&fx.join("train.jsonl")),
            "--test",
            path_str(&empty),
            "--out",
            path_str(&dir.path().join("report.csv")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unreachable_victim_exits_three_without_partial_output() {
    let fx = fixture_dir();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = bin()
        .args([
            "attack",
            "--corpus",
            path_str(&fx.join("test.jsonl")),
            "--train-corpus",
            path_str(&fx.join("train.jsonl")),
            "--embeddings",
            path_str(&fx.join("embeddings.txt")),
            "--victim",
            "http://127.0.0.1:9",
            "--out",
            path_str(&out_dir),
            "--p",
            "20",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(!out_dir.exists(), "no partial output on transport failure");
}

#[test]
fn unknown_victim_prefix_exits_one() {
    let fx = fixture_dir();
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "attack",
            "--corpus",
            path_str(&fx.join("test.jsonl")),
            "--train-corpus",
            path_str(&fx.join("train.jsonl")),
            "--embeddings",
            path_str(&fx.join("embeddings.txt")),
            "--victim",
            "carrier-pigeon:coop",
            "--out",
            path_str(&dir.path().join("run")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn leakage_modes_share_classes_but_not_totals() {
    // one table mentions the same entity twice
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    std::fs::write(
        &train,
        r#"{"table_id":"tr","headers":["h"],"rows":[["a"],["b"]],"annotations":{"0":["k"]}}"#,
    )
    .unwrap();
    std::fs::write(
        &test,
        [
            r#"{"table_id":"t1","headers":["h"],"rows":[["a"],["a"],["c"]],"annotations":{"0":["k"]}}"#,
            r#"{"table_id":"t2","headers":["h"],"rows":[["x"]],"annotations":{"0":["other"]}}"#,
            r#"{"table_id":"t3","headers":["h"],"rows":[["b"],["b"]],"annotations":{"0":["k"]}}"#,
            r#"{"table_id":"t4","headers":["h"],"rows":[["y"],["x"]],"annotations":{"0":["other"]}}"#,
            r#"{"table_id":"t5","headers":["h"],"rows":[["c"]],"annotations":{"0":["k"]}}"#,
        ]
        .join("\n"),
    )
    .unwrap();

    let mut reports = Vec::new();
    for mode in ["unique", "mention"] {
        let out_path = dir.path().join(format!("{mode}.csv"));
        let status = bin()
            .args([
                "audit-leakage",
                "--train",
                path_str(&train),
                "--test",
                path_str(&test),
                "--mode",
                mode,
                "--out",
                path_str(&out_path),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let mut reader = csv::Reader::from_path(&out_path).unwrap();
        let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        reports.push(rows);
    }
    let classes = |rows: &[csv::StringRecord]| -> Vec<String> {
        rows.iter().map(|r| r[0].to_string()).collect()
    };
    assert_eq!(classes(&reports[0]), classes(&reports[1]));
    // unique: class k has entities {a, b, c}; mention counts 6 cells
    let k_unique = &reports[0][0];
    let k_mention = &reports[1][0];
    assert_eq!(&k_unique[0], "k");
    assert_eq!(&k_unique[1], "3");
    assert_eq!(&k_unique[2], "2");
    assert_eq!(&k_mention[1], "6");
    assert_eq!(&k_mention[2], "4");
}

#[test]
fn header_attack_honors_the_ceil_rule_on_wide_tables() {
    // 10-column table at p=20: exactly 2 headers perturbed per table
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture_dir();
    let headers: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let row: Vec<String> = (0..10).map(|i| format!("c{i}_shared000")).collect();
    let table = serde_json::json!({
        "table_id": "wide",
        "headers": headers,
        "rows": [row, row.clone()],
        "annotations": {"0": ["class00"]},
    });
    let corpus = dir.path().join("wide.jsonl");
    std::fs::write(&corpus, format!("{table}\n")).unwrap();
    // synonym vocabulary covering every header
    let mut synonyms = String::from("20 2\n");
    for i in 0..10 {
        synonyms.push_str(&format!("w{i}\t{} 1\n", i as f64));
        synonyms.push_str(&format!("w{i}_alt\t{} 1.001\n", i as f64));
    }
    let syn_path = dir.path().join("syn.txt");
    std::fs::write(&syn_path, synonyms).unwrap();

    let out_dir = dir.path().join("hrun");
    let status = bin()
        .args([
            "header-attack",
            "--corpus",
            path_str(&corpus),
            "--synonyms",
            path_str(&syn_path),
            "--victim",
            &format!("prototype:{}", fx.join("model.json").display()),
            "--out",
            path_str(&out_dir),
            "--p",
            "20",
            "--seeds",
            "1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let records = std::fs::read_to_string(out_dir.join("header_results.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    let swaps = record["swaps"].as_array().unwrap();
    assert_eq!(
        swaps.len() + record["skips"].as_u64().unwrap() as usize,
        2,
        "ceil(20% of 10 headers) = 2"
    );
}

#[test]
fn serve_command_answers_the_wire_protocol() {
    let fx = fixture_dir();
    let mut child = bin()
        .args([
            "serve",
            "--victim",
            &format!("prototype:{}", fx.join("model.json").display()),
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let mut lines = std::io::BufReader::new(stdout).lines();
    let first = lines.next().unwrap().unwrap();
    let url = first
        .split_whitespace()
        .find(|w| w.starts_with("http://"))
        .expect("serve prints its URL")
        .to_string();

    let remote = RemoteVictim::connect(&url).unwrap();
    assert!(!remote.classes().is_empty());
    assert_eq!(remote.threshold(), 0.5);

    child.kill().unwrap();
    let _ = child.wait();
}
