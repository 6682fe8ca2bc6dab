use std::path::Path;
use std::process::{Command, Output};

fn cgil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgil")).args(args).output().unwrap()
}

fn gen(dir: &Path) {
    let out = cgil(&[
        "gen-synth", "--classes", "4", "--tasks", "2", "--dim", "8", "--per-class", "20", "--test-per-class", "10",
        "--sep", "10", "--seed", "3", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_synth_then_baseline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    gen(&bench);
    for f in ["train.cgil", "test.cgil", "benchmark.json"] {
        assert!(bench.join(f).exists(), "{f}");
    }
    let report = dir.path().join("zs.json");
    let out = cgil(&[
        "baseline", "--kind", "zeroshot", "--bench", bench.to_str().unwrap(), "--seed", "1992", "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAA"));

    let csv = dir.path().join("m.csv");
    let out = cgil(&["report", "--in", report.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "after_task,task_1,task_2");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn run_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    gen(&bench);
    let (json, csv) = (dir.path().join("r.json"), dir.path().join("r.csv"));
    let out = cgil(&[
        "run", "--bench", bench.to_str().unwrap(), "--generator", "gaussian", "--prompt-mode", "cgil", "--seed",
        "1996", "--out", json.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(&json).unwrap();
    assert!(report.contains("\"method\": \"cgil\""));
    assert!(report.contains("\"ci_transfer\""));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn missing_benchmark_exits_with_io_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgil(&[
        "baseline", "--kind", "joint", "--bench", dir.path().join("nope").to_str().unwrap(), "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error [io]"));
}

#[test]
fn corrupted_benchmark_exits_with_format_category() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    gen(&bench);
    let train = bench.join("train.cgil");
    let mut bytes = std::fs::read(&train).unwrap();
    bytes[0] = b'X';
    std::fs::write(&train, bytes).unwrap();
    let out = cgil(&[
        "baseline", "--kind", "zeroshot", "--bench", bench.to_str().unwrap(), "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 0"));
}

#[test]
fn invalid_split_exits_with_input_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = cgil(&["gen-synth", "--classes", "2", "--tasks", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn report_without_matrix_exits_with_state_category() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    gen(&bench);
    let report = dir.path().join("zs.json");
    let out = cgil(&[
        "baseline", "--kind", "zeroshot", "--bench", bench.to_str().unwrap(), "--out", report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report).unwrap();
    let start = text.find("\"matrix\"").unwrap();
    let end = start + text[start..].find("],\n  \"faa\"").unwrap() + 1;
    let broken = format!("{}\"matrix\": null{}", &text[..start], &text[end..]);
    std::fs::write(&report, broken).unwrap();
    let out = cgil(&["report", "--in", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(6), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_generator_is_a_usage_error() {
    let out = cgil(&["run", "--bench", ".", "--out", "x.json", "--generator", "gan"]);
    assert_eq!(out.status.code(), Some(2));
}
