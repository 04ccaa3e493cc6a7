//! End-to-end tests of the `rpb` binary.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn rpb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rpb"))
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

#[test]
fn ingest_reports_counts_and_reexports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            r#"{"id":"d1","text":"alpha beta","provenance":"original"}"#,
            "\n",
            r#"{"id":"d2","text":"gamma delta","provenance":"original"}"#,
            "\n"
        ),
    )
    .unwrap();
    let out_path = dir.path().join("roundtrip.jsonl");
    let output = rpb()
        .args(["ingest"])
        .arg(&corpus)
        .arg("--output")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("ingested 2 documents"));
    let round = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(round.lines().count(), 2);
}

#[test]
fn ingest_rejects_malformed_line_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            r#"{"id":"d1","text":"alpha","provenance":"original"}"#,
            "\n",
            "not json\n"
        ),
    )
    .unwrap();
    let output = rpb().args(["ingest"]).arg(&corpus).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = stderr(&output);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn ingest_accepts_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.tsv");
    std::fs::write(&corpus, "d1\talpha beta\nd2\tgamma delta\n").unwrap();
    let output = rpb()
        .args(["ingest", "--format", "msmarco-tsv"])
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("ingested 2 documents"));
}

#[test]
fn index_query_prints_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            r#"{"id":"d1","text":"the capital of France is Paris","provenance":"original"}"#,
            "\n",
            r#"{"id":"d2","text":"whales are large marine mammals","provenance":"original"}"#,
            "\n"
        ),
    )
    .unwrap();
    let output = rpb()
        .args(["index"])
        .arg(&corpus)
        .args(["--query", "what is the capital of France", "--k", "2"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("indexed 2 documents"));
    let d1_line = text.lines().find(|l| l.ends_with("d1")).unwrap();
    assert!(d1_line.trim_start().starts_with("1 "), "{text}");
}

#[test]
fn mine_template_writes_wrapped_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("template.json");
    let output = rpb()
        .args(["mine-template", "--set", "benchmark.cases=12", "--output"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let artifact: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!(artifact["config_hash"].as_str().unwrap().len() == 64);
    assert_eq!(artifact["template"]["opening"], "first");
    assert_eq!(artifact["template"]["synthesis"], "so putting it all together");
}

#[test]
fn mine_template_fails_for_non_reasoning_generator() {
    let output = rpb()
        .args([
            "mine-template",
            "--set",
            "generator.kind=\"mock_standard\"",
            "--set",
            "benchmark.cases=12",
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("reasoning traces"), "{}", stderr(&output));
}

fn run_pipeline_in(dir: &Path, extra: &[&str]) -> Output {
    let out_dir = dir.join("out");
    let mut cmd = rpb();
    cmd.args([
        "run",
        "--set",
        "benchmark.cases=12",
        "--set",
        &format!("run.output_dir={}", out_dir.display()),
    ]);
    for arg in extra {
        cmd.args(["--set", arg]);
    }
    cmd.output().unwrap()
}

#[test]
fn run_produces_all_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_pipeline_in(dir.path(), &[]);
    assert!(output.status.success(), "{}", stderr(&output));
    let out_dir = dir.path().join("out");
    for name in [
        "config.json",
        "template.json",
        "outcomes.jsonl",
        "records.jsonl",
        "reports.json",
        "report.txt",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    // every artifact row carries the config fingerprint
    let records = std::fs::read_to_string(out_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 12 * 5);
    for line in records.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["config_hash"].as_str().unwrap().len(), 64);
    }
    // text table and JSON report agree numerically
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("reports.json")).unwrap())
            .unwrap();
    let table = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    for report in reports["reports"].as_array().unwrap() {
        let method = report["method"].as_str().unwrap();
        let line = table
            .lines()
            .find(|l| l.starts_with(method))
            .unwrap_or_else(|| panic!("method {method} missing from table"));
        let asr = report["asr"].as_array().unwrap();
        let ratio = asr[0].as_f64().unwrap() / asr[1].as_f64().unwrap();
        let printed: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!(
            (printed - ratio * 100.0).abs() < 0.05 + 1e-9,
            "{method}: table {printed} vs json {ratio}"
        );
    }
}

#[test]
fn report_command_matches_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_pipeline_in(dir.path(), &[]);
    assert!(output.status.success(), "{}", stderr(&output));
    let out_dir = dir.path().join("out");

    let json_out = dir.path().join("report2.json");
    let output = rpb()
        .args(["report"])
        .arg(out_dir.join("records.jsonl"))
        .arg("--json-out")
        .arg(&json_out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let regenerated = stdout(&output);
    let original = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert_eq!(regenerated, original);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 5);
    assert!(json["naturalness"].is_null());
}

#[test]
fn attack_stage_writes_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("outcomes.jsonl");
    let output = rpb()
        .args([
            "attack",
            "--set",
            "benchmark.cases=6",
            "--set",
            "attack.methods=[\"na\",\"pha\"]",
            "--output",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let rows = std::fs::read_to_string(&path).unwrap();
    assert_eq!(rows.lines().count(), 12);
    for line in rows.lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["retrieved"], true);
        assert!(row["config_hash"].is_string());
    }
}

fn annotate(dir: &Path, stdin_text: &str, annotator: &str) -> Output {
    let samples = dir.join("samples.jsonl");
    if !samples.exists() {
        let mut f = std::fs::File::create(&samples).unwrap();
        for i in 0..3 {
            writeln!(
                f,
                r#"{{"sample_id":"s{i}","text":"sample text {i}"}}"#
            )
            .unwrap();
        }
    }
    let mut child = rpb()
        .args(["annotate", "--annotator", annotator, "--output"])
        .arg(dir.join("annotations.jsonl"))
        .arg(&samples)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(stdin_text.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn annotate_collects_resumes_and_reports() {
    let dir = tempfile::tempdir().unwrap();

    // partial session: one sample annotated, then EOF -> nonzero exit
    let output = annotate(dir.path(), "1\n4\n", "ann1");
    assert_eq!(output.status.code(), Some(1), "{}", stderr(&output));

    // resumed session finishes the remaining two -> exit zero
    let output = annotate(dir.path(), "0\n2\n1\n5\n", "ann1");
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));

    // a second annotator rates everything (invalid entries are re-prompted)
    let output = annotate(dir.path(), "7\n1\n3\n0\n9\n2\n1\n1\n", "ann2");
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(stdout(&output).contains("enter a number"));

    let lines = std::fs::read_to_string(dir.path().join("annotations.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);

    // reporting over the annotations produces the naturalness line
    let run_dir = tempfile::tempdir().unwrap();
    let run_output = run_pipeline_in(run_dir.path(), &[]);
    assert!(run_output.status.success());
    let output = rpb()
        .args(["report"])
        .arg(run_dir.path().join("out/records.jsonl"))
        .arg("--annotations")
        .arg(dir.path().join("annotations.jsonl"))
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("naturalness"), "{text}");
    assert!(text.contains("annotators 2, samples 3"), "{text}");
}

#[test]
fn run_is_deterministic_at_the_cli_level() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    // identical config except output_dir, which lives in run.* and is
    // excluded from the comparison by comparing only data artifacts
    let a = run_pipeline_in(dir_a.path(), &[]);
    let b = run_pipeline_in(dir_b.path(), &[]);
    assert!(a.status.success() && b.status.success());
    for name in ["records.jsonl", "outcomes.jsonl"] {
        let read = |d: &Path| {
            // strip the config hash, which covers output_dir
            std::fs::read_to_string(d.join("out").join(name))
                .unwrap()
                .lines()
                .map(|l| {
                    let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                    v.as_object_mut().unwrap().remove("config_hash");
                    v.to_string()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(read(dir_a.path()), read(dir_b.path()), "{name}");
    }
}

#[test]
fn invalid_config_override_is_a_usage_error() {
    let output = rpb().args(["run", "--set", "attack.k=0"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("attack.k"), "{}", stderr(&output));
}
