use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn nbest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbest")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = nbest(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Manifest, rank-1 N-best and identity corrections for a small corpus.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new(sessions: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        let sessions = sessions.to_string();
        ok(&["gen-corpus", "--sessions", &sessions, "--turns", "6", "--seed", "3", "--out", p(&f.path("m.jsonl"))]);
        ok(&[
            "synth",
            "--manifest",
            p(&f.path("m.jsonl")),
            "--out",
            p(&f.path("nb.jsonl")),
            "--base-rate",
            "0.1",
            "--seed",
            "5",
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn split_ten_sessions_five_and_five() {
    let f = Fixture::new(10);
    let out_dir = f.path("folds");
    ok(&["split", "--manifest", p(&f.path("m.jsonl")), "--seed", "42", "--out-dir", p(&out_dir)]);
    let a = fs::read_to_string(out_dir.join("fold_a.txt")).unwrap();
    let b = fs::read_to_string(out_dir.join("fold_b.txt")).unwrap();
    assert_eq!(a.lines().count(), 5);
    assert_eq!(b.lines().count(), 5);
    assert!(a.lines().all(|s| !b.lines().any(|t| t == s)));
    let fold_a = fs::read_to_string(out_dir.join("fold_a.jsonl")).unwrap();
    assert_eq!(fold_a.lines().count(), 5 * 6);
}

#[test]
fn identity_pipeline_scores_unchanged() {
    let f = Fixture::new(4);
    ok(&[
        "correct",
        "--manifest",
        p(&f.path("m.jsonl")),
        "--nbest",
        p(&f.path("nb.jsonl")),
        "--out",
        p(&f.path("c.jsonl")),
        "--backend",
        "identity",
        "--context",
        "1",
    ]);
    let table = ok(&[
        "score",
        "--manifest",
        p(&f.path("m.jsonl")),
        "--before",
        p(&f.path("nb.jsonl")),
        "--after",
        p(&f.path("c.jsonl")),
        "--before-label",
        "asr",
        "--after-label",
        "llm",
        "--csv-out",
        p(&f.path("t.csv")),
        "--rows-out",
        p(&f.path("rows.csv")),
        "--no-timestamp",
    ]);
    let header = table.lines().next().unwrap();
    for col in ["Overall", "Child", "Adult"] {
        assert!(header.contains(col), "{header}");
    }
    let csv = fs::read_to_string(f.path("t.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "asr");
    assert_eq!(rows[1][0], "llm");
    assert_eq!(rows[0][1..], rows[1][1..]);
    let per_utt = fs::read_to_string(f.path("rows.csv")).unwrap();
    assert!(per_utt.starts_with("utt_id,speaker,condition,ref_len,wer,excluded\n"));
    assert_eq!(per_utt.lines().count(), 1 + 2 * 4 * 6);
}

#[test]
fn score_is_reproducible_without_timestamp() {
    let f = Fixture::new(3);
    let (m, nb) = (f.path("m.jsonl"), f.path("nb.jsonl"));
    let args = ["score", "--manifest", p(&m), "--before", p(&nb)];
    let mut quiet = args.to_vec();
    quiet.push("--no-timestamp");
    assert_eq!(ok(&quiet), ok(&quiet));
    let stamped = ok(&args);
    assert!(stamped.starts_with("<!-- generated "));
    assert_eq!(stamped.split_once('\n').unwrap().1, ok(&quiet));
}

#[test]
fn synth_is_deterministic() {
    let f = Fixture::new(3);
    let again = f.path("nb2.jsonl");
    ok(&["synth", "--manifest", p(&f.path("m.jsonl")), "--out", p(&again), "--base-rate", "0.1", "--seed", "5"]);
    assert_eq!(fs::read(f.path("nb.jsonl")).unwrap(), fs::read(again).unwrap());
}

#[test]
fn report_writes_default_buckets() {
    let f = Fixture::new(3);
    let csv = ok(&[
        "report",
        "--manifest",
        p(&f.path("m.jsonl")),
        "--run",
        &format!("asr={}", p(&f.path("nb.jsonl"))),
        "--buckets",
        "default",
        "--speaker",
        "child",
    ]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bucket,condition,macro_wer,count"));
    let labels: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let want: Vec<String> = (1..=10).map(|i| i.to_string()).chain(["11+".to_string()]).collect();
    assert_eq!(labels, want);
}

#[test]
fn scripted_backend_and_fallback() {
    let f = Fixture::new(1);
    let manifest = fs::read_to_string(f.path("m.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let id = first["utt_id"].as_str().unwrap();
    let script = f.path("script.jsonl");
    let long = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen";
    fs::write(&script, format!("{}\n", serde_json::json!({"utt_id": id, "response": long}))).unwrap();
    ok(&[
        "correct",
        "--manifest",
        p(&f.path("m.jsonl")),
        "--nbest",
        p(&f.path("nb.jsonl")),
        "--out",
        p(&f.path("c.jsonl")),
        "--backend",
        "scripted",
        "--scripted",
        p(&script),
    ]);
    let text = fs::read_to_string(f.path("c.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["fallback"], true);
    assert_eq!(rows[0]["raw_llm"], long);
    // Utterances missing from the script degrade with an error.
    assert!(rows[1]["error"].is_string());
    let out = nbest(&["score", "--manifest", p(&f.path("m.jsonl")), "--before", p(&f.path("c.jsonl"))]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("5 utterance(s) kept the best hypothesis"), "{stderr}");
}

#[test]
fn prompts_and_sft_emit_one_line_per_utterance() {
    let f = Fixture::new(2);
    for cmd in ["prompts", "sft"] {
        let out = f.path(&format!("{cmd}.jsonl"));
        ok(&[
            cmd,
            "--manifest",
            p(&f.path("m.jsonl")),
            "--nbest",
            p(&f.path("nb.jsonl")),
            "--out",
            p(&out),
            "--context",
            "3",
        ]);
        assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 12);
    }
    let out = nbest(&[
        "prompts",
        "--manifest",
        p(&f.path("m.jsonl")),
        "--nbest",
        p(&f.path("nb.jsonl")),
        "--out",
        p(&f.path("x.jsonl")),
        "--context",
        "2",
    ]);
    assert!(!out.status.success());
}

#[test]
fn ingest_filters_long_utterances() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let rows = [
        r#"{"session_id":"s","utt_id":"a","index":0,"speaker":"adult","text":"hi","duration_s":3.0}"#,
        r#"{"session_id":"s","utt_id":"b","index":1,"speaker":"child","text":"long","duration_s":31.0}"#,
        r#"{"session_id":"s","utt_id":"c","index":2,"speaker":"adult","text":"ok","duration_s":30.0}"#,
    ];
    fs::write(&m, rows.join("\n") + "\n").unwrap();
    let out = dir.path().join("o.jsonl");
    ok(&["ingest", "--manifest", p(&m), "--out", p(&out)]);
    let kept = fs::read_to_string(&out).unwrap();
    assert_eq!(kept.lines().count(), 2);
    assert!(!kept.contains("\"b\""));
    // The filtered manifest still loads downstream.
    let nb = dir.path().join("nb.jsonl");
    ok(&["synth", "--manifest", p(&out), "--out", p(&nb)]);
    assert_eq!(fs::read_to_string(&nb).unwrap().lines().count(), 2);
}

#[test]
fn norm_reads_stdin_and_dumps_config() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_nbest"))
        .arg("norm")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"Um, I DON'T know (laughs)\nIt's fine.\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "i do not know\nit is fine\n");

    let cfg: serde_json::Value = serde_json::from_str(&ok(&["norm", "--dump-config"])).unwrap();
    assert_eq!(cfg["contraction_table"]["don't"], "do not");
}

#[test]
fn version_lists_schemas() {
    let v = ok(&["--version"]);
    assert!(v.starts_with("nbest "));
    assert!(v.lines().count() > 1);
}

#[test]
fn errors_are_reported_as_json() {
    let out = nbest(&["split", "--manifest", "/nonexistent/m.jsonl", "--seed", "1", "--out-dir", "/tmp/x"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["command"], "split");
    assert!(err["error"].as_str().unwrap().contains("nonexistent"));
}
