use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn moralab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moralab"))
        .args(args)
        .env_remove("MORALAB_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record(id: &str, framework: &str, decision: &str) -> String {
    serde_json::json!({
        "id": id,
        "description": format!("Scenario {id} asks what you would do."),
        "action_a": "I keep the promise.",
        "action_b": "I break the promise.",
        "framework": framework,
        "decision": decision,
        "reasoning": "",
    })
    .to_string()
}

/// Three scenarios, all complete. s1: util A, deont B, virtue A.
fn mini_corpus(dir: &Path) -> PathBuf {
    let rows = [
        record("s1", "utilitarian", "A"),
        record("s1", "deontological", "B"),
        record("s1", "virtue", "A"),
        record("s2", "utilitarian", "B"),
        record("s2", "deontological", "B"),
        record("s2", "virtue", "A"),
        record("s3", "utilitarian", "A"),
        record("s3", "deontological", "A"),
        record("s3", "virtue", "B"),
    ];
    let p = dir.join("mini.jsonl");
    fs::write(&p, rows.join("\n") + "\n").unwrap();
    p
}

fn synth(dir: &Path) -> PathBuf {
    let p = dir.join("syn.jsonl");
    let o = moralab(&["synth", "--seed", "3", "--noise", "0.05", "-o", s(&p)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    p
}

#[test]
fn import_summary_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let src = mini_corpus(dir.path());
    let out = dir.path().join("canon.jsonl");
    let o = moralab(&["import", s(&src), "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scenarios: 3  traces: 9"));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 9);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out2 = dir.path().join("empty_out.jsonl");
    let o = moralab(&["import", s(&empty), "-o", s(&out2)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scenarios: 0"));
    assert_eq!(fs::read_to_string(&out2).unwrap(), "");
}

#[test]
fn malformed_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    let lines = [
        record("s1", "utilitarian", "A"),
        record("s1", "deontological", "B"),
        "{not json".to_string(),
        record("s1", "virtue", "A"),
    ];
    fs::write(&p, lines.join("\n")).unwrap();
    let out = dir.path().join("o.jsonl");
    let o = moralab(&["import", s(&p), "-o", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = moralab(&["import", s(&p), "-o", s(&out), "--allow-partial"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("scenarios: 1"));
}

#[test]
fn analyze_is_pure_and_single_scenario_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let src = mini_corpus(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&moralab(&["analyze", s(&src), "--outdir", s(&a)])), 0);
    assert_eq!(code(&moralab(&["analyze", s(&src), "--outdir", s(&b)])), 0);
    assert_eq!(fs::read(a.join("analysis.json")).unwrap(), fs::read(b.join("analysis.json")).unwrap());
    assert_eq!(fs::read(a.join("phi.csv")).unwrap(), fs::read(b.join("phi.csv")).unwrap());

    let one = dir.path().join("one.jsonl");
    let rows = [
        record("s1", "utilitarian", "A"),
        record("s1", "deontological", "B"),
        record("s1", "virtue", "A"),
    ];
    fs::write(&one, rows.join("\n")).unwrap();
    let c = dir.path().join("c");
    assert_eq!(code(&moralab(&["analyze", s(&one), "--outdir", s(&c)])), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(c.join("analysis.json")).unwrap()).unwrap();
    let m = report["phi_matrix"].as_array().unwrap();
    for (i, row) in m.iter().enumerate() {
        for (j, cell) in row.as_array().unwrap().iter().enumerate() {
            if i != j {
                assert_eq!(cell, "undefined");
            }
        }
    }

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = moralab(&["analyze", s(&empty), "--outdir", s(&dir.path().join("d"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_deterministic_and_guards_outdir() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = moralab(&["train", s(&corpus), "--framework", "utilitarian", "--preset", "toy", "--seed", "7", "--outdir", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(fs::read(a.join("metrics.jsonl")).unwrap(), fs::read(b.join("metrics.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("curve.csv")).unwrap(), fs::read(b.join("curve.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("reports/ckpt_step150.json")).unwrap(),
        fs::read(b.join("reports/ckpt_step150.json")).unwrap()
    );

    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let id = manifest["experiment_id"].as_str().unwrap();
    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 150);
    assert!(metrics.lines().all(|l| l.contains(id)));
    assert!(fs::read_to_string(a.join("curve.csv")).unwrap().starts_with(&format!("# manifest_id={id}\n")));
    let ckpt: Value = serde_json::from_str(&fs::read_to_string(a.join("checkpoints/ckpt_step150.json")).unwrap()).unwrap();
    assert_eq!(ckpt["tags"]["manifest_id"], id);

    let o = moralab(&["train", s(&corpus), "--framework", "utilitarian", "--outdir", s(&a)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("already exists"));
}

#[test]
fn paper_preset_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let out = dir.path().join("paper");
    let o = moralab(&["train", s(&corpus), "--framework", "utilitarian", "--preset", "paper", "--outdir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["train"]["group_size"], 4);
    assert_eq!(m["config"]["train"]["max_steps"], 150);
    assert_eq!(m["config"]["train"]["lr"], 5e-6);
    assert_eq!(m["split"]["eval_count"], 50);
    let source = m["split"]["source_count"].as_u64().unwrap();
    assert_eq!(m["split"]["train_count"].as_u64().unwrap(), source * 70 / 100);
}

#[test]
fn unknown_framework_lists_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let o = moralab(&["train", s(&corpus), "--framework", "care", "--outdir", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("utilitarian, deontological, virtue"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_three_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let out = dir.path().join("boom");
    let o = moralab(&[
        "train", s(&corpus), "--framework", "virtue", "--lr", "1e300", "--steps", "20", "--eval-every", "1", "--outdir", s(&out),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at step"));
    assert!(out.join("checkpoints/ckpt_step0.json").exists());
}

fn curve_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn eval_directory_emits_curve_and_radar() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("run");
    let o = moralab(&["train", s(&corpus), "--framework", "deontological", "--seed", "2", "--outdir", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = moralab(&["eval", "--checkpoint", s(&run.join("checkpoints/ckpt_step0.json")), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let base: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for v in base["softmax"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
    }

    let evald = dir.path().join("evald");
    let o = moralab(&["eval", "--checkpoint", s(&run), "--corpus", s(&corpus), "--outdir", s(&evald)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = curve_rows(&evald.join("curve.csv"));
    let steps: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(steps, ["0", "25", "50", "75", "100", "125", "150"]);
    let radar = curve_rows(&evald.join("radar.csv"));
    for (i, r) in radar.iter().enumerate() {
        let best = rows.iter().map(|row| row[4 + i].parse::<f64>().unwrap()).fold(f64::MIN, f64::max);
        assert!((r[2].parse::<f64>().unwrap() - best).abs() < 1e-6);
        assert_eq!(r[1], rows[0][4 + i]);
    }
    // the run's own curve agrees with re-evaluation
    assert_eq!(curve_rows(&run.join("curve.csv")), rows);
}

#[test]
fn eval_rejects_bad_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&moralab(&["train", s(&corpus), "--framework", "virtue", "--steps", "2", "--outdir", s(&run)])), 0);
    let ck = run.join("checkpoints/ckpt_step0.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();

    let other = dir.path().join("other.jsonl");
    let o = moralab(&["synth", "--seed", "4", "-o", s(&other)]);
    assert_eq!(code(&o), 0);
    let o = moralab(&["eval", "--checkpoint", s(&ck), "--corpus", s(&other)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("trained on corpus"), "{}", stderr(&o));
    let o = moralab(&["eval", "--checkpoint", s(&ck), "--corpus", s(&other), "--allow-foreign-corpus"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    v["format_version"] = Value::from(0);
    let old = dir.path().join("old.json");
    fs::write(&old, v.to_string()).unwrap();
    let o = moralab(&["eval", "--checkpoint", s(&old), "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("checkpoint format 0 is not supported"), "{}", stderr(&o));
}

fn transcript(id: &str, text: &str) -> String {
    serde_json::json!({"scenario_id": id, "completion_text": text}).to_string()
}

#[test]
fn score_rows_match_hand_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(dir.path());
    let t = dir.path().join("t.jsonl");
    let rows = [
        // s1: utilitarian aligned with A. two keywords → 0.6
        transcript("s1", "Overall welfare matters most here, it serves the greatest good. DECISION: A"),
        // empty text → unclear
        transcript("s2", ""),
        // s3: utilitarian aligned with A, choosing B is opposed; no keywords
        transcript("s3", "I would choose option B."),
    ];
    fs::write(&t, rows.join("\n")).unwrap();
    let out = dir.path().join("scored.jsonl");
    let o = moralab(&["score", s(&t), "--corpus", s(&corpus), "--framework", "utilitarian", "-o", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scored: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let expected = [(3.0, 0.6), (-3.0, 0.0), (-1.0, 0.0)];
    let mut sum = 0.0;
    for (row, (align, kw)) in scored.iter().zip(expected) {
        assert_eq!(row["r_align"].as_f64().unwrap(), align);
        assert!((row["r_keyword"].as_f64().unwrap() - kw).abs() < 1e-12);
        assert!((row["r_total"].as_f64().unwrap() - (align + kw)).abs() < 1e-12);
        sum += align + kw;
    }
    let total: f64 = scored.iter().map(|r| r["r_total"].as_f64().unwrap()).sum();
    assert!((total - sum).abs() < 1e-12);
    assert_eq!(scored[1]["extracted_decision"], "Unclear");
}

#[test]
fn score_unknown_scenario_fails_at_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(dir.path());
    let t = dir.path().join("t.jsonl");
    fs::write(&t, [transcript("nope", "DECISION: A"), transcript("s1", "DECISION: A")].join("\n")).unwrap();
    let o = moralab(&["score", s(&t), "--corpus", s(&corpus), "--framework", "utilitarian"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown scenario id nope"));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn transcripts_feed_the_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = mini_corpus(dir.path());
    let t = dir.path().join("t.jsonl");
    // s1 always A, s2 half B half unclear, s3 always A
    let rows = [
        transcript("s1", "DECISION: A"),
        transcript("s1", "DECISION: A"),
        transcript("s2", "DECISION: B"),
        transcript("s2", "no idea"),
        transcript("s3", "Option A"),
        transcript("s3", "DECISION: A"),
    ];
    fs::write(&t, rows.join("\n")).unwrap();
    let o = moralab(&["eval", "--transcripts", s(&t), "--corpus", s(&corpus), "--scenarios", "all", "--tau", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // util: aligned s1A s2B s3A → (1 + 0.5 + 1)/3; deont: s1B s2B s3A → (0 + 0.5 + 1)/3;
    // virtue: s1A s2A s3B → (1 + 0 + 0)/3
    let expected = [2.5 / 3.0, 1.5 / 3.0, 1.0 / 3.0];
    for (v, e) in r["raw"].as_array().unwrap().iter().zip(expected) {
        assert!((v.as_f64().unwrap() - e).abs() < 1e-12);
    }
    assert_eq!(r["backend"]["kind"], "monte_carlo");
}

#[test]
fn data_dir_env_resolves_relative_inputs() {
    let dir = tempfile::tempdir().unwrap();
    mini_corpus(dir.path());
    let out = dir.path().join("an");
    let o = Command::new(env!("CARGO_BIN_EXE_moralab"))
        .args(["analyze", "mini.jsonl", "--outdir", s(&out)])
        .env("MORALAB_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("phi.csv").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&moralab(&["frobnicate"])), 1);
    assert_eq!(code(&moralab(&["train"])), 1);
    assert_eq!(code(&moralab(&["--help"])), 0);
}
