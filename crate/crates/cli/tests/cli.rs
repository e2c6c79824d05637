use std::path::Path;
use std::process::{Command, Output};

fn cfcurate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfcurate"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cfcurate")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cfcurate(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.is_empty())
        .count()
}

#[test]
fn pipeline_commands_produce_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "synth",
            "--suite",
            "cut_in",
            "-n",
            "12",
            "--seed",
            "4",
            "-o",
            "scenes.jsonl",
        ],
    );
    assert_eq!(lines(&d.join("scenes.jsonl")), 12);
    ok(
        d,
        &[
            "rollout",
            "--scenes",
            "scenes.jsonl",
            "-k",
            "3",
            "-o",
            "results.jsonl",
        ],
    );
    ok(
        d,
        &[
            "filter",
            "--results",
            "results.jsonl",
            "--selected",
            "sel.txt",
            "--scatter",
            "scatter.csv",
        ],
    );
    let scatter = std::fs::read_to_string(d.join("scatter.csv")).unwrap();
    assert!(
        scatter.starts_with("scene_id,minade_free,minade_pf,free_iou,selected"),
        "{scatter}"
    );
    assert_eq!(scatter.lines().count(), 13);
    ok(
        d,
        &[
            "label-cf",
            "--scenes",
            "scenes.jsonl",
            "--results",
            "results.jsonl",
            "-o",
            "cf.jsonl",
        ],
    );
    assert_eq!(lines(&d.join("cf.jsonl")), lines(&d.join("sel.txt")));

    let plan = ok(
        d,
        &[
            "round-plan",
            "--round",
            "2",
            "--variant",
            "four-ds",
            "--available",
            "1,2",
        ],
    );
    let spec: serde_json::Value = serde_json::from_str(&plan).unwrap();
    let names: Vec<&str> = spec["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["dataset"].as_str().unwrap())
        .collect();
    assert!(
        names.contains(&"cf_round_1") && names.contains(&"cf_round_2"),
        "{names:?}"
    );

    ok(
        d,
        &[
            "predict",
            "--scenes",
            "scenes.jsonl",
            "-k",
            "2",
            "-o",
            "preds.jsonl",
        ],
    );
    let report = ok(
        d,
        &[
            "eval",
            "--predictions",
            "preds.jsonl",
            "--scenes",
            "scenes.jsonl",
            "--bands",
            "0.5,1",
        ],
    );
    assert!(
        report.contains("overall") && report.contains("Output Len. (Think Rate)"),
        "{report}"
    );
}

#[test]
fn strength_zero_selects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["synth", "-n", "30", "--seed", "7", "-o", "scenes.jsonl"],
    );
    ok(
        d,
        &[
            "rollout",
            "--scenes",
            "scenes.jsonl",
            "--strength",
            "0",
            "-o",
            "results.jsonl",
        ],
    );
    ok(
        d,
        &[
            "filter",
            "--results",
            "results.jsonl",
            "--selected",
            "sel.txt",
        ],
    );
    assert_eq!(lines(&d.join("sel.txt")), 0);
}

#[test]
fn config_file_and_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::create_dir(d.join("out")).unwrap();
    std::fs::write(
        d.join("run.toml"),
        "seed = 3\noutput_dir = \"out\"\n[synth]\nsuite = \"turn\"\ncount = 5\n",
    )
    .unwrap();
    ok(d, &["--config", "run.toml", "synth", "-o", "scenes.jsonl"]);
    let text = std::fs::read_to_string(d.join("out/scenes.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("turn-0000"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(cfcurate(d, &[]).status.code(), Some(1));
    assert_eq!(cfcurate(d, &["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        cfcurate(d, &["synth", "--suite", "nowhere", "-o", "x.jsonl"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        cfcurate(d, &["label", "--scenes", "missing.jsonl", "-o", "x.jsonl"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(d.join("bad.jsonl"), "{not json}\n").unwrap();
    let out = cfcurate(d, &["label", "--scenes", "bad.jsonl", "-o", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    // Nothing listens on port 9; every policy call fails.
    ok(d, &["synth", "-n", "2", "-o", "scenes.jsonl"]);
    std::fs::write(
        d.join("http.toml"),
        "[policy]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9/v1\"\nretries = 0\ntimeout_ms = 500\n",
    )
    .unwrap();
    let out = cfcurate(
        d,
        &[
            "--config",
            "http.toml",
            "rollout",
            "--scenes",
            "scenes.jsonl",
            "-o",
            "r.jsonl",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
