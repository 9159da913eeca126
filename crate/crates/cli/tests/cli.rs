use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocr-reflect"))
        .args(args)
        .env_clear()
        .envs(env.iter().copied())
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn mock_run(out: &Path, extra: &[&str]) -> Output {
    let ds = fixture("en5.jsonl");
    let mut args = vec!["run", "--dataset", ds.to_str().unwrap(), "--backend", "mock", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli(&args, &[])
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn mock_run_populates_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r1");
    let o = mock_run(&out, &["--mode", "full"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["cli_config.toml", "config.json", "checkpoint.jsonl", "episodes.jsonl", "result.json", "report.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let text = stdout(&o);
    let cols = ["Recognition", "Extraction", "Parsing", "Understanding", "Counting"];
    let pos: Vec<usize> = cols.iter().map(|c| text.find(c).unwrap_or_else(|| panic!("{c}: {text}"))).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--backend", "mock"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));

    let o = mock_run(&tmp.path().join("x"), &["--mode", "naive", "--max-iterations", "3"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!tmp.path().join("x").exists());

    assert_eq!(code(&mock_run(&tmp.path().join("y"), &["--mode", "sideways"])), 2);
    assert_eq!(code(&cli(&["frobnicate"], &[])), 2);
    let o = cli(&["run", "--backend", "mock"], &[("OCR_REFLECT_WORKERS", "many")]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("OCR_REFLECT_WORKERS"));
}

#[test]
fn flags_beat_environment_beats_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = fixture("en5.jsonl");
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, format!("dataset = {:?}\nbackend = \"mock\"\nmode = \"self_refine\"\nmax_iterations = 1\n", ds)).unwrap();
    let cfg_s = cfg.to_str().unwrap();
    let mode_of = |dir: &Path| -> String {
        let v: serde_json::Value = serde_json::from_str(&read(&dir.join("result.json"))).unwrap();
        format!("{}/{}", v["mode"].as_str().unwrap(), v["max_iterations"])
    };

    let a = tmp.path().join("a");
    let o = cli(&["run", "--config", cfg_s, "--out", a.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(mode_of(&a), "self_refine/1");

    let b = tmp.path().join("b");
    let o = cli(&["run", "--out", b.to_str().unwrap()], &[("OCR_REFLECT_CONFIG", cfg_s), ("OCR_REFLECT_MODE", "memory_only")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(mode_of(&b), "memory_only/1");

    let c = tmp.path().join("c");
    let o = cli(
        &["run", "--config", cfg_s, "--out", c.to_str().unwrap(), "--mode", "full", "-T", "2"],
        &[("OCR_REFLECT_MODE", "memory_only")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(mode_of(&c), "full/2");
}

#[test]
fn snapshot_reexecutes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(code(&mock_run(&first, &["--mode", "capability_only", "-T", "2"])), 0);
    let snap = first.join("cli_config.toml");
    assert!(!read(&snap).contains("api_key"));

    let second = tmp.path().join("second");
    let o = cli(&["run", "--config", snap.to_str().unwrap(), "--out", second.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["config.json", "result.json", "episodes.jsonl", "scores.jsonl"] {
        assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f}");
    }
}

#[test]
fn fixture_file_drives_the_mock() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx.jsonl");
    std::fs::write(
        &fx,
        concat!(
            "{\"sample_id\":\"*\",\"kind\":\"initial\",\"response\":\"ANSWER: RECEIPT\"}\n",
            "{\"sample_id\":\"*\",\"kind\":\"reflect\",\"response\":\"STEP: re-read it\"}\n",
            "{\"sample_id\":\"*\",\"kind\":\"refine\",\"response\":\"ANSWER: RECEIPT\"}\n",
        ),
    )
    .unwrap();
    let out = tmp.path().join("r");
    let o = mock_run(&out, &["--fixture", fx.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let episodes = read(&out.join("episodes.jsonl"));
    assert!(episodes.contains("RECEIPT"));
}

#[test]
fn interrupted_run_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = mock_run(&out, &["--limit", "2"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("interrupted"), "{}", stderr(&o));
    let o = mock_run(&out, &["--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(&out.join("checkpoint.jsonl")).lines().count(), 5);
}

#[test]
fn report_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let naive = tmp.path().join("naive");
    assert_eq!(code(&mock_run(&full, &[])), 0);
    assert_eq!(code(&mock_run(&naive, &["--mode", "naive"])), 0);
    let other = tmp.path().join("other");
    let en8 = fixture("en8.jsonl");
    let o = cli(
        &["run", "--dataset", en8.to_str().unwrap(), "--backend", "mock", "--out", other.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&o), 0);
    let (f, n, x) = (full.to_str().unwrap(), naive.to_str().unwrap(), other.to_str().unwrap());

    let o = cli(&["report", f], &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Average"));

    let o = cli(&["report", f, "--curves", "--format", "csv"], &[]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 5, "{}", stdout(&o));

    let o = cli(&["report", n, "--curves"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no refinement rounds"), "{}", stderr(&o));

    let o = cli(&["report", n, "--compare", f], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = cli(&["report", f, "--compare", x], &[]);
    assert_eq!(code(&o), 1);
    let hash = |d: &Path| -> String {
        let v: serde_json::Value = serde_json::from_str(&read(&d.join("result.json"))).unwrap();
        v["dataset_hash"].as_str().unwrap().to_string()
    };
    assert!(stderr(&o).contains(&hash(&full)) && stderr(&o).contains(&hash(&other)), "{}", stderr(&o));

    let o = cli(&["report", n, f, "--format", "csv"], &[]);
    assert_eq!(code(&o), 0);
    let csv = stdout(&o);
    assert!(csv.starts_with("Method,"), "{csv}");
    assert_eq!(csv.lines().count(), 3);

    let o = cli(&["report", tmp.path().join("nope").to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn validate_reports_line_diagnostics() {
    let o = cli(&["validate", fixture("en8.jsonl").to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("8 samples, 0 errors"), "{}", stdout(&o));

    let tmp = tempfile::tempdir().unwrap();
    let broken = tmp.path().join("broken.jsonl");
    let good = read(&fixture("en5.jsonl"));
    std::fs::write(&broken, format!("{good}{{\"id\":\"z\",\"image\":\"a.png\"}}\n")).unwrap();
    let o = cli(&["validate", broken.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("line 6:"), "{}", stdout(&o));

    let dup = tmp.path().join("dup.jsonl");
    let first = good.lines().next().unwrap();
    std::fs::write(&dup, format!("{good}{first}\n")).unwrap();
    let o = cli(&["validate", dup.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("duplicate id \"rec-1\""), "{}", stdout(&o));
}

#[test]
fn score_external_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = fixture("en8.jsonl");
    let preds = tmp.path().join("p.json");
    std::fs::write(
        &preds,
        serde_json::json!({
            "en-rec": "SALES REPORT", "en-ref": "10,10,50,30", "en-spot": "0,0,10,10 STOP",
            "en-ext": "total: 9.50", "en-par": "| a | b |\n|---|---|\n| 1 | 2 |", "en-calc": "42",
            "en-und": "Acme", "en-rea": "yes"
        })
        .to_string(),
    )
    .unwrap();
    let args = |p: &Path| {
        cli(&["score", "--dataset", ds.to_str().unwrap(), "--predictions", p.to_str().unwrap(), "--format", "csv"], &[])
    };
    let o = args(&preds);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = stdout(&o);
    let values = csv.lines().nth(1).unwrap();
    assert!(values.split(',').all(|v| v == "100"), "{csv}");

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = args(&empty);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning"));

    let partial = tmp.path().join("partial.jsonl");
    std::fs::write(&partial, "{\"id\":\"en-und\",\"answer\":\"Acme\"}\n{\"id\":\"ghost\",\"answer\":\"x\"}\n").unwrap();
    let o = args(&partial);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("scored 1 of 8"), "{}", stderr(&o));
    assert!(stderr(&o).contains("ghost"));
}
