use std::path::Path;
use std::process::{Command, Output};

fn echo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("ECHO_LLM_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, mode: &str) -> String {
    let path = dir.join(format!("{mode}.json"));
    let text = format!(
        r#"{{"dataset": "SYNTHETIC", "backbone": "TINY_CNN", "mode": "{mode}", {p}"image_size": 32,
            "synthetic": {{"samples_per_class": 10}},
            "hyperparams": {{"epochs": 2, "batch_size": 8, "learning_rate": 0.001}},
            "folds": [1, 2], "seeds": [0], "run_dir": {:?}}}"#,
        dir.join("runs").to_str().unwrap(),
        p = if mode == "ECHO" { r#""p": 2, "# } else { "" },
    );
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_evaluate_export_and_compare() {
    let d = tempfile::tempdir().unwrap();
    let echo_cfg = write_config(d.path(), "ECHO");
    let base_cfg = write_config(d.path(), "BASELINE");

    let stopped = echo(&["--config", &echo_cfg, "train", "--stop-after", "1"]);
    assert_eq!(code(&stopped), 4, "{}", String::from_utf8_lossy(&stopped.stderr));
    let trained = echo(&["--config", &echo_cfg, "train"]);
    assert_eq!(code(&trained), 0, "{}", String::from_utf8_lossy(&trained.stderr));
    assert!(stdout(&trained).contains("SYNTHETIC"));
    let report_line = stdout(&trained).lines().find(|l| l.contains("report:")).unwrap().to_string();
    let echo_report = report_line.trim_start_matches("report: ").to_string();

    let evaluated = echo(&["--config", &echo_cfg, "evaluate"]);
    assert_eq!(code(&evaluated), 0, "{}", String::from_utf8_lossy(&evaluated.stderr));
    assert!(stdout(&evaluated).contains("fold 2 seed 0"));

    let csv = d.path().join("emb.csv");
    let exported = echo(&["--config", &echo_cfg, "export-embeddings", "--fold", "1", "--all", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&exported), 0, "{}", String::from_utf8_lossy(&exported.stderr));
    assert!(stdout(&exported).contains("40 embeddings of dimension 256"));

    let coords = d.path().join("tsne.csv");
    let projected = echo(&[
        "tsne",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        coords.to_str().unwrap(),
        "--perplexity",
        "5",
        "--iterations",
        "300",
    ]);
    assert_eq!(code(&projected), 0, "{}", String::from_utf8_lossy(&projected.stderr));
    assert_eq!(std::fs::read_to_string(&coords).unwrap().lines().count(), 41);

    let base = echo(&["--config", &base_cfg, "train"]);
    assert_eq!(code(&base), 0, "{}", String::from_utf8_lossy(&base.stderr));
    let base_line = stdout(&base).lines().find(|l| l.contains("report:")).unwrap().to_string();
    let base_report = base_line.trim_start_matches("report: ").to_string();
    let compared = echo(&["report", "--compare", &base_report, &echo_report]);
    assert_eq!(code(&compared), 0);
    assert!(stdout(&compared).starts_with("| SYNTHETIC | TINY_CNN |"), "{}", stdout(&compared));
}

#[test]
fn exit_codes_by_error_family() {
    let d = tempfile::tempdir().unwrap();

    let bad_key = d.path().join("bad.json");
    std::fs::write(&bad_key, r#"{"dataset": "ESC10", "backbone": "TINY_CNN", "lr": 1}"#).unwrap();
    let o = echo(&["--config", bad_key.to_str().unwrap(), "train"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("offending key: lr"));

    let no_data = d.path().join("nodata.json");
    let meta = d.path().join("missing.csv");
    std::fs::write(
        &no_data,
        format!(
            r#"{{"dataset": "ESC10", "backbone": "TINY_CNN", "data": {{"metadata": {:?}}}, "run_dir": {:?}}}"#,
            meta.to_str().unwrap(),
            d.path().join("runs").to_str().unwrap()
        ),
    )
    .unwrap();
    assert_eq!(code(&echo(&["--config", no_data.to_str().unwrap(), "train"])), 3);

    let onto = d.path().join("o.json");
    std::fs::write(
        &onto,
        r#"{"dataset": "SYNTHETIC", "p": 2, "source": "MANUAL", "parents": {"a": ["low_steady", "low_pulsed"], "b": ["high_steady"]}}"#,
    )
    .unwrap();
    let invalid = echo(&["ontology", "validate", onto.to_str().unwrap()]);
    assert_eq!(code(&invalid), 5);
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("high_pulsed"));

    let keyless = echo(&["ontology", "generate", "--dataset", "ESC10", "--p", "sqrt", "--url", "http://127.0.0.1:9", "--model", "m"]);
    assert_eq!(code(&keyless), 5);
    assert!(String::from_utf8_lossy(&keyless.stderr).contains("ECHO_LLM_API_KEY"));

    let fixture = echo(&["--fixture-only", "ontology", "generate", "--dataset", "ESC10", "--p", "sqrt"]);
    assert_eq!(code(&fixture), 0);
    assert!(stdout(&fixture).contains("\"p\": 3"));
}
