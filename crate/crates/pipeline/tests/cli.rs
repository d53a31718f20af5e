use std::path::Path;
use std::process::{Command, Output};

fn cita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cita")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_train_affinity_and_single_model_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src.csv");
    let flipped = dir.path().join("flipped.csv");
    let model = dir.path().join("model.json");
    let settings = dir.path().join("train.json");
    std::fs::write(&settings, r#"{ "epochs": 3, "batch_size": 32 }"#).unwrap();

    let o = cita(&["generate", "--family", "heat", "--setting", "3", "--n", "200", "--seed", "4", "--out", s(&src)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("heat-03"));
    let o = cita(&["generate", "--family", "heat", "--setting", "3", "--n", "200", "--seed", "4", "--flip", "1", "--out", s(&flipped)]);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let o = cita(&["train", "--data", s(&src), "--config", s(&settings), "--alpha", "0", "--out", s(&model)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(model.exists());

    let report = dir.path().join("d.json");
    let o = cita(&["affinity", "--model", s(&model), "--source", s(&src), "--target", s(&flipped), "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["d_sym"], 0.0);
    assert_eq!(r["best_perm"], serde_json::json!([1, 0]));

    let bounds = dir.path().join("bounds.json");
    let o = cita(&["verify-bounds", "--model", s(&model), "--data", s(&src), "--out", s(&bounds)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("shalit_sandwich"));
    assert!(bounds.exists());
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "experiment": "symmetry", "family": { "family": "heat" }, "seeds": [1], "colour": 1 }"#);
    let o = cita(&["experiment", "symmetry", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = cita(&["experiment", "plotting", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = cita(&["experiment", "symmetry", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let good = write_config(dir.path(), r#"{ "experiment": "symmetry", "family": { "family": "heat" }, "seeds": [1] }"#);
    let o = cita(&["transfer", "--config", s(&good)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let o = cita(&["experiment"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn failed_checks_exit_with_three_and_still_write_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // The grid has no p = 0.5, so the maximum check cannot pass.
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{ "experiment": "symmetry", "family": {{ "family": "heat", "n": 80, "test_n": 20, "tasks": [0] }},
                 "seeds": [1], "p_grid": [0.0, 0.3, 1.0], "train": {{ "epochs": 2 }},
                 "paths": {{ "workdir": "{}", "out": "{}" }} }}"#,
            s(&dir.path().join("work")),
            s(&out)
        ),
    );
    let o = cita(&["experiment", "symmetry", "--config", s(&cfg), "--workers", "1"]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(text(&o).contains("FAIL max_at_half"));
    let files: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for suffix in ["-results.csv", "-curves.csv", "-summary.json"] {
        assert!(files.iter().any(|f| f.ends_with(suffix)), "{suffix} missing from {files:?}");
    }
}
