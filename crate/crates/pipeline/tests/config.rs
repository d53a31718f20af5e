use cita_pipeline::config::FamilyKind;
use cita_pipeline::{ExperimentConfig, ExperimentKind};
use serde_json::json;

fn shipped_configs() -> Vec<std::path::PathBuf> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn shipped_configs_validate() {
    let paths = shipped_configs();
    assert!(paths.len() >= 6);
    for p in paths {
        ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn minimal_config_round_trips_through_the_schema() {
    for kind in ["transfer", "symmetry", "correlation", "efficiency", "bundling", "verify-bounds"] {
        let k = ExperimentKind::parse(kind).unwrap();
        let mut cfg = ExperimentConfig::minimal(k, FamilyKind::Heat);
        cfg.sizes = vec![100, 200];
        let value = serde_json::to_value(&cfg).unwrap();
        let back = ExperimentConfig::from_value(value).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }
}

#[test]
fn defaults_fill_in() {
    let cfg = ExperimentConfig::from_value(json!({
        "experiment": "symmetry",
        "family": { "family": "heat" },
        "seeds": [3]
    }))
    .unwrap();
    assert_eq!(cfg.p_grid.len(), 11);
    assert_eq!(cfg.alpha_grid, vec![1.0]);
    assert_eq!(cfg.family.train_n(), 4000);
    assert_eq!(cfg.train.fine_tune_epochs(), (cfg.train.epochs as f64 * 0.2).ceil() as usize);
}

#[test]
fn rejects_bad_documents() {
    let base = json!({
        "experiment": "transfer",
        "family": { "family": "heat", "n": 400 },
        "seeds": [1],
        "sizes": [50, 100],
        "train": {}
    });
    assert!(ExperimentConfig::from_value(base.clone()).is_ok());
    let cases = [
        ("/colour", json!("red")),
        ("/family/kk", json!(1)),
        ("/train/epochs_", json!(1)),
        ("/experiment", json!("plot")),
        ("/seeds", json!([])),
        ("/sizes", json!([100, 50])),
        ("/sizes", json!([50, 800])),
        ("/alpha_grid", json!([-1.0])),
        ("/p_grid", json!([0.0, 1.5])),
        ("/workers", json!(0)),
    ];
    for (ptr, value) in cases {
        let mut doc = base.clone();
        let (parent, key) = ptr.rsplit_once('/').unwrap();
        let target = if parent.is_empty() { &mut doc } else { doc.pointer_mut(parent).unwrap() };
        target[key] = value;
        let err = ExperimentConfig::from_value(doc).unwrap_err();
        assert!(err.is_config(), "{ptr}: {err}");
    }
    let err = ExperimentConfig::from_json_str("{ not json").unwrap_err();
    assert!(err.is_config());
}

#[test]
fn transfer_needs_sizes() {
    let err = ExperimentConfig::from_value(json!({
        "experiment": "transfer",
        "family": { "family": "rkhs" },
        "seeds": [1]
    }))
    .unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("size"));
}
