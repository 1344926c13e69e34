use std::fs;
use std::path::Path;

use excursions::runner::{self, list_experiments, parse_requirements, ExperimentConfig, ExperimentKind};
use serde_json::Value;

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const NEGATIVE_DRIFT: &str = r#"
experiment = "big_jump"
[model]
type = "levy"
beta_drift = 1.0
sigma = 0.05
[model.jumps]
kind = "compound_pareto"
rate = 0.16
scale = 0.1
theta = 1.5
[budget]
dt = 0.005
"#;

fn assert_sorted(v: &Value, path: &str) {
    match v {
        Value::Object(m) => {
            let keys: Vec<&String> = m.keys().collect();
            let mut sorted = keys.clone();
            sorted.sort();
            assert_eq!(keys, sorted, "unsorted keys at {path}");
            for (k, x) in m {
                assert_sorted(x, &format!("{path}.{k}"));
            }
        }
        Value::Array(xs) => xs.iter().enumerate().for_each(|(i, x)| assert_sorted(x, &format!("{path}[{i}]"))),
        _ => {}
    }
}

#[test]
fn every_shipped_config_loads_validates_and_round_trips() {
    let mut kinds = Vec::new();
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(path.file_stem().unwrap(), cfg.experiment.name());
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        kinds.push(cfg.experiment);
    }
    kinds.sort_by_key(|k| k.name());
    let mut all = ExperimentKind::ALL.to_vec();
    all.sort_by_key(|k| k.name());
    assert_eq!(kinds, all);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = NEGATIVE_DRIFT;
    let bad = [
        (base.replace("theta = 1.5", "theta = 0.9"), "tail index"),
        (base.replace("beta_drift = 1.0", "beta_drift = -1.0"), "beta"),
        (format!("{base}[thresholds]\ndelta = 0.001\n"), "delta"),
        (base.replace("dt = 0.005", "dt = -1.0"), "dt"),
        (base.replace("[budget]", "[budget]\nreplicas = 0"), "replicas"),
        (base.replace("experiment = \"big_jump\"", "experiment = \"meander\""), "meander"),
        (base.replace("experiment = \"big_jump\"", "experiment = \"conditioned_start\""), "thresholds.x"),
        (format!("{base}[thresholds]\nx0_fraction = 1.5\n"), "x0"),
        ("experiment = \"height_tail\"\n[model]\ntype = \"stable\"\nalpha = 1.5\nrho = 0.5\n".into(), "spectrally"),
        ("experiment = \"arcsine\"\n".into(), "model"),
        ("experiment = \"closed_forms\"\nshards = 0\n".into(), "shards"),
    ];
    for (text, needle) in bad {
        let err = ExperimentConfig::from_toml(&text).and_then(|c| c.validate()).unwrap_err().to_string();
        assert!(err.contains(needle), "{needle:?} not in {err:?}");
    }
    assert!(ExperimentConfig::from_toml("experiment = \"closed_forms\"\ncolour = 1\n").is_err());
    assert!(ExperimentConfig::from_toml("experiment = \"nope\"\n").is_err());
    ExperimentConfig::from_toml(base).unwrap().validate().unwrap();
}

#[test]
fn experiment_listing_is_complete_and_parsable() {
    let rows = list_experiments();
    assert_eq!(rows.len(), 10);
    let mut kinds: Vec<&str> = rows.iter().map(|r| r.kind.name()).collect();
    kinds.sort();
    kinds.dedup();
    assert_eq!(kinds.len(), 10);
    for r in &rows {
        let reqs = parse_requirements(r.requires).unwrap();
        assert_eq!(reqs[0].key, "model", "{}", r.requires);
        assert!(!r.verifies.is_empty());
    }
    assert!(parse_requirements("model=;x").is_err());
    assert!(parse_requirements("a b").is_err());
}

#[test]
fn outputs_have_sorted_json_and_plain_csv() {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("arcsine.toml")).unwrap();
    cfg.budget.replicas = Some(200);
    cfg.budget.dump_limit = Some(3);
    cfg.shards = 2;
    let dir = tempfile::tempdir().unwrap();
    let report = runner::run_to_dir(&cfg, dir.path(), true).unwrap();

    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let value: Value = serde_json::from_str(&summary).unwrap();
    assert_sorted(&value, "$");
    assert_eq!(value["experiment"], "arcsine");
    assert_eq!(value["pass"], Value::Bool(report.pass));
    assert!(value["inputs"].get("out").is_none_or(Value::is_null));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_sorted(&manifest, "manifest");
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(files.contains(&"summary.json"));
    for f in &files {
        let bytes = fs::read(dir.path().join(f)).unwrap();
        assert!(!bytes.contains(&b'\r'), "{f} has CR line endings");
        if f.ends_with(".csv") {
            let text = String::from_utf8(bytes).unwrap();
            let mut lines = text.lines();
            let header = lines.next().unwrap();
            assert!(header.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ','), "{f}: {header}");
            let width = header.split(',').count();
            for line in lines {
                assert_eq!(line.split(',').count(), width, "{f}: {line}");
                for cell in line.split(',') {
                    assert!(cell.parse::<f64>().is_ok() || cell.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'), "{f}: {cell}");
                }
            }
            assert!(text.ends_with('\n'));
        }
    }
    let dumps = files.iter().filter(|f| f.starts_with("paths/arcsine/shard-")).count();
    assert_eq!(dumps, 3);
}

#[test]
fn same_seed_reproduces_and_new_seed_differs() {
    let mut cfg = ExperimentConfig::load(&configs_dir().join("arcsine.toml")).unwrap();
    cfg.budget.replicas = Some(200);
    let one = runner::run(&cfg, false).unwrap();
    let again = runner::run(&cfg, false).unwrap();
    assert_eq!(one.to_json().unwrap(), again.to_json().unwrap());
    cfg.seed += 1;
    let other = runner::run(&cfg, false).unwrap();
    assert_ne!(one.checks[0].value, other.checks[0].value);
}
