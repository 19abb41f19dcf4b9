use std::fs;
use std::path::Path;

use reflexmc::harness::{parse_config, run_experiment, write_outputs, ExperimentConfig};
use serde_json::Value;

const SMALL: &str = r#"{
    "experiment": "multimodal",
    "sampler": {
        "kind": "r2sgld",
        "iterations": 3000,
        "temperatures": [1.0, 10.0],
        "schedules": [{"kind": "constant", "eta0": 0.0005}, {"kind": "constant", "eta0": 0.0015}]
    },
    "baselines": [{
        "kind": "penalized_sgld",
        "iterations": 3000,
        "temperatures": [1.0],
        "schedules": [{"kind": "constant", "eta0": 0.0005}]
    }],
    "domain": {"boundary": {"kind": {"flower": {"petals": 5, "offset": 3.0}}, "n_segments": 256}},
    "target": {"gmm": {}},
    "seeds": [3, 4]
}"#;

fn run_into(config: &ExperimentConfig, dir: &Path) -> Vec<String> {
    let outcome = run_experiment(config, 1).unwrap();
    let mut names: Vec<String> = write_outputs(config, &outcome, dir)
        .unwrap()
        .iter()
        .map(|p| p.strip_prefix(dir).unwrap().display().to_string())
        .collect();
    names.sort();
    names
}

#[test]
fn outputs_are_complete_and_reproducible() {
    let config = parse_config(SMALL).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let names = run_into(&config, first.path());
    assert_eq!(names, run_into(&config, second.path()));

    for expected in [
        "metrics.json",
        "config.json",
        "kl_curves.csv",
        "boundary.csv",
        "traces/r2SGLD_seed3.csv",
        "traces/r2SGLD_seed3.diagnostics.json",
        "traces/P-SGLD_seed4.csv",
    ] {
        assert!(
            names.iter().any(|n| n == expected),
            "missing {expected} in {names:?}"
        );
    }
    for name in &names {
        assert_eq!(
            fs::read(first.path().join(name)).unwrap(),
            fs::read(second.path().join(name)).unwrap(),
            "{name} differs between runs"
        );
    }

    let metrics: Value =
        serde_json::from_str(&fs::read_to_string(first.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["experiment"], "multimodal");
    let runs = metrics["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    for run in runs {
        assert!(run["final_kl"].as_f64().unwrap() >= 0.0);
        assert!(run["seed"].is_u64() && run["method"].is_string());
    }
    let summary = metrics["summary"].as_array().unwrap();
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0]["seeds"], 2);

    let reparsed =
        parse_config(&fs::read_to_string(first.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(reparsed, config);

    let diag: Value = serde_json::from_str(
        &fs::read_to_string(first.path().join("traces/r2SGLD_seed3.diagnostics.json")).unwrap(),
    )
    .unwrap();
    for key in ["swap_rate", "final_C", "final_sigma2", "round_trips"] {
        assert!(diag.get(key).is_some(), "diagnostics lacks {key}");
    }

    let mut reader = csv::Reader::from_path(first.path().join("traces/r2SGLD_seed3.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["step", "chain_id", "x0", "x1", "energy", "lr", "swapped"]
    );
    assert_eq!(reader.records().count(), 2400);

    let mut reader = csv::Reader::from_path(first.path().join("kl_curves.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["sample_budget", "kl_mean", "kl_lo95", "kl_hi95", "method"]
    );
    assert!(reader.records().count() > 0);
}
