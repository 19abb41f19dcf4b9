use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn reflexmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflexmc"))
        .args(args)
        .env_remove("REFLEXMC_THREADS")
        .output()
        .expect("binary runs")
}

/// Every output file with its bytes; `output_dir` is dropped from the
/// echoed config since the runs write to different directories.
fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_path_buf();
                let mut bytes = fs::read(&path).unwrap();
                if rel == Path::new("config.json") {
                    let text = String::from_utf8(bytes).unwrap();
                    bytes = text
                        .lines()
                        .filter(|l| !l.contains("\"output_dir\""))
                        .collect::<String>()
                        .into_bytes();
                }
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (a, b) = (read_tree(a), read_tree(b));
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(&a), names(&b));
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{} differs", name.display());
    }
}

#[test]
fn validate_config_accepts_bundled_configs() {
    for name in [
        "flower.json",
        "octagon_sweep.json",
        "lorenz.json",
        "lotka_volterra.json",
        "stationarity.json",
        "deo_double_well.json",
    ] {
        let path = configs().join(name);
        let out = reflexmc(&["validate-config", "--config", path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn bad_config_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("flower.json"))
        .unwrap()
        .replacen("1.0,", "-1.0,", 1);
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let out = reflexmc(&["validate-config", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sampler.temperatures[0]"), "{stderr}");

    let missing = dir.path().join("missing.json");
    let out = reflexmc(&["sample", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subcommand_must_match_experiment() {
    let path = configs().join("lorenz.json");
    let out = reflexmc(&["sample", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment"));
}

#[test]
fn sample_is_reproducible() {
    let config = configs().join("flower.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = reflexmc(&[
            "sample",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "1",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("r2SGLD seed=1"));
    }
    assert!(dirs[0].path().join("metrics.json").is_file());
    assert_same_outputs(dirs[0].path(), dirs[1].path());
}

#[test]
fn sweep_is_independent_of_job_count() {
    let config = configs().join("octagon_sweep.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, jobs) in dirs.iter().zip(["1", "4"]) {
        let out = reflexmc(&[
            "sweep-diameter",
            "--config",
            config.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("trend spearman="));
    }
    assert!(dirs[0].path().join("boundary_d3.csv").is_file());
    assert_same_outputs(dirs[0].path(), dirs[1].path());
}

#[test]
fn diverging_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diverge.json");
    fs::write(
        &path,
        r#"{
            "experiment": "multimodal",
            "sampler": {
                "kind": "sgld",
                "iterations": 2000,
                "temperatures": [1.0],
                "schedules": [{"kind": "constant", "eta0": 1e6}]
            },
            "domain": {"boundary": {"kind": {"flower": {"petals": 5, "offset": 3.0}}, "n_segments": 256}},
            "target": {"gmm": {}},
            "seeds": [0]
        }"#,
    )
    .unwrap();
    let out = reflexmc(&[
        "sample",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
