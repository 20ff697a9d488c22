use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apc"))
        .args(args)
        .env_remove("APC_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_schema(schema: &str, instance: &serde_json::Value) {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema);
    let validator = jsonschema::validator_for(&read_json(&schema_path)).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{schema}: {errors:?}");
}

/// CSV rows as header-keyed maps.
fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn generate_estimate_and_evaluate_a_laptop() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("laptop");
    let out = dir.path().join("est");
    let gen = apc(&["gen", "--kind", "laptop", "--out", path(&data), "--states", "2", "--rots", "2", "--seed", "3"]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert_schema("manifest.schema.json", &read_json(&data.join("manifest.json")));

    let est = apc(&["estimate", "--data", path(&data), "--out", path(&out)]);
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows = csv_rows(&csv);
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert!(row["R_err_mean"].parse::<f64>().unwrap() < 2.0, "{csv}");
        assert_eq!(row["miou"].parse::<f64>().unwrap(), 1.0);
    }
    let preds = read_json(&out.join("predictions.json"));
    assert_schema("predictions.schema.json", &preds);
    assert_eq!(preds["samples"][0]["base_quaternion"].as_array().unwrap().len(), 4);
    assert_eq!(preds["samples"][0]["joint_states"].as_array().unwrap().len(), 2);
    assert_schema("metrics.schema.json", &read_json(&out.join("metrics.json")));

    let pred = out.join("predictions.json");
    let eval = apc(&["eval", "--pred", path(&pred), "--gt", path(&pred)]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    for row in csv_rows(&String::from_utf8(eval.stdout).unwrap()) {
        for key in ["R_err_mean", "R_err_median", "T_err_mean", "T_err_median", "theta_err_mean", "d_err_mean"] {
            if !row[key].is_empty() {
                assert_eq!(row[key].parse::<f64>().unwrap(), 0.0, "{key}");
            }
        }
        assert_eq!(row["miou"], "1.0");
    }

    let scored = dir.path().join("scored.csv");
    let eval = apc(&["eval", "--pred", path(&pred), "--gt", path(&data), "--out", path(&scored)]);
    assert!(eval.status.success());
    assert_eq!(fs::read_to_string(&scored).unwrap(), csv);

    let calibrated = apc(&["eval", "--pred", path(&pred), "--gt", path(&data), "--calibrate", path(&pred)]);
    assert!(calibrated.status.success(), "{}", String::from_utf8_lossy(&calibrated.stderr));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("drawer");
    assert!(apc(&["gen", "--kind", "drawer", "--out", path(&data), "--states", "2", "--rots", "1"]).status.success());
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    assert!(apc(&["--jobs", "1", "baseline-icp", "--data", path(&data), "--out", path(&one), "--group", "tetrahedral"]).status.success());
    assert!(apc(&["--jobs", "4", "baseline-icp", "--data", path(&data), "--out", path(&many), "--group", "tetrahedral"]).status.success());
    assert_eq!(fs::read(one.join("predictions.json")).unwrap(), fs::read(many.join("predictions.json")).unwrap());
    assert_schema("predictions.schema.json", &read_json(&one.join("predictions.json")));
    // Two states, two parts, twelve rotation hypotheses each.
    let table = fs::read_to_string(one.join("hypotheses.csv")).unwrap();
    let rows = csv_rows(&table);
    assert_eq!(rows.len(), 2 * 2 * 12);
    assert_eq!(rows.iter().filter(|r| r["selected"] == "true").count(), 4);
}

#[test]
fn baseline_icp_picks_the_matching_template() {
    let dir = tempfile::tempdir().unwrap();
    let laptop = dir.path().join("laptop");
    let oven = dir.path().join("oven");
    assert!(apc(&["gen", "--kind", "laptop", "--out", path(&laptop), "--states", "2", "--rots", "1"]).status.success());
    assert!(apc(&["gen", "--kind", "oven_lid", "--out", path(&oven), "--states", "1", "--rots", "1"]).status.success());
    let out = dir.path().join("icp");
    let (wrong, right) = (oven.join("model"), laptop.join("model"));
    let run = apc(&[
        "baseline-icp", "--data", path(&laptop), "--out", path(&out), "--group", "tetrahedral",
        "--template", path(&wrong), "--template", path(&right),
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let preds = read_json(&out.join("predictions.json"));
    assert_schema("predictions.schema.json", &preds);
    for s in preds["samples"].as_array().unwrap() {
        assert_eq!(s["template"], path(&right));
    }
    for row in csv_rows(&fs::read_to_string(out.join("metrics.csv")).unwrap()) {
        assert!(row["R_err_mean"].parse::<f64>().unwrap() < 1e-6);
    }
    let missing = dir.path().join("none");
    assert_eq!(apc(&["baseline-icp", "--data", path(&laptop), "--out", path(&out), "--template", path(&missing)]).status.code(), Some(3));
}

#[test]
fn seed_environment_variable_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(apc(&["gen", "--kind", "laptop", "--out", path(&a), "--states", "1", "--rots", "1", "--seed", "1"]).status.success());
    let status = Command::new(env!("CARGO_BIN_EXE_apc"))
        .args(["gen", "--kind", "laptop", "--out", path(&b), "--states", "1", "--rots", "1", "--seed", "2"])
        .env("APC_SEED", "1")
        .output()
        .unwrap();
    assert!(status.status.success());
    let ma = read_json(&a.join("manifest.json"));
    assert_eq!(ma["settings"]["seed"], 1);
    assert_eq!(ma, read_json(&b.join("manifest.json")));
    let sa = fs::read(a.join("samples/sample_0000.apc")).unwrap();
    assert_eq!(sa, fs::read(b.join("samples/sample_0000.apc")).unwrap());
}

#[test]
fn verify_passes_on_a_healthy_build() {
    let out = apc(&["verify", "--group", "octahedral", "--tol", "1e-4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_schema("verify.schema.json", &summary);
    assert_eq!(summary["passed"], true);
}

#[test]
fn verify_failure_exits_with_four() {
    // Octahedral rotations are signed permutations and thus exact even in
    // single precision; icosahedral ones are not, so 1e-12 is out of reach.
    let out = apc(&["--precision", "float32", "verify", "--group", "icosahedral", "--tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(4));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["passed"], false);
}

#[test]
fn exit_codes() {
    assert_eq!(apc(&["gen", "--kind", "teapot", "--out", "x"]).status.code(), Some(2));
    assert_eq!(apc(&["estimate", "--bogus"]).status.code(), Some(2));
    assert_eq!(apc(&["verify", "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(apc(&["--jobs", "0", "verify"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(apc(&["estimate", "--data", path(&missing), "--out", path(&dir.path().join("o"))]).status.code(), Some(3));
    assert_eq!(apc(&["eval", "--pred", path(&missing), "--gt", path(&missing)]).status.code(), Some(3));
    assert_eq!(apc(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_lists_every_command() {
    let text = String::from_utf8(apc(&["--help"]).stdout).unwrap();
    for cmd in ["gen", "estimate", "baseline-icp", "eval", "verify", "--jobs", "--seed", "--precision"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
