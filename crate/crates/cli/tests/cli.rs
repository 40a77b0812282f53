use std::path::Path;
use std::process::{Command, Output};

fn memcurse(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memcurse"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("MEMCURSE_SEED")
        .output()
        .expect("binary runs")
}

fn records(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn analytic_grid_covers_every_rho_and_hits_constant_input_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = memcurse(dir.path(), &["analytic", "--lambda", "0,0.5", "--rho", "0,1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&dir.path().join("analytic.csv"));
    assert_eq!(rows.len(), 4);
    let (l, r) = (column(&header, "lambda"), column(&header, "rho"));
    let row = rows.iter().find(|row| row[l] == "0.5" && row[r] == "1.0").unwrap();
    let hv: f64 = row[column(&header, "hidden_variance")].parse().unwrap();
    let sv: f64 = row[column(&header, "sensitivity_variance")].parse().unwrap();
    assert!((hv - 4.0).abs() < 1e-12 && (sv - 16.0).abs() < 1e-12);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn default_analytic_grid_has_three_hundred_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert!(memcurse(dir.path(), &["analytic"]).status.success());
    assert_eq!(records(&dir.path().join("analytic.csv")).1.len(), 300);
}

#[test]
fn usage_errors_exit_with_code_two_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["analytic", "--lambda", ""],
        &["analytic", "--lambda", "1.0"],
        &["validate", "--samples", "100", "--tol", "0.01"],
        &["train", "--steps", "0"],
        &["sigprop", "--cells", "gru"],
    ];
    for args in cases {
        let out = memcurse(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    assert_eq!(memcurse(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn validate_passes_for_short_memory() {
    let dir = tempfile::tempdir().unwrap();
    let out = memcurse(dir.path(), &["validate", "--lambda", "0.5", "--rho", "0"]);
    assert!(out.status.success());
    let (header, rows) = records(&dir.path().join("validate.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[column(&header, "pass")] == "true"));
}

#[test]
fn scalar_hessian_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = memcurse(dir.path(), &["hessian", "--lambda", "0.9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = records(&dir.path().join("hessian_matrix.csv"));
    let label = column(&header, "row_label");
    let col = column(&header, "col_label");
    let entry = rows
        .iter()
        .find(|r| r[label] == "lambda.re[0]" && r[col] == "lambda.re[0]")
        .unwrap();
    let v: f64 = entry[column(&header, "value")].parse().unwrap();
    assert!((v / 263.887 - 1.0).abs() < 0.03, "{v}");
}

#[test]
fn sigprop_reports_every_layer_for_every_nu() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sigprop", "--cells", "lru", "--nu", "0.5,0.9", "--count", "2", "--length", "32", "--dim", "4", "--hidden",
        "4", "--depth", "3", "--batch", "2",
    ];
    assert!(memcurse(dir.path(), &args).status.success());
    let (header, rows) = records(&dir.path().join("sigprop.csv"));
    let (nu, layer, group) = (
        column(&header, "nu"),
        column(&header, "layer"),
        column(&header, "group"),
    );
    for n in ["0.5", "0.9"] {
        for l in 1..=3 {
            assert!(rows
                .iter()
                .any(|r| r[nu] == n && r[layer] == l.to_string() && r[group] == "h"));
        }
        assert!(rows
            .iter()
            .any(|r| r[nu] == n && r[layer] == "0" && r[group] == "omega_theta"));
    }
}

#[test]
fn config_file_fills_flags_not_given_on_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"lambda": "0.1,0.2,0.3", "rho": "0,0.5"}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = memcurse(
        &out_dir,
        &["--config", config.to_str().unwrap(), "analytic", "--rho", "0"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(records(&out_dir.join("analytic.csv")).1.len(), 3);

    std::fs::write(&config, r#"{"lamda": "0.1"}"#).unwrap();
    let out = memcurse(&out_dir, &["--config", config.to_str().unwrap(), "analytic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_comes_from_environment_and_lands_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_memcurse"))
        .arg("--out")
        .arg(dir.path())
        .args(["validate", "--lambda", "0.5", "--rho", "0"])
        .env("MEMCURSE_SEED", "17")
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["root_seed"], 17);
    assert_eq!(manifest["command"]["name"], "validate");
}

#[test]
fn replay_reproduces_outputs_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let args = [
        "angle",
        "--steps",
        "200",
        "--n-seeds",
        "2",
        "--jitter",
        "0.05",
        "--record-every",
        "10",
    ];
    assert!(memcurse(&first, &args).status.success());
    let manifest = first.join("manifest.json");
    let replay = dir.path().join("b");
    let out = memcurse(&replay, &["--jobs", "8", "--manifest", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["angle_trajectory.csv", "angle_summary.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(replay.join(name)).unwrap()
        );
    }

    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&manifest, serde_json::to_vec(&value).unwrap()).unwrap();
    let out = memcurse(&dir.path().join("c"), &["--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unwritable_output_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let out = memcurse(&blocker.join("sub"), &["analytic", "--lambda", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
}
