use std::path::PathBuf;
use std::process::{Command, Output};

use regswitch::american_put::{two_regime_roots, TwoRegimeParams};
use regswitch::model::ModelSpec;
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

fn regswitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regswitch")).args(args).output().expect("binary runs")
}

fn two_regime() -> String {
    data("data/two_regime.json").display().to_string()
}

fn json_ok(args: &[&str]) -> Value {
    let out = regswitch(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn check_schema(v: &Value, command: &str) {
    let obj = v.as_object().expect("object");
    let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    assert_eq!(keys, ["command", "inputs", "outputs", "residuals", "timings_ms"]);
    assert_eq!(v["command"], command);
    assert!(v["outputs"].is_object() && v["residuals"].is_object() && v["timings_ms"].is_object());
}

#[test]
fn price_matches_golden() {
    let m = two_regime();
    let out = regswitch(&["price", "--model", &m, "--strike", "1.0", "--json", "--no-timings"]);
    assert!(out.status.success());
    let golden = data("golden/price_two_regime.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &out.stdout).unwrap();
    }
    let want = std::fs::read(&golden).expect("golden file");
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, String::from_utf8(want).unwrap());
}

#[test]
fn price_table_lists_levels() {
    let out = regswitch(&["price", "--model", &two_regime(), "--strike", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("exercise:") && text.contains("-0.853702") && text.contains("-0.673577"), "{text}");
}

#[test]
fn malformed_generator_is_a_validation_error() {
    let dir = std::env::temp_dir().join(format!("regswitch-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"G": [[-0.3, 0.2], [0.5, -0.5]], "regimes": [{"r": 0.03, "mu": 0, "sigma": 0.3}, {"r": 0.03, "mu": 0, "sigma": 0.3}]}"#,
    )
    .unwrap();
    let p = path.display().to_string();
    let out = regswitch(&["price", "--model", &p, "--strike", "1", "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).expect("error JSON on stderr");
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("row 0"), "{err}");
    assert!(out.stdout.is_empty());

    let out = regswitch(&["price", "--model", &p, "--strike", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 0"));
}

#[test]
fn bad_arguments_exit_with_validation_code() {
    assert_eq!(regswitch(&["price", "--model", &two_regime()]).status.code(), Some(2));
    assert_eq!(regswitch(&["passage", "--model", &two_regime(), "--levels", "-0.1"]).status.code(), Some(2));
    assert_eq!(regswitch(&["price", "--model", "/nonexistent.json", "--strike", "1"]).status.code(), Some(2));
}

#[test]
fn physical_measure_put_is_rejected() {
    let out = regswitch(&["price", "--model", &two_regime(), "--strike", "1", "--json"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(two_regime()).unwrap().replace("-0.015", "0.1");
    let path = std::env::temp_dir().join(format!("regswitch-phys-{}.json", std::process::id()));
    std::fs::write(&path, text).unwrap();
    let p = path.display().to_string();
    let out = regswitch(&["price", "--model", &p, "--strike", "1", "--json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = regswitch(&["price", "--model", &p, "--strike", "1", "--json", "--project-drift"]);
    assert!(out.status.success());
}

#[test]
fn factorize_roots_match_closed_form() {
    let v = json_ok(&["factorize", "--model", &two_regime(), "--kill", "0.05,0.05", "--json", "--no-timings"]);
    check_schema(&v, "factorize");
    let roots: Vec<f64> = v["outputs"]["roots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            assert_eq!(r["im"].as_f64().unwrap(), 0.0);
            r["re"].as_f64().unwrap()
        })
        .collect();
    let m = ModelSpec::from_json(&std::fs::read_to_string(two_regime()).unwrap()).unwrap();
    let mut p = TwoRegimeParams::from_model(&m).unwrap();
    p.r1 = 0.05;
    p.r2 = 0.05;
    let want = two_regime_roots(&p).unwrap();
    assert_eq!(roots.len(), 5);
    for (a, b) in roots.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{roots:?} vs {want:?}");
    }
    assert_eq!(v["outputs"]["q_minus"].as_array().unwrap().len(), 3);
    assert!(v["residuals"]["minus"].as_f64().unwrap() < 1e-9);
}

#[test]
fn factorize_can_dump_the_generator() {
    let v = json_ok(&["factorize", "--model", &two_regime(), "--dump-generator", "--json"]);
    assert_eq!(v["outputs"]["generator"].as_array().unwrap().len(), 3);
    assert!(v["timings_ms"]["factorize"].is_number());
}

#[test]
fn every_subcommand_emits_the_result_schema() {
    let m = two_regime();
    let dir = std::env::temp_dir();
    let out_model = dir.join(format!("regswitch-emm-{}.json", std::process::id()));
    let om = out_model.display().to_string();
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("emm", vec!["emm", "--model", &m, "--out", &om]),
        ("factorize", vec!["factorize", "--model", &m]),
        ("exit", vec!["exit", "--model", &m, "--lower", "-0.5", "--upper", "0.5"]),
        ("passage", vec!["passage", "--model", &m, "--levels", "-0.2,-0.3", "--b", "1", "--h0", "1,0.5"]),
        ("price", vec!["price", "--model", &m, "--strike", "1"]),
        ("ruin", vec!["ruin", "--model", &m, "--penalty", "exp:0.5"]),
        ("simulate", vec!["simulate", "--model", &m, "--levels", "-0.2,-0.3", "--paths", "2000"]),
    ];
    for (name, mut args) in cases {
        args.push("--json");
        let v = json_ok(&args);
        check_schema(&v, name);
        let text = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v, back);
    }
    let q = ModelSpec::from_json(&std::fs::read_to_string(&out_model).unwrap()).unwrap();
    assert!(q.is_risk_neutral());
}

#[test]
fn deterministic_commands_are_byte_identical() {
    let m = two_regime();
    for args in [
        vec!["price", "--model", &m, "--strike", "1", "--json", "--no-timings"],
        vec!["passage", "--model", &m, "--levels", "-0.2,-0.3", "--json", "--no-timings"],
        vec![
            "simulate",
            "--model",
            &m,
            "--levels",
            "-0.2,-0.3",
            "--paths",
            "3000",
            "--seed",
            "5",
            "--json",
            "--no-timings",
        ],
    ] {
        let a = regswitch(&args);
        let b = regswitch(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn exit_probabilities_sum_to_one() {
    let v = json_ok(&["exit", "--model", &two_regime(), "--lower", "-0.4", "--upper", "0.3", "--x", "-0.4,0,0.3", "--json"]);
    assert!(v["residuals"]["total_probability"].as_f64().unwrap() < 1e-10);
    let rows = v["outputs"]["exit"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["lower"].as_f64().unwrap(), 1.0);
}

#[test]
fn simulate_compares_with_analytic_value() {
    let v = json_ok(&[
        "simulate",
        "--model",
        &two_regime(),
        "--target",
        "ruin",
        "--x0",
        "0.3",
        "--paths",
        "20000",
        "--compare",
        "--json",
    ]);
    let z = v["residuals"]["z_score"].as_f64().unwrap();
    assert!(z < 4.0, "{v}");
    assert!(v["outputs"]["censored_mass"].as_f64().unwrap() < 1e-4);
}

#[test]
fn csv_output_has_headers() {
    let out = regswitch(&["ruin", "--model", &two_regime(), "--format", "csv", "--x", "0,1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("x,regime,value"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("0,") || l.starts_with("1,")).count(), 4);
}
