use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn telemetry() -> PathBuf {
    fixtures().join("telemetry")
}

fn scenario(name: &str) -> PathBuf {
    fixtures().join("scenarios").join(name)
}

fn qtrap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtrap"))
        .args(args)
        .env_remove("QTRAP_WEIGHTS")
        .output()
        .expect("spawn qtrap")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const GOOD: &str = r#"{"model":"m","hardware":"h","precision_bits":16,"batch_size":1,"task":"t","total_tokens":1000,"duration_s":10.0,"sample_count":10,"accuracy":0.5,"peak_vram_gb":10.0,"power":{"kind":"joules","joules_per_query":100.0}}"#;

#[test]
fn validate_fixtures_ok() {
    let out = qtrap(&["validate", s(&telemetry())]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text
        .lines()
        .all(|l| l.starts_with("ok ") && l.ends_with(": 3 records")));
}

#[test]
fn validate_rejects_negative_watts() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("a.jsonl");
    let bad = dir.path().join("b.jsonl");
    fs::write(&good, format!("{GOOD}\n")).unwrap();
    fs::write(
        &bad,
        format!(
            "{GOOD}\n{}\n",
            GOOD.replace(r#""precision_bits":16"#, r#""precision_bits":4"#)
                .replace(
                    r#"{"kind":"joules","joules_per_query":100.0}"#,
                    r#"{"kind":"tdp","tdp_watts":-5.0}"#
                )
        ),
    )
    .unwrap();
    let out = qtrap(&["validate", s(dir.path())]);
    assert_eq!(code(&out), 1);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("ok "), "{text}");
    assert!(text.contains("error ") && text.contains("line 2"), "{text}");
}

#[test]
fn validate_rejects_unknown_field_and_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.jsonl");
    fs::write(&f, GOOD.replace(r#""task":"t""#, r#""task":"t","extra":1"#)).unwrap();
    assert_eq!(code(&qtrap(&["validate", s(&f)])), 1);
    fs::write(&f, format!("{GOOD}\n\n{GOOD}\n")).unwrap();
    let out = qtrap(&["validate", s(&f)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 3"));
}

#[test]
fn missing_path_is_io_error() {
    let out = qtrap(&["score", "/nonexistent/telemetry.jsonl"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(code(&qtrap(&["score"])), 2);
    assert_eq!(code(&qtrap(&["frobnicate"])), 2);
    let out = qtrap(&["score", s(&telemetry()), "--weights", "1,2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn score_mistral_divergent_everywhere() {
    let out = qtrap(&["score", s(&telemetry()), "--no-meta"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let ladders = v["ladders"].as_array().unwrap();
    assert_eq!(ladders.len(), 6);
    let mistral: Vec<&Value> = ladders
        .iter()
        .filter(|l| l["key"]["model_name"] == "mistral-7b-instruct")
        .collect();
    assert_eq!(mistral.len(), 3);
    for l in mistral {
        assert_eq!(l["gradient_sign"], "divergent");
    }
    assert!(v.get("meta").is_none());
}

#[test]
fn trust_only_weights_make_si_equal_trust() {
    let out = qtrap(&["score", s(&telemetry()), "--weights", "1,0,0", "--no-meta"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    for l in v["ladders"].as_array().unwrap() {
        for r in l["rungs"].as_array().unwrap() {
            let t = r["pillars"]["vector"]["trust"].as_f64().unwrap();
            let si = r["si"].as_f64().unwrap();
            assert!((si - t).abs() < 1e-12, "{si} vs {t}");
        }
    }
}

#[test]
fn geometric_policy_flags_zero_pillar() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("z.jsonl");
    let low = GOOD
        .replace(r#""precision_bits":16"#, r#""precision_bits":4"#)
        .replace(r#""accuracy":0.5"#, r#""accuracy":0.0"#);
    fs::write(&f, format!("{GOOD}\n{low}\n")).unwrap();
    let out = qtrap(&["score", s(&f), "--policy", "geometric", "--no-meta"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let rung = v["ladders"][0]["rungs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["bits"] == 4)
        .unwrap()
        .clone();
    assert_eq!(rung["si"].as_f64().unwrap(), 0.0);
    assert_eq!(rung["bottleneck"], true);
}

#[test]
fn strict_refuses_unanchored() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("u.jsonl");
    fs::write(
        &f,
        GOOD.replace(r#""precision_bits":16"#, r#""precision_bits":8"#),
    )
    .unwrap();
    let lax = qtrap(&["score", s(&f), "--no-meta"]);
    assert_eq!(code(&lax), 0);
    assert!(!json(&lax)["unanchored"].as_array().unwrap().is_empty());
    assert_eq!(code(&qtrap(&["score", s(&f), "--strict"])), 2);
}

#[test]
fn weights_env_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.json");
    fs::write(&w, r#"{"trust":1.0,"economic":0.0,"energy":0.0}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qtrap"))
        .args(["score", s(&telemetry()), "--no-meta"])
        .env("QTRAP_WEIGHTS", &w)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["provenance"]["weights"]["trust"].as_f64(), Some(1.0));
    let r = &v["ladders"][0]["rungs"][0];
    assert_eq!(r["si"], r["pillars"]["vector"]["trust"]);

    let out = Command::new(env!("CARGO_BIN_EXE_qtrap"))
        .args(["score", s(&telemetry())])
        .env("QTRAP_WEIGHTS", dir.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn cor_matches_reported_ratios() {
    let out = qtrap(&["cor", s(&telemetry()), "--no-meta"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let find = |hw: &str, bits: u64| {
        v["cor"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| {
                r["key"]["model_name"] == "qwen3-0.6b"
                    && r["key"]["hardware"] == hw
                    && r["bits"] == bits
            })
            .unwrap()["cor"]
            .as_f64()
            .unwrap()
    };
    assert!((find("A100", 8) - 3.2138).abs() < 5e-4);
    assert!((find("A100", 4) - 1.0099).abs() < 5e-4);
}

#[test]
fn bstar_from_params_file() {
    let out = qtrap(&[
        "bstar",
        s(&scenario("falcon_bstar64_params.json")),
        "--no-meta",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let rows = v["critical_batches"].as_array().unwrap();
    let eight = rows.iter().find(|r| r["bits"] == 8).unwrap();
    assert!((eight["b_star"].as_f64().unwrap() - 64.0).abs() < 1e-9);
    assert_eq!(eight["smallest_batch_at_or_above"], 64);
}

#[test]
fn simulate_verify_passes_and_fit_recovers_bstar() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("sim.jsonl");
    let out = qtrap(&[
        "simulate",
        s(&scenario("falcon_bstar64.json")),
        "--verify",
        "--out",
        s(&records),
        "--no-meta",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let checks = v["simulation"]["theorems"]["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    assert!(checks.iter().all(|c| c["status"] != "fail"));
    assert_eq!(checks.iter().filter(|c| c["status"] == "pass").count(), 25);

    let fit = qtrap(&["fit", s(&records), "--hops", "128", "--no-meta"]);
    assert_eq!(code(&fit), 0, "{}", String::from_utf8_lossy(&fit.stderr));
    let params = dir.path().join("fit.json");
    fs::write(&params, &fit.stdout).unwrap();
    let b = json(&qtrap(&["bstar", s(&params), "--no-meta"]));
    let eight = b["critical_batches"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["bits"] == 8)
        .unwrap()["b_star"]
        .as_f64()
        .unwrap();
    assert!((eight - 64.0).abs() < 1e-6, "{eight}");
}

#[test]
fn simulate_is_deterministic() {
    let a = qtrap(&["simulate", s(&scenario("h100_calibrated.json"))]);
    let b = qtrap(&["simulate", s(&scenario("h100_calibrated.json"))]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(qtrap::schema::parse_jsonl(&text).is_ok());
}

#[test]
fn fit_single_batch_is_refused() {
    let out = qtrap(&["fit", s(&telemetry()), "--no-meta"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_csv_series_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = qtrap(&[
        "report",
        s(&telemetry()),
        "--format",
        "csv-series",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for (file, header) in qtrap::report::SERIES {
        let text = fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.lines().next().unwrap(), header);
        assert!(text.lines().count() > 1, "{file} has no rows");
    }
}

#[test]
fn report_csv_series_needs_out_dir() {
    let out = qtrap(&["report", s(&telemetry()), "--format", "csv-series"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn report_markdown_has_deficit_table() {
    let out = qtrap(&["report", s(&telemetry()), "--format", "markdown"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("## SI deficit"));
    assert!(text.contains("| mistral-7b-instruct/A100/gsm8k/B=1 | 4 |"));
    assert!(text.contains("**divergent**"));
}

#[test]
fn report_on_empty_directory_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = qtrap(&["report", s(dir.path()), "--no-meta"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let warnings = v["warnings"].as_array().unwrap();
    assert!(warnings
        .iter()
        .any(|w| w.as_str().unwrap().contains("no telemetry files")));
}
