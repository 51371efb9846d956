use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn mixdr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixdr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = mixdr(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(text.trim()).unwrap_or(Value::Null)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn generate_is_deterministic_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "scenario5", "--n", "200", "--seed", "7", "--out", "a.csv"]);
    ok(d, &["generate", "--dataset", "scenario5", "--n", "200", "--seed", "7", "--out", "b.csv"]);
    ok(d, &["generate", "--dataset", "scenario5", "--n", "200", "--seed", "8", "--out", "c.csv"]);
    let a = std::fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.csv")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c.csv")).unwrap());
    let prov = read_json(&d.join("a.csv.provenance.json"));
    assert_eq!(prov["generator"], "scenario5");
    assert_eq!(prov["seed"], 7);
}

#[test]
fn eee_on_waveform_gives_two_directions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "waveform", "--n", "300", "--seed", "1", "--out", "w.csv"]);
    ok(d, &["fit", "--data", "w.csv", "--family", "edda", "--models", "EEE", "--out", "m.json"]);
    let s = ok(
        d,
        &["project", "--model", "m.json", "--data", "w.csv", "--lambda", "1", "--out", "b.json", "--proj", "p.csv"],
    );
    assert_eq!(s["d"], 2);
    let basis = read_json(&d.join("b.json"));
    assert_eq!(basis["d"], 2);
    assert_eq!(basis["beta"].as_array().unwrap().len(), 21);
    let proj = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(proj.starts_with("Dir1,Dir2,class\n"));
    assert_eq!(proj.lines().count(), 301);
    for kind in ["scatter", "contours", "boundary"] {
        let out = format!("{kind}.svg");
        ok(d, &["plot", "--kind", kind, "--proj", "p.csv", "--model", "m.json", "--basis", "b.json", "--grid", "64", "--out", &out]);
        let svg = std::fs::read_to_string(d.join(&out)).unwrap();
        assert!(svg.contains("<svg") && svg.contains("Dir1 ("), "{kind}");
    }
}

#[test]
fn meanvar_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let start = Instant::now();
    ok(d, &["generate", "--dataset", "meanvar", "--n", "500", "--seed", "3", "--out", "mv.csv"]);
    let fit = ok(d, &["fit", "--data", "mv.csv", "--gmax", "2", "--seed", "3", "--out", "m.json", "--selection", "sel.json"]);
    assert_eq!(fit["classes"], serde_json::json!(["A", "B"]));
    assert!(read_json(&d.join("sel.json"))["rows"].as_array().unwrap().len() > 1);
    ok(d, &["project", "--model", "m.json", "--data", "mv.csv", "--lambda", "0.5", "--out", "b.json", "--proj", "p.csv"]);
    let tuned = ok(d, &["tune-lambda", "--model", "m.json", "--data", "mv.csv", "--seed", "3", "--out", "t.json"]);
    let trace = read_json(&d.join("t.json"));
    assert_eq!(trace["schema"], "mixdr.lr/v1");
    assert_eq!(trace["grid"].as_array().unwrap().len(), 21);
    assert_eq!(trace["lr_values"].as_array().unwrap().len(), 21);
    let best = tuned["argmax_lambda"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&best));
    ok(d, &["plot", "--kind", "scatter", "--proj", "p.csv", "--basis", "b.json", "--out", "s.svg"]);
    assert!(std::fs::read_to_string(d.join("s.svg")).unwrap().contains("<svg"));
    // one component per class leaves a single direction, too few for a plane
    if read_json(&d.join("b.json"))["d"] == 1 {
        let out = mixdr(d, &["plot", "--kind", "boundary", "--proj", "p.csv", "--model", "m.json", "--out", "x.svg"]);
        assert_eq!(out.status.code(), Some(3));
    }
    ok(d, &["plot", "--kind", "eigentable", "--basis", "b.json", "--data", "mv.csv", "--out", "e.txt"]);
    assert!(std::fs::read_to_string(d.join("e.txt")).unwrap().contains("x1"));
    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = mixdr(d, &["fit", "--gmax", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mixdr(d, &["fit", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"]["category"], "usage");

    let out = mixdr(d, &["fit", "--data", "missing.csv", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"]["category"], "io");

    std::fs::write(d.join("bad.csv"), "a,b,class\n1,oops,A\n2,3,B\n").unwrap();
    let out = mixdr(d, &["fit", "--data", "bad.csv", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"]["category"], "data.parse");

    let mut csv = String::from("a,b,class\n");
    for i in 0..40 {
        let a = (i as f64 * 0.37).sin();
        csv.push_str(&format!("{a},{},{}\n", 2.0 * a, if i % 2 == 0 { "A" } else { "B" }));
    }
    std::fs::write(d.join("collinear.csv"), csv).unwrap();
    ok(d, &["fit", "--data", "collinear.csv", "--family", "edda", "--models", "EEE", "--out", "m.json"]);
    let out = mixdr(d, &["project", "--model", "m.json", "--data", "collinear.csv", "--out", "b.json"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let category = stderr_error(&out)["error"]["category"].as_str().unwrap().to_string();
    assert!(category.starts_with("linalg"), "{category}");
    assert!(!d.join("b.json").exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), r#"{"generate": {"dataset": "meanvar", "n": 60, "noise_dims": 1}}"#).unwrap();
    let s = ok(d, &["--config", "cfg.json", "generate", "--out", "a.csv"]);
    assert_eq!(s["n"], 60);
    assert_eq!(s["p"], 3);
    let s = ok(d, &["--config", "cfg.json", "generate", "--n", "80", "--out", "b.csv"]);
    assert_eq!(s["n"], 80);
    let manifest = read_json(&d.join("b.csv.manifest.json"));
    assert_eq!(manifest["config"]["n"], 80);
    assert_eq!(manifest["config"]["noise_dims"], 1);
    assert_eq!(manifest["config"]["seed"], 0);

    std::fs::write(d.join("typo.json"), r#"{"generate": {"nn": 60}}"#).unwrap();
    let out = mixdr(d, &["--config", "typo.json", "generate", "--dataset", "waveform", "--out", "c.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"]["category"], "config");
}

#[test]
fn every_output_gets_a_manifest_and_no_temp_files_remain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "meanvar", "--n", "100", "--seed", "2", "--out", "mv.csv"]);
    ok(d, &["fit", "--data", "mv.csv", "--family", "edda", "--models", "VVV", "--seed", "2", "--out", "m.json"]);
    let m = read_json(&d.join("m.json.manifest.json"));
    assert_eq!(m["schema"], "mixdr.manifest/v1");
    assert_eq!(m["command"], "fit");
    assert_eq!(m["seed"], 2);
    assert_eq!(m["outputs"], serde_json::json!(["m.json"]));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let input = &m["inputs"][0];
    assert_eq!(input["path"], "mv.csv");
    let bytes = std::fs::read(d.join("mv.csv")).unwrap();
    let digest: String = sha2_hex(&bytes);
    assert_eq!(input["sha256"], digest);

    let mut names: Vec<String> = std::fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "m.json",
            "m.json.manifest.json",
            "mv.csv",
            "mv.csv.manifest.json",
            "mv.csv.provenance.json",
            "mv.csv.provenance.json.manifest.json"
        ]
    );
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_and_remote_agree_with_local_projection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--dataset", "waveform", "--n", "300", "--seed", "7", "--out", "w.csv"]);
    ok(d, &["fit", "--data", "w.csv", "--family", "edda", "--models", "EEE", "--seed", "7", "--out", "m.json"]);
    let local = ok(d, &["project", "--model", "m.json", "--data", "w.csv", "--lambda", "0.3", "--out", "b.json"]);

    let mut child = Command::new(env!("CARGO_BIN_EXE_mixdr"))
        .current_dir(d)
        .args(["serve", "--model", "m.json", "--data", "w.csv", "--seed", "7", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let _guard = Server(child);
    let url = lines.next().unwrap().unwrap().trim_start_matches("listening on ").to_string();
    let id = lines.next().unwrap().unwrap().trim_start_matches("session ").to_string();

    assert_eq!(ok(d, &["remote", "--url", &url, "health"])["status"], "ok");
    let remote = ok(d, &["remote", "--url", &url, "projection", "--session", &id, "--lambda", "0.3"]);
    assert_eq!(remote["eigenvalues"], local["eigenvalues"]);
    assert_eq!(remote["points"].as_array().unwrap().len(), 300);

    ok(d, &["remote", "--url", &url, "--out", "lr.json", "lr", "--session", &id, "--steps", "3"]);
    assert_eq!(read_json(&d.join("lr.json"))["grid"], serde_json::json!([0.0, 0.5, 1.0]));
    assert!(d.join("lr.json.manifest.json").exists());

    let created = ok(
        d,
        &["remote", "--url", &url, "create", "--data", "w.csv", "--family", "edda", "--models", "EEI", "--async", "--wait", "60"],
    );
    assert_eq!(created["status"], "ready");
    let new_id = created["session_id"].as_str().unwrap();
    ok(d, &["remote", "--url", &url, "delete", "--session", new_id]);
    let out = mixdr(d, &["remote", "--url", &url, "status", "--session", new_id]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"]["category"], "session.not_found");

    let out = mixdr(d, &["remote", "--url", &url, "projection", "--session", &id, "--lambda", "2"]);
    assert_eq!(out.status.code(), Some(3));
}
