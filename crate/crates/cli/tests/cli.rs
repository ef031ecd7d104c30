mod common;

use std::fs;
use std::path::{Path, PathBuf};

use protofuse::agents::{Script, TemplateId};
use protofuse::data::SyntheticSpec;
use protofuse::pipeline::LoopConfig;
use serde_json::Value;

use common::{loop_script, path_arg, protofuse, rule, vocabulary, vote, write_json};

struct Workspace {
    dir: tempfile::TempDir,
    spec: SyntheticSpec,
}

impl Workspace {
    fn new() -> Self {
        let spec = SyntheticSpec {
            num_samples: 120,
            motif_amplitude: 0.5,
            hint_corruption_rate: 0.3,
            ..Default::default()
        };
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
            spec,
        };
        write_json(&ws.path("spec.json"), &ws.spec);
        let mut config = LoopConfig {
            max_iterations: 2,
            early_stop: None,
            ..Default::default()
        };
        config.encoder.epochs = 5;
        write_json(&ws.path("config.json"), &config);
        write_json(&ws.path("script.json"), &loop_script(&vocabulary(&ws.spec)));
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        path_arg(&self.path(name)).to_string()
    }

    fn client(&self, script: &str) -> String {
        format!("scripted:{}", self.arg(script))
    }

    fn run(&self, args: &[&str]) -> (i32, String, String) {
        let out = protofuse(args);
        (
            out.status.code().expect("exit code"),
            String::from_utf8_lossy(&out.stdout).into_owned(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    }

    fn ok(&self, args: &[&str]) -> String {
        let (code, stdout, stderr) = self.run(args);
        assert_eq!(code, 0, "{args:?} failed:\n{stderr}");
        stdout
    }

    fn synth(&self) {
        self.ok(&["synth", "--spec", &self.arg("spec.json"), "--out", &self.arg("data")]);
    }

    fn looped(&self, run: &str) {
        self.synth();
        let client = self.client("script.json");
        self.ok(&[
            "loop", "--data", &self.arg("data"), "--config", &self.arg("config.json"), "--client", &client, "--out",
            &self.arg(run),
        ]);
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_succeeds_and_bad_usage_is_a_validation_error() {
    let ws = Workspace::new();
    let (code, stdout, _) = ws.run(&["--help"]);
    assert_eq!(code, 0);
    for command in ["synth", "train", "loop", "test", "explain", "eval", "gradcheck"] {
        assert!(stdout.contains(command), "help lacks {command}");
    }
    assert_eq!(ws.run(&["frobnicate"]).0, 1);
    assert_eq!(ws.run(&["synth", "--spec"]).0, 1);
}

#[test]
fn missing_inputs_exit_with_one() {
    let ws = Workspace::new();
    let (code, _, stderr) = ws.run(&["synth", "--spec", &ws.arg("absent.json"), "--out", &ws.arg("d")]);
    assert_eq!(code, 1);
    assert!(stderr.starts_with("error:"), "{stderr}");
    let (code, _, _) = ws.run(&["test", "--run", &ws.arg("no-run"), "--data", &ws.arg("d")]);
    assert_eq!(code, 1);
}

#[test]
fn train_then_explain() {
    let ws = Workspace::new();
    ws.synth();
    let stdout = ws.ok(&["train", "--data", &ws.arg("data"), "--config", &ws.arg("config.json"), "--out", &ws.arg("enc")]);
    let metrics: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(metrics["macro_f1"].as_f64().is_some());
    for file in ["model.json", "config.json", "history.json", "validation.json", "run.json"] {
        assert!(ws.path("enc").join(file).exists(), "{file}");
    }

    let id = fs::read_to_string(ws.path("data/samples.jsonl"))
        .ok()
        .and_then(|t| t.lines().next().map(|l| serde_json::from_str::<Value>(l).unwrap()["id"].as_str().unwrap().to_string()))
        .expect("dataset has samples");
    let text = ws.ok(&["explain", "--run", &ws.arg("enc"), "--sample", &id, "--omega", "2", "--modality", "time"]);
    assert!(text.starts_with(&format!("sample {id}: predicted")), "{text}");
    let doc = ws.ok(&["explain", "--run", &ws.arg("enc"), "--sample", &id, "--omega", "2", "--json"]);
    let explanation: Value = serde_json::from_str(&doc).unwrap();
    assert_eq!(explanation["items"].as_array().unwrap().len(), 2);
    assert_eq!(explanation["modality"], "text");

    let (code, _, stderr) = ws.run(&["explain", "--run", &ws.arg("enc"), "--sample", "nope"]);
    assert_eq!(code, 1, "{stderr}");
}

#[test]
fn loop_writes_reports_and_test_honours_alpha() {
    let ws = Workspace::new();
    ws.looped("run");
    let run = ws.path("run");
    for file in [
        "config.json",
        "run.json",
        "checkpoint.json",
        "transcript.jsonl",
        "usage.json",
        "report.json",
        "report.csv",
        "iterations/iteration-000.json",
        "iterations/iteration-001.json",
    ] {
        assert!(run.join(file).exists(), "{file}");
    }
    let table = fs::read_to_string(run.join("report.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("iteration,"));
    assert_eq!(json(&run.join("report.json"))["series"].as_array().unwrap().len(), 2);

    ws.ok(&["test", "--run", &ws.arg("run"), "--data", &ws.arg("data"), "--alpha", "1.0"]);
    let metrics = json(&run.join("test/metrics.json"));
    assert_eq!(metrics["alpha"], 1.0);
    assert_eq!(metrics["fused"]["confusion"], metrics["encoder"]["confusion"]);
    let predictions = fs::read_to_string(run.join("test/predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), metrics["fused"]["samples"].as_u64().unwrap() as usize);

    let scored = ws.ok(&["eval", "--pred", path_arg(&run.join("test/predictions.jsonl")), "--truth", &ws.arg("data")]);
    let scored: Value = serde_json::from_str(&scored).unwrap();
    assert_eq!(scored["macro_f1"], metrics["fused"]["macro_f1"]);
    assert_eq!(scored["auc"], metrics["fused"]["auc"]);
}

#[test]
fn eval_scores_line_delimited_truth() {
    let ws = Workspace::new();
    fs::write(
        ws.path("pred.jsonl"),
        "{\"id\":\"a\",\"predicted\":0}\n{\"id\":\"b\",\"predicted\":1}\n{\"id\":\"c\",\"predicted\":1}\n",
    )
    .unwrap();
    fs::write(ws.path("truth.jsonl"), "{\"id\":\"a\",\"label\":0}\n{\"id\":\"b\",\"label\":1}\n{\"id\":\"c\",\"label\":0}\n").unwrap();
    let report: Value = serde_json::from_str(&ws.ok(&["eval", "--pred", &ws.arg("pred.jsonl"), "--truth", &ws.arg("truth.jsonl")])).unwrap();
    // class 0: tp 1, fn 1 -> 2/3; class 1: tp 1, fp 1 -> 2/3
    assert!((report["macro_f1"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!(report["auc"].is_null());

    fs::write(ws.path("stray.jsonl"), "{\"id\":\"z\",\"predicted\":0}\n").unwrap();
    assert_eq!(ws.run(&["eval", "--pred", &ws.arg("stray.jsonl"), "--truth", &ws.arg("truth.jsonl")]).0, 1);
}

#[test]
fn llm_failures_exit_with_two() {
    let ws = Workspace::new();
    ws.synth();
    // no refinement or reflection rules: the first unanswered call fails
    let vocab = vocabulary(&ws.spec);
    let partial = Script {
        model: "scripted".into(),
        rules: vec![
            rule(TemplateId::Prediction, vote("TEXT", &vocab, false, 0)),
            rule(TemplateId::PredictionTextOnly, vote("TEXT", &vocab, false, 0)),
        ],
    };
    write_json(&ws.path("partial.json"), &partial);
    let client = ws.client("partial.json");
    let (code, _, stderr) = ws.run(&[
        "loop", "--data", &ws.arg("data"), "--config", &ws.arg("config.json"), "--client", &client, "--out", &ws.arg("run"),
    ]);
    assert_eq!(code, 2, "{stderr}");
    assert!(ws.path("run/transcript.jsonl").exists());
}

#[test]
fn live_client_without_endpoint_is_a_configuration_error() {
    let ws = Workspace::new();
    ws.synth();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_protofuse"))
        .args(["loop", "--data", &ws.arg("data"), "--config", &ws.arg("config.json"), "--client", "live", "--out", &ws.arg("run")])
        .env_remove("PROTOFUSE_LLM_ENDPOINT")
        .env_remove("PROTOFUSE_LLM_MODEL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PROTOFUSE_LLM_ENDPOINT"));
}

#[test]
fn gradcheck_reads_settings() {
    let ws = Workspace::new();
    fs::write(ws.path("gc.json"), r#"{"cases": 2, "regression_cases": 1}"#).unwrap();
    let stdout = ws.ok(&["gradcheck", "--config", &ws.arg("gc.json")]);
    assert!(stdout.contains("gradcheck passed"), "{stdout}");
    fs::write(ws.path("bad.json"), r#"{"step": 0}"#).unwrap();
    assert_eq!(ws.run(&["gradcheck", "--config", &ws.arg("bad.json")]).0, 1);
    fs::write(ws.path("unknown.json"), r#"{"cases": 1, "colour": "red"}"#).unwrap();
    assert_eq!(ws.run(&["gradcheck", "--config", &ws.arg("unknown.json")]).0, 1);
}
