use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protofuse::agents::prompt::render_explanation_item;
use protofuse::agents::AgentSession;
use protofuse::data::{
    embed_segments, load_dataset, prepare_splits, save_dataset, synthesize_dataset, DatasetManifest,
    EmbeddingCache, HashEmbedder, MultiModalSample, Splits, SyntheticSpec,
};
use protofuse::encoder::{
    evaluate, explain as explain_sample, load_model, run_gradcheck, save_model, train_encoder, EncoderModel,
    GradcheckConfig, Modality,
};
use protofuse::eval::MetricsReport;
use protofuse::numerics::argmax;
use protofuse::persist::{read_json, write_json};
use protofuse::pipeline::{
    load_checkpoint, run_loop as drive_loop, test_phase, Checkpoint, IterationReport, LoopConfig,
    LoopState, RunDir, Runtime,
};
use protofuse::{Error, Result};

use crate::client;

/// Inputs of a run, recorded so later commands can find them.
#[derive(Debug, Serialize, Deserialize)]
struct RunInfo {
    data: PathBuf,
    client: Option<String>,
}

struct Prepared {
    manifest: DatasetManifest,
    splits: Splits,
}

fn prepare(data: &Path, split_seed: u64) -> Result<Prepared> {
    let (manifest, samples) = load_dataset(data)?;
    let (manifest, splits) = prepare_splits(&manifest, samples, split_seed)?;
    Ok(Prepared { manifest, splits })
}

fn read_loop_config(path: &Path) -> Result<LoopConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: LoopConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

pub fn synth(spec: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", spec.display())))?;
    let (manifest, samples) = synthesize_dataset(&spec)?;
    save_dataset(out, &manifest, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

pub fn train(data: &Path, config: &Path, out: &Path) -> Result<()> {
    let mut config = read_loop_config(config)?;
    let Prepared { manifest, mut splits } = prepare(data, config.split_seed)?;
    config.conform_to(&manifest);
    config.encoder.validate()?;
    let run = RunDir::create(out)?;
    run.write_config(&config)?;
    write_json(&run.info(), &RunInfo { data: data.to_path_buf(), client: None })?;

    let embedder = HashEmbedder::new(config.embedding_dim);
    let cache = EmbeddingCache::open(&run.embedding_cache())?;
    embed_segments(&embedder, &mut splits.train, &cache)?;
    embed_segments(&embedder, &mut splits.val, &cache)?;
    let (model, history) = train_encoder(&splits.train, &splits.val, &config.encoder)?;
    save_model(&run.model(), &model)?;
    write_json(&run.root().join("history.json"), &history)?;
    let metrics = evaluate(&model, &splits.val)?;
    write_json(&run.root().join("validation.json"), &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

pub fn run_loop(data: &Path, config: &Path, client_spec: &str, out: &Path) -> Result<()> {
    let mut config = read_loop_config(config)?;
    let Prepared { manifest, splits } = prepare(data, config.split_seed)?;
    config.conform_to(&manifest);
    config.validate()?;
    let run = RunDir::create(out)?;
    run.write_config(&config)?;
    write_json(
        &run.info(),
        &RunInfo {
            data: data.to_path_buf(),
            client: Some(client_spec.to_string()),
        },
    )?;

    let llm = client::from_spec(client_spec, config.agents.retry)?;
    let session = AgentSession::new(llm.as_ref(), config.agents.clone())?.with_transcript(run.open_transcript()?);
    let embedder = HashEmbedder::new(config.embedding_dim);
    let cache = EmbeddingCache::open(&run.embedding_cache())?;
    let rt = Runtime {
        labels: &manifest.label_names,
        policy: manifest.segmentation,
        embedder: &embedder,
        cache: &cache,
        session: &session,
    };
    let state = LoopState::initial(&splits.train, &splits.val, config.max_iterations)?;
    let mut reports: Vec<IterationReport> = Vec::new();
    let outcome = drive_loop(state, &config, &rt, &splits.train, &splits.val, |state, report| {
        run.write_iteration(report)?;
        run.write_checkpoint(&Checkpoint {
            config: config.clone(),
            state: state.clone(),
        })?;
        println!(
            "iteration {}: encoder F1 {:.4}, LLM F1 {:.4}, fused F1 {:.4} (α {:.1}), text quality {:.4}",
            report.iteration,
            report.encoder.macro_f1,
            report.llm.macro_f1,
            report.fused.macro_f1,
            report.alpha,
            report.text_quality
        );
        reports.push(report.clone());
        Ok(())
    });
    run.write_usage(session.ledger())?;
    if !reports.is_empty() {
        run.write_report(&reports)?;
    }
    let (state, _) = outcome?;
    if let Some(best) = &state.best {
        println!("best iteration {} with fused F1 {:.4}", best.iteration, best.fused_f1);
    }
    Ok(())
}

pub fn test(run_dir: &Path, data: &Path, client_spec: Option<&str>, alpha: Option<f64>) -> Result<()> {
    let run = RunDir::open(run_dir)?;
    let Checkpoint { config, state } = load_checkpoint(&run.checkpoint())?;
    let best = state
        .best
        .as_ref()
        .ok_or_else(|| Error::Contract("checkpoint has no best state".into()))?;
    let client_spec = match client_spec {
        Some(spec) => spec.to_string(),
        None => read_json::<RunInfo>(&run.info())?
            .client
            .ok_or_else(|| Error::InvalidInput("run has no recorded client; pass --client".into()))?,
    };
    let Prepared { manifest, splits } = prepare(data, config.split_seed)?;
    let mut fusion = best.fusion.clone();
    if let Some(a) = alpha {
        fusion.alpha = a;
    }

    let llm = client::from_spec(&client_spec, config.agents.retry)?;
    let session = AgentSession::new(llm.as_ref(), config.agents.clone())?.with_transcript(run.open_transcript()?);
    let embedder = HashEmbedder::new(config.embedding_dim);
    let cache = EmbeddingCache::open(&run.embedding_cache())?;
    let rt = Runtime {
        labels: &manifest.label_names,
        policy: manifest.segmentation,
        embedder: &embedder,
        cache: &cache,
        session: &session,
    };
    let outcome = test_phase(Some(best), &splits.test, &rt, &fusion, config.explanation_modality)?;
    run.write_test(&outcome)?;
    println!(
        "test: encoder F1 {:.4}, LLM F1 {:.4}, fused F1 {:.4} (α {:.1}) on {} samples",
        outcome.encoder.macro_f1,
        outcome.llm.macro_f1,
        outcome.fused.macro_f1,
        outcome.alpha,
        outcome.records.len()
    );
    Ok(())
}

/// The best model of a loop run, or the model of an encoder-only run.
fn run_model(run: &RunDir) -> Result<(EncoderModel, u64, usize)> {
    if run.checkpoint().exists() {
        let Checkpoint { config, state } = load_checkpoint(&run.checkpoint())?;
        let best = state
            .best
            .ok_or_else(|| Error::Contract("checkpoint has no best state".into()))?;
        return Ok((best.model, config.split_seed, config.embedding_dim));
    }
    let config: LoopConfig = read_json(&run.config())?;
    Ok((load_model(&run.model())?, config.split_seed, config.embedding_dim))
}

pub fn explain(
    run_dir: &Path,
    sample_id: &str,
    omega: usize,
    modality: Modality,
    data: Option<&Path>,
    json: bool,
) -> Result<()> {
    let run = RunDir::open(run_dir)?;
    let (model, split_seed, dim) = run_model(&run)?;
    let data = match data {
        Some(d) => d.to_path_buf(),
        None => read_json::<RunInfo>(&run.info())?.data,
    };
    let Prepared { manifest, splits } = prepare(&data, split_seed)?;
    let mut sample: MultiModalSample = splits
        .train
        .into_iter()
        .chain(splits.val)
        .chain(splits.test)
        .find(|s| s.id == sample_id)
        .ok_or_else(|| Error::InvalidInput(format!("no sample `{sample_id}` in {}", data.display())))?;
    let cache = EmbeddingCache::open(&run.embedding_cache())?;
    embed_segments(&HashEmbedder::new(dim), std::slice::from_mut(&mut sample), &cache)?;
    let explanation = explain_sample(&sample, &model, omega, modality)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&explanation)?);
        return Ok(());
    }
    let probs = model.predict_proba(&sample)?;
    println!(
        "sample {}: predicted {} ({:.3})",
        sample.id,
        manifest.label_names[argmax(&probs)],
        probs[argmax(&probs)]
    );
    for (rank, item) in explanation.items.iter().enumerate() {
        println!("{}", render_explanation_item(rank + 1, &manifest.label_names, item));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    id: String,
    predicted: usize,
    #[serde(default)]
    fused: Option<Vec<f64>>,
    #[serde(default)]
    scores: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct TruthLine {
    id: String,
    label: usize,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema {
            row: row + 1,
            field: "record".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn eval(pred: &Path, truth: &Path) -> Result<()> {
    let (truth_by_id, declared_classes): (BTreeMap<String, usize>, Option<usize>) = if truth.is_dir() {
        let (manifest, samples) = load_dataset(truth)?;
        let labels = samples
            .iter()
            .map(|s| Ok((s.id.clone(), s.class()?)))
            .collect::<Result<_>>()?;
        (labels, Some(manifest.label_names.len()))
    } else {
        let lines: Vec<TruthLine> = read_lines(truth)?;
        (lines.into_iter().map(|t| (t.id, t.label)).collect(), None)
    };
    let preds: Vec<PredictionLine> = read_lines(pred)?;
    if preds.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no predictions", pred.display())));
    }
    let mut y_true = Vec::with_capacity(preds.len());
    let mut y_pred = Vec::with_capacity(preds.len());
    let mut scores = Vec::new();
    for p in &preds {
        let t = truth_by_id
            .get(&p.id)
            .ok_or_else(|| Error::InvalidInput(format!("no truth for prediction `{}`", p.id)))?;
        y_true.push(*t);
        y_pred.push(p.predicted);
        if let Some(s) = p.fused.as_ref().or(p.scores.as_ref()) {
            scores.push(s.clone());
        }
    }
    if scores.len() != preds.len() {
        scores.clear();
    }
    let classes = declared_classes.unwrap_or_else(|| {
        let widest = scores.iter().map(Vec::len).max().unwrap_or(0);
        let largest = y_true.iter().chain(&y_pred).max().map_or(0, |m| m + 1);
        widest.max(largest)
    });
    let report = MetricsReport::compute(&y_true, &y_pred, &scores, classes)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn gradcheck(config: Option<&Path>) -> Result<()> {
    let settings: GradcheckConfig = match config {
        Some(path) => read_json(path)?,
        None => GradcheckConfig::default(),
    };
    let report = run_gradcheck(&settings)?;
    let coordinates: usize = report.groups.iter().map(|g| g.coordinates).sum();
    let skipped: usize = report.groups.iter().map(|g| g.skipped).sum();
    let worst = report.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    for g in report.groups.iter().filter(|g| !g.passed) {
        println!(
            "FAIL case {} group {}: max relative error {:.3e}",
            g.case, g.group, g.max_rel_error
        );
    }
    println!(
        "gradcheck: {} cases, {} parameter groups, {} coordinates ({} skipped at kinks), worst relative error {:.3e}",
        settings.cases + settings.regression_cases,
        report.groups.len(),
        coordinates,
        skipped,
        worst
    );
    if report.passed {
        println!("gradcheck passed (tolerance {:.0e})", settings.tolerance);
        Ok(())
    } else {
        Err(Error::Numeric("gradient check failed".into()))
    }
}
