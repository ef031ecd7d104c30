//! Line-delimited dataset files plus a JSON manifest sidecar.
//!
//! A dataset directory holds `samples.jsonl` (one sample per line) and
//! `manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::sample::{DatasetManifest, MultiModalSample, Target, Task};
use crate::error::{Error, Result};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn samples_path(dir: &Path) -> PathBuf {
    dir.join(SAMPLES_FILE)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses and validates a line-delimited sample file against `manifest`.
pub fn read_samples(path: &Path, manifest: &DatasetManifest) -> Result<Vec<MultiModalSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: MultiModalSample = serde_json::from_str(&line).map_err(|e| Error::Schema {
            row,
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        validate_sample(&sample, manifest, row)?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no samples", path.display())));
    }
    Ok(samples)
}

pub fn validate_sample(sample: &MultiModalSample, manifest: &DatasetManifest, row: usize) -> Result<()> {
    let schema = |field: &str, message: String| Error::Schema {
        row,
        field: field.into(),
        message,
    };
    if sample.series.len() != manifest.channels {
        return Err(schema(
            "series",
            format!("expected {} channels, got {}", manifest.channels, sample.series.len()),
        ));
    }
    if let Some(ch) = sample.series.iter().position(|c| c.len() != manifest.time_steps) {
        return Err(schema(
            "series",
            format!(
                "channel {ch} has {} steps, expected {}",
                sample.series[ch].len(),
                manifest.time_steps
            ),
        ));
    }
    if sample.segments.is_empty() {
        return Err(schema("segments", "no text segments".into()));
    }
    match (manifest.task, sample.label) {
        (Task::Classification, Target::Class(c)) if c >= manifest.num_classes() => Err(schema(
            "label",
            format!("label {c} outside 0..{}", manifest.num_classes()),
        )),
        (Task::Classification, Target::Value(v)) => {
            Err(schema("label", format!("expected a class index, got {v}")))
        }
        (Task::Regression, Target::Value(v)) if !v.is_finite() => {
            Err(schema("label", "non-finite target".into()))
        }
        _ => Ok(()),
    }
}

/// Reads `manifest.json` and `samples.jsonl` from a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<MultiModalSample>)> {
    let manifest = read_manifest(&manifest_path(dir))?;
    let samples = read_samples(&samples_path(dir), &manifest)?;
    Ok((manifest, samples))
}

pub fn write_samples(path: &Path, samples: &[MultiModalSample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dir: &Path, manifest: &DatasetManifest, samples: &[MultiModalSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = manifest_path(dir);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    write_samples(&samples_path(dir), samples)
}
