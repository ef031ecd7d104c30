//! Versioned, checksummed JSON documents.
//!
//! Every persisted artifact is wrapped as
//! `{"format", "version", "sha256", "payload"}`. The payload is written with
//! sorted keys and shortest round-trip floats, so equal values give equal
//! bytes; the checksum covers the payload's canonical text.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sorted-key canonical JSON text of `value`.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v: Value = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn to_envelope<T: Serialize>(format: &str, version: u32, payload: &T) -> Result<String> {
    let payload: Value = serde_json::to_value(payload)?;
    let digest = sha256_hex(serde_json::to_string(&payload)?.as_bytes());
    let doc = serde_json::json!({
        "format": format,
        "version": version,
        "sha256": digest,
        "payload": payload,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn from_envelope<T: DeserializeOwned>(text: &str, format: &str, supported: u32) -> Result<T> {
    let mut doc: Value = serde_json::from_str(text)
        .map_err(|e| Error::Integrity(format!("not a JSON document: {e}")))?;
    let found_format = doc.get("format").and_then(Value::as_str).unwrap_or_default();
    if found_format != format {
        return Err(Error::Integrity(format!(
            "expected a `{format}` document, found `{found_format}`"
        )));
    }
    let version = doc
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Integrity("missing version".into()))?;
    if version > u64::from(supported) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported,
        });
    }
    let expected = doc
        .get("sha256")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Integrity("missing checksum".into()))?
        .to_string();
    let payload = doc
        .get_mut("payload")
        .map(Value::take)
        .ok_or_else(|| Error::Integrity("missing payload".into()))?;
    let actual = sha256_hex(serde_json::to_string(&payload)?.as_bytes());
    if actual != expected {
        return Err(Error::Integrity(format!(
            "checksum mismatch: recorded {expected}, computed {actual}"
        )));
    }
    serde_json::from_value(payload).map_err(|e| Error::Integrity(format!("malformed payload: {e}")))
}

pub fn write_envelope<T: Serialize>(path: &Path, format: &str, version: u32, payload: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_envelope(format, version, payload)?).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

pub fn read_envelope<T: DeserializeOwned>(path: &Path, format: &str, supported: u32) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_envelope(&text, format, supported)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn payload() -> BTreeMap<String, f64> {
        BTreeMap::from([("a".into(), 0.1), ("b".into(), 1.0 / 3.0)])
    }

    #[test]
    fn round_trip_is_exact_and_stable() {
        let text = to_envelope("demo", 1, &payload()).unwrap();
        let back: BTreeMap<String, f64> = from_envelope(&text, "demo", 1).unwrap();
        assert_eq!(back, payload());
        assert_eq!(to_envelope("demo", 1, &back).unwrap(), text);
    }

    #[test]
    fn newer_version_is_rejected() {
        let text = to_envelope("demo", 3, &payload()).unwrap();
        let err = from_envelope::<BTreeMap<String, f64>>(&text, "demo", 2).unwrap_err();
        assert!(matches!(err, Error::Version { .. }));
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let text = to_envelope("demo", 1, &payload()).unwrap().replace("0.1", "0.2");
        let err = from_envelope::<BTreeMap<String, f64>>(&text, "demo", 1).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn truncated_file_is_an_integrity_error() {
        let text = to_envelope("demo", 1, &payload()).unwrap();
        let err = from_envelope::<BTreeMap<String, f64>>(&text[..text.len() / 2], "demo", 1).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn wrong_format_is_rejected() {
        let text = to_envelope("demo", 1, &payload()).unwrap();
        assert!(from_envelope::<BTreeMap<String, f64>>(&text, "other", 1).is_err());
    }
}
