//! Text embedding providers and a persistent, content-addressed cache.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::sample::MultiModalSample;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

const CACHE_MAGIC: &str = "protofuse-embedding-cache";
const CACHE_VERSION: u32 = 1;
const PROVIDER_ATTEMPTS: usize = 3;

/// Maps one text segment to a fixed-length vector.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic bag-of-tokens embedder.
///
/// Each lower-cased alphanumeric token gets a fixed Gaussian direction seeded
/// from its SHA-256 digest; a segment embeds to the normalized sum over its
/// token multiset. Segments sharing tokens therefore land near each other.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    id: String,
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        Self {
            id: format!("hash-bow-{dim}"),
            dim,
        }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        let mut rng = SeededRng::new(u64::from_le_bytes(seed));
        (0..self.dim).map(|_| rng.gaussian()).collect()
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for token in tokenize(text) {
            for (a, v) in acc.iter_mut().zip(self.token_vector(&token)) {
                *a += v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let mut unit = vec![0.0; self.dim];
            unit[0] = 1.0;
            return Ok(unit);
        }
        Ok(acc.into_iter().map(|v| v / norm).collect())
    }
}

/// Cache key for a segment under a provider.
pub fn cache_key(provider_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(provider_id.as_bytes());
    h.update([0x1f]);
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Content-addressed embedding cache, optionally persisted to an append-only
/// file with a versioned header. Reads are concurrent; writes are serialized.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<BTreeMap<String, Vec<f64>>>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the cache file at `path` and loads its records.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut lines = BufReader::new(file).lines();
            let header = lines
                .next()
                .transpose()
                .map_err(|e| Error::io(path, e))?
                .unwrap_or_default();
            check_header(&header)?;
            for (idx, line) in lines.enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.is_empty() {
                    continue;
                }
                let (key, vector) = parse_record(&line).ok_or_else(|| {
                    Error::Integrity(format!("{}: malformed cache record {}", path.display(), idx + 2))
                })?;
                entries.insert(key, vector);
            }
        } else {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, format!("{CACHE_MAGIC} v{CACHE_VERSION}\n")).map_err(|e| Error::io(path, e))?;
        }
        let file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Mutex::new(Some(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, key: String, vector: Vec<f64>) -> Result<()> {
        let mut file = self.file.lock().expect("cache file lock");
        if let Some(f) = file.as_mut() {
            let values: Vec<String> = vector.iter().map(f64::to_string).collect();
            writeln!(f, "{key}\t{}\t{}", vector.len(), values.join(","))
                .map_err(|e| Error::io(self.path.clone().unwrap_or_default(), e))?;
        }
        self.entries.write().expect("cache lock").insert(key, vector);
        Ok(())
    }
}

fn check_header(header: &str) -> Result<()> {
    let Some(version) = header.strip_prefix(CACHE_MAGIC).and_then(|r| r.trim().strip_prefix('v')) else {
        return Err(Error::Integrity(format!("not an embedding cache header: `{header}`")));
    };
    let found: u32 = version
        .parse()
        .map_err(|_| Error::Integrity(format!("bad cache version `{version}`")))?;
    if found != CACHE_VERSION {
        return Err(Error::Version {
            found,
            supported: CACHE_VERSION,
        });
    }
    Ok(())
}

fn parse_record(line: &str) -> Option<(String, Vec<f64>)> {
    let mut parts = line.split('\t');
    let key = parts.next()?.to_string();
    let dim: usize = parts.next()?.parse().ok()?;
    let values: Vec<f64> = parts
        .next()?
        .split(',')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    (values.len() == dim && parts.next().is_none()).then_some((key, values))
}

/// Counts from one [`embed_segments`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmbedStats {
    pub provider_calls: usize,
    pub cache_hits: usize,
}

/// Fills `embeddings` (`d_s × L`) for every sample whose embeddings are
/// missing. Each distinct segment text not already cached costs exactly one
/// provider call.
pub fn embed_segments(
    provider: &dyn EmbeddingProvider,
    samples: &mut [MultiModalSample],
    cache: &EmbeddingCache,
) -> Result<EmbedStats> {
    let mut distinct = BTreeSet::new();
    for s in samples.iter().filter(|s| s.embeddings.is_none()) {
        distinct.extend(s.segments.iter().map(String::as_str));
    }
    let missing: Vec<(String, String)> = distinct
        .into_iter()
        .map(|t| (t.to_string(), cache_key(provider.id(), t)))
        .filter(|(_, key)| cache.get(key).is_none())
        .collect();
    let calls = AtomicUsize::new(0);
    let fresh: Vec<(String, Vec<f64>)> = missing
        .par_iter()
        .map(|(text, key)| {
            calls.fetch_add(1, Ordering::Relaxed);
            embed_with_retry(provider, text).map(|v| (key.clone(), v))
        })
        .collect::<Result<_>>()?;
    for (key, vector) in fresh {
        if vector.len() != provider.dim() {
            return Err(Error::Provider {
                provider: provider.id().into(),
                message: format!("returned {} values, expected {}", vector.len(), provider.dim()),
            });
        }
        cache.insert(key, vector)?;
    }

    let mut stats = EmbedStats {
        provider_calls: calls.into_inner(),
        cache_hits: 0,
    };
    let missing_keys: BTreeSet<String> = missing.into_iter().map(|(_, k)| k).collect();
    let dim = provider.dim();
    for s in samples.iter_mut().filter(|s| s.embeddings.is_none()) {
        let l = s.segments.len();
        let mut data = vec![0.0; dim * l];
        for (j, seg) in s.segments.iter().enumerate() {
            let key = cache_key(provider.id(), seg);
            if !missing_keys.contains(&key) {
                stats.cache_hits += 1;
            }
            let v = cache.get(&key).expect("embedded above");
            for (d, x) in v.iter().enumerate() {
                data[d * l + j] = *x;
            }
        }
        s.embeddings = Some(Tensor::new(vec![dim, l], data)?);
    }
    Ok(stats)
}

fn embed_with_retry(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vec<f64>> {
    let mut last = None;
    for _ in 0..PROVIDER_ATTEMPTS {
        match provider.embed(text) {
            Ok(v) => return Ok(v),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Provider {
        provider: provider.id().into(),
        message: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}
