//! Model zoo client: a name -> URL manifest, a local cache, and verified
//! downloads.
//!
//! Cache layout under the root directory:
//!
//! ```text
//! <name>.onnx   model bytes
//! <name>.json   CacheEntry metadata (digest, fetch time)
//! ```
//!
//! Both files are written to a temporary file in the same directory and
//! renamed into place, so a reader never sees a partial model.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable overriding the cache root.
pub const CACHE_DIR_ENV: &str = "MODTRANS_CACHE_DIR";

const BUNDLED_MANIFEST: &str = include_str!("../data/zoo_manifest.json");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model {name:?}: {reason}")]
    Entry { name: String, reason: String },
}

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("unknown model {0:?} (see `modtrans list`)")]
    UnknownModel(String),
    #[error("{0} is not cached and network access is disabled")]
    NotCached(String),
    #[error("GET {url}: {message}")]
    Http { url: String, message: String },
    #[error("{name}: sha256 mismatch, expected {expected}, got {actual}; cache entry removed")]
    DigestMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no cache directory: set {CACHE_DIR_ENV}")]
    NoCacheDir,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ZooError + '_ {
    move |source| ZooError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ZooEntry {
    pub url: String,
    /// Lowercase hex. Entries without a digest are trusted on first download
    /// and pinned in the cache metadata from then on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZooManifest {
    entries: BTreeMap<String, ZooEntry>,
}

/// JSON object that keeps duplicate keys instead of collapsing them.
struct EntryList(Vec<(String, ZooEntry)>);

impl<'de> Deserialize<'de> for EntryList {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct ListVisitor;
        impl<'de> Visitor<'de> for ListVisitor {
            type Value = EntryList;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of model name -> {url, sha256}")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<EntryList, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry()? {
                    out.push((k, v));
                }
                Ok(EntryList(out))
            }
        }
        de.deserialize_map(ListVisitor)
    }
}

fn valid_model_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

fn valid_url(url: &str) -> bool {
    match url.split_once("://") {
        Some((scheme, rest)) => {
            matches!(scheme, "http" | "https")
                && !rest.is_empty()
                && !rest.starts_with('/')
                && !url.chars().any(char::is_whitespace)
        }
        None => false,
    }
}

impl ZooManifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let EntryList(list) = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for (name, mut entry) in list {
            let bad = |reason: &str| ManifestError::Entry {
                name: name.clone(),
                reason: reason.into(),
            };
            if !valid_model_name(&name) {
                return Err(bad(
                    "names may only use ASCII letters, digits, '-', '_' and '.'",
                ));
            }
            if !valid_url(&entry.url) {
                return Err(bad("url must be an absolute http(s) URL"));
            }
            if let Some(digest) = &mut entry.sha256 {
                if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(bad("sha256 must be 64 hex characters"));
                }
                digest.make_ascii_lowercase();
            }
            if entries.contains_key(&name) {
                return Err(bad("duplicate model name"));
            }
            entries.insert(name, entry);
        }
        Ok(ZooManifest { entries })
    }

    /// The manifest shipped with this crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_MANIFEST).expect("bundled manifest is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ZooError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::from_json(&text)?)
    }

    /// Model names in sorted order.
    pub fn list_models(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ZooEntry> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ZooEntry) {
        self.entries.insert(name.into(), entry);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct CacheEntry {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    root: PathBuf,
}

impl ModelCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ModelCache { root: root.into() }
    }

    /// `$MODTRANS_CACHE_DIR`, else `modtrans` under the user cache directory.
    pub fn from_env() -> Result<Self, ZooError> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Ok(Self::new(dir)),
            _ => dirs::cache_dir()
                .map(|d| Self::new(d.join("modtrans")))
                .ok_or(ZooError::NoCacheDir),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.onnx"))
    }

    fn meta_path(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.json"))
    }

    /// Metadata of a cached model, if both files are present and readable.
    pub fn entry(&self, name: &str) -> Option<CacheEntry> {
        if !self.model_path(name).is_file() {
            return None;
        }
        let text = fs::read_to_string(self.meta_path(name)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.model_path(name).is_file()
    }

    fn purge(&self, name: &str) {
        let _ = fs::remove_file(self.model_path(name));
        let _ = fs::remove_file(self.meta_path(name));
    }

    fn write_meta(&self, entry: &CacheEntry) -> Result<(), ZooError> {
        let path = self.meta_path(&entry.name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io_err(&self.root))?;
        let json = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        tmp.write_all(&json).map_err(io_err(tmp.path()))?;
        tmp.persist(&path).map_err(|e| ZooError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        Ok(())
    }
}

/// Where [`HttpTransport`]-style downloads come from. Tests inject their own.
pub trait Transport {
    fn get(&self, url: &str) -> Result<Box<dyn Read + '_>, ZooError>;
}

/// Blocking HTTP(S) GET that follows redirects.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .max_redirects(10)
            .user_agent(concat!("modtrans/", env!("CARGO_PKG_VERSION")))
            .build();
        HttpTransport {
            agent: config.into(),
        }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Box<dyn Read + '_>, ZooError> {
        let resp = self.agent.get(url).call().map_err(|e| ZooError::Http {
            url: url.into(),
            message: e.to_string(),
        })?;
        Ok(Box::new(resp.into_body().into_reader()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Cache,
    Network,
}

#[derive(Debug)]
pub struct Fetched {
    pub bytes: Vec<u8>,
    pub entry: CacheEntry,
    pub source: FetchSource,
    /// True when the manifest had no digest and the download's digest was
    /// pinned on first use.
    pub trusted_on_first_use: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Returns the model bytes for `name`, from the cache when present.
///
/// A cache hit performs no network I/O. Digests are checked on every read:
/// against the manifest when it pins one, otherwise against the digest
/// recorded at first download. Pass `transport = None` to forbid network
/// access.
pub fn fetch_model(
    name: &str,
    manifest: &ZooManifest,
    cache: &ModelCache,
    transport: Option<&dyn Transport>,
) -> Result<Fetched, ZooError> {
    let spec = manifest
        .get(name)
        .ok_or_else(|| ZooError::UnknownModel(name.into()))?;

    let model_path = cache.model_path(name);
    if model_path.is_file() {
        let recorded = cache.entry(name);
        let expected = spec
            .sha256
            .clone()
            .or_else(|| recorded.as_ref().map(|e| e.sha256.clone()));
        // Unpinned and no metadata: treat as a miss and download again.
        if let Some(expected) = expected {
            let bytes = fs::read(&model_path).map_err(io_err(&model_path))?;
            let actual = sha256_hex(&bytes);
            if actual != expected {
                cache.purge(name);
                return Err(ZooError::DigestMismatch {
                    name: name.into(),
                    expected,
                    actual,
                });
            }
            let entry = match recorded {
                Some(e) if e.sha256 == actual => e,
                _ => {
                    let e = CacheEntry {
                        name: name.into(),
                        path: model_path.clone(),
                        sha256: actual,
                        fetched_at: now_secs(),
                    };
                    cache.write_meta(&e)?;
                    e
                }
            };
            return Ok(Fetched {
                bytes,
                entry,
                source: FetchSource::Cache,
                trusted_on_first_use: false,
            });
        }
    }

    let transport = transport.ok_or_else(|| ZooError::NotCached(name.into()))?;
    fs::create_dir_all(cache.root()).map_err(io_err(cache.root()))?;

    let mut reader = transport.get(&spec.url)?;
    let mut tmp = tempfile::NamedTempFile::new_in(cache.root()).map_err(io_err(cache.root()))?;
    let mut hasher = Sha256::new();
    let mut bytes = Vec::with_capacity(spec.size_bytes.unwrap_or(0) as usize);
    let mut chunk = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut chunk).map_err(|e| ZooError::Http {
            url: spec.url.clone(),
            message: e.to_string(),
        })?;
        if n == 0 {
            break;
        }
        hasher.update(&chunk[..n]);
        tmp.write_all(&chunk[..n]).map_err(io_err(tmp.path()))?;
        bytes.extend_from_slice(&chunk[..n]);
    }
    let actual = hex::encode(hasher.finalize());
    if let Some(expected) = &spec.sha256 {
        if *expected != actual {
            // Dropping `tmp` deletes the partial download.
            cache.purge(name);
            return Err(ZooError::DigestMismatch {
                name: name.into(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
    tmp.persist(&model_path).map_err(|e| ZooError::Io {
        path: model_path.clone(),
        source: e.error,
    })?;
    let entry = CacheEntry {
        name: name.into(),
        path: model_path,
        sha256: actual,
        fetched_at: now_secs(),
    };
    cache.write_meta(&entry)?;
    Ok(Fetched {
        bytes,
        entry,
        source: FetchSource::Network,
        trusted_on_first_use: spec.sha256.is_none(),
    })
}
