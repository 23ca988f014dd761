//! Document and object storage with a purge-driven CDN cache in front.
//!
//! On-disk layout of [`FsBackend`]: `<root>/<kind>/<escaped key>` holds the
//! bytes and `<root>/<kind>/<escaped key>.v` the decimal version. Keys are
//! escaped by percent-encoding every byte outside `[A-Za-z0-9._-]`, so `/`
//! in keys never creates directories. Writes go to a temp file first and are
//! renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::etag;
use crate::model::{ContentState, GeneratedContent};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("key must not be empty")]
    EmptyKey,
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("codec: {0}")]
    Codec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Document,
    Object,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Document => "document",
            Kind::Object => "object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stored {
    pub bytes: Vec<u8>,
    pub version: u64,
}

pub trait Backend: Send + Sync + std::fmt::Debug {
    /// Stores `bytes` and returns the new version (1 for a new key).
    fn put(&self, kind: Kind, key: &str, bytes: &[u8]) -> Result<u64, StoreError>;
    fn get(&self, kind: Kind, key: &str) -> Result<Option<Stored>, StoreError>;
    fn keys(&self, kind: Kind) -> Result<Vec<String>, StoreError>;
}

/// In-process backend. Can be switched to fail every call, to exercise
/// outage handling.
#[derive(Debug, Default)]
pub struct MemoryBackend {
    data: RwLock<BTreeMap<(Kind, String), Stored>>,
    down: AtomicBool,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_unavailable(&self, down: bool) {
        self.down.store(down, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), StoreError> {
        if self.down.load(Ordering::SeqCst) {
            Err(StoreError::Unavailable("memory backend switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl Backend for MemoryBackend {
    fn put(&self, kind: Kind, key: &str, bytes: &[u8]) -> Result<u64, StoreError> {
        self.check()?;
        let mut data = self.data.write().expect("store lock poisoned");
        let entry = data.entry((kind, key.to_string())).or_insert(Stored {
            bytes: Vec::new(),
            version: 0,
        });
        entry.version += 1;
        entry.bytes = bytes.to_vec();
        Ok(entry.version)
    }

    fn get(&self, kind: Kind, key: &str) -> Result<Option<Stored>, StoreError> {
        self.check()?;
        Ok(self.data.read().expect("store lock poisoned").get(&(kind, key.to_string())).cloned())
    }

    fn keys(&self, kind: Kind) -> Result<Vec<String>, StoreError> {
        self.check()?;
        let data = self.data.read().expect("store lock poisoned");
        Ok(data.keys().filter(|(k, _)| *k == kind).map(|(_, key)| key.clone()).collect())
    }
}

/// Directory-per-kind file backend.
#[derive(Debug)]
pub struct FsBackend {
    root: PathBuf,
    write_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

pub fn escape_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for b in key.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    // A lone `.` or `..` would be a directory reference.
    if out == "." || out == ".." {
        out = out.replace('.', "%2E");
    }
    out
}

pub fn unescape_key(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl FsBackend {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for kind in [Kind::Document, Kind::Object] {
            let dir = root.join(kind.as_str());
            std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: Kind, key: &str) -> PathBuf {
        self.root.join(kind.as_str()).join(escape_key(key))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_file_name(format!(".tmp-{}-{n}", std::process::id()));
        std::fs::write(&tmp, bytes).map_err(io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io(path))
    }

    fn read_version(&self, path: &Path) -> Result<u64, StoreError> {
        let vpath = version_path(path);
        match std::fs::read_to_string(&vpath) {
            Ok(s) => s.trim().parse().map_err(|_| StoreError::Codec(format!("bad version file {}", vpath.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(io(&vpath)(e)),
        }
    }
}

fn version_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".v");
    path.with_file_name(name)
}

impl Backend for FsBackend {
    fn put(&self, kind: Kind, key: &str, bytes: &[u8]) -> Result<u64, StoreError> {
        let _guard = self.write_lock.lock().expect("fs lock poisoned");
        let path = self.path(kind, key);
        let version = self.read_version(&path)? + 1;
        self.write_atomic(&path, bytes)?;
        self.write_atomic(&version_path(&path), version.to_string().as_bytes())?;
        Ok(version)
    }

    fn get(&self, kind: Kind, key: &str) -> Result<Option<Stored>, StoreError> {
        let path = self.path(kind, key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io(&path)(e)),
        };
        let version = self.read_version(&path)?.max(1);
        Ok(Some(Stored { bytes, version }))
    }

    fn keys(&self, kind: Kind) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join(kind.as_str());
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io(&dir))? {
            let entry = entry.map_err(io(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(".tmp-") || name.ends_with(".v") {
                continue;
            }
            if let Some(key) = unescape_key(&name) {
                out.push(key);
            }
        }
        out.sort();
        Ok(out)
    }
}

/// Key under which the published object for a content item lives.
pub fn content_object_key(content_id: &str) -> String {
    format!("content/{content_id}.json")
}

/// Store facade: raw put/get plus a content-state index over
/// [`GeneratedContent`] documents.
#[derive(Debug, Clone)]
pub struct ContentStore {
    backend: Arc<dyn Backend>,
    index: Arc<RwLock<HashMap<String, ContentState>>>,
    /// Serializes writes per content id.
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl ContentStore {
    pub fn new(backend: Arc<dyn Backend>) -> Result<Self, StoreError> {
        let store = Self {
            backend,
            index: Arc::default(),
            locks: Arc::default(),
        };
        store.rebuild_index()?;
        Ok(store)
    }

    pub fn memory() -> Self {
        Self::new(Arc::new(MemoryBackend::new())).expect("empty memory store")
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    fn rebuild_index(&self) -> Result<(), StoreError> {
        let mut index = HashMap::new();
        for key in self.backend.keys(Kind::Document)? {
            if let Some(s) = self.backend.get(Kind::Document, &key)? {
                if let Ok(c) = serde_json::from_slice::<GeneratedContent>(&s.bytes) {
                    index.insert(c.content_id, c.state);
                }
            }
        }
        *self.index.write().expect("index poisoned") = index;
        Ok(())
    }

    pub fn put(&self, kind: Kind, key: &str, bytes: &[u8]) -> Result<u64, StoreError> {
        if key.is_empty() {
            return Err(StoreError::EmptyKey);
        }
        self.backend.put(kind, key, bytes)
    }

    pub fn get(&self, kind: Kind, key: &str) -> Result<Stored, StoreError> {
        self.backend.get(kind, key)?.ok_or_else(|| StoreError::NotFound(key.to_string()))
    }

    pub fn lock_content(&self, content_id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(content_id.to_string())
            .or_default()
            .clone()
    }

    /// Writes the document and updates the state index.
    pub fn put_content(&self, content: &GeneratedContent) -> Result<u64, StoreError> {
        let bytes = serde_json::to_vec(content).map_err(|e| StoreError::Codec(e.to_string()))?;
        let v = self.put(Kind::Document, &content.content_id, &bytes)?;
        self.index
            .write()
            .expect("index poisoned")
            .insert(content.content_id.clone(), content.state);
        Ok(v)
    }

    pub fn get_content(&self, content_id: &str) -> Result<GeneratedContent, StoreError> {
        let s = self.get(Kind::Document, content_id)?;
        serde_json::from_slice(&s.bytes).map_err(|e| StoreError::Codec(e.to_string()))
    }

    /// Content ids in `state`, sorted.
    pub fn list_by_state(&self, state: ContentState) -> Vec<String> {
        let mut ids: Vec<String> = self
            .index
            .read()
            .expect("index poisoned")
            .iter()
            .filter(|(_, s)| **s == state)
            .map(|(id, _)| id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn count_by_state(&self) -> BTreeMap<ContentState, usize> {
        let mut out = BTreeMap::new();
        for s in self.index.read().expect("index poisoned").values() {
            *out.entry(*s).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub bytes: Vec<u8>,
    pub etag: String,
    pub origin_version: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdnStats {
    pub hits: u64,
    pub misses: u64,
    pub purges: u64,
    pub suppressed_purges: u64,
}

/// Edge cache with the store's object space as origin. Entries only leave
/// through [`Cdn::purge`].
#[derive(Debug)]
pub struct Cdn {
    origin: ContentStore,
    cache: RwLock<HashMap<String, CacheEntry>>,
    hits: AtomicU64,
    misses: AtomicU64,
    purges: AtomicU64,
    suppressed: AtomicU64,
    purge_log: Mutex<Vec<String>>,
}

impl Cdn {
    pub fn new(origin: ContentStore) -> Self {
        Self {
            origin,
            cache: RwLock::default(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            purges: AtomicU64::new(0),
            suppressed: AtomicU64::new(0),
            purge_log: Mutex::default(),
        }
    }

    pub fn origin(&self) -> &ContentStore {
        &self.origin
    }

    pub fn fetch(&self, key: &str) -> Result<CacheEntry, StoreError> {
        if let Some(e) = self.cache.read().expect("cache poisoned").get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(e.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let stored = self.origin.get(Kind::Object, key)?;
        let entry = CacheEntry {
            key: key.to_string(),
            etag: etag(&stored.bytes),
            bytes: stored.bytes,
            origin_version: stored.version,
        };
        self.cache
            .write()
            .expect("cache poisoned")
            .insert(key.to_string(), entry.clone());
        Ok(entry)
    }

    /// Evicts `keys`; the count covers only keys that were cached.
    pub fn purge<S: AsRef<str>>(&self, keys: &[S]) -> usize {
        let mut cache = self.cache.write().expect("cache poisoned");
        let mut log = self.purge_log.lock().expect("purge log poisoned");
        let mut n = 0;
        for k in keys {
            let k = k.as_ref();
            log.push(k.to_string());
            if cache.remove(k).is_some() {
                n += 1;
            }
        }
        self.purges.fetch_add(n as u64, Ordering::Relaxed);
        n
    }

    /// Writes `bytes` to the origin and purges the key, unless the bytes are
    /// identical to what is already there. Returns whether anything changed.
    pub fn publish(&self, key: &str, bytes: &[u8]) -> Result<bool, StoreError> {
        let current = self.origin.backend().get(Kind::Object, key)?;
        if current.as_ref().is_some_and(|c| etag(&c.bytes) == etag(bytes)) {
            self.suppressed.fetch_add(1, Ordering::Relaxed);
            return Ok(false);
        }
        self.origin.put(Kind::Object, key, bytes)?;
        self.purge(&[key]);
        Ok(true)
    }

    pub fn is_cached(&self, key: &str) -> bool {
        self.cache.read().expect("cache poisoned").contains_key(key)
    }

    pub fn stats(&self) -> CdnStats {
        CdnStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            purges: self.purges.load(Ordering::Relaxed),
            suppressed_purges: self.suppressed.load(Ordering::Relaxed),
        }
    }

    /// Every key a purge was requested for, in order.
    pub fn purge_log(&self) -> Vec<String> {
        self.purge_log.lock().expect("purge log poisoned").clone()
    }
}
