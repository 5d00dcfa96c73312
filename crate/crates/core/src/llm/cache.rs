use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{LlmRequest, Usage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: LlmRequest,
    pub text: String,
    pub usage: Usage,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Append-only JSON-lines response store.
///
/// Readers share a lock; appends are serialized through the file mutex.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the cache at `path` and loads every record.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(path, e))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(rec) => {
                        entries.insert(rec.key.clone(), rec);
                    }
                    // a torn final line is what an interrupted append leaves behind
                    Err(e) if i + 1 == last => {
                        log::warn!("{}:{}: ignoring truncated cache record: {e}", path.display(), i + 1)
                    }
                    Err(e) => return Err(Error::parse(path, i + 1, e.to_string())),
                }
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
        })
    }

    /// Opens an existing cache without ever writing to it.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Config(format!("cache file {} does not exist", path.display())));
        }
        let mut cache = Self::open(path)?;
        cache.path = None;
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheRecord> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .cloned()
    }

    /// Stores a response unless the key is already present.
    pub fn insert(&self, key: &str, request: &LlmRequest, text: &str, usage: Usage) -> Result<()> {
        let record = CacheRecord {
            key: key.to_string(),
            request: request.clone(),
            text: text.to_string(),
            usage,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        {
            let mut entries = self.entries.write().expect("cache lock poisoned");
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_string(), record.clone());
        }
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if writer.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            *writer = Some(f);
        }
        let f = writer.as_mut().expect("writer opened above");
        f.write_all(&line).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{cache_key, ChatMessage};

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cache/llm.jsonl");
        let req = LlmRequest::new("m", vec![ChatMessage::user("hi")]);
        let key = cache_key(&req);
        {
            let c = ResponseCache::open(&p).unwrap();
            c.insert(&key, &req, "hello", Usage::default()).unwrap();
            c.insert(&key, &req, "ignored", Usage::default()).unwrap();
        }
        let c = ResponseCache::open(&p).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(&key).unwrap().text, "hello");
    }

    #[test]
    fn tolerates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("llm.jsonl");
        let req = LlmRequest::new("m", vec![ChatMessage::user("hi")]);
        let c = ResponseCache::open(&p).unwrap();
        c.insert(&cache_key(&req), &req, "x", Usage::default()).unwrap();
        drop(c);
        let mut f = OpenOptions::new().append(true).open(&p).unwrap();
        f.write_all(b"{\"key\":\"abc\",\"req").unwrap();
        assert_eq!(ResponseCache::open(&p).unwrap().len(), 1);
    }
}
