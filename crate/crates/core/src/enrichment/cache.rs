use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{EnrichedReport, EnrichmentError};
use crate::digest::sha256_hex;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    sample_id: String,
    prompt_hash: String,
    client_id: String,
    created_at: DateTime<Utc>,
    text_sha256: String,
}

/// On-disk store of generated reports keyed by `(sample_id, prompt_hash, client_id)`.
///
/// Layout: `<root>/<client_id>/<sample_id>/<prompt_hash>.txt` with a `.json` sidecar.
/// The first writer of a key wins; later writers see a cache hit.
#[derive(Debug)]
pub struct ReportCache {
    root: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnrichmentError + '_ {
    move |source| EnrichmentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Filesystem-safe directory name. Altered names get a digest suffix so distinct ids stay
/// distinct.
fn path_component(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean == id && !id.starts_with('.') && !id.is_empty() {
        clean
    } else {
        format!("{clean}-{}", &sha256_hex(id)[..12])
    }
}

impl ReportCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EnrichmentError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }

    fn entry_paths(&self, sample_id: &str, prompt_hash: &str, client_id: &str) -> (PathBuf, PathBuf) {
        let dir = self
            .root
            .join(path_component(client_id))
            .join(path_component(sample_id));
        let stem = path_component(prompt_hash);
        (dir.join(format!("{stem}.txt")), dir.join(format!("{stem}.json")))
    }

    /// Path of the report text for a key, whether or not it exists.
    pub fn entry_path(&self, sample_id: &str, prompt_hash: &str, client_id: &str) -> PathBuf {
        self.entry_paths(sample_id, prompt_hash, client_id).0
    }

    pub fn lookup(
        &self,
        sample_id: &str,
        prompt_hash: &str,
        client_id: &str,
    ) -> Result<Option<EnrichedReport>, EnrichmentError> {
        match self.read_entry(sample_id, prompt_hash, client_id)? {
            Some(r) => {
                self.hits.fetch_add(1, Ordering::SeqCst);
                Ok(Some(r))
            }
            None => {
                self.misses.fetch_add(1, Ordering::SeqCst);
                Ok(None)
            }
        }
    }

    fn read_entry(
        &self,
        sample_id: &str,
        prompt_hash: &str,
        client_id: &str,
    ) -> Result<Option<EnrichedReport>, EnrichmentError> {
        let (txt, json) = self.entry_paths(sample_id, prompt_hash, client_id);
        let text = match fs::read(&txt) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&txt)(e)),
        };
        let corrupt = |reason: String| EnrichmentError::CacheCorrupt {
            entry: txt.clone(),
            reason,
        };
        let text = String::from_utf8(text).map_err(|_| corrupt("report is not UTF-8".into()))?;
        let meta_raw = match fs::read_to_string(&json) {
            Ok(s) => s,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(corrupt("metadata sidecar missing".into()))
            }
            Err(e) => return Err(io_err(&json)(e)),
        };
        let meta: EntryMeta = serde_json::from_str(&meta_raw)
            .map_err(|e| corrupt(format!("unreadable metadata: {e}")))?;
        if meta.sample_id != sample_id || meta.prompt_hash != prompt_hash || meta.client_id != client_id
        {
            return Err(corrupt("metadata key does not match entry location".into()));
        }
        if meta.text_sha256 != sha256_hex(&text) || text.trim().is_empty() {
            return Err(corrupt("report text does not match recorded digest".into()));
        }
        Ok(Some(EnrichedReport {
            sample_id: meta.sample_id,
            text,
            prompt_hash: meta.prompt_hash,
            client_id: meta.client_id,
            created_at: meta.created_at,
        }))
    }

    fn temp_path(dir: &Path, ext: &str) -> PathBuf {
        let n = TMP_COUNTER.fetch_add(1, Ordering::SeqCst);
        dir.join(format!(".tmp-{}-{n}.{ext}", std::process::id()))
    }

    /// Persists `report` unless another writer got there first, and returns the stored
    /// entry.
    pub fn store(&self, report: EnrichedReport) -> Result<EnrichedReport, EnrichmentError> {
        let (txt, json) = self.entry_paths(&report.sample_id, &report.prompt_hash, &report.client_id);
        let dir = txt.parent().expect("entry has a parent").to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let meta = EntryMeta {
            sample_id: report.sample_id.clone(),
            prompt_hash: report.prompt_hash.clone(),
            client_id: report.client_id.clone(),
            created_at: report.created_at,
            text_sha256: sha256_hex(&report.text),
        };
        let meta_raw = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        let tmp_json = Self::temp_path(&dir, "json");
        fs::write(&tmp_json, meta_raw).map_err(io_err(&tmp_json))?;
        let tmp_txt = Self::temp_path(&dir, "txt");
        fs::write(&tmp_txt, &report.text).map_err(io_err(&tmp_txt))?;

        // The metadata goes in first so a visible report always has its sidecar.
        let won = match fs::hard_link(&tmp_json, &json) {
            Ok(()) => true,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => false,
            Err(e) => return Err(io_err(&json)(e)),
        };
        let result = if won {
            fs::hard_link(&tmp_txt, &txt).map_err(io_err(&txt))
        } else {
            Ok(())
        };
        let _ = fs::remove_file(&tmp_json);
        let _ = fs::remove_file(&tmp_txt);
        result?;
        if won {
            return Ok(report);
        }
        self.wait_for_winner(&report)
    }

    fn wait_for_winner(&self, report: &EnrichedReport) -> Result<EnrichedReport, EnrichmentError> {
        let deadline = Instant::now() + Duration::from_secs(10);
        loop {
            if let Some(r) = self.read_entry(&report.sample_id, &report.prompt_hash, &report.client_id)? {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(r);
            }
            if Instant::now() > deadline {
                return Err(EnrichmentError::CacheCorrupt {
                    entry: self.entry_path(&report.sample_id, &report.prompt_hash, &report.client_id),
                    reason: "metadata present but report text never appeared".into(),
                });
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(text: &str) -> EnrichedReport {
        EnrichedReport {
            sample_id: "case/1".into(),
            text: text.into(),
            prompt_hash: "abc123".into(),
            client_id: "stub".into(),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn store_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        assert!(cache.lookup("case/1", "abc123", "stub").unwrap().is_none());
        let stored = cache.store(report("hello")).unwrap();
        assert_eq!(cache.lookup("case/1", "abc123", "stub").unwrap().unwrap(), stored);
    }

    #[test]
    fn first_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        let a = cache.store(report("first")).unwrap();
        let b = cache.store(report("second")).unwrap();
        assert_eq!(b.text, "first");
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_entry_is_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReportCache::open(dir.path()).unwrap();
        cache.store(report("hello")).unwrap();
        let path = cache.entry_path("case/1", "abc123", "stub");
        fs::write(&path, "tampered").unwrap();
        let err = cache.lookup("case/1", "abc123", "stub").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&path.display().to_string()), "{msg}");
    }

    #[test]
    fn ids_map_to_distinct_dirs() {
        assert_ne!(path_component("a/b"), path_component("a_b"));
        assert_eq!(path_component("bus_0001"), "bus_0001");
        assert_ne!(path_component(".."), "..");
    }
}
