use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::MatchError;
use crate::geo::LatLon;
use crate::network::SegmentId;

/// Coordinates quantised to 1e-5 degrees (about a metre).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub lat5: i64,
    pub lon5: i64,
}

impl CacheKey {
    pub fn of(p: LatLon) -> Self {
        Self {
            lat5: (p.lat * 1e5).round() as i64,
            lon5: (p.lon * 1e5).round() as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub segment_id: SegmentId,
    pub snapped: LatLon,
    pub along: f64,
}

/// Append-only store of past matches. The first entry written for a key
/// wins; later duplicates in the file are ignored.
#[derive(Debug, Default)]
pub struct MatchCache {
    entries: HashMap<CacheKey, CacheEntry>,
    pending: Vec<(CacheKey, CacheEntry)>,
    path: Option<PathBuf>,
}

impl MatchCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache file at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MatchError> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(cache_err(&path, e.to_string())),
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, entry) =
                parse_line(line).ok_or_else(|| cache_err(&path, format!("line {}: {line:?}", n + 1)))?;
            cache.entries.entry(key).or_insert(entry);
        }
        Ok(cache)
    }

    pub fn get(&self, key: &CacheKey) -> Option<&CacheEntry> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts unless the key is already present; returns whether it was new.
    pub fn insert(&mut self, key: CacheKey, entry: CacheEntry) -> bool {
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, entry);
        self.pending.push((key, entry));
        true
    }

    /// Appends entries added since the last flush to the cache file.
    pub fn flush(&mut self) -> Result<(), MatchError> {
        let Some(path) = &self.path else {
            self.pending.clear();
            return Ok(());
        };
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for (k, e) in &self.pending {
            buf.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k.lat5, k.lon5, e.segment_id, e.snapped.lat, e.snapped.lon, e.along
            ));
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(path, e.to_string()))?;
        f.write_all(buf.as_bytes()).map_err(|e| cache_err(path, e.to_string()))?;
        self.pending.clear();
        Ok(())
    }
}

fn cache_err(path: &Path, reason: String) -> MatchError {
    MatchError::Cache {
        path: path.display().to_string(),
        reason,
    }
}

fn parse_line(line: &str) -> Option<(CacheKey, CacheEntry)> {
    let f: Vec<&str> = line.trim().split(',').collect();
    if f.len() != 6 {
        return None;
    }
    let key = CacheKey {
        lat5: f[0].parse().ok()?,
        lon5: f[1].parse().ok()?,
    };
    let entry = CacheEntry {
        segment_id: SegmentId(f[2].parse().ok()?),
        snapped: LatLon::new(f[3].parse().ok()?, f[4].parse().ok()?),
        along: f[5].parse().ok()?,
    };
    Some((key, entry))
}
