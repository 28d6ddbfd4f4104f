use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub cached: bool,
}

/// Stage results stored as JSON under a key hashed from everything the
/// stage reads: input file digests, config sections, seeds and the keys of
/// upstream stages.
pub struct StageCache {
    dir: Option<PathBuf>,
    pub records: Vec<StageRecord>,
}

impl StageCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir, records: Vec::new() }
    }

    pub fn key(name: &str, parts: &[String]) -> String {
        let mut text = name.to_string();
        for p in parts {
            text.push('\n');
            text.push_str(p);
        }
        digest::sha256_hex(text.as_bytes())
    }

    pub fn run<T, F>(&mut self, name: &str, parts: &[String], compute: F) -> Result<(T, String)>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let key = Self::key(name, parts);
        let path = self.dir.as_ref().map(|d| d.join(format!("{name}-{}.json", &key[..16])));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            match serde_json::from_slice(&std::fs::read(p)?) {
                Ok(value) => {
                    log::info!("stage {name}: cached ({})", &key[..16]);
                    self.records.push(StageRecord { name: name.into(), key: key.clone(), cached: true });
                    return Ok((value, key));
                }
                Err(e) => log::warn!("stage {name}: ignoring unreadable cache entry: {e}"),
            }
        }
        log::info!("stage {name}: running");
        let value = compute()?;
        if let Some(p) = &path {
            std::fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
            let tmp = p.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&value)?)?;
            std::fs::rename(&tmp, p)?;
        }
        self.records.push(StageRecord { name: name.into(), key: key.clone(), cached: false });
        Ok((value, key))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_run_is_served_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = StageCache::new(Some(dir.path().to_path_buf()));
        let (a, k1): (Vec<f64>, _) = cache.run("s", &["x".into()], || Ok(vec![0.1, 1.0 / 3.0])).unwrap();
        let (b, k2): (Vec<f64>, _) = cache.run("s", &["x".into()], || panic!("should be cached")).unwrap();
        assert_eq!((a, k1), (b, k2));
        let (_, k3): (Vec<f64>, _) = cache.run("s", &["y".into()], || Ok(vec![])).unwrap();
        assert_ne!(k3, StageCache::key("s", &["x".into()]));
        let flags: Vec<bool> = cache.records.iter().map(|r| r.cached).collect();
        assert_eq!(flags, [false, true, false]);
    }
}
