use std::io::Write;
use std::path::{Path, PathBuf};

use super::{grade_once, GradeError, GradeSettings, GradingProvider, PassResult};
use crate::digest::sha256_fields;
use crate::keybank::PromptBundle;

/// Cache key for one pass of one submission.
pub fn cache_key(
    prompt_hash: &str,
    content_hash: &str,
    model_id: &str,
    pass_index: usize,
) -> String {
    sha256_fields([
        prompt_hash.as_bytes(),
        content_hash.as_bytes(),
        model_id.as_bytes(),
        pass_index.to_string().as_bytes(),
    ])
}

/// Content-addressed store of pass results, one JSON file per key.
#[derive(Debug, Clone)]
pub struct PassCache {
    dir: PathBuf,
}

impl PassCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(PassCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// A stored result, or `None`. Unreadable entries count as misses.
    pub fn get(&self, key: &str) -> Option<PassResult> {
        let path = self.path(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<PassResult>(&bytes) {
            Ok(r) if r.score <= 10 => Some(r),
            Ok(_) | Err(_) => {
                log::warn!("ignoring corrupt cache entry {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &str, result: &PassResult) -> std::io::Result<()> {
        let path = self.path(key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        {
            let mut f = std::fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, result)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }
}

/// [`grade_once`] behind the cache. Returns the result and whether it was
/// served from the cache.
pub fn cached_grade(
    cache: &PassCache,
    provider: &dyn GradingProvider,
    bundle: &PromptBundle,
    pass_index: usize,
    settings: &GradeSettings,
) -> Result<(PassResult, bool), GradeError> {
    let key = cache_key(
        &bundle.prompt_hash,
        &bundle.attachment.content_hash,
        &settings.model_id,
        pass_index,
    );
    if let Some(hit) = cache.get(&key) {
        return Ok((hit, true));
    }
    let result = grade_once(provider, bundle, pass_index, settings)?;
    if let Err(e) = cache.put(&key, &result) {
        log::warn!("could not write cache entry {key}: {e}");
    }
    Ok((result, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grader::{MockProvider, RetryPolicy, ScriptedProvider};
    use crate::test_support::bundle;

    fn settings() -> GradeSettings {
        GradeSettings {
            retry: RetryPolicy::immediate(0),
            ..GradeSettings::new("m")
        }
    }

    #[test]
    fn second_call_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PassCache::open(dir.path()).unwrap();
        let provider = ScriptedProvider::new(vec![Ok("Total: 6/10\nFlag: 0".into())]);
        let b = bundle();
        let (first, hit) = cached_grade(&cache, &provider, &b, 0, &settings()).unwrap();
        assert!(!hit);
        let (second, hit) = cached_grade(&cache, &provider, &b, 0, &settings()).unwrap();
        assert!(hit);
        assert_eq!(first, second);
        assert_eq!(provider.calls(), 1);
    }

    #[test]
    fn key_depends_on_prompt_and_pass() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PassCache::open(dir.path()).unwrap();
        let provider = MockProvider::new(1);
        let b = bundle();
        cached_grade(&cache, &provider, &b, 0, &settings()).unwrap();
        let (_, hit) = cached_grade(&cache, &provider, &b, 1, &settings()).unwrap();
        assert!(!hit);

        let mut changed = b.clone();
        changed.key_text.push_str("\nGive 1 point for units.");
        changed.prompt_hash = sha256_fields([changed.key_text.as_bytes()]);
        let (_, hit) = cached_grade(&cache, &provider, &changed, 0, &settings()).unwrap();
        assert!(!hit);
        assert_eq!(provider.requests().len(), 3);
        assert_ne!(
            cache_key(&b.prompt_hash, "h", "m", 0),
            cache_key(&b.prompt_hash, "h", "m2", 0)
        );
    }

    #[test]
    fn corrupt_entry_is_a_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = PassCache::open(dir.path()).unwrap();
        let b = bundle();
        let key = cache_key(&b.prompt_hash, &b.attachment.content_hash, "m", 0);
        std::fs::write(dir.path().join(format!("{key}.json")), b"{not json").unwrap();
        let provider = ScriptedProvider::new(vec![Ok("Total: 2/10\nFlag: 1".into())]);
        let (r, hit) = cached_grade(&cache, &provider, &b, 0, &settings()).unwrap();
        assert!(!hit);
        assert_eq!(r.score, 2);
        assert_eq!(cache.get(&key).unwrap(), r);
    }
}
