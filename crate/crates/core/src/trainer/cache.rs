use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::data::ImageRef;
use crate::image::Image;
use crate::ledger::BudgetExhausted;
use crate::prob::ProbabilityVector;
use crate::selection::QuerySet;
use crate::victim::{BlackBox, VictimError};

/// Images sent to the victim per request.
pub const COLLECT_BATCH: usize = 250;

/// One victim response per query, in query-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCache {
    pub query_digest: String,
    pub class_count: usize,
    pub refs: Vec<ImageRef>,
    pub responses: Vec<ProbabilityVector>,
}

impl ResponseCache {
    /// Content digest of a query set: references and pixels, in order.
    pub fn query_digest(queries: &QuerySet, images: &[Image]) -> String {
        assert_eq!(queries.len(), images.len());
        let mut h = Sha256::new();
        for (r, img) in queries.refs.iter().zip(images) {
            h.update(r.as_str().as_bytes());
            h.update([0u8]);
            img.hash_into(&mut h);
        }
        hex::encode(h.finalize())
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Digest over the query digest and every response bit.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.query_digest.as_bytes());
        for p in &self.responses {
            for v in p.values() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn path_in(dir: &Path, query_digest: &str) -> PathBuf {
        dir.join(format!("responses-{query_digest}.json"))
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, TrainError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TrainError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = Self::path_in(dir, &self.query_digest);
        let json = serde_json::to_vec(self).expect("cache serializes");
        std::fs::write(&path, json).map_err(io(&path))?;
        Ok(path)
    }

    /// Loads a previously saved cache for `query_digest`, if any.
    pub fn load(dir: &Path, query_digest: &str) -> Result<Option<Self>, TrainError> {
        let path = Self::path_in(dir, query_digest);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|source| TrainError::Io {
            path: path.clone(),
            source,
        })?;
        let cache: Self = serde_json::from_slice(&bytes).map_err(|e| TrainError::CorruptCache {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if cache.query_digest != query_digest || cache.refs.len() != cache.responses.len() {
            return Err(TrainError::CorruptCache {
                path,
                reason: "digest or length mismatch".into(),
            });
        }
        Ok(Some(cache))
    }

    /// Reuses a saved cache for the same query set, otherwise queries the
    /// victim and saves the result. Returns whether the cache came from disk.
    pub fn obtain(
        queries: &QuerySet,
        images: &[Image],
        victim: &dyn BlackBox,
        dir: Option<&Path>,
    ) -> Result<(Self, bool), TrainError> {
        let digest = Self::query_digest(queries, images);
        if let Some(dir) = dir {
            if let Some(cache) = Self::load(dir, &digest)? {
                return Ok((cache, true));
            }
        }
        let cache = collect_responses(queries, images, victim)?;
        if let Some(dir) = dir {
            cache.save(dir)?;
        }
        Ok((cache, false))
    }
}

/// Queries the victim exactly once per query image.
///
/// Fails up front, spending nothing, if the remaining budget cannot cover the
/// whole set. If a later request fails the partial cache is dropped; budget
/// already spent on completed requests stays spent.
pub fn collect_responses(
    queries: &QuerySet,
    images: &[Image],
    victim: &dyn BlackBox,
) -> Result<ResponseCache, TrainError> {
    if queries.len() != images.len() {
        return Err(TrainError::CacheMismatch(format!(
            "{} references but {} images",
            queries.len(),
            images.len()
        )));
    }
    let meta = victim.meta()?;
    let requested = images.len() as u64;
    if meta.remaining < requested {
        return Err(VictimError::BudgetExhausted(BudgetExhausted {
            requested,
            remaining: meta.remaining,
            budget: meta.budget,
        })
        .into());
    }
    let mut responses = Vec::with_capacity(images.len());
    for chunk in images.chunks(COLLECT_BATCH) {
        let batch = victim.query(chunk)?;
        if batch.len() != chunk.len() || batch.iter().any(|p| p.len() != meta.class_count) {
            return Err(TrainError::CacheMismatch("victim returned a malformed batch".into()));
        }
        responses.extend(batch);
    }
    Ok(ResponseCache {
        query_digest: ResponseCache::query_digest(queries, images),
        class_count: meta.class_count,
        refs: queries.refs.clone(),
        responses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::victim::tests::toy_model;
    use crate::victim::VictimEndpoint;

    fn toy_queries(n: usize) -> (QuerySet, Vec<Image>) {
        let queries = QuerySet {
            class_names: vec!["toy".into()],
            refs: (0..n).map(|i| ImageRef(format!("toy/{i}"))).collect(),
            origins: vec![0; n],
            indices: (0..n).collect(),
        };
        let images = (0..n)
            .map(|i| Image::filled(3, 8, 8, (i % 17) as f32 / 16.0))
            .collect();
        (queries, images)
    }

    #[test]
    fn spends_exactly_once_per_query() {
        let (queries, images) = toy_queries(100);
        let ep = VictimEndpoint::new(toy_model(3), 100);
        let cache = collect_responses(&queries, &images, &ep).unwrap();
        assert_eq!(cache.len(), 100);
        assert_eq!(ep.ledger().spent, 100);
        let err = collect_responses(&queries, &images, &ep).unwrap_err();
        assert!(matches!(err, TrainError::Victim(VictimError::BudgetExhausted(_))));
        assert_eq!(ep.ledger().spent, 100);
    }

    #[test]
    fn short_budget_fails_before_spending() {
        let (queries, images) = toy_queries(300);
        let ep = VictimEndpoint::new(toy_model(3), 299);
        assert!(collect_responses(&queries, &images, &ep).is_err());
        assert_eq!(ep.ledger().spent, 0);
    }

    #[test]
    fn disk_cache_reused_without_spend() {
        let dir = tempfile::tempdir().unwrap();
        let (queries, images) = toy_queries(40);
        let ep = VictimEndpoint::new(toy_model(3), 1000);
        let (first, hit) = ResponseCache::obtain(&queries, &images, &ep, Some(dir.path())).unwrap();
        assert!(!hit);
        let (second, hit) = ResponseCache::obtain(&queries, &images, &ep, Some(dir.path())).unwrap();
        assert!(hit);
        assert_eq!(second, first);
        assert_eq!(second.digest(), first.digest());
        assert_eq!(ep.ledger().spent, 40);
    }

    #[test]
    fn corrupt_cache_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (queries, images) = toy_queries(5);
        let digest = ResponseCache::query_digest(&queries, &images);
        std::fs::write(ResponseCache::path_in(dir.path(), &digest), b"{").unwrap();
        assert!(matches!(
            ResponseCache::load(dir.path(), &digest),
            Err(TrainError::CorruptCache { .. })
        ));
    }

    #[test]
    fn golden_cache_digest() {
        let (queries, images) = toy_queries(20);
        let ep = VictimEndpoint::new(toy_model(11), 20);
        let cache = collect_responses(&queries, &images, &ep).unwrap();
        assert_eq!(
            cache.digest(),
            "86efe6990e92f5e8b7f884ffa73eec8db1c40cb70b5d36ed68c26677d579ca6f"
        );
    }
}
