//! Bounded, expiring session cache keyed by query token.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use lru::LruCache;

pub struct TokenCache<V> {
    inner: Mutex<LruCache<String, (Instant, Arc<V>)>>,
    ttl: Duration,
}

impl<V> TokenCache<V> {
    pub fn new(capacity: NonZeroUsize, ttl: Duration) -> Self {
        Self {
            inner: Mutex::new(LruCache::new(capacity)),
            ttl,
        }
    }

    /// Stores `value`, refreshing its insertion time if the token exists.
    pub fn insert(&self, token: String, value: V, now: Instant) -> Arc<V> {
        let value = Arc::new(value);
        self.lock().put(token, (now, value.clone()));
        value
    }

    /// The live entry for `token`. Expired entries are dropped and reported
    /// as absent.
    pub fn get(&self, token: &str, now: Instant) -> Option<Arc<V>> {
        let mut cache = self.lock();
        let (created, value) = cache.get(token)?;
        if now.saturating_duration_since(*created) >= self.ttl {
            cache.pop(token);
            return None;
        }
        Some(value.clone())
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LruCache<String, (Instant, Arc<V>)>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}
