//! Outcome evaluator for QPD circuits with a bounded `µ_ℓ` memo.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

use super::qpd_circuit::{evaluate_configuration, QpdCircuit};
use crate::error::Result;
use crate::qpd::{Configuration, ProductQpd};
use crate::sampling::OutcomeEvaluator;

/// Default number of cached configuration means.
pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 20;

/// Concurrent memo of `µ_ℓ` keyed by the configuration indices.
///
/// When full, the least recently used eighth of the entries is evicted in
/// one sweep, which keeps eviction amortised O(1) per insert.
pub struct MeanCache {
    capacity: usize,
    clock: AtomicU64,
    map: Mutex<HashMap<Vec<u32>, (f64, u64)>>,
}

impl MeanCache {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, clock: AtomicU64::new(0), map: Mutex::new(HashMap::new()) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.map.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &[u32]) -> Option<f64> {
        let tick = self.clock.fetch_add(1, Ordering::Relaxed);
        let mut map = self.map.lock();
        map.get_mut(key).map(|entry| {
            entry.1 = tick;
            entry.0
        })
    }

    pub fn insert(&self, key: Vec<u32>, value: f64) {
        if self.capacity == 0 {
            return;
        }
        let tick = self.clock.fetch_add(1, Ordering::Relaxed);
        let mut map = self.map.lock();
        if map.len() >= self.capacity && !map.contains_key(&key) {
            let evict = (self.capacity / 8).max(1);
            let mut stamps: Vec<u64> = map.values().map(|v| v.1).collect();
            let cut = evict.min(stamps.len()) - 1;
            let (_, threshold, _) = stamps.select_nth_unstable(cut);
            let threshold = *threshold;
            map.retain(|_, v| v.1 > threshold);
        }
        map.insert(key, (value, tick));
    }
}

/// Evaluates `µ_ℓ` by density-matrix simulation of the circuit variant.
pub struct CircuitEvaluator {
    circuit: QpdCircuit,
    cache: MeanCache,
}

impl CircuitEvaluator {
    pub fn new(circuit: QpdCircuit) -> Self {
        Self::with_capacity(circuit, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(circuit: QpdCircuit, capacity: usize) -> Self {
        Self { circuit, cache: MeanCache::new(capacity) }
    }

    pub fn circuit(&self) -> &QpdCircuit {
        &self.circuit
    }

    pub fn cache(&self) -> &MeanCache {
        &self.cache
    }
}

impl OutcomeEvaluator for CircuitEvaluator {
    fn qpd(&self) -> &ProductQpd {
        self.circuit.qpd()
    }

    fn conditional_mean(&self, config: &Configuration) -> Result<f64> {
        if let Some(mu) = self.cache.get(config.indices()) {
            return Ok(mu);
        }
        let mu = evaluate_configuration(&self.circuit, config)?;
        self.cache.insert(config.indices().to_vec(), mu);
        Ok(mu)
    }
}
