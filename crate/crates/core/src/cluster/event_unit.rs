//! Per-cluster event unit: records when events fire and computes when a
//! waiter on a set of events resumes.

use std::collections::HashMap;
use std::hash::Hash;

use crate::engine::Cycle;

#[derive(Debug, Clone)]
pub struct EventUnit<K> {
    latency: Cycle,
    fired: HashMap<K, Cycle>,
}

impl<K: Copy + Eq + Hash> EventUnit<K> {
    pub fn new(latency: Cycle) -> Self {
        Self {
            latency,
            fired: HashMap::new(),
        }
    }

    pub fn latency(&self) -> Cycle {
        self.latency
    }

    /// Records `id` as fired at `cycle`. Re-posting keeps the first time.
    pub fn post(&mut self, id: K, cycle: Cycle) {
        self.fired.entry(id).or_insert(cycle);
    }

    pub fn fired_at(&self, id: K) -> Option<Cycle> {
        self.fired.get(&id).copied()
    }

    /// Resume cycle of a waiter that starts waiting at `now`, or `None`
    /// while some event in `mask` has not fired.
    pub fn wait(&self, mask: &[K], now: Cycle) -> Option<Cycle> {
        let mut last = 0;
        for id in mask {
            last = last.max(*self.fired.get(id)?);
        }
        Some(now.max(last) + self.latency)
    }

    /// Events of `mask` that have not fired yet.
    pub fn missing(&self, mask: &[K]) -> Vec<K> {
        mask.iter().copied().filter(|id| !self.fired.contains_key(id)).collect()
    }

    /// Drops an event once no waiter can ask for it again.
    pub fn forget(&mut self, id: K) {
        self.fired.remove(&id);
    }
}
