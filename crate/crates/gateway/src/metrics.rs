use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Lock-free counters shared by all sessions.
#[derive(Debug)]
pub struct Metrics {
    seen: AtomicU64,
    replaced: AtomicU64,
    classes: Vec<String>,
    per_class: Vec<AtomicU64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub windows_seen: u64,
    pub windows_replaced: u64,
    /// Replacement counts keyed by the replacement (gray) class.
    pub replacements_per_class: BTreeMap<String, u64>,
    pub policy_version: u64,
    pub uptime_s: f64,
}

impl Metrics {
    pub fn new(classes: &[String]) -> Self {
        Self {
            seen: AtomicU64::new(0),
            replaced: AtomicU64::new(0),
            classes: classes.to_vec(),
            per_class: classes.iter().map(|_| AtomicU64::new(0)).collect(),
        }
    }

    /// `replacement` is the gray class a window was replaced with, if any.
    pub fn record(&self, replacement: Option<&str>) {
        // seen is bumped first so a reader never observes replaced > seen
        self.seen.fetch_add(1, Ordering::SeqCst);
        if let Some(class) = replacement {
            if let Some(i) = self.classes.iter().position(|c| c == class) {
                self.per_class[i].fetch_add(1, Ordering::SeqCst);
            }
            self.replaced.fetch_add(1, Ordering::SeqCst);
        }
    }

    pub fn snapshot(&self, policy_version: u64, uptime_s: f64) -> MetricsSnapshot {
        let windows_replaced = self.replaced.load(Ordering::SeqCst);
        let windows_seen = self.seen.load(Ordering::SeqCst);
        MetricsSnapshot {
            windows_seen,
            windows_replaced,
            replacements_per_class: self
                .classes
                .iter()
                .cloned()
                .zip(self.per_class.iter().map(|c| c.load(Ordering::SeqCst)))
                .collect(),
            policy_version,
            uptime_s,
        }
    }
}
