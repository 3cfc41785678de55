use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use privsense_core::policy::{validate, PolicyStore, PrivacyPolicy};

fn classes() -> Vec<String> {
    ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect()
}

/// Two alternating policies; each has a distinct black set so a torn read would mix them.
fn alternating(i: u64) -> PrivacyPolicy {
    if i % 2 == 0 {
        PrivacyPolicy::new(&["a", "b"], &["c", "d"], &["e", "f"])
    } else {
        PrivacyPolicy::new(&["c", "d"], &["a", "b"], &["e", "f"])
    }
}

#[test]
fn readers_never_see_a_torn_or_regressing_policy() {
    let store = Arc::new(PolicyStore::new(alternating(0), classes()).unwrap());
    let done = Arc::new(AtomicBool::new(false));
    let readers: Vec<_> = (0..8)
        .map(|_| {
            let store = store.clone();
            let done = done.clone();
            std::thread::spawn(move || {
                let mut last = 0;
                let mut reads = 0;
                while reads < 10_000 || !done.load(Ordering::Acquire) {
                    let snap = store.snapshot();
                    assert!(snap.version >= last, "version went from {last} to {}", snap.version);
                    last = snap.version;
                    let expected = alternating(snap.version);
                    assert_eq!((&snap.white, &snap.black, &snap.gray), (&expected.white, &expected.black, &expected.gray));
                    assert!(validate(&snap, &classes()).is_ok());
                    reads += 1;
                    if reads >= 10_000 && done.load(Ordering::Acquire) {
                        break;
                    }
                }
                reads
            })
        })
        .collect();
    for i in 1..=500u64 {
        let entry = store.update(alternating(i)).unwrap();
        assert_eq!(entry.version, i);
        if i % 50 == 0 {
            std::thread::yield_now();
        }
    }
    done.store(true, Ordering::Release);
    for r in readers {
        assert!(r.join().unwrap() >= 10_000);
    }
    let history = store.history();
    assert_eq!(history.len(), 501);
    assert!(history.windows(2).all(|w| w[1].version == w[0].version + 1));
    assert_eq!(store.version(), 500);
}

#[test]
fn concurrent_writers_get_distinct_consecutive_versions() {
    let store = Arc::new(PolicyStore::new(alternating(0), classes()).unwrap());
    let writers: Vec<_> = (0..4)
        .map(|w| {
            let store = store.clone();
            std::thread::spawn(move || (0..100).map(|i| store.update(alternating(w + i)).unwrap().version).collect::<Vec<_>>())
        })
        .collect();
    let mut versions: Vec<u64> = writers.into_iter().flat_map(|w| w.join().unwrap()).collect();
    versions.sort_unstable();
    assert_eq!(versions, (1..=400).collect::<Vec<_>>());
}

#[test]
fn rejected_updates_leave_version_alone_under_load() {
    let store = PolicyStore::new(alternating(0), classes()).unwrap();
    let bad = PrivacyPolicy::new(&["a"], &["a", "b"], &["e"]);
    for _ in 0..100 {
        assert!(store.update(bad.clone()).is_err());
    }
    assert_eq!(store.version(), 0);
    assert_eq!(store.history().len(), 1);
}
