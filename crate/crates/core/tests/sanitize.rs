mod common;

use privsense_core::policy::{Category, PolicyStore, PrivacyPolicy};
use privsense_core::sanitizer::{sanitize_stream, Action};

#[test]
fn algorithm_invariants_hold_on_a_trained_model() {
    let t = common::trained(11);
    let policy = common::policy();
    let results = t.sanitizer.sanitize_batch(&t.test, &policy, 0).unwrap();
    assert_eq!(results.len(), t.test.len());
    let mut replaced = 0;
    for (w, r) in t.test.iter().zip(&results) {
        let top1 = &r.ranking.top1().name;
        assert_eq!(&r.detected_top1, top1);
        match policy.categorize(top1) {
            Category::Black => {
                assert_eq!(r.action, Action::Replaced);
                let target = r.replacement_class.as_deref().unwrap();
                assert_eq!(policy.categorize(target), Category::Gray);
                assert!(r.replacement_description.is_some());
                assert_eq!(r.output.shape(), w.shape());
                assert!(r.output.data.iter().all(|v| v.is_finite()));
                replaced += 1;
            }
            _ => {
                assert_eq!(r.action, Action::Passthrough);
                assert!(r.output.bit_identical(w));
                assert!(r.replacement_class.is_none());
            }
        }
    }
    assert!(replaced > t.test.len() / 5, "only {replaced} replaced");
}

#[test]
fn batch_matches_single_window_calls() {
    let t = common::trained(12);
    let policy = common::policy();
    let batch = t.sanitizer.sanitize_batch(&t.test[..40], &policy, 100).unwrap();
    for (i, (w, b)) in t.test[..40].iter().zip(&batch).enumerate() {
        let single = t.sanitizer.sanitize(w, &policy, 100 + i as u64).unwrap();
        assert_eq!(single.action, b.action);
        assert_eq!(single.replacement_class, b.replacement_class);
        assert!(single.output.bit_identical(&b.output));
    }
}

#[test]
fn resanitizing_output_mostly_passes_through() {
    let t = common::trained(13);
    let policy = common::policy();
    let once = t.sanitizer.sanitize_batch(&t.test, &policy, 0).unwrap();
    let outputs: Vec<_> = once.iter().map(|r| r.output.clone()).collect();
    let twice = t.sanitizer.sanitize_batch(&outputs, &policy, 0).unwrap();
    let passthrough = twice.iter().filter(|r| r.action == Action::Passthrough).count();
    let ratio = passthrough as f64 / twice.len() as f64;
    assert!(ratio >= 0.9, "second pass passthrough ratio {ratio:.3}");
}

#[test]
fn stream_picks_up_policy_switch_between_windows() {
    let t = common::trained(14);
    let store = PolicyStore::new(common::policy(), t.class_names.clone()).unwrap();
    let swapped = PrivacyPolicy::new(&["swinging", "hammering"], &["walking", "knocking"], &["standing", "brushing"]);
    let windows: Vec<_> = t.test.iter().take(60).cloned().collect();
    let mut versions = Vec::new();
    let delivered = sanitize_stream(windows.clone(), &t.sanitizer, &store, 0, |r| {
        versions.push(r.policy_version);
        if versions.len() == 30 {
            store.update(swapped.clone()).unwrap();
        }
    })
    .unwrap();
    assert_eq!(delivered, 60);
    assert!(versions[..30].iter().all(|&v| v == 0));
    assert!(versions[30..].iter().all(|&v| v == 1));
}

#[test]
fn wrong_shape_windows_are_skipped_in_streams() {
    let t = common::trained(15);
    let store = PolicyStore::new(common::policy(), t.class_names.clone()).unwrap();
    let mut windows: Vec<_> = t.test.iter().take(5).cloned().collect();
    windows.insert(2, privsense_core::dataset::ImuWindow::new(16, 6, vec![0.0; 96]));
    let delivered = sanitize_stream(windows, &t.sanitizer, &store, 0, |_| {}).unwrap();
    assert_eq!(delivered, 5);
}

#[test]
fn policies_naming_unknown_classes_are_refused() {
    let t = common::trained(16);
    let bad = PrivacyPolicy::new(&["walking"], &["juggling"], &["standing"]);
    assert!(t.sanitizer.sanitize(&t.test[0], &bad, 0).is_err());
}
