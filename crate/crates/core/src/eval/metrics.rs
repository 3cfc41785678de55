use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::policy::PrivacyPolicy;

/// `confusion[truth][pred]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    m
}

/// One-vs-rest F1 per class; `None` where the class never occurs in either
/// vector (F1 undefined).
pub fn per_class_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<Option<f64>> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fneg = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| 2.0 * tp[c] as f64 / denom as f64)
        })
        .collect()
}

/// Mean F1 over `classes`, skipping undefined ones; `None` if nothing is defined.
pub fn mean_f1(f1: &[Option<f64>], classes: &[usize]) -> Option<f64> {
    let vals: Vec<f64> = classes.iter().filter_map(|&c| f1.get(c).copied().flatten()).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let f1 = per_class_f1(pred, truth, n_classes);
    let present: Vec<usize> = (0..n_classes).filter(|&c| truth.contains(&c)).collect();
    mean_f1(&f1, &present).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupScores {
    pub white: Option<f64>,
    pub black: Option<f64>,
    pub gray: Option<f64>,
}

/// Report for one evaluated configuration. F1 values are on a 0-1 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    /// Each group scored on the windows whose original label is in it.
    pub groups: GroupScores,
    /// Each group scored with one-vs-rest counts over every window.
    pub groups_all_windows: GroupScores,
    pub per_class: BTreeMap<String, Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub runtime_s: f64,
    pub f1_scale: String,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn indices(names: &[String], set: &std::collections::BTreeSet<String>) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| set.contains(*n))
        .map(|(i, _)| i)
        .collect()
}

/// Per-class F1 against the original labels, averaged within each policy
/// group. `groups` restricts the counts to the group's own windows, so black
/// windows turned into gray ones do not count as gray false positives;
/// `groups_all_windows` keeps them.
pub fn grouped_f1(pred: &[usize], truth: &[usize], class_names: &[String], policy: &PrivacyPolicy) -> Result<ExperimentReport> {
    if pred.len() != truth.len() {
        return Err(EvalError::Config(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let n = class_names.len();
    if let Some(&bad) = pred.iter().chain(truth).find(|&&v| v >= n) {
        return Err(EvalError::Config(format!("label {bad} outside {n} classes")));
    }
    let f1 = per_class_f1(pred, truth, n);
    let global = |set| {
        let idx = indices(class_names, set);
        if idx.is_empty() {
            None
        } else {
            mean_f1(&f1, &idx)
        }
    };
    let within = |set| {
        let idx = indices(class_names, set);
        let (p, t): (Vec<usize>, Vec<usize>) = pred
            .iter()
            .zip(truth)
            .filter(|(_, t)| idx.contains(t))
            .map(|(&p, &t)| (p, t))
            .unzip();
        if idx.is_empty() {
            None
        } else {
            mean_f1(&per_class_f1(&p, &t, n), &idx)
        }
    };
    Ok(ExperimentReport {
        experiment: String::new(),
        config: serde_json::Value::Null,
        groups: GroupScores {
            white: within(&policy.white),
            black: within(&policy.black),
            gray: within(&policy.gray),
        },
        groups_all_windows: GroupScores {
            white: global(&policy.white),
            black: global(&policy.black),
            gray: global(&policy.gray),
        },
        per_class: class_names.iter().cloned().zip(f1.iter().copied()).collect(),
        confusion: confusion_matrix(pred, truth, n),
        runtime_s: 0.0,
        f1_scale: "0-1".into(),
    })
}

/// Spearman rank correlation with average ranks for ties. Zero if either
/// side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![0, 1, 2, 3, 0, 1];
        let p = PrivacyPolicy::new(&["c0"], &["c1"], &["c2", "c3"]);
        let r = grouped_f1(&t, &t, &names(4), &p).unwrap();
        assert_eq!(r.groups.white, Some(1.0));
        assert_eq!(r.groups.black, Some(1.0));
        assert_eq!(r.groups.gray, Some(1.0));
    }

    #[test]
    fn black_predicted_as_gray_scores_zero() {
        let t = vec![1, 1, 1, 2];
        let pr = vec![2, 2, 2, 2];
        let p = PrivacyPolicy::new(&["c0"], &["c1"], &["c2"]);
        let r = grouped_f1(&pr, &t, &names(3), &p).unwrap();
        assert_eq!(r.groups.black, Some(0.0));
        assert_eq!(r.groups.white, None);
        let empty = PrivacyPolicy::new::<&str>(&[], &[], &[]);
        assert_eq!(grouped_f1(&pr, &t, &names(3), &empty).unwrap().groups, GroupScores::default());
    }

    #[test]
    fn twenty_sample_hand_count() {
        let t = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2];
        let p = [0, 0, 0, 0, 0, 1, 2, 1, 1, 1, 1, 0, 0, 2, 2, 2, 2, 2, 1, 0];
        // class 0: tp 5, fp 3, fn 2 -> 10/15; class 1: tp 4, fp 2, fn 2 -> 8/12; class 2: tp 5, fp 1, fn 2 -> 10/13
        let f = per_class_f1(&p, &t, 3);
        assert!((f[0].unwrap() - 10.0 / 15.0).abs() < 1e-12);
        assert!((f[1].unwrap() - 8.0 / 12.0).abs() < 1e-12);
        assert!((f[2].unwrap() - 10.0 / 13.0).abs() < 1e-12);
        let pol = PrivacyPolicy::new(&["c0"], &["c1"], &["c2"]);
        let r = grouped_f1(&p, &t, &names(3), &pol).unwrap();
        let rows: Vec<usize> = r.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![7, 6, 7]);
    }

    #[test]
    fn replacements_hurt_gray_only_in_global_scores() {
        // 4 gray windows (class 2) classified correctly, 4 black windows (class 1) turned gray
        let t = [2, 2, 2, 2, 1, 1, 1, 1];
        let p = [2, 2, 2, 2, 2, 2, 2, 2];
        let pol = PrivacyPolicy::new(&["c0"], &["c1"], &["c2"]);
        let r = grouped_f1(&p, &t, &names(3), &pol).unwrap();
        assert_eq!(r.groups.gray, Some(1.0));
        assert_eq!(r.groups.black, Some(0.0));
        assert_eq!(r.groups.white, None);
        // globally: tp 4, fp 4 -> 8/12
        assert!((r.groups_all_windows.gray.unwrap() - 8.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // ties: ranks of y are (1.5, 1.5, 3)
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]);
        assert!((r - 0.75f64.sqrt()).abs() < 1e-12, "{r}");
    }

    #[test]
    fn report_round_trips() {
        let pol = PrivacyPolicy::new(&["c0"], &["c1"], &["c2"]);
        let r = grouped_f1(&[0, 1, 2], &[0, 2, 2], &names(3), &pol).unwrap();
        let back: ExperimentReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn matches_brute_force_confusion(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100)
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let f = per_class_f1(&p, &t, 4);
            let cm = confusion_matrix(&p, &t, 4);
            for c in 0..4 {
                let tp = cm[c][c] as f64;
                let fp: f64 = (0..4).filter(|&r| r != c).map(|r| cm[r][c] as f64).sum();
                let fneg: f64 = (0..4).filter(|&k| k != c).map(|k| cm[c][k] as f64).sum();
                if tp + fp + fneg == 0.0 {
                    prop_assert!(f[c].is_none());
                } else {
                    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                    let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
                    let want = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
                    prop_assert!((f[c].unwrap() - want).abs() < 1e-12);
                }
            }
            let rows: Vec<usize> = cm.iter().map(|r| r.iter().sum()).collect();
            for c in 0..4 {
                prop_assert_eq!(rows[c], t.iter().filter(|&&x| x == c).count());
            }
        }
    }
}
