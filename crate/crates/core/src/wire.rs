//! JSON shapes shared by the gateway and the CLI.

use serde::{Deserialize, Serialize};

use crate::dataset::ImuWindow;
use crate::model::SimilarityRanking;
use crate::sanitizer::{Action, SanitizationResult};

/// Time-major raw window: `length` rows of `channels` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowJson {
    pub length: usize,
    pub channels: usize,
    pub data: Vec<Vec<f32>>,
}

impl WindowJson {
    pub fn from_window(w: &ImuWindow) -> Self {
        Self {
            length: w.length,
            channels: w.channels,
            data: (0..w.length).map(|t| w.row(t).to_vec()).collect(),
        }
    }

    /// Checks the declared shape against the rows and against `expected`.
    pub fn to_window(&self, expected: (usize, usize)) -> Result<ImuWindow, String> {
        let (l, c) = expected;
        if self.length != l || self.channels != c {
            return Err(format!(
                "expected window of {l} x {c}, got {} x {}",
                self.length, self.channels
            ));
        }
        if self.data.len() != l {
            return Err(format!("expected {l} rows, got {}", self.data.len()));
        }
        if let Some((t, row)) = self.data.iter().enumerate().find(|(_, r)| r.len() != c) {
            return Err(format!("row {t} has {} values, expected {c}", row.len()));
        }
        if self.data.iter().flatten().any(|v| !v.is_finite()) {
            return Err("window contains non-finite values".into());
        }
        Ok(ImuWindow::new(l, c, self.data.concat()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingJson {
    pub top1: String,
    pub top_k: Vec<(String, f32)>,
    pub policy_version: u64,
}

impl RankingJson {
    pub fn new(ranking: &SimilarityRanking, policy_version: u64) -> Self {
        Self {
            top1: ranking.top1().name.clone(),
            top_k: ranking.pairs(),
            policy_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizationJson {
    pub action: Action,
    pub top1: String,
    pub replacement: Option<String>,
    pub replacement_description: Option<String>,
    pub policy_version: u64,
    pub window: WindowJson,
    pub top_k: Vec<(String, f32)>,
}

impl From<&SanitizationResult> for SanitizationJson {
    fn from(r: &SanitizationResult) -> Self {
        Self {
            action: r.action,
            top1: r.detected_top1.clone(),
            replacement: r.replacement_class.clone(),
            replacement_description: r.replacement_description.clone(),
            policy_version: r.policy_version,
            window: WindowJson::from_window(&r.output),
            top_k: r.ranking.pairs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_round_trip_and_shape_errors() {
        let w = ImuWindow::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = WindowJson::from_window(&w);
        assert_eq!(j.data, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert!(j.to_window((2, 3)).unwrap().bit_identical(&w));
        let err = j.to_window((2, 4)).unwrap_err();
        assert!(err.contains("2 x 4") && err.contains("2 x 3"));
        let mut ragged = j.clone();
        ragged.data[1].pop();
        assert!(ragged.to_window((2, 3)).unwrap_err().contains("row 1"));
    }
}
