use super::{similarity, Checkpoint, ClassAnchors, ModelError, Result, SimilarityRanking};
use crate::corpus::{DescriptionCorpus, TextEncoder};
use crate::dataset::ImuWindow;

/// A loaded checkpoint with anchors precomputed for every class. Immutable
/// and shareable across threads.
#[derive(Debug, Clone)]
pub struct Classifier {
    checkpoint: Checkpoint,
    anchors: ClassAnchors,
}

impl Classifier {
    pub fn new(checkpoint: Checkpoint, corpus: &DescriptionCorpus, encoder: &dyn TextEncoder) -> Result<Self> {
        if encoder.id() != checkpoint.text_encoder_id {
            return Err(ModelError::EncoderMismatch {
                expected: checkpoint.text_encoder_id.clone(),
                actual: encoder.id(),
            });
        }
        let anchors = ClassAnchors::build(&checkpoint.class_names, corpus, &checkpoint.model, encoder)?;
        Ok(Self { checkpoint, anchors })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn anchors(&self) -> &ClassAnchors {
        &self.anchors
    }

    pub fn class_names(&self) -> &[String] {
        &self.checkpoint.class_names
    }

    pub fn window_shape(&self) -> (usize, usize) {
        let c = self.checkpoint.config();
        (c.window_length, c.channels)
    }

    pub fn check_shape(&self, window: &ImuWindow) -> Result<()> {
        let (l, c) = self.window_shape();
        if window.length != l || window.channels != c || window.data.len() != l * c {
            return Err(ModelError::Shape(format!(
                "expected window of {l} x {c}, got {} x {}",
                window.length, window.channels
            )));
        }
        Ok(())
    }

    /// Normalizes a raw window and embeds it.
    pub fn embed(&self, window: &ImuWindow) -> Result<Vec<f32>> {
        self.check_shape(window)?;
        let mut data = window.data.clone();
        self.checkpoint.normalizer.apply_in_place(&mut data);
        self.checkpoint.model.encode_imu(&data)
    }

    pub fn rank<S: AsRef<str>>(&self, window: &ImuWindow, candidates: &[S]) -> Result<SimilarityRanking> {
        let anchors = self.anchors.subset(candidates)?;
        let mut r = similarity(&self.embed(window)?, &anchors)?;
        r.window_id = Some(window.source_index as u64);
        Ok(r)
    }

    pub fn classify<S: AsRef<str>>(&self, window: &ImuWindow, candidates: &[S]) -> Result<(String, SimilarityRanking)> {
        let r = self.rank(window, candidates)?;
        Ok((r.top1().name.clone(), r))
    }

    /// Rankings for many raw windows, batched through the encoder.
    pub fn rank_batch<S: AsRef<str>>(&self, windows: &[ImuWindow], candidates: &[S]) -> Result<Vec<SimilarityRanking>> {
        let anchors = self.anchors.subset(candidates)?;
        let mut normalized = Vec::with_capacity(windows.len());
        for w in windows {
            self.check_shape(w)?;
            let mut data = w.data.clone();
            self.checkpoint.normalizer.apply_in_place(&mut data);
            normalized.push(data);
        }
        let refs: Vec<&[f32]> = normalized.iter().map(|d| d.as_slice()).collect();
        let emb = self.checkpoint.model.encode_imu_batch(&refs)?;
        (0..emb.rows)
            .map(|i| {
                let mut r = similarity(emb.row(i), &anchors)?;
                r.window_id = Some(windows[i].source_index as u64);
                Ok(r)
            })
            .collect()
    }

    /// Top-1 class indices over all checkpoint classes.
    pub fn predict_indices(&self, windows: &[ImuWindow]) -> Result<Vec<usize>> {
        Ok(self
            .rank_batch(windows, &self.checkpoint.class_names)?
            .iter()
            .map(|r| r.top1().index)
            .collect())
    }
}
