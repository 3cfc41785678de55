use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{supcon_loss_raw, Checkpoint, ImuClipModel, ModelConfig, ModelError, Result, CHECKPOINT_FORMAT_VERSION};
use crate::corpus::{DescriptionCorpus, TextEncoder};
use crate::dataset::{ImuWindow, Normalizer};
use crate::nn::{Adam, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_imu: f32,
    pub lr_text_projection: f32,
    pub temperature: f64,
    pub weight_decay: f32,
    pub seed: u64,
    /// Architecture; window length and channels are taken from the data.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_imu: 1e-3,
            lr_text_projection: 1e-3,
            temperature: 0.07,
            weight_decay: 0.01,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Reduced epoch count for laptop-scale runs.
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(ModelError::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean per-step loss for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Contrastive training of the IMU tower and text projection. The text
/// encoder is frozen; its outputs are computed once up front.
pub fn train(
    windows: &[ImuWindow],
    class_names: &[String],
    corpus: &DescriptionCorpus,
    config: &TrainConfig,
    encoder: &dyn TextEncoder,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = windows
        .first()
        .ok_or_else(|| ModelError::Config("no training windows".into()))?;
    let labels: Vec<usize> = windows
        .iter()
        .map(|w| {
            w.label
                .filter(|&l| l < class_names.len())
                .ok_or_else(|| ModelError::Config("every training window needs a label within the class list".into()))
        })
        .collect::<Result<_>>()?;
    let mut present: Vec<usize> = labels.clone();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ModelError::Config("training needs at least two classes present".into()));
    }
    let missing: Vec<String> = class_names
        .iter()
        .filter(|c| corpus.descriptions(c).is_none_or(|d| d.is_empty()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::CoverageGap(missing));
    }
    if encoder.dim() != config.model.d_text {
        return Err(ModelError::Config(format!(
            "text encoder dimension {} differs from model text dimension {}",
            encoder.dim(),
            config.model.d_text
        )));
    }

    let model_config = ModelConfig {
        window_length: first.length,
        channels: first.channels,
        temperature: config.temperature,
        ..config.model.clone()
    };
    let normalizer = Normalizer::fit(windows)?;
    let normalized: Vec<Vec<f32>> = windows
        .iter()
        .map(|w| {
            let mut d = w.data.clone();
            normalizer.apply_in_place(&mut d);
            d
        })
        .collect();

    let d_text = encoder.dim();
    let mut text_bank: Vec<Vec<Vec<f32>>> = Vec::with_capacity(class_names.len());
    for c in class_names {
        let descs = corpus.descriptions(c).unwrap_or_default();
        text_bank.push(descs.iter().map(|d| Ok(encoder.encode(d)?.vector)).collect::<Result<_>>()?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ImuClipModel::new(model_config, rng.random())?;
    // Separate stream so corpus size changes only which texts are drawn,
    // not initialization or batch order.
    let mut text_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7e57_de5c);
    let mut adam = Adam::adamw(config.weight_decay);
    let d_shared = model.config.d_shared;
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let imu_in: Vec<&[f32]> = batch.iter().map(|&i| normalized[i].as_slice()).collect();
            let mut text_rows = Vec::with_capacity(batch.len() * d_text);
            for &i in batch {
                let bank = &text_bank[labels[i]];
                text_rows.extend_from_slice(&bank[text_rng.random_range(0..bank.len())]);
            }
            let b = batch.len();
            let imu_fwd = model.forward_imu(&imu_in)?;
            let text_fwd = model.forward_text(Matrix::from_vec(b, d_text, text_rows))?;

            let mut z = Vec::with_capacity(2 * b * d_shared);
            z.extend(imu_fwd.embeddings.data.iter().map(|&v| v as f64));
            z.extend(text_fwd.embeddings.data.iter().map(|&v| v as f64));
            let mut batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            batch_labels.extend_from_within(..);
            let out = supcon_loss_raw(&z, d_shared, &batch_labels, config.temperature)?;
            if !out.loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    step,
                    loss: out.loss,
                });
            }
            total += out.loss;
            steps += 1;

            let grad: Vec<f32> = out.grad.iter().map(|&g| g as f32).collect();
            let (g_imu, g_text) = grad.split_at(b * d_shared);
            model.zero_grad();
            model.backward_imu(&imu_fwd, &Matrix::from_vec(b, d_shared, g_imu.to_vec()));
            model.backward_text(&text_fwd, &Matrix::from_vec(b, d_shared, g_text.to_vec()));

            let (lr_imu, lr_text) = (config.lr_imu, config.lr_text_projection);
            let n_imu = model.imu_params().len();
            let params: Vec<_> = model
                .params_mut()
                .into_iter()
                .enumerate()
                .map(|(i, p)| (p, if i < n_imu { lr_imu } else { lr_text }))
                .collect();
            adam.step(params);
        }
        let mean = total / steps as f64;
        log::debug!("epoch {epoch}: loss {mean:.4}");
        epoch_losses.push(mean);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            normalizer,
            class_names: class_names.to_vec(),
            corpus_hash: corpus.content_hash(),
            text_encoder_id: encoder.id(),
            format_version: CHECKPOINT_FORMAT_VERSION,
        },
        epoch_losses,
    })
}
