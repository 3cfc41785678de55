//! The honest-but-curious activity classifier: three convolutions and two
//! dense layers, trained on untransformed data.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::dataset::{ImuWindow, Normalizer};
use crate::nn::{relu, relu_backward, softmax_cross_entropy, Adam, Conv1d, Linear, Matrix, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            filters: 16,
            kernel: 5,
            hidden: 64,
            seed: 0,
        }
    }
}

impl AdversaryConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 50,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adversary {
    pub convs: Vec<Conv1d>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub normalizer: Normalizer,
    pub window_length: usize,
    pub channels: usize,
    pub n_classes: usize,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f32>,
}

struct Forward {
    cols: Vec<Matrix>,
    outs: Vec<Matrix>,
    flat: Matrix,
    hidden: Matrix,
    logits: Matrix,
}

impl Adversary {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for c in &mut self.convs {
            out.extend(c.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    fn forward(&self, batch: &[&[f32]]) -> Forward {
        let (l, c) = (self.window_length, self.channels);
        let mut x = Matrix::from_vec(batch.len() * l, c, batch.concat());
        let mut cols = Vec::new();
        let mut outs = Vec::new();
        for conv in &self.convs {
            let (y, col) = conv.forward(&x, l);
            let y = relu(&y);
            cols.push(col);
            outs.push(y.clone());
            x = y;
        }
        let flat = Matrix::from_vec(batch.len(), l * x.cols, x.data);
        let hidden = relu(&self.fc1.forward(&flat));
        let logits = self.fc2.forward(&hidden);
        Forward {
            cols,
            outs,
            flat,
            hidden,
            logits,
        }
    }

    fn backward(&mut self, f: &Forward, dlogits: &Matrix) {
        let l = self.window_length;
        let dh = self.fc2.backward(&f.hidden, dlogits);
        let dh = relu_backward(&f.hidden, &dh);
        let dflat = self.fc1.backward(&f.flat, &dh);
        let filters = f.outs.last().map_or(0, |o| o.cols);
        let mut dy = Matrix::from_vec(dflat.rows * l, filters, dflat.data);
        for i in (0..self.convs.len()).rev() {
            let d = relu_backward(&f.outs[i], &dy);
            dy = self.convs[i].backward(&f.cols[i], &d, l);
        }
    }

    pub fn logits(&self, windows: &[ImuWindow]) -> Result<Matrix> {
        let mut rows = Vec::with_capacity(windows.len() * self.n_classes);
        let normalized = self.normalize(windows)?;
        for chunk in normalized.chunks(256) {
            let refs: Vec<&[f32]> = chunk.iter().map(|d| d.as_slice()).collect();
            rows.extend(self.forward(&refs).logits.data);
        }
        Ok(Matrix::from_vec(windows.len(), self.n_classes, rows))
    }

    pub fn predict(&self, windows: &[ImuWindow]) -> Result<Vec<usize>> {
        let logits = self.logits(windows)?;
        Ok((0..logits.rows)
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
            })
            .collect())
    }

    fn normalize(&self, windows: &[ImuWindow]) -> Result<Vec<Vec<f32>>> {
        windows
            .iter()
            .map(|w| {
                if w.shape() != (self.window_length, self.channels) {
                    return Err(EvalError::Config(format!(
                        "adversary expects {} x {} windows, got {} x {}",
                        self.window_length, self.channels, w.length, w.channels
                    )));
                }
                let mut d = w.data.clone();
                self.normalizer.apply_in_place(&mut d);
                Ok(d)
            })
            .collect()
    }
}

/// Trains on labeled original windows; fits its own normalizer.
pub fn train_adversary(windows: &[ImuWindow], n_classes: usize, config: &AdversaryConfig) -> Result<Adversary> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(EvalError::Config("epochs and batch size must be positive".into()));
    }
    let labels: Vec<usize> = windows
        .iter()
        .map(|w| w.label.filter(|&l| l < n_classes))
        .collect::<Option<_>>()
        .ok_or_else(|| EvalError::Config("adversary training windows need labels within the class count".into()))?;
    let mut distinct = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(EvalError::Config("adversary needs at least two classes".into()));
    }
    let (l, c) = windows[0].shape();
    let normalizer = Normalizer::fit(windows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let f = config.filters;
    let convs = vec![
        Conv1d::new("conv0", c, f, config.kernel, &mut rng),
        Conv1d::new("conv1", f, f, config.kernel, &mut rng),
        Conv1d::new("conv2", f, f, config.kernel, &mut rng),
    ];
    let mut model = Adversary {
        convs,
        fc1: Linear::new("fc1", l * f, config.hidden, &mut rng),
        fc2: Linear::new("fc2", config.hidden, n_classes, &mut rng),
        normalizer,
        window_length: l,
        channels: c,
        n_classes,
        epoch_losses: Vec::new(),
    };
    let data = model.normalize(windows)?;
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&[f32]> = batch.iter().map(|&i| data[i].as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let fwd = model.forward(&refs);
            let (loss, grad) = softmax_cross_entropy(&fwd.logits, &targets);
            if !loss.is_finite() {
                return Err(EvalError::NonFiniteLoss {
                    what: "adversary".into(),
                    epoch,
                    step,
                });
            }
            total += loss;
            steps += 1;
            model.params_mut().into_iter().for_each(Param::zero_grad);
            model.backward(&fwd, &grad);
            let lr = config.lr;
            adam.step(model.params_mut().into_iter().map(|p| (p, lr)).collect());
        }
        model.epoch_losses.push(total / steps as f32);
    }
    Ok(model)
}
