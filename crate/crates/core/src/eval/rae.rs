//! Replacement autoencoder baseline: reconstructs non-sensitive windows and
//! maps sensitive ones onto windows of a fixed set of replacement classes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::dataset::{ImuWindow, Normalizer};
use crate::nn::{mse, selu, selu_backward, Adam, Linear, Matrix, Param};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaeConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Sensitive class -> replacement classes, fixed at training time.
    pub mapping: BTreeMap<usize, Vec<usize>>,
}

impl Default for RaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128, 64, 128, 256],
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            mapping: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rae {
    pub layers: Vec<Linear>,
    pub normalizer: Normalizer,
    pub window_length: usize,
    pub channels: usize,
    pub mapping: BTreeMap<usize, Vec<usize>>,
    pub epoch_losses: Vec<f32>,
}

impl Rae {
    /// Returns pre-activations and activations for every layer.
    fn forward(&self, x: Matrix) -> (Vec<Matrix>, Vec<Matrix>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = vec![x];
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(act.last().expect("input present"));
            let a = if i + 1 < self.layers.len() { selu(&z) } else { z.clone() };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    fn backward(&mut self, pre: &[Matrix], act: &[Matrix], dout: Matrix) {
        let n = self.layers.len();
        let mut d = dout;
        for i in (0..n).rev() {
            if i + 1 < n {
                d = selu_backward(&pre[i], &d);
            }
            d = self.layers[i].backward(&act[i], &d);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn flat(&self, windows: &[ImuWindow]) -> Result<Matrix> {
        let dim = self.window_length * self.channels;
        let mut data = Vec::with_capacity(windows.len() * dim);
        for w in windows {
            if w.shape() != (self.window_length, self.channels) {
                return Err(EvalError::Config(format!(
                    "autoencoder expects {} x {} windows, got {} x {}",
                    self.window_length, self.channels, w.length, w.channels
                )));
            }
            let mut d = w.data.clone();
            self.normalizer.apply_in_place(&mut d);
            data.extend(d);
        }
        Ok(Matrix::from_vec(windows.len(), dim, data))
    }

    /// Pure forward pass; output in raw units.
    pub fn transform_batch(&self, windows: &[ImuWindow]) -> Result<Vec<ImuWindow>> {
        let (_, act) = self.forward(self.flat(windows)?);
        let out = act.last().expect("output present");
        Ok(windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let normalized = ImuWindow::new(self.window_length, self.channels, out.row(i).to_vec());
                let mut raw = self.normalizer.invert(&normalized);
                raw.source_index = w.source_index;
                raw
            })
            .collect())
    }

    /// Mean squared reconstruction error in normalized units.
    pub fn reconstruction_mse(&self, windows: &[ImuWindow]) -> Result<f32> {
        let x = self.flat(windows)?;
        let (_, act) = self.forward(x.clone());
        Ok(mse(act.last().expect("output present"), &x).0)
    }
}

pub fn rae_transform(model: &Rae, window: &ImuWindow) -> Result<ImuWindow> {
    Ok(model.transform_batch(std::slice::from_ref(window))?.remove(0))
}

pub fn rae_train(windows: &[ImuWindow], config: &RaeConfig) -> Result<Rae> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(EvalError::Config("epochs and batch size must be positive".into()));
    }
    let first = windows
        .first()
        .ok_or_else(|| EvalError::Config("no training windows".into()))?;
    let (l, c) = first.shape();
    let labels: Vec<Option<usize>> = windows.iter().map(|w| w.label).collect();
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            pools.entry(*l).or_default().push(i);
        }
    }
    for (black, targets) in &config.mapping {
        if targets.is_empty() {
            return Err(EvalError::Config(format!("class {black} has no replacement targets")));
        }
        for t in targets {
            if config.mapping.contains_key(t) {
                return Err(EvalError::Config(format!("replacement target {t} is itself sensitive")));
            }
            if !pools.contains_key(t) {
                return Err(EvalError::Config(format!("replacement target {t} has no training windows")));
            }
        }
    }

    let normalizer = Normalizer::fit(windows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = l * c;
    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(dim);
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, s)| Linear::new(&format!("layer{i}"), s[0], s[1], &mut rng))
        .collect();
    let mut model = Rae {
        layers,
        normalizer,
        window_length: l,
        channels: c,
        mapping: config.mapping.clone(),
        epoch_losses: Vec::new(),
    };
    let x_all = model.flat(windows)?;
    let mut adam = Adam::new();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut x = Vec::with_capacity(batch.len() * dim);
            let mut y = Vec::with_capacity(batch.len() * dim);
            for &i in batch {
                x.extend_from_slice(x_all.row(i));
                let target = match labels[i].and_then(|l| config.mapping.get(&l)) {
                    Some(targets) => {
                        let class = targets[rng.random_range(0..targets.len())];
                        let pool = &pools[&class];
                        pool[rng.random_range(0..pool.len())]
                    }
                    None => i,
                };
                y.extend_from_slice(x_all.row(target));
            }
            let (pre, act) = model.forward(Matrix::from_vec(batch.len(), dim, x));
            let (loss, grad) = mse(act.last().expect("output present"), &Matrix::from_vec(batch.len(), dim, y));
            if !loss.is_finite() {
                return Err(EvalError::NonFiniteLoss {
                    what: "autoencoder".into(),
                    epoch,
                    step,
                });
            }
            total += loss;
            steps += 1;
            model.params_mut().into_iter().for_each(Param::zero_grad);
            model.backward(&pre, &act, grad);
            let lr = config.lr;
            adam.step(model.params_mut().into_iter().map(|p| (p, lr)).collect());
        }
        model.epoch_losses.push(total / steps as f32);
    }
    Ok(model)
}
