use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::nn::{
    l2_normalize_rows, l2_normalize_rows_backward, relu, relu_backward, AttentionCache, LayerNorm, LayerNormCache,
    Linear, Matrix, Param, SelfAttention,
};

/// Shape hyperparameters of the dual encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window_length: usize,
    pub channels: usize,
    /// Timesteps per patch; the patch covers all channels.
    pub patch_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_text: usize,
    pub d_shared: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_length: 32,
            channels: 6,
            patch_len: 4,
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            d_text: 512,
            d_shared: 512,
            temperature: 0.07,
        }
    }
}

impl ModelConfig {
    pub fn tokens(&self) -> usize {
        self.window_length / self.patch_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.window_length == 0 || self.channels == 0 || self.patch_len == 0 {
            return bad("window length, channels and patch length must be positive");
        }
        if self.window_length % self.patch_len != 0 {
            return bad("patch length must divide the window length");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("model width must be a positive multiple of the head count");
        }
        if self.d_text == 0 || self.d_shared == 0 {
            return bad("text and shared dimensions must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }
}

/// Pre-norm residual self-attention: `x + attn(norm(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub norm: LayerNorm,
    pub attention: SelfAttention,
}

/// Patch embedding, learned positions, attention stack, mean pool, dense +
/// ReLU and the IMU projection head; plus the text projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImuClipModel {
    pub config: ModelConfig,
    pub patch_embed: Linear,
    pub position: Param,
    pub blocks: Vec<AttentionBlock>,
    pub dense: Linear,
    pub imu_projection: Linear,
    pub text_projection: Linear,
}

struct BlockCache {
    normed: Matrix,
    norm: LayerNormCache,
    attention: AttentionCache,
}

pub(crate) struct ImuForward {
    pub embeddings: Matrix,
    patches: Matrix,
    blocks: Vec<BlockCache>,
    pooled: Matrix,
    hidden: Matrix,
    norms: Vec<f32>,
}

pub(crate) struct TextForward {
    pub embeddings: Matrix,
    inputs: Matrix,
    norms: Vec<f32>,
}

impl ImuClipModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let patch_in = config.patch_len * config.channels;
        let patch_embed = Linear::new("patch_embed", patch_in, d, &mut rng);
        let mut position = Param::xavier("position", config.tokens(), d, &mut rng);
        position.value.data.iter_mut().for_each(|v| *v *= 0.1);
        let blocks = (0..config.n_layers)
            .map(|i| AttentionBlock {
                norm: LayerNorm::new(&format!("blocks.{i}.norm"), d),
                attention: SelfAttention::new(&format!("blocks.{i}.attention"), d, config.n_heads, &mut rng),
            })
            .collect();
        let dense = Linear::new("dense", d, d, &mut rng);
        let imu_projection = Linear::new("imu_projection", d, config.d_shared, &mut rng);
        let text_projection = Linear::new("text_projection", config.d_text, config.d_shared, &mut rng);
        Ok(Self {
            config,
            patch_embed,
            position,
            blocks,
            dense,
            imu_projection,
            text_projection,
        })
    }

    /// Parameters of the IMU tower in a fixed order.
    pub fn imu_params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.patch_embed.params().into_iter().collect();
        out.push(&self.position);
        for b in &self.blocks {
            out.extend(b.norm.params());
            out.extend(b.attention.params());
        }
        out.extend(self.dense.params());
        out.extend(self.imu_projection.params());
        out
    }

    pub fn imu_params_mut(&mut self) -> Vec<&mut Param> {
        self.split_params_mut().0
    }

    fn split_params_mut(&mut self) -> (Vec<&mut Param>, [&mut Param; 2]) {
        let mut out: Vec<&mut Param> = self.patch_embed.params_mut().into_iter().collect();
        out.push(&mut self.position);
        for b in &mut self.blocks {
            out.extend(b.norm.params_mut());
            out.extend(b.attention.params_mut());
        }
        out.extend(self.dense.params_mut());
        out.extend(self.imu_projection.params_mut());
        (out, self.text_projection.params_mut())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.imu_params();
        out.extend(self.text_projection.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let (mut out, text) = self.split_params_mut();
        out.extend(text);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    fn check_window(&self, data: &[f32]) -> Result<()> {
        let want = self.config.window_length * self.config.channels;
        if data.len() != want {
            return Err(ModelError::Shape(format!(
                "window has {} values, expected {} x {}",
                data.len(),
                self.config.window_length,
                self.config.channels
            )));
        }
        Ok(())
    }

    /// Forward pass over normalized windows (each `L x C` row-major).
    pub(crate) fn forward_imu(&self, windows: &[&[f32]]) -> Result<ImuForward> {
        for w in windows {
            self.check_window(w)?;
        }
        let cfg = &self.config;
        let tokens = cfg.tokens();
        let patch_in = cfg.patch_len * cfg.channels;
        // A window is already laid out as `tokens` consecutive patches.
        let mut flat = Vec::with_capacity(windows.len() * tokens * patch_in);
        for w in windows {
            flat.extend_from_slice(w);
        }
        let patches = Matrix::from_vec(windows.len() * tokens, patch_in, flat);
        let mut x = self.patch_embed.forward(&patches);
        for r in 0..x.rows {
            let pos = self.position.value.row(r % tokens);
            for (v, p) in x.row_mut(r).iter_mut().zip(pos) {
                *v += p;
            }
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (normed, norm) = block.norm.forward(&x);
            let (attended, attention) = block.attention.forward(&normed, tokens);
            let mut next = x.clone();
            next.add_assign(&attended);
            blocks.push(BlockCache {
                normed,
                norm,
                attention,
            });
            x = next;
        }
        let d = cfg.d_model;
        let mut pooled = Matrix::zeros(windows.len(), d);
        for b in 0..windows.len() {
            let out = pooled.row_mut(b);
            for t in 0..tokens {
                for (o, v) in out.iter_mut().zip(x.row(b * tokens + t)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= tokens as f32);
        }
        let hidden = relu(&self.dense.forward(&pooled));
        let projected = self.imu_projection.forward(&hidden);
        let (embeddings, norms) = l2_normalize_rows(&projected);
        Ok(ImuForward {
            embeddings,
            patches,
            blocks,
            pooled,
            hidden,
            norms,
        })
    }

    pub(crate) fn backward_imu(&mut self, fwd: &ImuForward, d_embeddings: &Matrix) {
        let tokens = self.config.tokens();
        let d_projected = l2_normalize_rows_backward(&fwd.embeddings, &fwd.norms, d_embeddings);
        let d_hidden = self.imu_projection.backward(&fwd.hidden, &d_projected);
        let d_dense = relu_backward(&fwd.hidden, &d_hidden);
        let d_pooled = self.dense.backward(&fwd.pooled, &d_dense);
        let mut dx = Matrix::zeros(d_pooled.rows * tokens, self.config.d_model);
        for b in 0..d_pooled.rows {
            for t in 0..tokens {
                for (o, g) in dx.row_mut(b * tokens + t).iter_mut().zip(d_pooled.row(b)) {
                    *o = g / tokens as f32;
                }
            }
        }
        for (block, cache) in self.blocks.iter_mut().zip(&fwd.blocks).rev() {
            let d_normed = block.attention.backward(&cache.normed, &cache.attention, &dx);
            let d_input = block.norm.backward(&cache.norm, &d_normed);
            dx.add_assign(&d_input);
        }
        for r in 0..dx.rows {
            let t = r % tokens;
            let grad = &mut self.position.grad[t * self.config.d_model..(t + 1) * self.config.d_model];
            for (g, v) in grad.iter_mut().zip(dx.row(r)) {
                *g += v;
            }
        }
        self.patch_embed.backward(&fwd.patches, &dx);
    }

    /// Projects frozen text-encoder rows (`n x d_text`) into the shared space.
    pub(crate) fn forward_text(&self, text: Matrix) -> Result<TextForward> {
        if text.cols != self.config.d_text {
            return Err(ModelError::Shape(format!(
                "text embedding has dimension {}, expected {}",
                text.cols, self.config.d_text
            )));
        }
        let projected = self.text_projection.forward(&text);
        let (embeddings, norms) = l2_normalize_rows(&projected);
        Ok(TextForward {
            embeddings,
            inputs: text,
            norms,
        })
    }

    pub(crate) fn backward_text(&mut self, fwd: &TextForward, d_embeddings: &Matrix) {
        let d_projected = l2_normalize_rows_backward(&fwd.embeddings, &fwd.norms, d_embeddings);
        self.text_projection.backward(&fwd.inputs, &d_projected);
    }

    /// Unit-norm shared-space embedding of one normalized window.
    pub fn encode_imu(&self, window: &[f32]) -> Result<Vec<f32>> {
        Ok(self.forward_imu(&[window])?.embeddings.data)
    }

    /// Batched [`encode_imu`](Self::encode_imu); one row per window.
    pub fn encode_imu_batch(&self, windows: &[&[f32]]) -> Result<Matrix> {
        let mut out = Matrix::zeros(0, self.config.d_shared);
        for chunk in windows.chunks(256) {
            let e = self.forward_imu(chunk)?.embeddings;
            out.rows += e.rows;
            out.data.extend(e.data);
        }
        Ok(out)
    }

    pub fn project_text(&self, text: Matrix) -> Result<Matrix> {
        Ok(self.forward_text(text)?.embeddings)
    }
}
