use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{matmul, matmul_nt, matmul_tn_acc, Matrix};

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    #[serde(skip)]
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = vec![0.0; value.data.len()];
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Matrix::zeros(rows, cols))
    }

    pub fn xavier(name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt() as f32;
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        Self::new(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.value.rows, self.value.cols]
    }

    pub fn zero_grad(&mut self) {
        if self.grad.len() != self.value.data.len() {
            self.grad = vec![0.0; self.value.data.len()];
        } else {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

// ---------------------------------------------------------------------------

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::xavier(format!("{name}.weight"), input, output, rng),
            bias: Param::zeros(format!("{name}.bias"), 1, output),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.rows
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.cols
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = matmul(x, &self.weight.value);
        let b = &self.bias.value.data;
        for r in 0..y.rows {
            for (v, bv) in y.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        matmul_tn_acc(x, dy, &mut self.weight.grad);
        for r in 0..dy.rows {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        matmul_nt(dy, &self.weight.value)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

pub struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f32>,
}

const LN_EPS: f32 = 1e-5;

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Matrix::from_vec(1, dim, vec![1.0; dim])),
            beta: Param::zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.cols;
        let mut xhat = Matrix::zeros(x.rows, d);
        let mut y = Matrix::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        let (g, b) = (&self.gamma.value.data, &self.beta.value.data);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (h, v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            for (((o, h), gv), bv) in y.row_mut(r).iter_mut().zip(xhat.row(r)).zip(g).zip(b) {
                *o = h * gv + bv;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Matrix {
        let d = dy.cols;
        let mut dx = Matrix::zeros(dy.rows, d);
        let g = &self.gamma.value.data;
        let mut dxhat = vec![0f32; d];
        for r in 0..dy.rows {
            let xh = cache.xhat.row(r);
            let dyr = dy.row(r);
            for j in 0..d {
                self.gamma.grad[j] += dyr[j] * xh[j];
                self.beta.grad[j] += dyr[j];
                dxhat[j] = dyr[j] * g[j];
            }
            let m1 = dxhat.iter().sum::<f32>() / d as f32;
            let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f32>() / d as f32;
            let is = cache.inv_std[r];
            for ((o, &dh), &h) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                *o = is * (dh - m1 - h * m2);
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------

/// Multi-head self-attention over `batch` sequences of `tokens` rows each,
/// stacked into one `(batch * tokens) x d` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttention {
    pub n_heads: usize,
    pub qkv: Linear,
    pub out: Linear,
}

pub struct AttentionCache {
    tokens: usize,
    qkv: Matrix,
    /// softmax weights, `[batch][head]` blocks of `tokens x tokens`
    weights: Vec<f32>,
    context: Matrix,
}

impl SelfAttention {
    pub fn new(name: &str, dim: usize, n_heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % n_heads == 0, "model width must divide into heads");
        Self {
            n_heads,
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, rng),
            out: Linear::new(&format!("{name}.out"), dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Matrix, tokens: usize) -> (Matrix, AttentionCache) {
        let d = x.cols;
        let batch = x.rows / tokens;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let qkv = self.qkv.forward(x);
        let mut weights = vec![0f32; batch * self.n_heads * tokens * tokens];
        let mut context = Matrix::zeros(x.rows, d);
        for b in 0..batch {
            for h in 0..self.n_heads {
                let w = &mut weights[(b * self.n_heads + h) * tokens * tokens..][..tokens * tokens];
                for i in 0..tokens {
                    let q = &qkv.row(b * tokens + i)[h * dh..(h + 1) * dh];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..tokens {
                        let k = &qkv.row(b * tokens + j)[d + h * dh..d + (h + 1) * dh];
                        let s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() * scale;
                        w[i * tokens + j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for s in &mut w[i * tokens..(i + 1) * tokens] {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for s in &mut w[i * tokens..(i + 1) * tokens] {
                        *s /= z;
                    }
                    let ctx = &mut context.row_mut(b * tokens + i)[h * dh..(h + 1) * dh];
                    for j in 0..tokens {
                        let a = w[i * tokens + j];
                        let v = &qkv.row(b * tokens + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        for (c, vv) in ctx.iter_mut().zip(v) {
                            *c += a * vv;
                        }
                    }
                }
            }
        }
        let y = self.out.forward(&context);
        (
            y,
            AttentionCache {
                tokens,
                qkv,
                weights,
                context,
            },
        )
    }

    pub fn backward(&mut self, x: &Matrix, cache: &AttentionCache, dy: &Matrix) -> Matrix {
        let tokens = cache.tokens;
        let d = x.cols;
        let batch = x.rows / tokens;
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let dctx = self.out.backward(&cache.context, dy);
        let qkv = &cache.qkv;
        let mut dqkv = Matrix::zeros(qkv.rows, qkv.cols);
        let mut da = vec![0f32; tokens];
        for b in 0..batch {
            for h in 0..self.n_heads {
                let w = &cache.weights[(b * self.n_heads + h) * tokens * tokens..][..tokens * tokens];
                for i in 0..tokens {
                    let dc = &dctx.row(b * tokens + i)[h * dh..(h + 1) * dh];
                    // dA_ij = dctx_i . v_j ; dV_j += A_ij dctx_i
                    for j in 0..tokens {
                        let v = &qkv.row(b * tokens + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        da[j] = dc.iter().zip(v).map(|(a, b)| a * b).sum();
                        let a = w[i * tokens + j];
                        let dv = &mut dqkv.row_mut(b * tokens + j)[2 * d + h * dh..2 * d + (h + 1) * dh];
                        for (g, c) in dv.iter_mut().zip(dc) {
                            *g += a * c;
                        }
                    }
                    let dot: f32 = (0..tokens).map(|j| da[j] * w[i * tokens + j]).sum();
                    for j in 0..tokens {
                        let ds = w[i * tokens + j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for e in 0..dh {
                            let qi = qkv.get(b * tokens + i, h * dh + e);
                            let kj = qkv.get(b * tokens + j, d + h * dh + e);
                            dqkv.data[(b * tokens + i) * 3 * d + h * dh + e] += ds * kj;
                            dqkv.data[(b * tokens + j) * 3 * d + d + h * dh + e] += ds * qi;
                        }
                    }
                }
            }
        }
        self.qkv.backward(x, &dqkv)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.qkv.params().into_iter().chain(self.out.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.qkv.params_mut().into_iter().chain(self.out.params_mut()).collect()
    }
}

// ---------------------------------------------------------------------------

/// Same-padded 1-D convolution over time. Input rows are timesteps of
/// `batch` sequences of `length` rows, columns are input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: usize,
    pub in_channels: usize,
    /// `(kernel * in_channels) x out_channels`
    pub weight: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        // He-uniform for ReLU stacks
        let fan_in = kernel * in_channels;
        let a = (6.0 / fan_in as f64).sqrt() as f32;
        let data = (0..fan_in * out_channels).map(|_| rng.random_range(-a..a)).collect();
        Self {
            kernel,
            in_channels,
            weight: Param::new(format!("{name}.weight"), Matrix::from_vec(fan_in, out_channels, data)),
            bias: Param::zeros(format!("{name}.bias"), 1, out_channels),
        }
    }

    fn im2col(&self, x: &Matrix, length: usize) -> Matrix {
        let cin = self.in_channels;
        let half = self.kernel / 2;
        let mut col = Matrix::zeros(x.rows, self.kernel * cin);
        let batch = x.rows / length;
        for b in 0..batch {
            for t in 0..length {
                let dst = col.row_mut(b * length + t);
                for k in 0..self.kernel {
                    let src = t as isize + k as isize - half as isize;
                    if src < 0 || src >= length as isize {
                        continue;
                    }
                    dst[k * cin..(k + 1) * cin].copy_from_slice(x.row(b * length + src as usize));
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Matrix, length: usize) -> (Matrix, Matrix) {
        let col = self.im2col(x, length);
        let mut y = matmul(&col, &self.weight.value);
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias.value.data) {
                *v += b;
            }
        }
        (y, col)
    }

    pub fn backward(&mut self, col: &Matrix, dy: &Matrix, length: usize) -> Matrix {
        matmul_tn_acc(col, dy, &mut self.weight.grad);
        for r in 0..dy.rows {
            for (g, d) in self.bias.grad.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let dcol = matmul_nt(dy, &self.weight.value);
        let cin = self.in_channels;
        let half = self.kernel / 2;
        let mut dx = Matrix::zeros(dy.rows, cin);
        let batch = dy.rows / length;
        for b in 0..batch {
            for t in 0..length {
                let src_row = dcol.row(b * length + t);
                for k in 0..self.kernel {
                    let dst = t as isize + k as isize - half as isize;
                    if dst < 0 || dst >= length as isize {
                        continue;
                    }
                    for (o, g) in dx.row_mut(b * length + dst as usize).iter_mut().zip(&src_row[k * cin..(k + 1) * cin]) {
                        *o += g;
                    }
                }
            }
        }
        dx
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

pub fn relu(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|v| v.max(0.0)).collect())
}

/// Gradient through ReLU given its output.
pub fn relu_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let data = y
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(y.rows, y.cols, data)
}

const SELU_LAMBDA: f32 = 1.050_701;
const SELU_ALPHA: f32 = 1.673_263_2;

pub fn selu(x: &Matrix) -> Matrix {
    let data = x
        .data
        .iter()
        .map(|&v| {
            if v > 0.0 {
                SELU_LAMBDA * v
            } else {
                SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
            }
        })
        .collect();
    Matrix::from_vec(x.rows, x.cols, data)
}

/// Gradient through SELU given its input.
pub fn selu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| {
            if v > 0.0 {
                g * SELU_LAMBDA
            } else {
                g * SELU_LAMBDA * SELU_ALPHA * v.exp()
            }
        })
        .collect();
    Matrix::from_vec(x.rows, x.cols, data)
}

/// Mean softmax cross-entropy over rows; returns the loss and `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> (f32, Matrix) {
    let n = logits.rows;
    let mut grad = Matrix::zeros(n, logits.cols);
    let mut loss = 0f64;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let z: f32 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        loss += (lse - row[targets[r]]) as f64;
        for (c, (g, v)) in grad.row_mut(r).iter_mut().zip(row).enumerate() {
            *g = ((v - lse).exp() - if c == targets[r] { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    ((loss / n as f64) as f32, grad)
}

/// Mean squared error over all entries; returns the loss and `dL/dpred`.
pub fn mse(pred: &Matrix, target: &Matrix) -> (f32, Matrix) {
    let n = pred.data.len() as f32;
    let mut grad = Matrix::zeros(pred.rows, pred.cols);
    let mut loss = 0f64;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        loss += (d * d) as f64;
        *g = 2.0 * d / n;
    }
    ((loss / n as f64) as f32, grad)
}
