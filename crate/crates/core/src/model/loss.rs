//! Supervised contrastive loss over a mixed IMU/text batch.

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Imu,
    Text,
}

/// `N >= 2` unit-norm rows with class labels. The loss ignores modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub dim: usize,
    pub embeddings: Vec<f64>,
    pub labels: Vec<usize>,
    pub modality: Vec<Modality>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingBatch {
    pub fn new(dim: usize, embeddings: Vec<f64>, labels: Vec<usize>, modality: Vec<Modality>) -> Result<Self> {
        let n = labels.len();
        if n < 2 || embeddings.len() != n * dim || modality.len() != n {
            return Err(ModelError::Shape(format!(
                "embedding batch needs N >= 2 rows of dim {dim}; got {} values, {n} labels, {} tags",
                embeddings.len(),
                modality.len()
            )));
        }
        for (i, row) in embeddings.chunks(dim).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(ModelError::Shape(format!("row {i} has norm {norm}, expected unit norm")));
            }
        }
        Ok(Self {
            dim,
            embeddings,
            labels,
            modality,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/dz`, same layout as the embeddings.
    pub grad: Vec<f64>,
}

pub fn supcon_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<LossOutput> {
    supcon_loss_raw(&batch.embeddings, batch.dim, &batch.labels, temperature)
}

/// Sum over anchors `n` of `-1/|P(n)| * sum_p log softmax_{a != n}(z_n . z_a / tau)[p]`.
/// Anchors without positives contribute zero. Works on arbitrary rows so
/// finite differences can perturb off the unit sphere.
pub fn supcon_loss_raw(z: &[f64], dim: usize, labels: &[usize], temperature: f64) -> Result<LossOutput> {
    let n = labels.len();
    if n < 2 || z.len() != n * dim {
        return Err(ModelError::Shape(format!("need N >= 2 rows of dim {dim}")));
    }
    if !(temperature > 0.0) {
        return Err(ModelError::Config(format!("temperature must be positive, got {temperature}")));
    }
    let mut sim = vec![0f64; n * n];
    // SAFETY: z is n x dim row-major and sim is n x n; strides match those layouts.
    unsafe {
        matrixmultiply::dgemm(
            n,
            dim,
            n,
            1.0 / temperature,
            z.as_ptr(),
            dim as isize,
            1,
            z.as_ptr(),
            1,
            dim as isize,
            0.0,
            sim.as_mut_ptr(),
            n as isize,
            1,
        );
    }

    let mut weights = vec![0f64; n * n];
    let mut loss = 0f64;
    let mut any_positive = false;
    for a in 0..n {
        let positives = (0..n).filter(|&p| p != a && labels[p] == labels[a]).count();
        if positives == 0 {
            continue;
        }
        any_positive = true;
        let row = &sim[a * n..(a + 1) * n];
        let max = (0..n).filter(|&j| j != a).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let z_sum: f64 = (0..n).filter(|&j| j != a).map(|j| (row[j] - max).exp()).sum();
        let lse = max + z_sum.ln();
        let inv_p = 1.0 / positives as f64;
        let w = &mut weights[a * n..(a + 1) * n];
        for j in (0..n).filter(|&j| j != a) {
            let soft = (row[j] - lse).exp();
            if labels[j] == labels[a] {
                loss -= inv_p * (row[j] - lse);
                w[j] = soft - inv_p;
            } else {
                w[j] = soft;
            }
        }
    }
    if !any_positive {
        return Err(ModelError::NoPositivePairs);
    }

    // dL/dZ = (W + W^T) Z / tau
    let mut sym = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = weights[i * n + j] + weights[j * n + i];
        }
    }
    let mut grad = vec![0f64; n * dim];
    // SAFETY: sym is n x n, z is n x dim, grad is n x dim, all row-major.
    unsafe {
        matrixmultiply::dgemm(
            n,
            n,
            dim,
            1.0 / temperature,
            sym.as_ptr(),
            n as isize,
            1,
            z.as_ptr(),
            dim as isize,
            1,
            0.0,
            grad.as_mut_ptr(),
            dim as isize,
            1,
        );
    }
    Ok(LossOutput { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight transcription of the loss with plain exp/log, no stabilization.
    pub(crate) fn brute_force(z: &[f64], dim: usize, labels: &[usize], tau: f64) -> f64 {
        let n = labels.len();
        let dot = |i: usize, j: usize| (0..dim).map(|d| z[i * dim + d] * z[j * dim + d]).sum::<f64>();
        let mut total = 0.0;
        for a in 0..n {
            let pos: Vec<usize> = (0..n).filter(|&p| p != a && labels[p] == labels[a]).collect();
            if pos.is_empty() {
                continue;
            }
            let denom: f64 = (0..n).filter(|&k| k != a).map(|k| (dot(a, k) / tau).exp()).sum();
            let s: f64 = pos.iter().map(|&p| ((dot(a, p) / tau).exp() / denom).ln()).sum();
            total += -s / pos.len() as f64;
        }
        total
    }

    fn unit_rows(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut z: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for row in z.chunks_mut(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        z
    }

    #[test]
    fn identical_pair_has_zero_loss() {
        let z = vec![1.0, 0.0, 1.0, 0.0];
        let out = supcon_loss_raw(&z, 2, &[3, 3], 1.0).unwrap();
        assert!(out.loss.abs() < 1e-15);
    }

    #[test]
    fn lone_class_member_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = unit_rows(3, 4, &mut rng);
        let with = supcon_loss_raw(&z, 4, &[0, 0, 1], 0.5).unwrap().loss;
        // only anchors 0 and 1 have positives; drop anchor 2's term by construction
        let dot = |i: usize, j: usize| (0..4).map(|d| z[i * 4 + d] * z[j * 4 + d]).sum::<f64>();
        let term = |a: usize, p: usize, other: usize| {
            let e = |x: f64| (x / 0.5).exp();
            -(e(dot(a, p)) / (e(dot(a, p)) + e(dot(a, other)))).ln()
        };
        let expect = term(0, 1, 2) + term(1, 0, 2);
        assert!((with - expect).abs() < 1e-12);
    }

    #[test]
    fn no_positive_pairs_is_error() {
        let z = vec![1.0, 0.0, 0.0, 1.0];
        assert!(matches!(supcon_loss_raw(&z, 2, &[0, 1], 0.1), Err(ModelError::NoPositivePairs)));
    }

    #[test]
    fn four_rows_match_brute_force_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = unit_rows(4, 5, &mut rng);
        let labels = [0, 1, 0, 1];
        let out = supcon_loss_raw(&z, 5, &labels, 0.07).unwrap();
        let want = brute_force(&z, 5, &labels, 0.07);
        assert!(((out.loss - want) / want).abs() <= 1e-10);
        let h = 1e-5;
        for i in 0..z.len() {
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fd = (brute_force(&p, 5, &labels, 0.07) - brute_force(&m, 5, &labels, 0.07)) / (2.0 * h);
            let rel = (fd - out.grad[i]).abs() / fd.abs().max(out.grad[i].abs()).max(1e-8);
            assert!(rel <= 1e-4, "coord {i}: fd {fd} analytic {}", out.grad[i]);
        }
    }

    #[test]
    fn batch_rejects_non_unit_rows() {
        let err = EmbeddingBatch::new(2, vec![1.0, 0.0, 2.0, 0.0], vec![0, 0], vec![Modality::Imu; 2]);
        assert!(err.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loss_is_nonnegative_and_permutation_invariant(seed in 0u64..10_000, tau in 0.05f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 6;
            let dim = 8;
            let z = unit_rows(n, dim, &mut rng);
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let base = supcon_loss_raw(&z, dim, &labels, tau).unwrap();
            prop_assert!(base.loss >= 0.0);

            let mut order: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let zp: Vec<f64> = order.iter().flat_map(|&i| z[i * dim..(i + 1) * dim].to_vec()).collect();
            let lp: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let perm = supcon_loss_raw(&zp, dim, &lp, tau).unwrap();
            prop_assert!((perm.loss - base.loss).abs() <= 1e-9 * base.loss.max(1.0));
        }

        #[test]
        fn gradient_matches_central_differences(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, dim) = (6, 4);
            let z = unit_rows(n, dim, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            prop_assume!((0..n).any(|a| (0..n).any(|p| p != a && labels[p] == labels[a])));
            let out = supcon_loss_raw(&z, dim, &labels, 0.5).unwrap();
            let h = 1e-5;
            for i in 0..z.len() {
                let mut p = z.clone();
                p[i] += h;
                let mut m = z.clone();
                m[i] -= h;
                let fd = (supcon_loss_raw(&p, dim, &labels, 0.5).unwrap().loss
                    - supcon_loss_raw(&m, dim, &labels, 0.5).unwrap().loss) / (2.0 * h);
                let scale = fd.abs().max(out.grad[i].abs());
                if scale > 1e-6 {
                    prop_assert!((fd - out.grad[i]).abs() / scale <= 1e-4, "coord {}: {} vs {}", i, fd, out.grad[i]);
                }
            }
        }
    }
}
