use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{ImuClipModel, ModelError, Result};
use crate::corpus::{DescriptionCorpus, TextEncoder};
use crate::nn::Matrix;

/// One class anchor: a unit vector in the shared space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// Position in the checkpoint class list; used for tie-breaks.
    pub index: usize,
    pub name: String,
    pub vector: Vec<f32>,
}

/// Anchors for every checkpoint class, in class-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAnchors {
    pub anchors: Vec<Anchor>,
}

impl ClassAnchors {
    pub fn build(
        class_names: &[String],
        corpus: &DescriptionCorpus,
        model: &ImuClipModel,
        encoder: &dyn TextEncoder,
    ) -> Result<Self> {
        let anchors = class_names
            .iter()
            .enumerate()
            .map(|(index, name)| {
                Ok(Anchor {
                    index,
                    name: name.clone(),
                    vector: encode_class_anchor(name, corpus, model, encoder)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { anchors })
    }

    pub fn get(&self, name: &str) -> Option<&Anchor> {
        self.anchors.iter().find(|a| a.name == name)
    }

    /// Anchors for the named candidates; errors on any unknown name.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&Anchor>> {
        names
            .iter()
            .map(|n| self.get(n.as_ref()).ok_or_else(|| ModelError::UnknownClass(n.as_ref().to_string())))
            .collect()
    }
}

/// Encodes, projects and normalizes each description, averages, renormalizes.
pub fn encode_class_anchor(
    class_name: &str,
    corpus: &DescriptionCorpus,
    model: &ImuClipModel,
    encoder: &dyn TextEncoder,
) -> Result<Vec<f32>> {
    let descriptions = corpus
        .descriptions(class_name)
        .ok_or_else(|| ModelError::UnknownClass(class_name.to_string()))?;
    let mut rows = Vec::with_capacity(descriptions.len() * encoder.dim());
    for d in descriptions {
        rows.extend(encoder.encode(d)?.vector);
    }
    let projected = model.project_text(Matrix::from_vec(descriptions.len(), encoder.dim(), rows))?;
    let mut mean = vec![0f64; projected.cols];
    for r in 0..projected.rows {
        for (m, v) in mean.iter_mut().zip(projected.row(r)) {
            *m += *v as f64;
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-6 * projected.rows as f64 {
        return Err(ModelError::DegenerateAnchor(class_name.to_string()));
    }
    Ok(mean.iter().map(|v| (v / norm) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClass {
    pub index: usize,
    pub name: String,
    pub score: f32,
}

/// Classes sorted by descending score, ties by ascending class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub window_id: Option<u64>,
    pub entries: Vec<RankedClass>,
}

impl SimilarityRanking {
    pub fn top1(&self) -> &RankedClass {
        &self.entries[0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> Vec<(String, f32)> {
        self.entries.iter().map(|e| (e.name.clone(), e.score)).collect()
    }
}

pub fn similarity(embedding: &[f32], anchors: &[&Anchor]) -> Result<SimilarityRanking> {
    if anchors.is_empty() {
        return Err(ModelError::Config("no anchors to rank against".into()));
    }
    let mut entries = Vec::with_capacity(anchors.len());
    for a in anchors {
        if a.vector.len() != embedding.len() {
            return Err(ModelError::Shape(format!(
                "embedding has dimension {}, anchor `{}` has {}",
                embedding.len(),
                a.name,
                a.vector.len()
            )));
        }
        let dot: f64 = embedding.iter().zip(&a.vector).map(|(x, y)| (*x as f64) * (*y as f64)).sum();
        entries.push(RankedClass {
            index: a.index,
            name: a.name.clone(),
            score: dot.clamp(-1.0, 1.0) as f32,
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    Ok(SimilarityRanking {
        window_id: None,
        entries,
    })
}

pub fn top_k(ranking: &SimilarityRanking, k: usize) -> Result<&[RankedClass]> {
    if k == 0 || k > ranking.len() {
        return Err(ModelError::Config(format!("K = {k} outside 1..={}", ranking.len())));
    }
    Ok(&ranking.entries[..k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TrigramHashEncoder;
    use crate::model::ModelConfig;
    use std::collections::BTreeMap;

    fn anchor(index: usize, v: Vec<f32>) -> Anchor {
        Anchor {
            index,
            name: format!("c{index}"),
            vector: v,
        }
    }

    #[test]
    fn identity_and_orthogonal() {
        let a = anchor(0, vec![1.0, 0.0]);
        let b = anchor(1, vec![0.0, 1.0]);
        let r = similarity(&[1.0, 0.0], &[&b, &a]).unwrap();
        assert_eq!(r.top1().name, "c0");
        assert_eq!(r.entries[0].score, 1.0);
        assert_eq!(r.entries[1].score, 0.0);
    }

    #[test]
    fn three_vectors_match_dot_products() {
        let s = 0.5f32.sqrt();
        let anchors = [anchor(0, vec![1.0, 0.0]), anchor(1, vec![s, s]), anchor(2, vec![0.0, -1.0])];
        let q = [0.6f32, 0.8];
        let mut oracle: Vec<(f64, usize)> = anchors
            .iter()
            .map(|a| (q[0] as f64 * a.vector[0] as f64 + q[1] as f64 * a.vector[1] as f64, a.index))
            .collect();
        oracle.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let refs: Vec<&Anchor> = anchors.iter().collect();
        let r = similarity(&q, &refs).unwrap();
        let got: Vec<usize> = r.entries.iter().map(|e| e.index).collect();
        assert_eq!(got, oracle.iter().map(|o| o.1).collect::<Vec<_>>());
    }

    #[test]
    fn ties_break_by_index_regardless_of_order() {
        let a = anchor(3, vec![1.0, 0.0]);
        let b = anchor(1, vec![1.0, 0.0]);
        let r1 = similarity(&[1.0, 0.0], &[&a, &b]).unwrap();
        let r2 = similarity(&[1.0, 0.0], &[&b, &a]).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.top1().index, 1);
    }

    #[test]
    fn dimension_mismatch() {
        let a = anchor(0, vec![1.0, 0.0, 0.0]);
        assert!(matches!(similarity(&[1.0, 0.0], &[&a]), Err(ModelError::Shape(_))));
    }

    #[test]
    fn top_k_bounds_and_prefix() {
        let anchors: Vec<Anchor> = (0..5).map(|i| anchor(i, vec![(i as f32 * 0.7).cos(), (i as f32 * 0.7).sin()])).collect();
        let refs: Vec<&Anchor> = anchors.iter().collect();
        let r = similarity(&[1.0, 0.0], &refs).unwrap();
        assert!(top_k(&r, 0).is_err());
        assert!(top_k(&r, 6).is_err());
        assert_eq!(top_k(&r, 5).unwrap().len(), 5);
        assert_eq!(top_k(&r, 1).unwrap()[0].index, 0);
        let mut cos: Vec<(f32, usize)> = anchors.iter().map(|a| (a.vector[0], a.index)).collect();
        cos.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let want: Vec<usize> = cos[..3].iter().map(|c| c.1).collect();
        assert_eq!(top_k(&r, 3).unwrap().iter().map(|e| e.index).collect::<Vec<_>>(), want);
    }

    fn small_model() -> ImuClipModel {
        let cfg = ModelConfig {
            d_text: 32,
            d_shared: 16,
            ..ModelConfig::default()
        };
        ImuClipModel::new(cfg, 4).unwrap()
    }

    fn corpus(entries: &[(&str, &[&str])]) -> DescriptionCorpus {
        let map: BTreeMap<String, Vec<String>> = entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect();
        DescriptionCorpus::new(map).unwrap()
    }

    #[test]
    fn anchor_of_one_and_of_duplicates() {
        let model = small_model();
        let enc = TrigramHashEncoder::new(32, 0);
        let one = corpus(&[("walk", &["a person walking"])]);
        let two = corpus(&[("walk", &["a person walking", "a person walking"])]);
        let a1 = encode_class_anchor("walk", &one, &model, &enc).unwrap();
        let a2 = encode_class_anchor("walk", &two, &model, &enc).unwrap();
        let direct = model
            .project_text(Matrix::from_vec(1, 32, enc.encode("a person walking").unwrap().vector))
            .unwrap();
        for ((x, y), z) in a1.iter().zip(&a2).zip(&direct.data) {
            assert!((x - y).abs() < 1e-6 && (x - z).abs() < 1e-6);
        }
        assert!(matches!(
            encode_class_anchor("run", &one, &model, &enc),
            Err(ModelError::UnknownClass(_))
        ));
    }

    #[test]
    fn anchor_of_three_matches_mean_then_normalize() {
        let model = small_model();
        let enc = TrigramHashEncoder::new(32, 0);
        let texts = ["knocking on a door", "rapping on wood", "tapping a table"];
        let c = corpus(&[("knock", &texts)]);
        let got = encode_class_anchor("knock", &c, &model, &enc).unwrap();
        // Oracle: project each row by hand with the weights, normalize, average.
        let w = &model.text_projection.weight.value;
        let b = &model.text_projection.bias.value.data;
        let mut mean = vec![0f64; 16];
        for t in texts {
            let x = enc.encode(t).unwrap().vector;
            let y: Vec<f64> = (0..16)
                .map(|j| b[j] as f64 + (0..32).map(|i| x[i] as f64 * w.get(i, j) as f64).sum::<f64>())
                .collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (m, v) in mean.iter_mut().zip(&y) {
                *m += v / n;
            }
        }
        let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (g, m) in got.iter().zip(&mean) {
            assert!((*g as f64 - m / n).abs() < 1e-5);
        }
    }

    #[test]
    fn antipodal_descriptions_are_degenerate() {
        let mut model = small_model();
        // Identity-like projection with zero bias so that x and -x cancel.
        let enc = TrigramHashEncoder::new(32, 0);
        model.text_projection.bias.value.data.iter_mut().for_each(|v| *v = 0.0);
        let x = enc.encode("abc").unwrap().vector;
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let projected = model.project_text(Matrix::from_vec(2, 32, [x, neg].concat())).unwrap();
        let sum: f32 = projected.row(0).iter().zip(projected.row(1)).map(|(a, b)| (a + b).abs()).sum();
        assert!(sum < 1e-5);
        struct Flip(TrigramHashEncoder);
        impl TextEncoder for Flip {
            fn id(&self) -> String {
                "flip".into()
            }
            fn dim(&self) -> usize {
                32
            }
            fn encode(&self, text: &str) -> crate::corpus::Result<crate::corpus::TextEmbedding> {
                let mut e = self.0.encode("abc")?;
                if text.starts_with('-') {
                    e.vector.iter_mut().for_each(|v| *v = -*v);
                }
                Ok(e)
            }
        }
        let c = corpus(&[("x", &["+", "-"])]);
        assert!(matches!(
            encode_class_anchor("x", &c, &model, &Flip(enc)),
            Err(ModelError::DegenerateAnchor(_))
        ));
    }
}
