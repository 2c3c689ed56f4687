//! Per-word input features for the recurrent estimator.
//!
//! Layout of one vector, in order: frame count, baseline confidence, the
//! word embedding, highest matched n-gram order, LM log-probability, character
//! length, gap to the previous word and gap to the next word.

mod embedding;
mod ngram;

pub use embedding::{build_embeddings, token_hash, token_vector, EmbeddingSpec, EmbeddingTable};
pub use ngram::{train_ngram_lm, NgramLm};

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const DEFAULT_EMBEDDING_DIM: usize = 50;

/// Number of non-embedding features.
pub const SCALAR_FEATURES: usize = 7;

pub fn feature_dim(embedding_dim: usize) -> usize {
    embedding_dim + SCALAR_FEATURES
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn emb_dim(&self) -> usize {
        self.0.len() - SCALAR_FEATURES
    }

    pub fn frames(&self) -> f64 {
        self.0[0]
    }

    pub fn confidence(&self) -> f64 {
        self.0[1]
    }

    pub fn embedding(&self) -> &[f64] {
        &self.0[2..2 + self.emb_dim()]
    }

    pub fn ngram_order(&self) -> f64 {
        self.0[self.emb_dim() + 2]
    }

    pub fn log_prob(&self) -> f64 {
        self.0[self.emb_dim() + 3]
    }

    pub fn char_len(&self) -> f64 {
        self.0[self.emb_dim() + 4]
    }

    pub fn gap_before(&self) -> f64 {
        self.0[self.emb_dim() + 5]
    }

    pub fn gap_after(&self) -> f64 {
        self.0[self.emb_dim() + 6]
    }
}

/// Indices of the features that get z-standardised; the embedding and the
/// baseline confidence pass through unchanged.
pub fn scalar_indices(embedding_dim: usize) -> Vec<usize> {
    let mut idx = vec![0];
    idx.extend((0..5).map(|k| embedding_dim + 2 + k));
    idx
}

pub fn featurize(
    utt: &Utterance,
    baseline_conf: &[f64],
    lm: &NgramLm,
    emb: &EmbeddingTable,
) -> Result<Vec<FeatureVector>> {
    if baseline_conf.len() != utt.len() {
        return Err(Error::Dimension {
            context: "baseline confidences",
            expected: utt.len(),
            found: baseline_conf.len(),
        });
    }
    let words = &utt.words;
    let mut history: Vec<&str> = Vec::with_capacity(words.len() + 1);
    history.push(BOS);
    let mut out = Vec::with_capacity(words.len());
    for (t, w) in words.iter().enumerate() {
        let gap_before = if t == 0 {
            0.0
        } else {
            (w.start - words[t - 1].end()).max(0.0)
        };
        let gap_after = match words.get(t + 1) {
            Some(next) => (next.start - w.end()).max(0.0),
            None => 0.0,
        };
        let (logp, order) = lm.score(&w.text, &history);
        let mut x = Vec::with_capacity(feature_dim(emb.dim()));
        x.push(w.frames as f64);
        x.push(baseline_conf[t]);
        x.extend_from_slice(emb.lookup(&w.text));
        x.push(order as f64);
        x.push(logp);
        x.push(w.text.chars().count() as f64);
        x.push(gap_before);
        x.push(gap_after);
        debug_assert!(x.iter().all(|v| v.is_finite()));
        out.push(FeatureVector(x));
        history.push(&w.text);
    }
    Ok(out)
}

/// Training-set mean and standard deviation of the scalar features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(embedding_dim: usize) -> Self {
        let indices = scalar_indices(embedding_dim);
        let n = indices.len();
        FeatureScaler {
            indices,
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn fit<'a, I>(embedding_dim: usize, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureVector>,
    {
        let indices = scalar_indices(embedding_dim);
        let k = indices.len();
        let mut sum = vec![0.0; k];
        let mut count = 0usize;
        let vectors: Vec<&FeatureVector> = vectors.into_iter().collect();
        for v in &vectors {
            if v.len() != feature_dim(embedding_dim) {
                return Err(Error::Dimension {
                    context: "feature scaler",
                    expected: feature_dim(embedding_dim),
                    found: v.len(),
                });
            }
            for (s, &i) in sum.iter_mut().zip(&indices) {
                *s += v.0[i];
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("feature scaler", "no training vectors"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut var = vec![0.0; k];
        for v in &vectors {
            for (j, &i) in indices.iter().enumerate() {
                let d = v.0[i] - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler { indices, mean, std })
    }

    pub fn apply(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = v.clone();
        for (j, &i) in self.indices.iter().enumerate() {
            out.0[i] = (v.0[i] - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn apply_all(&self, vs: &[FeatureVector]) -> Vec<FeatureVector> {
        vs.iter().map(|v| self.apply(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::HypWord;

    fn utt(words: &[(&str, f64, f64)]) -> Utterance {
        Utterance {
            id: "u".into(),
            recording_id: "r".into(),
            words: words
                .iter()
                .map(|&(w, s, d)| HypWord::new(w, s, d, 0.5).unwrap())
                .collect(),
        }
    }

    fn resources() -> (NgramLm, EmbeddingTable) {
        let text = vec![vec!["ka".to_string(), "to".to_string(), "mi".to_string()]];
        let lm = train_ngram_lm(&text, 3, 0.5).unwrap();
        let emb = build_embeddings(["ka", "to", "mi"], 4, 1).unwrap();
        (lm, emb)
    }

    #[test]
    fn single_word_has_zero_gaps() {
        let (lm, emb) = resources();
        let xs = featurize(&utt(&[("ka", 0.4, 0.3)]), &[0.7], &lm, &emb).unwrap();
        assert_eq!(xs.len(), 1);
        assert_eq!(xs[0].len(), feature_dim(4));
        assert_eq!((xs[0].gap_before(), xs[0].gap_after()), (0.0, 0.0));
        assert_eq!(xs[0].frames(), 30.0);
        assert_eq!(xs[0].confidence(), 0.7);
        assert_eq!(xs[0].char_len(), 2.0);
        assert_eq!(xs[0].embedding(), emb.lookup("ka"));
    }

    #[test]
    fn abutting_and_separated_words() {
        let (lm, emb) = resources();
        let u = utt(&[("ka", 0.0, 0.25), ("to", 0.75, 0.25), ("mi", 1.0, 0.5)]);
        let xs = featurize(&u, &[0.5, 0.5, 0.5], &lm, &emb).unwrap();
        assert_eq!(xs[1].gap_before(), 0.5);
        assert_eq!(xs[0].gap_after(), 0.5);
        assert_eq!(xs[1].gap_after(), 0.0);
        assert_eq!(xs[2].gap_before(), 0.0);
        assert_eq!(xs[2].ngram_order(), 3.0);
        assert!(xs.iter().all(|x| x.log_prob() < 0.0));
    }

    #[test]
    fn length_mismatch_is_error() {
        let (lm, emb) = resources();
        assert!(featurize(&utt(&[("ka", 0.0, 0.2)]), &[0.1, 0.2], &lm, &emb).is_err());
    }

    #[test]
    fn oov_word_has_order_zero() {
        let (lm, emb) = resources();
        let xs = featurize(&utt(&[("zz", 0.0, 0.2)]), &[0.1], &lm, &emb).unwrap();
        assert_eq!(xs[0].ngram_order(), 0.0);
        assert!(xs[0].log_prob().is_finite());
    }

    #[test]
    fn standardised_features_have_unit_moments() {
        let (lm, emb) = resources();
        let mut all = Vec::new();
        for k in 0..20 {
            let off = k as f64 * 0.01;
            let u = utt(&[("ka", 0.0, 0.2 + off), ("to", 0.3 + off, 0.1), ("zz", 0.5 + 2.0 * off, 0.3)]);
            all.extend(featurize(&u, &[0.2, 0.4, 0.9], &lm, &emb).unwrap());
        }
        let scaler = FeatureScaler::fit(4, &all).unwrap();
        let scaled = scaler.apply_all(&all);
        let n = scaled.len() as f64;
        for &i in &scaler.indices {
            let mean: f64 = scaled.iter().map(|v| v.0[i]).sum::<f64>() / n;
            let var: f64 = scaled.iter().map(|v| (v.0[i] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "feature {i} mean {mean}");
            // features that are constant on this set keep std 1 and variance 0
            let raw_const = all.iter().all(|v| v.0[i] == all[0].0[i]);
            if !raw_const {
                assert!((var - 1.0).abs() < 1e-6, "feature {i} var {var}");
            }
        }
        // confidence and embeddings untouched
        assert_eq!(scaled[0].confidence(), all[0].confidence());
        assert_eq!(scaled[0].embedding(), all[0].embedding());
    }
}
