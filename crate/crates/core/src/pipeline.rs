//! End-to-end estimator: calibration map, n-gram LM and embeddings feeding
//! the recurrent model, plus corpus-level evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::align::{derive_targets, levenshtein_align, EditWeights};
use crate::birnn::{self, BiRnnModel, Checkpoint, EpochStats, Example, TrainConfig};
use crate::calibrate::{fit_map, MapKind, PiecewiseMap, DEFAULT_BINS};
use crate::corpus::{LabeledUtterance, Predictions, Targets};
use crate::error::{Error, Result};
use crate::features::{
    build_embeddings, featurize, feature_dim, train_ngram_lm, EmbeddingSpec, EmbeddingTable, FeatureScaler,
    FeatureVector, NgramLm, DEFAULT_EMBEDDING_DIM,
};
use crate::metrics::{nce, pr_auc, roc_auc, ScoredSet};

pub const BUNDLE_VERSION: u32 = 1;

/// Fills `targets` from the reference of every utterance.
pub fn attach_targets(corpus: &mut [LabeledUtterance], weights: &EditWeights) -> Result<()> {
    for utt in corpus.iter_mut() {
        let reference = utt
            .reference
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("utterance {}", utt.id()), "no reference"))?;
        let alignment = levenshtein_align(&utt.utterance.tokens(), reference, *weights);
        utt.targets = Some(derive_targets(&alignment, utt.utterance.len())?);
    }
    Ok(())
}

fn targets(utt: &LabeledUtterance) -> Result<&Targets> {
    utt.targets
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("utterance {}", utt.id()), "no targets"))
}

/// Raw posteriors of every word against the correctness targets.
pub fn raw_scored_set(corpus: &[LabeledUtterance]) -> Result<ScoredSet> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for utt in corpus {
        scores.extend(utt.utterance.raw_posteriors());
        labels.extend_from_slice(&targets(utt)?.c);
    }
    ScoredSet::new(scores, labels)
}

pub fn train_calibration(corpus: &[LabeledUtterance], n_bins: usize, kind: MapKind) -> Result<PiecewiseMap> {
    fit_map(&raw_scored_set(corpus)?, n_bins, kind)
}

/// Predictions holding only the mapped raw posteriors.
pub fn calibrated_predictions(utt: &LabeledUtterance, map: &PiecewiseMap) -> Predictions {
    Predictions::confidence_only(utt.utterance.raw_posteriors().into_iter().map(|p| map.apply(p)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub lm_order: usize,
    pub lm_discount: f64,
    pub calib_bins: usize,
    pub calib_kind: MapKind,
    pub predict_deletions: bool,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            embedding_seed: 0,
            lm_order: 3,
            lm_discount: 0.5,
            calib_bins: DEFAULT_BINS,
            calib_kind: MapKind::Linear,
            predict_deletions: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimator {
    pub calibration: PiecewiseMap,
    pub lm: NgramLm,
    pub embeddings: EmbeddingTable,
    pub model: BiRnnModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Bundle {
    version: u32,
    calibration: PiecewiseMap,
    embeddings: EmbeddingSpec,
    lm_arpa: String,
    birnn: Checkpoint,
}

impl Estimator {
    /// Feature vectors with calibrated confidences, before standardisation.
    pub fn features(&self, utt: &LabeledUtterance) -> Result<Vec<FeatureVector>> {
        let conf = calibrated_predictions(utt, &self.calibration).c;
        featurize(&utt.utterance, &conf, &self.lm, &self.embeddings)
    }

    pub fn predict(&self, utt: &LabeledUtterance) -> Result<Predictions> {
        self.model.predict(&self.features(utt)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let bundle = Bundle {
            version: BUNDLE_VERSION,
            calibration: self.calibration.clone(),
            embeddings: self.embeddings.to_spec(),
            lm_arpa: self.lm.to_arpa(),
            birnn: self.model.to_checkpoint(),
        };
        serde_json::to_string_pretty(&bundle).map_err(|e| Error::invalid("estimator", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: Bundle = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::invalid("estimator", format!("unsupported version {}", bundle.version)));
        }
        bundle.calibration.validate()?;
        let embeddings = EmbeddingTable::from_spec(&bundle.embeddings)?;
        let model = BiRnnModel::from_checkpoint(bundle.birnn)?;
        if model.config().input_dim != feature_dim(embeddings.dim()) {
            return Err(Error::Dimension {
                context: "estimator",
                expected: feature_dim(embeddings.dim()),
                found: model.config().input_dim,
            });
        }
        Ok(Estimator {
            calibration: bundle.calibration,
            lm: NgramLm::from_arpa(&bundle.lm_arpa)?,
            embeddings,
            model,
        })
    }
}

/// Fits every stage on `corpus` (which needs references and targets) and
/// returns the estimator with the per-epoch loss history.
pub fn train_estimator(corpus: &[LabeledUtterance], cfg: &PipelineConfig) -> Result<(Estimator, Vec<EpochStats>)> {
    if corpus.is_empty() {
        return Err(Error::invalid("training", "empty corpus"));
    }
    let calibration = train_calibration(corpus, cfg.calib_bins, cfg.calib_kind)?;
    let text: Vec<Vec<String>> = corpus
        .iter()
        .map(|u| {
            u.reference
                .clone()
                .ok_or_else(|| Error::invalid(format!("utterance {}", u.id()), "no reference"))
        })
        .collect::<Result<_>>()?;
    let lm = train_ngram_lm(&text, cfg.lm_order, cfg.lm_discount)?;
    let vocab: BTreeSet<&str> = text
        .iter()
        .flatten()
        .map(String::as_str)
        .chain(corpus.iter().flat_map(|u| u.utterance.words.iter().map(|w| w.text.as_str())))
        .collect();
    let embeddings = build_embeddings(vocab, cfg.embedding_dim, cfg.embedding_seed)?;
    let mut model = birnn::init_model(
        feature_dim(cfg.embedding_dim),
        cfg.train.hidden_dim,
        cfg.predict_deletions,
        cfg.train.seed,
    )?;
    let mut est = Estimator {
        calibration,
        lm,
        embeddings,
        model: model.clone(),
    };
    let examples: Vec<Example> = corpus
        .iter()
        .map(|u| {
            Ok(Example {
                features: est.features(u)?,
                targets: targets(u)?.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let scaler = FeatureScaler::fit(cfg.embedding_dim, examples.iter().flat_map(|e| &e.features))?;
    model.set_scaler(Some(scaler));
    let (model, history) = birnn::train(model, &examples, &cfg.train)?;
    est.model = model;
    Ok((est, history))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub words: usize,
    pub nce: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    /// `None` when the predictions have no deletion outputs or the targets
    /// hold a single class.
    pub roc_auc_next_del: Option<f64>,
    pub roc_auc_start_del: Option<f64>,
}

/// Scores predictions against targets over the whole corpus.
pub fn evaluate(corpus: &[LabeledUtterance]) -> Result<EvalReport> {
    let (mut c, mut cl) = (Vec::new(), Vec::new());
    let (mut d, mut dl) = (Vec::new(), Vec::new());
    let (mut s, mut sl) = (Vec::new(), Vec::new());
    let mut deletions = true;
    for utt in corpus {
        let t = targets(utt)?;
        let p = utt
            .predictions
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("utterance {}", utt.id()), "no predictions"))?;
        c.extend_from_slice(&p.c);
        cl.extend_from_slice(&t.c);
        match (&p.d, p.s) {
            (Some(pd), Some(ps)) => {
                d.extend_from_slice(pd);
                dl.extend_from_slice(&t.d);
                s.push(ps);
                sl.push(t.s);
            }
            _ => deletions = false,
        }
    }
    let conf = ScoredSet::new(c, cl)?;
    let optional_auc = |scores: Vec<f64>, labels: Vec<bool>| -> Result<Option<f64>> {
        if !deletions {
            return Ok(None);
        }
        let set = ScoredSet::new(scores, labels)?;
        if set.positives() == 0 || set.negatives() == 0 {
            return Ok(None);
        }
        roc_auc(&set).map(Some)
    };
    Ok(EvalReport {
        words: conf.len(),
        nce: nce(&conf)?,
        roc_auc: roc_auc(&conf)?,
        pr_auc: pr_auc(&conf)?,
        roc_auc_next_del: optional_auc(d, dl)?,
        roc_auc_start_del: optional_auc(s, sl)?,
    })
}
