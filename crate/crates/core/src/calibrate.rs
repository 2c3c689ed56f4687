//! Monotone score remapping fitted on held-out data.
//!
//! Scores are split into equal-occupancy bins, each bin takes the empirical
//! fraction of correct words, and adjacent bins are pooled until the values
//! strictly increase. The result is either a step function over the pooled
//! cells, or a piecewise-linear curve through the pooled cells which keeps the
//! rank order of every score inside the training range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoredSet;

pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Half-open cells `[b_i, b_{i+1})`; `boundaries` holds the interior cuts.
    #[default]
    Step,
    /// Linear interpolation between knots `(boundaries[i], values[i])`, flat
    /// outside the first and last knot.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMap {
    #[serde(default)]
    pub kind: MapKind,
    pub boundaries: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseMap {
    pub fn validate(&self) -> Result<()> {
        let ctx = "piecewise map";
        let expected = match self.kind {
            MapKind::Step => self.values.len().saturating_sub(1),
            MapKind::Linear => self.values.len(),
        };
        if self.values.is_empty() || self.boundaries.len() != expected {
            return Err(Error::invalid(
                ctx,
                format!(
                    "{} boundaries for {} values",
                    self.boundaries.len(),
                    self.values.len()
                ),
            ));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(ctx, "boundaries must strictly increase"));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid(ctx, "values must be non-decreasing"));
        }
        if !self.values.iter().chain(&self.boundaries).all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid(ctx, "boundaries and values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn apply(&self, score: f64) -> f64 {
        apply_map(self, score)
    }
}

pub fn apply_map(map: &PiecewiseMap, score: f64) -> f64 {
    match map.kind {
        MapKind::Step => {
            let cell = map.boundaries.partition_point(|&b| b <= score);
            map.values[cell]
        }
        MapKind::Linear => {
            let knots = &map.boundaries;
            let last = knots.len() - 1;
            if score <= knots[0] {
                return map.values[0];
            }
            if score >= knots[last] {
                return map.values[last];
            }
            let hi = knots.partition_point(|&b| b <= score);
            let lo = hi - 1;
            let frac = (score - knots[lo]) / (knots[hi] - knots[lo]);
            (map.values[lo] + frac * (map.values[hi] - map.values[lo])).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    lo: f64,
    hi: f64,
    score_sum: f64,
    positives: usize,
    count: usize,
}

impl Block {
    fn value(&self) -> f64 {
        self.positives as f64 / self.count as f64
    }

    fn merge(&mut self, other: Block) {
        self.hi = other.hi;
        self.score_sum += other.score_sum;
        self.positives += other.positives;
        self.count += other.count;
    }
}

/// Equal-occupancy bins (never splitting tied scores) pooled into strictly
/// increasing blocks.
fn pooled_blocks(train: &ScoredSet, n_bins: usize) -> Result<Vec<Block>> {
    if train.is_empty() {
        return Err(Error::invalid("calibration", "empty training set"));
    }
    if n_bins == 0 {
        return Err(Error::invalid("calibration", "n_bins must be at least 1"));
    }
    let mut pairs: Vec<(f64, bool)> = train
        .scores()
        .iter()
        .copied()
        .zip(train.labels().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();

    let mut blocks: Vec<Block> = Vec::with_capacity(n_bins);
    let mut pos = 0usize;
    for k in 0..n_bins {
        if pos >= n {
            break;
        }
        let mut end = (((k + 1) * n) / n_bins).max(pos + 1);
        if k + 1 == n_bins {
            end = n;
        }
        while end < n && pairs[end].0 == pairs[end - 1].0 {
            end += 1;
        }
        let cell = &pairs[pos..end];
        let mut block = Block {
            lo: cell[0].0,
            hi: cell[cell.len() - 1].0,
            score_sum: cell.iter().map(|p| p.0).sum(),
            positives: cell.iter().filter(|p| p.1).count(),
            count: cell.len(),
        };
        // pool adjacent violators; equal neighbours are pooled too
        while let Some(prev) = blocks.last() {
            if prev.value() >= block.value() {
                let mut prev = blocks.pop().expect("non-empty");
                prev.merge(block);
                block = prev;
            } else {
                break;
            }
        }
        blocks.push(block);
        pos = end;
    }
    Ok(blocks)
}

/// Step-function map with at most `n_bins` cells.
pub fn fit_monotone_map(train: &ScoredSet, n_bins: usize) -> Result<PiecewiseMap> {
    let blocks = pooled_blocks(train, n_bins)?;
    let boundaries = blocks
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0].hi + w[1].lo);
            if mid > w[0].hi {
                mid
            } else {
                w[1].lo
            }
        })
        .collect();
    let map = PiecewiseMap {
        kind: MapKind::Step,
        boundaries,
        values: blocks.iter().map(Block::value).collect(),
    };
    debug_assert!(map.validate().is_ok());
    Ok(map)
}

/// Piecewise-linear map through the pooled blocks. Knots sit at each block's
/// mean score, except that the outermost knots are pushed to the smallest and
/// largest training score so that the map is strictly increasing over the
/// whole training range.
pub fn fit_linear_map(train: &ScoredSet, n_bins: usize) -> Result<PiecewiseMap> {
    let blocks = pooled_blocks(train, n_bins)?;
    let mut knots: Vec<f64> = blocks.iter().map(|b| b.score_sum / b.count as f64).collect();
    let last = knots.len() - 1;
    if last > 0 {
        knots[0] = blocks[0].lo;
        knots[last] = blocks[last].hi;
    }
    // a mean can land one ulp outside its block
    for (k, b) in knots.iter_mut().zip(&blocks) {
        *k = k.clamp(b.lo, b.hi);
    }
    let map = PiecewiseMap {
        kind: MapKind::Linear,
        boundaries: knots,
        values: blocks.iter().map(Block::value).collect(),
    };
    debug_assert!(map.validate().is_ok());
    Ok(map)
}

pub fn fit_map(train: &ScoredSet, n_bins: usize, kind: MapKind) -> Result<PiecewiseMap> {
    match kind {
        MapKind::Step => fit_monotone_map(train, n_bins),
        MapKind::Linear => fit_linear_map(train, n_bins),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_auc;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(scores: &[f64], labels: &[bool]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn all_positive_pools_to_single_cell() {
        let s = set(&[0.1, 0.5, 0.3, 0.9, 0.7], &[true; 5]);
        let map = fit_monotone_map(&s, 3).unwrap();
        assert_eq!(map.values, vec![1.0]);
        assert!(map.boundaries.is_empty());
        assert_eq!(map.apply(0.0), 1.0);
    }

    #[test]
    fn calibrated_extremes_stay_put() {
        let s = set(&[0.0, 1.0, 0.0, 1.0], &[false, true, false, true]);
        let map = fit_monotone_map(&s, 2).unwrap();
        assert_eq!(map.values, vec![0.0, 1.0]);
        assert_eq!(map.apply(0.0), 0.0);
        assert_eq!(map.apply(1.0), 1.0);
    }

    #[test]
    fn below_first_boundary_and_on_boundary() {
        let map = PiecewiseMap {
            kind: MapKind::Step,
            boundaries: vec![0.3, 0.6],
            values: vec![0.1, 0.4, 0.8],
        };
        map.validate().unwrap();
        assert_eq!(map.apply(0.05), 0.1);
        assert_eq!(map.apply(0.3), 0.4);
        assert_eq!(map.apply(0.6), 0.8);
        assert_eq!(map.apply(1.0), 0.8);
    }

    #[test]
    fn empty_training_set_is_error() {
        assert!(fit_monotone_map(&set(&[], &[]), 5).is_err());
        assert!(fit_monotone_map(&set(&[0.5], &[true]), 0).is_err());
    }

    #[test]
    fn ties_never_straddle_cells() {
        let s = set(&[0.5; 6], &[true, false, true, false, true, true]);
        let map = fit_monotone_map(&s, 3).unwrap();
        assert_eq!(map.values.len(), 1);
        assert!((map.values[0] - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn bad_maps_rejected() {
        let m = PiecewiseMap {
            kind: MapKind::Step,
            boundaries: vec![0.5, 0.4],
            values: vec![0.1, 0.2, 0.3],
        };
        assert!(m.validate().is_err());
        let m = PiecewiseMap {
            kind: MapKind::Step,
            boundaries: vec![0.5],
            values: vec![0.3, 0.2],
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_without_kind_reads_as_step() {
        let m: PiecewiseMap = serde_json::from_str(r#"{"boundaries":[0.5],"values":[0.2,0.7]}"#).unwrap();
        assert_eq!(m.kind, MapKind::Step);
    }

    fn random_set(seed: u64, n: usize) -> ScoredSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = rng.random();
            scores.push(s);
            labels.push(rng.random::<f64>() < s * 0.8 + 0.1);
        }
        ScoredSet::new(scores, labels).unwrap()
    }

    #[test]
    fn maps_are_monotone_on_random_pairs() {
        let train = random_set(3, 2000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for kind in [MapKind::Step, MapKind::Linear] {
            let map = fit_map(&train, DEFAULT_BINS, kind).unwrap();
            map.validate().unwrap();
            for _ in 0..1000 {
                let (a, b): (f64, f64) = (rng.random(), rng.random());
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                assert!(map.apply(lo) <= map.apply(hi));
            }
        }
    }

    #[test]
    fn linear_map_keeps_training_auc() {
        let train = random_set(5, 5000);
        let map = fit_linear_map(&train, DEFAULT_BINS).unwrap();
        let mapped = train.map_scores(|s| map.apply(s)).unwrap();
        let (a, b) = (roc_auc(&train).unwrap(), roc_auc(&mapped).unwrap());
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    /// Largest AUC change plateaus can cause: half of the positive/negative
    /// pairs that share a mapped value.
    fn tie_slack(raw: &ScoredSet, mapped: &ScoredSet) -> f64 {
        let mut groups: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
        for (&m, &l) in mapped.scores().iter().zip(raw.labels()) {
            let e = groups.entry(m.to_bits()).or_default();
            if l {
                e.0 += 1
            } else {
                e.1 += 1
            }
        }
        let pairs: usize = groups.values().map(|(p, n)| p * n).sum();
        0.5 * pairs as f64 / (raw.positives() * raw.negatives()) as f64
    }

    proptest! {
        #[test]
        fn step_map_auc_moves_only_through_plateaus(seed in 0u64..1000, n in 20usize..300, bins in 1usize..20) {
            let raw = random_set(seed, n);
            prop_assume!(raw.positives() > 0 && raw.negatives() > 0);
            let map = fit_monotone_map(&raw, bins).unwrap();
            let mapped = raw.map_scores(|s| map.apply(s)).unwrap();
            prop_assert!(mapped.scores().iter().all(|v| (0.0..=1.0).contains(v)));
            let delta = (roc_auc(&mapped).unwrap() - roc_auc(&raw).unwrap()).abs();
            prop_assert!(delta <= tie_slack(&raw, &mapped) + 1e-12);
        }
    }
}
