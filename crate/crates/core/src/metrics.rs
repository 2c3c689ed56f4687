//! Confidence-quality metrics: normalised cross-entropy, ROC and
//! precision-recall curves with their areas.

use std::io::Write;

use crate::error::{Error, Result};

/// Clamp applied to scores before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Scores paired with binary labels (true = positive / correct).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                context: "scored set",
                expected: scores.len(),
                found: labels.len(),
            });
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid("scored set", format!("score {bad} outside [0, 1]")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Same labels, scores replaced through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScoredSet::new(self.scores.iter().map(|&s| f(s)).collect(), self.labels.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Normalised cross-entropy of `scores` against `labels`, natural logarithm.
pub fn nce(set: &ScoredSet) -> Result<f64> {
    let t = set.len();
    let pos = set.positives();
    if pos == 0 || pos == t {
        return Err(Error::DegenerateReference(
            "NCE needs both correct and incorrect words".into(),
        ));
    }
    let p_correct = pos as f64 / t as f64;
    let tf = t as f64;
    let baseline = -(pos as f64 * p_correct.ln() + (t - pos) as f64 * (1.0 - p_correct).ln()) / tf;
    let mut cross = 0.0;
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        let c = clamp_prob(s);
        cross -= if l { c.ln() } else { (1.0 - c).ln() };
    }
    let cross = cross / tf;
    Ok((baseline - cross) / baseline)
}

/// Positive/negative counts grouped by distinct score, highest score first.
fn descending_groups(set: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for idx in order {
        let s = set.scores[idx];
        let (pos, neg) = if set.labels[idx] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((s, pos, neg)),
        }
    }
    groups
}

fn require_both_classes(set: &ScoredSet) -> Result<(usize, usize)> {
    let (p, n) = (set.positives(), set.negatives());
    if p == 0 || n == 0 {
        return Err(Error::DegenerateClass(format!("{p} positives and {n} negatives")));
    }
    Ok((p, n))
}

/// ROC points for thresholds "score >= θ", swept from +∞ down through every
/// distinct score. The first point is always (0, 0) and the last (1, 1).
pub fn roc_points(set: &ScoredSet) -> Result<Vec<CurvePoint>> {
    let (p, n) = require_both_classes(set)?;
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, pos, neg) in descending_groups(set) {
        tp += pos;
        fp += neg;
        points.push(CurvePoint {
            threshold: s,
            x: fp as f64 / n as f64,
            y: tp as f64 / p as f64,
        });
    }
    Ok(points)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties credited 0.5.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let (p, n) = require_both_classes(set)?;
    let mut negatives_above = 0usize;
    let mut credit = 0.0f64;
    for (_, pos, neg) in descending_groups(set) {
        // positives in this group beat every negative scored strictly lower
        // and tie with the negatives in the same group
        credit += pos as f64 * (n - negatives_above - neg) as f64 + 0.5 * (pos * neg) as f64;
        negatives_above += neg;
    }
    Ok(credit / (p as f64 * n as f64))
}

/// Precision/recall at every distinct threshold, highest first.
pub fn pr_points(set: &ScoredSet) -> Result<Vec<CurvePoint>> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::DegenerateClass("no positive labels".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(descending_groups(set)
        .into_iter()
        .map(|(s, pos, neg)| {
            tp += pos;
            fp += neg;
            CurvePoint {
                threshold: s,
                x: tp as f64 / p as f64,
                y: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// Step-wise average precision: Σ (R_k − R_{k−1}) · P_k.
pub fn pr_auc(set: &ScoredSet) -> Result<f64> {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for pt in pr_points(set)? {
        area += (pt.x - prev_recall) * pt.y;
        prev_recall = pt.x;
    }
    Ok(area)
}

/// Trapezoidal area under a curve given in increasing-x order.
pub fn trapezoid_area(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) * 0.5)
        .sum()
}

/// CSV with header `threshold,x,y`.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    writeln!(out, "threshold,x,y")?;
    for p in points {
        writeln!(out, "{},{},{}", p.threshold, p.x, p.y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    #[test]
    fn constant_base_rate_has_zero_nce() {
        let s = set(&[0.75; 4], &[1, 0, 1, 1]);
        assert!(nce(&s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nce_worked_example() {
        let s = set(&[0.9, 0.2, 0.8, 0.7], &[1, 0, 1, 1]);
        // H̄ = 0.562335, H = 0.227081 (nats)
        let v = nce(&s).unwrap();
        assert!((v - 0.596183).abs() < 1e-5, "{v}");
    }

    #[test]
    fn exact_scores_reach_one() {
        let s = set(&[1.0, 0.0, 1.0], &[1, 0, 1]);
        assert!((nce(&s).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_scores_are_negative() {
        let s = set(&[0.1, 0.9, 0.2, 0.3], &[1, 0, 1, 1]);
        assert!(nce(&s).unwrap() < 0.0);
    }

    #[test]
    fn single_class_nce_is_degenerate() {
        let s = set(&[0.2, 0.4], &[1, 1]);
        assert!(matches!(nce(&s), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn perfect_separation_curve() {
        let pts = roc_points(&set(&[0.9, 0.1], &[1, 0])).unwrap();
        let xy: Vec<_> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn tied_scores_curve() {
        let pts = roc_points(&set(&[0.4, 0.4, 0.4], &[1, 0, 1])).unwrap();
        let xy: Vec<_> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(roc_auc(&set(&[0.4, 0.4, 0.4], &[1, 0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn mixed_curve_matches_confusion_counts() {
        let s = set(&[0.9, 0.4, 0.6, 0.1], &[1, 1, 0, 0]);
        let pts = roc_points(&s).unwrap();
        let xy: Vec<_> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(
            xy,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(roc_auc(&s).unwrap(), 0.75);
        assert_eq!(trapezoid_area(&pts), 0.75);
    }

    #[test]
    fn roc_needs_both_classes() {
        assert!(matches!(roc_auc(&set(&[0.3, 0.2], &[0, 0])), Err(Error::DegenerateClass(_))));
        assert!(roc_points(&set(&[0.3], &[1])).is_err());
    }

    #[test]
    fn pr_auc_examples() {
        assert_eq!(pr_auc(&set(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        assert_eq!(pr_auc(&set(&[0.9, 0.1], &[0, 1])).unwrap(), 0.5);
        assert!(matches!(pr_auc(&set(&[0.9], &[0])), Err(Error::DegenerateClass(_))));
    }

    #[test]
    fn pr_auc_of_random_scores_is_positive_rate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let labels: Vec<bool> = (0..n).map(|i| i < 3000).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let v = pr_auc(&ScoredSet::new(scores, labels).unwrap()).unwrap();
        assert!((v - 0.3).abs() < 0.02, "{v}");
    }

    #[test]
    fn constant_predictor_pr_auc() {
        let s = set(&[0.5; 10], &[1, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert!((pr_auc(&s).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_curve_csv(&roc_points(&set(&[0.9, 0.1], &[1, 0])).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,x,y\ninf,0,0\n0.9,0,1\n"), "{text}");
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.7, 0.9, 1.0]), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_trapezoid((scores, labels) in scored()) {
            let s = ScoredSet::new(scores, labels).unwrap();
            prop_assume!(s.positives() > 0 && s.negatives() > 0);
            let a = roc_auc(&s).unwrap();
            let t = trapezoid_area(&roc_points(&s).unwrap());
            prop_assert!((a - t).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_to_increasing_transform((scores, labels) in scored()) {
            let s = ScoredSet::new(scores, labels).unwrap();
            prop_assume!(s.positives() > 0 && s.negatives() > 0);
            let cubed = s.map_scores(|x| x.powi(3) * 0.5 + 0.1).unwrap();
            prop_assert!((roc_auc(&s).unwrap() - roc_auc(&cubed).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn nce_at_most_one((scores, labels) in scored()) {
            let s = ScoredSet::new(scores, labels).unwrap();
            prop_assume!(s.positives() > 0 && s.negatives() > 0);
            prop_assert!(nce(&s).unwrap() <= 1.0);
        }

        #[test]
        fn roc_points_monotone((scores, labels) in scored()) {
            let s = ScoredSet::new(scores, labels).unwrap();
            prop_assume!(s.positives() > 0 && s.negatives() > 0);
            let pts = roc_points(&s).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[1].x >= w[0].x && w[1].y >= w[0].y);
            }
        }
    }
}
