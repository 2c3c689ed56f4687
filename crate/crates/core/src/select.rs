//! Utterance ranking for data selection.
//!
//! Three ranking scores are supported: the frame-weighted word confidence,
//! the same average over confidences discounted by deletion estimates, and a
//! WER estimate assembled from thresholded confidence and deletion outputs.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::{error_counts, levenshtein_align, EditWeights, ErrorCounts};
use crate::corpus::{LabeledUtterance, Predictions};
use crate::error::{Error, Result};

pub const DEFAULT_FRACTION: f64 = 0.25;
pub const DEFAULT_WER_SLACK: f64 = 0.0;

pub fn frame_weighted_conf(c: &[f64], frames: &[u32]) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::invalid("frame_weighted_conf", "empty sequence"));
    }
    if c.len() != frames.len() {
        return Err(Error::Dimension {
            context: "frame_weighted_conf",
            expected: c.len(),
            found: frames.len(),
        });
    }
    if frames.contains(&0) {
        return Err(Error::invalid("frame_weighted_conf", "frame counts must be >= 1"));
    }
    let total: f64 = frames.iter().map(|&f| f as f64).sum();
    let weighted: f64 = c.iter().zip(frames).map(|(&c, &f)| c * f as f64).sum();
    Ok(weighted / total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscountParams {
    pub theta_d: f64,
    pub theta_s: f64,
}

impl DiscountParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta_d >= 0.0 && self.theta_s >= 0.0 && self.theta_d.is_finite() && self.theta_s.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("discount params", "theta_d and theta_s must be finite and >= 0"))
        }
    }

    fn is_zero(&self) -> bool {
        self.theta_d == 0.0 && self.theta_s == 0.0
    }
}

/// `ĉ_t = c_t − θ_d·d_t`, with `θ_s·s` also taken off the first word. Not
/// clamped. Predictions without deletion outputs are only accepted when both
/// coefficients are zero.
pub fn discount_scores(pred: &Predictions, params: &DiscountParams) -> Result<Vec<f64>> {
    match (&pred.d, pred.s) {
        (Some(d), Some(s)) => {
            let mut out: Vec<f64> = pred.c.iter().zip(d).map(|(c, d)| c - params.theta_d * d).collect();
            if let Some(first) = out.first_mut() {
                *first -= params.theta_s * s;
            }
            Ok(out)
        }
        _ if params.is_zero() => Ok(pred.c.clone()),
        _ => Err(Error::invalid("discount", "predictions carry no deletion estimates")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_c: f64,
    pub theta_d: f64,
    pub theta_s: f64,
    pub theta_p: f64,
    /// Leave incorrect words out of the numerator, ranking by estimated
    /// deletions only.
    #[serde(default)]
    pub deletions_only: bool,
}

impl Thresholds {
    pub fn new(theta_c: f64, theta_d: f64, theta_s: f64, theta_p: f64) -> Self {
        Thresholds {
            theta_c,
            theta_d,
            theta_s,
            theta_p,
            deletions_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.theta_c) && unit(self.theta_d) && unit(self.theta_s)) {
            return Err(Error::invalid("thresholds", "theta_c, theta_d, theta_s must lie in [0, 1]"));
        }
        if !(self.theta_p >= 0.0 && self.theta_p.is_finite()) {
            return Err(Error::invalid("thresholds", "theta_p must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Thresholded word counts for one utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EstimatedCounts {
    pub cor: usize,
    pub inc: usize,
    pub del: usize,
}

impl EstimatedCounts {
    fn numerator(&self, th: &Thresholds) -> f64 {
        let inc = if th.deletions_only { 0 } else { self.inc };
        (inc + self.del) as f64
    }

    fn denominator(&self, th: &Thresholds) -> f64 {
        th.theta_p * self.inc as f64 + self.cor as f64
    }

    fn ratio(&self, th: &Thresholds) -> f64 {
        let den = self.denominator(th);
        if den == 0.0 {
            f64::INFINITY
        } else {
            self.numerator(th) / den
        }
    }
}

pub fn threshold_counts(pred: &Predictions, th: &Thresholds) -> Result<EstimatedCounts> {
    if pred.c.is_empty() {
        return Err(Error::invalid("estimate_wer", "empty predictions"));
    }
    let (d, s) = match (&pred.d, pred.s) {
        (Some(d), Some(s)) => (d, s),
        _ => return Err(Error::invalid("estimate_wer", "predictions carry no deletion estimates")),
    };
    let cor = pred.c.iter().filter(|&&c| c >= th.theta_c).count();
    let del = usize::from(s >= th.theta_s) + d.iter().filter(|&&d| d >= th.theta_d).count();
    Ok(EstimatedCounts {
        cor,
        inc: pred.c.len() - cor,
        del,
    })
}

/// `(Inc + Del) / (θ_p·Inc + Cor)`; `+∞` when the denominator is zero.
pub fn estimate_wer(pred: &Predictions, th: &Thresholds) -> Result<f64> {
    Ok(threshold_counts(pred, th)?.ratio(th))
}

/// Aligned error counts against the reference, using the default weights.
pub fn true_counts(utt: &LabeledUtterance) -> Result<ErrorCounts> {
    let reference = utt
        .reference
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("utterance {}", utt.id()), "no reference"))?;
    let alignment = levenshtein_align(&utt.utterance.tokens(), reference, EditWeights::default());
    Ok(error_counts(&alignment))
}

fn predictions(utt: &LabeledUtterance) -> Result<&Predictions> {
    utt.predictions
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("utterance {}", utt.id()), "no predictions"))
}

fn sorted_unique(name: &str, values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("grid", format!("{name} has no values")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("grid", format!("{name} contains NaN")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

fn unit_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub theta_c: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub theta_s: Vec<f64>,
    pub theta_p: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid {
            theta_c: unit_grid(0.05),
            theta_d: unit_grid(0.05),
            theta_s: unit_grid(0.05),
            theta_p: vec![0.25, 0.5, 0.75, 1.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub thresholds: Thresholds,
    pub mse: f64,
}

/// Exhaustive grid search minimising the mean squared difference between
/// per-utterance true and estimated WER. Among equal errors the
/// lexicographically smallest `(θ_c, θ_d, θ_s, θ_p)` wins.
pub fn fit_thresholds(dev: &[LabeledUtterance], grid: &ThresholdGrid) -> Result<ThresholdFit> {
    if dev.is_empty() {
        return Err(Error::invalid("fit_thresholds", "empty development set"));
    }
    let gc = sorted_unique("theta_c", &grid.theta_c)?;
    let gd = sorted_unique("theta_d", &grid.theta_d)?;
    let gs = sorted_unique("theta_s", &grid.theta_s)?;
    let gp = sorted_unique("theta_p", &grid.theta_p)?;
    // sorted, so checking both corners covers every value
    let check = Thresholds::new(gc[0], gd[0], gs[0], gp[0]);
    check.validate()?;
    Thresholds::new(gc[gc.len() - 1], gd[gd.len() - 1], gs[gs.len() - 1], gp[gp.len() - 1]).validate()?;

    let truth: Vec<f64> = dev.iter().map(|u| true_counts(u)?.wer()).collect::<Result<_>>()?;
    let preds: Vec<&Predictions> = dev.iter().map(predictions).collect::<Result<_>>()?;
    for p in &preds {
        threshold_counts(p, &check)?;
    }
    let n = dev.len();
    // counts per grid value, per utterance
    let cor: Vec<Vec<usize>> = gc
        .iter()
        .map(|&t| preds.iter().map(|p| p.c.iter().filter(|&&c| c >= t).count()).collect())
        .collect();
    let dels: Vec<Vec<usize>> = gd
        .iter()
        .map(|&t| {
            preds
                .iter()
                .map(|p| p.d.as_ref().expect("checked").iter().filter(|&&d| d >= t).count())
                .collect()
        })
        .collect();
    let starts: Vec<Vec<usize>> = gs
        .iter()
        .map(|&t| preds.iter().map(|p| usize::from(p.s.expect("checked") >= t)).collect())
        .collect();

    let mut best: Option<ThresholdFit> = None;
    for (ic, &tc) in gc.iter().enumerate() {
        for (id, &td) in gd.iter().enumerate() {
            for (is, &ts) in gs.iter().enumerate() {
                for &tp in &gp {
                    let th = Thresholds::new(tc, td, ts, tp);
                    let mut sse = 0.0;
                    for u in 0..n {
                        let counts = EstimatedCounts {
                            cor: cor[ic][u],
                            inc: preds[u].c.len() - cor[ic][u],
                            del: dels[id][u] + starts[is][u],
                        };
                        let diff = truth[u] - counts.ratio(&th);
                        sse += diff * diff;
                    }
                    let mse = sse / n as f64;
                    if best.is_none_or(|b| mse < b.mse) {
                        best = Some(ThresholdFit { thresholds: th, mse });
                    }
                }
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountGrid {
    pub theta_d: Vec<f64>,
    pub theta_s: Vec<f64>,
    /// Selected share of the total duration.
    pub fraction: f64,
    /// Allowed rise in subset WER over confidence-only selection.
    pub wer_slack: f64,
}

impl Default for DiscountGrid {
    fn default() -> Self {
        let values = vec![0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.5, 10.0];
        DiscountGrid {
            theta_d: values.clone(),
            theta_s: values,
            fraction: DEFAULT_FRACTION,
            wer_slack: DEFAULT_WER_SLACK,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountFit {
    pub params: DiscountParams,
    pub deletions: usize,
    pub subset_wer: f64,
    pub baseline_deletions: usize,
    pub baseline_wer: f64,
}

/// Grid search for the discount coefficients: fewest true deletions in the
/// top `fraction` of the data, subject to the subset WER staying within
/// `wer_slack` of confidence-only selection. Ties go to the smallest
/// `(θ_d, θ_s)`.
pub fn fit_discount(dev: &[LabeledUtterance], grid: &DiscountGrid) -> Result<DiscountFit> {
    if dev.is_empty() {
        return Err(Error::invalid("fit_discount", "empty development set"));
    }
    if !(grid.fraction > 0.0 && grid.fraction <= 1.0) {
        return Err(Error::invalid("fit_discount", "fraction must lie in (0, 1]"));
    }
    if !(grid.wer_slack >= 0.0) {
        return Err(Error::invalid("fit_discount", "wer_slack must be >= 0"));
    }
    let gd = sorted_unique("theta_d", &grid.theta_d)?;
    let gs = sorted_unique("theta_s", &grid.theta_s)?;
    let truth: Vec<ErrorCounts> = dev.iter().map(true_counts).collect::<Result<_>>()?;
    let subset = |scheme: &Scheme| -> Result<ErrorCounts> {
        let order = rank(dev, scheme)?;
        let k = prefix_len(dev, &order, grid.fraction);
        Ok(order[..k].iter().map(|&i| truth[i]).sum())
    };
    let base = subset(&Scheme::Confidence)?;
    let base_wer = base.wer()?;
    let mut best: Option<DiscountFit> = None;
    for &td in &gd {
        for &ts in &gs {
            let params = DiscountParams {
                theta_d: td,
                theta_s: ts,
            };
            params.validate()?;
            let counts = subset(&Scheme::Discount(params))?;
            let wer = counts.wer()?;
            if wer > base_wer + grid.wer_slack {
                continue;
            }
            if best.is_none_or(|b| counts.del < b.deletions) {
                best = Some(DiscountFit {
                    params,
                    deletions: counts.del,
                    subset_wer: wer,
                    baseline_deletions: base.del,
                    baseline_wer: base_wer,
                });
            }
        }
    }
    best.ok_or_else(|| Error::invalid("fit_discount", "no grid point satisfies the WER constraint"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    /// Frame-weighted confidence, best first.
    Confidence,
    Discount(DiscountParams),
    /// Estimated WER, lowest first.
    Threshold(Thresholds),
    /// True per-utterance WER, lowest first. Needs references.
    Oracle,
}

impl Scheme {
    fn validate(&self) -> Result<()> {
        match self {
            Scheme::Discount(p) => p.validate(),
            Scheme::Threshold(t) => t.validate(),
            _ => Ok(()),
        }
    }
}

/// Ranking key for one utterance: smaller is better.
fn sort_key(utt: &LabeledUtterance, scheme: &Scheme) -> Result<f64> {
    match scheme {
        Scheme::Confidence => Ok(-frame_weighted_conf(&predictions(utt)?.c, &utt.utterance.frames())?),
        Scheme::Discount(p) => {
            let scores = discount_scores(predictions(utt)?, p)?;
            Ok(-frame_weighted_conf(&scores, &utt.utterance.frames())?)
        }
        Scheme::Threshold(th) => estimate_wer(predictions(utt)?, th),
        Scheme::Oracle => true_counts(utt)?.wer(),
    }
}

/// Corpus indices sorted best first; equal keys keep corpus order.
pub fn rank(corpus: &[LabeledUtterance], scheme: &Scheme) -> Result<Vec<usize>> {
    scheme.validate()?;
    let keys: Vec<f64> = corpus.iter().map(|u| sort_key(u, scheme)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    Ok(order)
}

/// Length of the shortest ranked prefix covering at least `fraction` of the
/// total duration.
pub fn prefix_len(corpus: &[LabeledUtterance], order: &[usize], fraction: f64) -> usize {
    let total: f64 = corpus.iter().map(|u| u.utterance.duration()).sum();
    let mut acc = 0.0;
    for (k, &i) in order.iter().enumerate() {
        acc += corpus[i].utterance.duration();
        if acc >= fraction * total - 1e-12 * total {
            return k + 1;
        }
    }
    order.len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    /// Cumulative share of the total duration, in (0, 1].
    pub fraction: f64,
    pub est_wer: f64,
    pub true_counts: Option<ErrorCounts>,
}

impl CurveRow {
    pub fn true_wer(&self) -> Option<f64> {
        self.true_counts.and_then(|c| c.wer().ok())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub ids: Vec<String>,
    pub order: Vec<usize>,
    pub rows: Vec<CurveRow>,
}

impl SelectionResult {
    /// Row of the shortest prefix covering `fraction` of the duration.
    pub fn row_at(&self, fraction: f64) -> &CurveRow {
        let k = self
            .rows
            .iter()
            .position(|r| r.fraction >= fraction - 1e-12)
            .unwrap_or(self.rows.len() - 1);
        &self.rows[k]
    }

    /// `data_pct,est_wer,true_sub,true_del,true_ins,true_tot`, all in percent
    /// of the prefix's reference words; the true columns are empty without
    /// references.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "data_pct,est_wer,true_sub,true_del,true_ins,true_tot")?;
        for r in &self.rows {
            write!(out, "{},{}", 100.0 * r.fraction, 100.0 * r.est_wer)?;
            match r.true_counts {
                Some(c) => {
                    let n = c.reference_len() as f64;
                    let pct = |x: usize| if n > 0.0 { 100.0 * x as f64 / n } else { 0.0 };
                    writeln!(out, ",{},{},{},{}", pct(c.sub), pct(c.del), pct(c.ins), pct(c.errors()))?;
                }
                None => writeln!(out, ",,,,")?,
            }
        }
        Ok(())
    }
}

/// Ranks the corpus and accumulates one curve row per prefix. True error
/// columns are filled when every utterance has a reference.
pub fn rank_and_curve(corpus: &[LabeledUtterance], scheme: &Scheme) -> Result<SelectionResult> {
    if corpus.is_empty() {
        return Err(Error::invalid("selection", "empty corpus"));
    }
    let order = rank(corpus, scheme)?;
    let truth: Option<Vec<ErrorCounts>> = if corpus.iter().all(|u| u.reference.is_some()) {
        Some(corpus.iter().map(true_counts).collect::<Result<_>>()?)
    } else {
        None
    };
    if truth.is_none() && matches!(scheme, Scheme::Oracle) {
        return Err(Error::invalid("selection", "oracle ranking needs references"));
    }
    let total: f64 = corpus.iter().map(|u| u.utterance.duration()).sum();
    let mut duration = 0.0;
    let mut pooled = ErrorCounts::default();
    let (mut num, mut den) = (0.0, 0.0);
    let mut rows = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        let utt = &corpus[i];
        duration += utt.utterance.duration();
        if let Some(t) = &truth {
            pooled += t[i];
        }
        let est_wer = match scheme {
            Scheme::Confidence | Scheme::Discount(_) => {
                let pred = predictions(utt)?;
                let scores = match scheme {
                    Scheme::Discount(p) => discount_scores(pred, p)?,
                    _ => pred.c.clone(),
                };
                for (s, f) in scores.iter().zip(utt.utterance.frames()) {
                    num += s * f as f64;
                    den += f as f64;
                }
                1.0 - num / den
            }
            Scheme::Threshold(th) => {
                let c = threshold_counts(predictions(utt)?, th)?;
                num += c.numerator(th);
                den += c.denominator(th);
                if den == 0.0 {
                    f64::INFINITY
                } else {
                    num / den
                }
            }
            Scheme::Oracle => pooled.wer()?,
        };
        rows.push(CurveRow {
            fraction: if k + 1 == order.len() { 1.0 } else { duration / total },
            est_wer,
            true_counts: truth.as_ref().map(|_| pooled),
        });
    }
    Ok(SelectionResult {
        ids: order.iter().map(|&i| corpus[i].id().to_string()).collect(),
        order,
        rows,
    })
}
