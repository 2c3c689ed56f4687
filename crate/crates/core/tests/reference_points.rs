//! Published operating points and rates the defaults are expected to honour.

use confdel::align::{error_counts, levenshtein_align, EditWeights};
use confdel::corpus::Predictions;
use confdel::pipeline::PipelineConfig;
use confdel::select::{discount_scores, estimate_wer, DiscountGrid, DiscountParams, ThresholdGrid, Thresholds};
use confdel::simgen::{generate, preset, SimConfig};

#[test]
fn estimator_dimensions() {
    let cfg = PipelineConfig::default();
    assert_eq!(cfg.train.hidden_dim, 64);
    assert_eq!(cfg.embedding_dim, 50);
}

#[test]
fn discount_operating_point_is_searchable() {
    let grid = DiscountGrid::default();
    assert!(grid.theta_d.contains(&5.0));
    assert!(grid.theta_s.contains(&5.0));
    let pred = Predictions::with_deletions(vec![0.9, 0.8], vec![0.01, 0.2], 0.1);
    let scores = discount_scores(&pred, &DiscountParams { theta_d: 5.0, theta_s: 5.0 }).unwrap();
    assert!((scores[0] - 0.35).abs() < 1e-12 && (scores[1] + 0.2).abs() < 1e-12);
}

#[test]
fn fitted_thresholds_are_admissible() {
    let th = Thresholds::new(0.528, 0.941, 0.043, 1.0);
    th.validate().unwrap();
    let grid = ThresholdGrid::default();
    for (values, v) in [(&grid.theta_c, 0.528), (&grid.theta_d, 0.941), (&grid.theta_s, 0.043)] {
        assert!(values.first().unwrap() <= &v && &v <= values.last().unwrap());
    }
    // all words confident, no deletions predicted
    let clean = Predictions::with_deletions(vec![0.9, 0.7], vec![0.5, 0.9], 0.01);
    assert_eq!(estimate_wer(&clean, &th).unwrap(), 0.0);
    let start_deletion = Predictions::with_deletions(vec![0.9, 0.7], vec![0.5, 0.9], 0.05);
    assert_eq!(estimate_wer(&start_deletion, &th).unwrap(), 0.5);
}

fn deletion_rate(name: &str, seed: u64) -> (f64, usize) {
    let corpus = generate(&SimConfig {
        seed,
        n_utts: 1700,
        ..preset(name).unwrap()
    })
    .unwrap();
    let (mut del, mut words) = (0, 0);
    for u in &corpus {
        let hyp = u.utterance.tokens();
        let reference = u.reference.as_ref().unwrap();
        let counts = error_counts(&levenshtein_align(&hyp, reference, EditWeights::default()));
        del += counts.del;
        words += reference.len();
    }
    (del as f64 / words as f64, words)
}

#[test]
fn preset_deletion_rates() {
    // narrow-band model on narrow-band and on wide-band audio
    for (name, rate, tol) in [("matched", 0.083, 0.015), ("mismatched", 0.190, 0.02)] {
        let (measured, words) = deletion_rate(name, 31);
        assert!(words >= 20_000, "{name}: {words} words");
        assert!((measured - rate).abs() <= tol, "{name}: {measured}");
    }
}
