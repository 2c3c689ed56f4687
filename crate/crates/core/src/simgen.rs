//! Seeded word-level simulator of a recogniser.
//!
//! Reference text comes from a Zipf unigram mixed with a fixed set of
//! preferred successors per word, so an n-gram model trained on it has real
//! structure to find. Each reference word is deleted, substituted by a uniform
//! random vocabulary token, or kept; a random token may be inserted after each
//! position. Posteriors are drawn from class-conditional Beta distributions
//! and pushed towards 1 to make them over-confident.
//!
//! Timing follows the reference: every reference word owns a slot, so a
//! deleted word leaves a silence of part of its slot in the hypothesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::corpus::{HypWord, LabeledUtterance, Utterance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Seeds the vocabulary statistics separately, so corpora with different
    /// `seed`s can share one language.
    pub language_seed: u64,
    pub vocab_size: usize,
    pub n_utts: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub posterior_correct: BetaParams,
    pub posterior_error: BetaParams,
    /// `p ← p + o·(1 − p)`.
    pub overconfidence: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub gap_prob: f64,
    pub min_gap: f64,
    pub max_gap: f64,
    /// Share of a deleted word's slot that remains as silence.
    pub deleted_span: f64,
    pub zipf_exponent: f64,
    /// Probability of drawing the next reference word from the current
    /// word's preferred successors.
    pub successor_prob: f64,
    pub successors: usize,
    pub id_prefix: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            language_seed: 0,
            vocab_size: 2000,
            n_utts: 1000,
            min_len: 4,
            max_len: 20,
            p_sub: 0.2,
            p_del: 0.08,
            p_ins: 0.03,
            posterior_correct: BetaParams { a: 3.0, b: 1.0 },
            posterior_error: BetaParams { a: 1.2, b: 1.6 },
            overconfidence: 0.8,
            min_duration: 0.15,
            max_duration: 0.6,
            gap_prob: 0.2,
            min_gap: 0.05,
            max_gap: 0.4,
            deleted_span: 0.5,
            zipf_exponent: 1.0,
            successor_prob: 0.5,
            successors: 3,
            id_prefix: "utt".into(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = "simulation config";
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(ctx, format!("{name} = {p} outside [0, 1]")))
            }
        };
        prob("p_sub", self.p_sub)?;
        prob("p_del", self.p_del)?;
        prob("p_ins", self.p_ins)?;
        prob("gap_prob", self.gap_prob)?;
        prob("deleted_span", self.deleted_span)?;
        prob("successor_prob", self.successor_prob)?;
        prob("overconfidence", self.overconfidence)?;
        if self.p_sub + self.p_del > 1.0 {
            return Err(Error::invalid(ctx, "p_sub + p_del must not exceed 1"));
        }
        if self.p_del >= 1.0 {
            return Err(Error::invalid(ctx, "p_del = 1 never produces a hypothesis"));
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid(ctx, "vocab_size must be at least 2"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::invalid(ctx, "need 1 <= min_len <= max_len"));
        }
        for (name, beta) in [("posterior_correct", self.posterior_correct), ("posterior_error", self.posterior_error)] {
            if !(beta.a > 0.0 && beta.b > 0.0 && beta.a.is_finite() && beta.b.is_finite()) {
                return Err(Error::invalid(ctx, format!("{name} shape parameters must be > 0")));
            }
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration && self.max_duration.is_finite()) {
            return Err(Error::invalid(ctx, "need 0 < min_duration <= max_duration"));
        }
        if !(self.min_gap >= 0.0 && self.min_gap <= self.max_gap && self.max_gap.is_finite()) {
            return Err(Error::invalid(ctx, "need 0 <= min_gap <= max_gap"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::invalid(ctx, "zipf_exponent must be finite and >= 0"));
        }
        if self.successors == 0 && self.successor_prob > 0.0 {
            return Err(Error::invalid(ctx, "successor_prob > 0 needs successors > 0"));
        }
        Ok(())
    }
}

/// Named configurations whose error mix follows a matched and a
/// band-mismatched recogniser.
pub fn preset(name: &str) -> Result<SimConfig> {
    match name {
        "matched" => Ok(SimConfig {
            p_sub: 0.24,
            p_del: 0.08,
            p_ins: 0.03,
            ..SimConfig::default()
        }),
        "mismatched" => Ok(SimConfig {
            p_sub: 0.23,
            p_del: 0.19,
            p_ins: 0.013,
            ..SimConfig::default()
        }),
        other => Err(Error::invalid("preset", format!("unknown preset {other:?}"))),
    }
}

const ONSETS: [&str; 12] = ["k", "t", "m", "n", "s", "r", "l", "p", "b", "d", "g", "h"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Token for vocabulary rank `i`: a bijective base-60 numeral spelled in
/// consonant-vowel syllables, so frequent words are short.
pub fn vocab_token(i: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut n = i + 1;
    let mut syllables = Vec::new();
    while n > 0 {
        let digit = (n - 1) % base;
        syllables.push(format!("{}{}", ONSETS[digit / VOWELS.len()], VOWELS[digit % VOWELS.len()]));
        n = (n - 1) / base;
    }
    syllables.reverse();
    syllables.concat()
}

struct Language {
    tokens: Vec<String>,
    cumulative: Vec<f64>,
    successors: Vec<Vec<usize>>,
}

impl Language {
    fn new(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        let tokens: Vec<String> = (0..cfg.vocab_size).map(vocab_token).collect();
        let mut total = 0.0;
        let cumulative = (0..cfg.vocab_size)
            .map(|r| {
                total += 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent);
                total
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|c| c / total)
            .collect();
        let mut lang = Language {
            tokens,
            cumulative,
            successors: Vec::new(),
        };
        lang.successors = (0..cfg.vocab_size)
            .map(|_| (0..cfg.successors).map(|_| lang.unigram(rng)).collect())
            .collect();
        lang
    }

    fn unigram(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c < u).min(self.cumulative.len() - 1)
    }

    fn sentence(&self, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut out: Vec<usize> = Vec::with_capacity(len);
        for _ in 0..len {
            let next = match out.last() {
                Some(&prev) if cfg.successors > 0 && rng.random::<f64>() < cfg.successor_prob => {
                    self.successors[prev][rng.random_range(0..cfg.successors)]
                }
                _ => self.unigram(rng),
            };
            out.push(next);
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Emission {
    Correct(usize),
    Sub(usize),
    Deleted,
}

struct Channel<'a> {
    cfg: &'a SimConfig,
    correct: Beta<f64>,
    error: Beta<f64>,
}

impl Channel<'_> {
    fn posterior(&self, correct: bool, rng: &mut ChaCha8Rng) -> f64 {
        let p = if correct {
            self.correct.sample(rng)
        } else {
            self.error.sample(rng)
        };
        (p + self.cfg.overconfidence * (1.0 - p)).clamp(0.0, 1.0)
    }

    fn other_token(&self, not: usize, rng: &mut ChaCha8Rng) -> usize {
        let k = rng.random_range(0..self.cfg.vocab_size - 1);
        if k >= not {
            k + 1
        } else {
            k
        }
    }

    /// Per-position emissions and the inserted tokens after each position.
    fn corrupt(&self, reference: &[usize], rng: &mut ChaCha8Rng) -> (Vec<Emission>, Vec<Option<usize>>) {
        let cfg = self.cfg;
        let mut emissions = Vec::with_capacity(reference.len());
        let mut inserts = Vec::with_capacity(reference.len());
        for &r in reference {
            let u: f64 = rng.random();
            emissions.push(if u < cfg.p_del {
                Emission::Deleted
            } else if u < cfg.p_del + cfg.p_sub {
                Emission::Sub(self.other_token(r, rng))
            } else {
                Emission::Correct(r)
            });
            inserts.push((rng.random::<f64>() < cfg.p_ins).then(|| rng.random_range(0..cfg.vocab_size)));
        }
        (emissions, inserts)
    }
}

/// Generates `config.n_utts` utterances with references; targets and
/// predictions are left empty. A draw that would delete every word of an
/// utterance is repeated.
pub fn generate(config: &SimConfig) -> Result<Vec<LabeledUtterance>> {
    config.validate()?;
    let lang = Language::new(config, &mut ChaCha8Rng::seed_from_u64(config.language_seed));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let beta = |p: BetaParams| Beta::new(p.a, p.b).map_err(|e| Error::invalid("simulation config", e.to_string()));
    let channel = Channel {
        cfg: config,
        correct: beta(config.posterior_correct)?,
        error: beta(config.posterior_error)?,
    };
    let mut out = Vec::with_capacity(config.n_utts);
    for u in 0..config.n_utts {
        let reference = lang.sentence(config, &mut rng);
        let (emissions, inserts) = loop {
            let (e, i) = channel.corrupt(&reference, &mut rng);
            let emitted = e.iter().any(|x| !matches!(x, Emission::Deleted)) || i.iter().any(Option::is_some);
            if emitted {
                break (e, i);
            }
        };
        let mut words = Vec::new();
        let mut clock = 0.0f64;
        let slot = |rng: &mut ChaCha8Rng, clock: &mut f64| {
            if *clock > 0.0 && rng.random::<f64>() < config.gap_prob {
                *clock += rng.random_range(config.min_gap..=config.max_gap);
            }
            let start = *clock;
            let dur = rng.random_range(config.min_duration..=config.max_duration);
            (start, dur)
        };
        for (emission, insert) in emissions.iter().zip(&inserts) {
            let (start, dur) = slot(&mut rng, &mut clock);
            match *emission {
                Emission::Deleted => {
                    clock = start + config.deleted_span * dur;
                }
                Emission::Correct(tok) | Emission::Sub(tok) => {
                    let correct = matches!(emission, Emission::Correct(_));
                    let post = channel.posterior(correct, &mut rng);
                    words.push(HypWord::new(lang.tokens[tok].clone(), start, dur, post)?);
                    clock = start + dur;
                }
            }
            if let Some(tok) = *insert {
                let (start, dur) = slot(&mut rng, &mut clock);
                let post = channel.posterior(false, &mut rng);
                words.push(HypWord::new(lang.tokens[tok].clone(), start, dur, post)?);
                clock = start + dur;
            }
        }
        let utterance = Utterance {
            id: format!("{}{:06}", config.id_prefix, u),
            recording_id: format!("{}-rec{:04}", config.id_prefix, u / 10),
            words,
        };
        let reference = reference.iter().map(|&r| lang.tokens[r].clone()).collect();
        let labeled = LabeledUtterance::new(utterance, Some(reference));
        labeled.validate()?;
        out.push(labeled);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{error_counts, levenshtein_align, EditWeights, ErrorCounts};

    fn counts(corpus: &[LabeledUtterance]) -> ErrorCounts {
        corpus
            .iter()
            .map(|u| {
                let a = levenshtein_align(
                    &u.utterance.tokens(),
                    u.reference.as_ref().unwrap(),
                    EditWeights::default(),
                );
                error_counts(&a)
            })
            .sum()
    }

    #[test]
    fn tokens_are_distinct_and_short_first() {
        let toks: Vec<String> = (0..4000).map(vocab_token).collect();
        let set: std::collections::HashSet<_> = toks.iter().collect();
        assert_eq!(set.len(), toks.len());
        assert_eq!(toks[0], "ka");
        assert!(toks.windows(2).all(|w| w[0].len() <= w[1].len()));
    }

    #[test]
    fn noiseless_channel_reproduces_reference() {
        let cfg = SimConfig {
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
            n_utts: 50,
            ..SimConfig::default()
        };
        let corpus = generate(&cfg).unwrap();
        for u in &corpus {
            assert_eq!(u.utterance.tokens(), *u.reference.as_ref().unwrap());
        }
        assert_eq!(counts(&corpus).wer().unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SimConfig {
            n_utts: 30,
            ..SimConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SimConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn default_deletion_rate() {
        let cfg = SimConfig {
            n_utts: 850,
            ..SimConfig::default()
        };
        let c = counts(&generate(&cfg).unwrap());
        assert!(c.reference_len() >= 10_000);
        let del = c.del as f64 / c.reference_len() as f64;
        assert!((del - 0.08).abs() <= 0.01, "deletion rate {del}");
    }

    #[test]
    fn presets_hit_their_deletion_rates() {
        for (name, target, tol) in [("matched", 0.08, 0.015), ("mismatched", 0.19, 0.02)] {
            let cfg = SimConfig {
                n_utts: 1700,
                ..preset(name).unwrap()
            };
            let c = counts(&generate(&cfg).unwrap());
            assert!(c.reference_len() >= 20_000);
            let del = c.del as f64 / c.reference_len() as f64;
            assert!((del - target).abs() <= tol, "{name}: deletion rate {del}");
        }
        assert!(preset("wideband").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SimConfig {
                p_sub: 0.7,
                p_del: 0.5,
                ..SimConfig::default()
            },
            SimConfig {
                min_len: 5,
                max_len: 4,
                ..SimConfig::default()
            },
            SimConfig {
                posterior_error: BetaParams { a: 0.0, b: 1.0 },
                ..SimConfig::default()
            },
            SimConfig {
                vocab_size: 1,
                ..SimConfig::default()
            },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err());
        }
    }

    #[test]
    fn timings_are_ordered() {
        let corpus = generate(&SimConfig {
            n_utts: 40,
            ..preset("mismatched").unwrap()
        })
        .unwrap();
        for u in &corpus {
            assert!(!u.utterance.words.is_empty());
            for w in u.utterance.words.windows(2) {
                assert!(w[1].start >= w[0].end());
            }
        }
    }
}
