//! Back-off n-gram language model with absolute discounting.
//!
//! Seen n-grams get `(c(h, w) - D) / c(h)`; the freed mass of a context is
//! spread over unseen words through a back-off weight onto the shorter
//! context. At the unigram level the freed mass goes to `<unk>`. Values are
//! kept as base-10 logarithms, as in the ARPA format.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::{BOS, EOS, UNK};

const LN_10: f64 = std::f64::consts::LN_10;
/// ARPA placeholder probability for `<s>`, which is never predicted.
const BOS_LOG10P: f64 = -99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Gram {
    log10p: f64,
    log10bow: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NgramLm {
    order: usize,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    /// `grams[k - 1]` holds the k-grams.
    grams: Vec<HashMap<Vec<u32>, Gram>>,
    unk: u32,
    bos: u32,
}

fn vocab_index(tokens: impl IntoIterator<Item = String>) -> (Vec<String>, HashMap<String, u32>) {
    let mut vocab: Vec<String> = tokens.into_iter().collect();
    vocab.sort();
    vocab.dedup();
    let ids = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    (vocab, ids)
}

pub fn train_ngram_lm<S: AsRef<str>>(text: &[Vec<S>], order: usize, discount: f64) -> Result<NgramLm> {
    if order == 0 {
        return Err(Error::invalid("n-gram LM", "order must be at least 1"));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::invalid("n-gram LM", format!("discount {discount} outside (0, 1)")));
    }
    if text.iter().all(|s| s.is_empty()) {
        return Err(Error::invalid("n-gram LM", "empty training text"));
    }
    let tokens = text
        .iter()
        .flat_map(|s| s.iter().map(|t| t.as_ref().to_string()))
        .chain([BOS.to_string(), EOS.to_string(), UNK.to_string()]);
    let (vocab, ids) = vocab_index(tokens);
    let bos = ids[BOS];
    let unk = ids[UNK];

    let mut counts: Vec<BTreeMap<Vec<u32>, u64>> = vec![BTreeMap::new(); order];
    for sentence in text.iter().filter(|s| !s.is_empty()) {
        let mut padded = Vec::with_capacity(sentence.len() + 2);
        padded.push(bos);
        padded.extend(sentence.iter().map(|t| ids[t.as_ref()]));
        padded.push(ids[EOS]);
        for k in 1..=order {
            for window in padded.windows(k) {
                if window[k - 1] != bos {
                    *counts[k - 1].entry(window.to_vec()).or_insert(0) += 1;
                }
            }
        }
    }

    let mut lm = NgramLm {
        order,
        vocab,
        ids,
        grams: vec![HashMap::new(); order],
        unk,
        bos,
    };

    // unigrams
    let total: u64 = counts[0].values().sum();
    let seen_types = counts[0].len() as f64;
    let freed = discount * seen_types / total as f64;
    for (gram, &c) in &counts[0] {
        let mut p = (c as f64 - discount) / total as f64;
        if gram[0] == unk {
            p += freed;
        }
        lm.grams[0].insert(gram.clone(), Gram { log10p: p.log10(), log10bow: None });
    }
    lm.grams[0]
        .entry(vec![unk])
        .or_insert(Gram { log10p: freed.log10(), log10bow: None });
    lm.grams[0].insert(vec![bos], Gram { log10p: BOS_LOG10P, log10bow: None });

    for k in 2..=order {
        // context -> (context count, successors)
        let mut contexts: BTreeMap<Vec<u32>, (u64, Vec<(u32, u64)>)> = BTreeMap::new();
        for (gram, &c) in &counts[k - 1] {
            let entry = contexts.entry(gram[..k - 1].to_vec()).or_default();
            entry.0 += c;
            entry.1.push((gram[k - 1], c));
        }
        for (ctx, (ctx_count, successors)) in contexts {
            let mut kept = 0.0;
            let mut lower = 0.0;
            for &(w, c) in &successors {
                let p = (c as f64 - discount) / ctx_count as f64;
                kept += p;
                lower += 10f64.powf(lm.log10_prob(&ctx[1..], w).0);
                let mut key = ctx.clone();
                key.push(w);
                lm.grams[k - 1].insert(key, Gram { log10p: p.log10(), log10bow: None });
            }
            let bow = (1.0 - kept) / (1.0 - lower);
            if let Some(g) = lm.grams[k - 2].get_mut(&ctx) {
                g.log10bow = Some(bow.log10());
            }
        }
    }
    Ok(lm)
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary including `<s>`, `</s>` and `<unk>`, sorted.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, token: &str) -> bool {
        token != UNK && self.ids.contains_key(token)
    }

    fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(self.unk)
    }

    /// Base-10 log-probability of `w` after `history` and the order of the
    /// n-gram that supplied it.
    fn log10_prob(&self, history: &[u32], w: u32) -> (f64, usize) {
        let max_k = self.order.min(history.len() + 1);
        let mut bow = 0.0;
        let mut key = Vec::with_capacity(max_k);
        for k in (1..=max_k).rev() {
            let ctx = &history[history.len() + 1 - k..];
            key.clear();
            key.extend_from_slice(ctx);
            key.push(w);
            if let Some(g) = self.grams[k - 1].get(&key) {
                return (bow + g.log10p, k);
            }
            if k > 1 {
                if let Some(c) = self.grams[k - 2].get(ctx) {
                    bow += c.log10bow.unwrap_or(0.0);
                }
            }
        }
        unreachable!("<unk> is always a unigram")
    }

    /// Natural-log probability of `word` given `history` (oldest first), and
    /// the highest order of a stored n-gram ending in `word`. Out-of-vocabulary
    /// words are scored as `<unk>` and report order 0.
    pub fn score<S: AsRef<str>>(&self, word: &str, history: &[S]) -> (f64, usize) {
        let hist: Vec<u32> = history.iter().map(|t| self.id(t.as_ref())).collect();
        let w = self.id(word);
        let (log10p, k) = self.log10_prob(&hist, w);
        let used = if self.contains(word) { k } else { 0 };
        (log10p * LN_10, used)
    }

    /// Probability of every predictable token (all but `<s>`) after `history`.
    pub fn distribution<S: AsRef<str>>(&self, history: &[S]) -> Vec<(String, f64)> {
        let hist: Vec<u32> = history.iter().map(|t| self.id(t.as_ref())).collect();
        (0..self.vocab.len() as u32)
            .filter(|&w| w != self.bos)
            .map(|w| (self.vocab[w as usize].clone(), 10f64.powf(self.log10_prob(&hist, w).0)))
            .collect()
    }

    /// Back-off weight (linear scale) of a stored context, 1 if absent.
    pub fn backoff_weight<S: AsRef<str>>(&self, context: &[S]) -> f64 {
        if context.is_empty() || context.len() >= self.order {
            return 1.0;
        }
        let key: Vec<u32> = context.iter().map(|t| self.id(t.as_ref())).collect();
        self.grams[key.len() - 1]
            .get(&key)
            .and_then(|g| g.log10bow)
            .map_or(1.0, |b| 10f64.powf(b))
    }

    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\n\\data\\\n");
        for (k, grams) in self.grams.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, grams.len());
        }
        for (k, grams) in self.grams.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            let mut sorted: Vec<_> = grams.iter().collect();
            sorted.sort_by(|a, b| a.0.cmp(b.0));
            for (key, g) in sorted {
                let words: Vec<&str> = key.iter().map(|&i| self.vocab[i as usize].as_str()).collect();
                let _ = write!(out, "{}\t{}", g.log10p, words.join(" "));
                if let Some(b) = g.log10bow {
                    let _ = write!(out, "\t{b}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            line,
            message: msg.to_string(),
        };
        let mut declared: Vec<usize> = Vec::new();
        let mut entries: Vec<Vec<(Vec<String>, Gram)>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut seen_end = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line == "\\data\\" {
                continue;
            }
            if line == "\\end\\" {
                seen_end = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (k, n) = rest.split_once('=').ok_or_else(|| bad(line_no, "malformed count line"))?;
                let k: usize = k.trim().parse().map_err(|_| bad(line_no, "bad order"))?;
                let n: usize = n.trim().parse().map_err(|_| bad(line_no, "bad count"))?;
                if k != declared.len() + 1 {
                    return Err(bad(line_no, "orders must be listed in sequence"));
                }
                declared.push(n);
                entries.push(Vec::new());
                continue;
            }
            if let Some(k) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                let k: usize = k.parse().map_err(|_| bad(line_no, "bad section header"))?;
                if k == 0 || k > declared.len() {
                    return Err(bad(line_no, "section for undeclared order"));
                }
                section = Some(k);
                continue;
            }
            let k = section.ok_or_else(|| bad(line_no, "n-gram outside a section"))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(bad(line_no, "expected logp, tokens and optional back-off"));
            }
            let log10p: f64 = fields[0].parse().map_err(|_| bad(line_no, "bad probability"))?;
            let words: Vec<String> = fields[1].split(' ').map(String::from).collect();
            if words.len() != k {
                return Err(bad(line_no, "token count differs from section order"));
            }
            let log10bow = match fields.get(2) {
                Some(b) => Some(b.parse().map_err(|_| bad(line_no, "bad back-off"))?),
                None => None,
            };
            entries[k - 1].push((words, Gram { log10p, log10bow }));
        }
        if !seen_end {
            return Err(bad(text.lines().count(), "missing \\end\\"));
        }
        if declared.is_empty() {
            return Err(bad(1, "no n-gram counts"));
        }
        for (k, (n, e)) in declared.iter().zip(&entries).enumerate() {
            if *n != e.len() {
                return Err(Error::invalid(
                    "ARPA",
                    format!("declared {n} {}-grams, found {}", k + 1, e.len()),
                ));
            }
        }
        let (vocab, ids) = vocab_index(entries[0].iter().map(|(w, _)| w[0].clone()));
        for required in [BOS, EOS, UNK] {
            if !ids.contains_key(required) {
                return Err(Error::invalid("ARPA", format!("missing {required} unigram")));
            }
        }
        let mut grams = Vec::with_capacity(entries.len());
        for level in entries {
            let mut map = HashMap::with_capacity(level.len());
            for (words, g) in level {
                let key = words
                    .iter()
                    .map(|w| {
                        ids.get(w.as_str())
                            .copied()
                            .ok_or_else(|| Error::invalid("ARPA", format!("token {w} has no unigram")))
                    })
                    .collect::<Result<Vec<u32>>>()?;
                map.insert(key, g);
            }
            grams.push(map);
        }
        Ok(NgramLm {
            order: grams.len(),
            unk: ids[UNK],
            bos: ids[BOS],
            vocab,
            ids,
            grams,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sents(text: &[&str]) -> Vec<Vec<String>> {
        text.iter()
            .map(|s| s.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn unigram_mle_limit() {
        let lm = train_ngram_lm(&sents(&["a a b"]), 1, 1e-9).unwrap();
        let dist: HashMap<String, f64> = lm.distribution::<&str>(&[]).into_iter().collect();
        // </s> is a predicted token too: counts a=2, b=1, </s>=1
        assert!((dist["a"] / (dist["a"] + dist["b"]) - 2.0 / 3.0).abs() < 1e-8);
        assert!((dist["b"] / (dist["a"] + dist["b"]) - 1.0 / 3.0).abs() < 1e-8);
        assert!(dist[UNK] < 1e-8);
    }

    #[test]
    fn distributions_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vocab = ["a", "b", "c", "d", "e", "f"];
        let text: Vec<Vec<String>> = (0..60)
            .map(|_| {
                let n = rng.random_range(1..8);
                (0..n).map(|_| vocab[rng.random_range(0..4)].to_string()).collect()
            })
            .collect();
        let lm = train_ngram_lm(&text, 3, 0.6).unwrap();
        for _ in 0..100 {
            let n = rng.random_range(0..4);
            let mut hist: Vec<&str> = vec![BOS];
            hist.extend((0..n).map(|_| vocab[rng.random_range(0..vocab.len())]));
            let total: f64 = lm.distribution(&hist).iter().map(|(_, p)| p).sum();
            assert!((total - 1.0).abs() < 1e-9, "{hist:?}: {total}");
        }
    }

    #[test]
    fn unseen_bigram_backs_off_to_unigram() {
        let lm = train_ngram_lm(&sents(&["a b", "b c"]), 2, 0.5).unwrap();
        // "a c" never occurs
        let (lp, used) = lm.score("c", &["a"]);
        let (uni, _) = lm.score::<&str>("c", &[]);
        assert_eq!(used, 1);
        let expected = lm.backoff_weight(&["a"]) * uni.exp();
        assert!((lp.exp() - expected).abs() < 1e-12);
    }

    #[test]
    fn order_used_reports_longest_match() {
        let lm = train_ngram_lm(&sents(&["a b c", "c b a"]), 3, 0.5).unwrap();
        assert_eq!(lm.score("c", &["a", "b"]).1, 3);
        assert_eq!(lm.score("c", &["c", "b"]).1, 2);
        assert_eq!(lm.score("a", &["c", "c"]).1, 1);
        let (lp, used) = lm.score("zebra", &["a", "b"]);
        assert_eq!(used, 0);
        assert!(lp.is_finite());
        let (unk, _) = lm.score(UNK, &["a", "b"]);
        assert_eq!(lp, unk);
    }

    #[test]
    fn invalid_training_inputs() {
        assert!(train_ngram_lm(&sents(&[]), 2, 0.5).is_err());
        assert!(train_ngram_lm(&sents(&[""]), 2, 0.5).is_err());
        assert!(train_ngram_lm(&sents(&["a"]), 2, 0.0).is_err());
        assert!(train_ngram_lm(&sents(&["a"]), 2, 1.0).is_err());
        assert!(train_ngram_lm(&sents(&["a"]), 0, 0.5).is_err());
    }

    #[test]
    fn arpa_round_trip() {
        let lm = train_ngram_lm(&sents(&["a b c", "c b a", "a a"]), 3, 0.7).unwrap();
        let text = lm.to_arpa();
        assert!(text.contains("ngram 1="));
        let back = NgramLm::from_arpa(&text).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.to_arpa(), text);
    }

    #[test]
    fn arpa_rejects_count_mismatch() {
        let lm = train_ngram_lm(&sents(&["a b"]), 2, 0.5).unwrap();
        let text = lm.to_arpa().replace("ngram 2=", "ngram 2=1");
        assert!(NgramLm::from_arpa(&text).is_err());
    }
}
