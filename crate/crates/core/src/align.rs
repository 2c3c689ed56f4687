//! Weighted Levenshtein alignment and the confidence/deletion targets derived
//! from it.

use serde::{Deserialize, Serialize};

use crate::corpus::Targets;
use crate::error::{Error, Result};

/// Edit costs. A correct match always costs 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditWeights {
    pub sub_cost: u32,
    pub del_cost: u32,
    pub ins_cost: u32,
}

impl Default for EditWeights {
    /// HTK scoring convention.
    fn default() -> Self {
        EditWeights {
            sub_cost: 10,
            del_cost: 7,
            ins_cost: 7,
        }
    }
}

impl EditWeights {
    pub fn new(sub_cost: u32, del_cost: u32, ins_cost: u32) -> Result<Self> {
        if sub_cost == 0 || del_cost == 0 || ins_cost == 0 {
            return Err(Error::invalid("edit weights", "costs must be positive"));
        }
        Ok(EditWeights {
            sub_cost,
            del_cost,
            ins_cost,
        })
    }

    pub fn uniform() -> Self {
        EditWeights {
            sub_cost: 1,
            del_cost: 1,
            ins_cost: 1,
        }
    }

    pub fn cost(&self, op: &EditOp) -> u64 {
        match op {
            EditOp::Cor { .. } => 0,
            EditOp::Sub { .. } => self.sub_cost as u64,
            EditOp::Del { .. } => self.del_cost as u64,
            EditOp::Ins { .. } => self.ins_cost as u64,
        }
    }
}

/// One step of an edit script. `hyp`/`reference` are 0-based positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Cor { hyp: usize, reference: usize },
    Sub { hyp: usize, reference: usize },
    Ins { hyp: usize },
    Del { reference: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub total_cost: u64,
}

/// Minimum-cost alignment of `hyp` against `reference`.
///
/// When several scripts share the minimum cost, the backtrack from the end
/// prefers COR, then SUB, then DEL, then INS.
pub fn levenshtein_align<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    reference: &[T],
    weights: EditWeights,
) -> Alignment {
    let n = hyp.len();
    let m = reference.len();
    let (sub, del, ins) = (weights.sub_cost as u64, weights.del_cost as u64, weights.ins_cost as u64);
    let width = m + 1;
    let mut cost = vec![0u64; (n + 1) * width];
    for j in 1..=m {
        cost[j] = cost[j - 1] + del;
    }
    for i in 1..=n {
        cost[i * width] = cost[(i - 1) * width] + ins;
        for j in 1..=m {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            let diag = cost[(i - 1) * width + j - 1] + if same { 0 } else { sub };
            let d = cost[i * width + j - 1] + del;
            let s = cost[(i - 1) * width + j] + ins;
            cost[i * width + j] = diag.min(d).min(s);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            let diag = cost[(i - 1) * width + j - 1];
            if same && diag == here {
                ops.push(EditOp::Cor { hyp: i - 1, reference: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && diag + sub == here {
                ops.push(EditOp::Sub { hyp: i - 1, reference: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * width + j - 1] + del == here {
            ops.push(EditOp::Del { reference: j - 1 });
            j -= 1;
        } else {
            debug_assert!(i > 0 && cost[(i - 1) * width + j] + ins == here);
            ops.push(EditOp::Ins { hyp: i - 1 });
            i -= 1;
        }
    }
    ops.reverse();
    Alignment {
        ops,
        total_cost: cost[n * width + m],
    }
}

/// Per-word correctness, per-gap deletion and start-deletion targets.
///
/// Gap `t` lies between hypothesis words `t` and `t + 1`; the last gap runs to
/// the end of the utterance. Several deletions inside one gap yield a single 1.
pub fn derive_targets(alignment: &Alignment, hyp_len: usize) -> Result<Targets> {
    let mut c = vec![false; hyp_len];
    let mut d = vec![false; hyp_len];
    let mut s = false;
    // index of the most recent hypothesis word, None before the first
    let mut last_hyp: Option<usize> = None;
    let mut expected = 0usize;
    for op in &alignment.ops {
        match *op {
            EditOp::Cor { hyp, .. } | EditOp::Sub { hyp, .. } | EditOp::Ins { hyp } => {
                if hyp != expected || hyp >= hyp_len {
                    return Err(Error::invalid(
                        "alignment",
                        format!("hypothesis index {hyp} out of sequence for length {hyp_len}"),
                    ));
                }
                c[hyp] = matches!(op, EditOp::Cor { .. });
                last_hyp = Some(hyp);
                expected += 1;
            }
            EditOp::Del { .. } => match last_hyp {
                Some(t) => d[t] = true,
                None => s = true,
            },
        }
    }
    if expected != hyp_len {
        return Err(Error::invalid(
            "alignment",
            format!("covers {expected} hypothesis words, expected {hyp_len}"),
        ));
    }
    Ok(Targets { c, d, s })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub cor: usize,
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

impl ErrorCounts {
    pub fn reference_len(&self) -> usize {
        self.cor + self.sub + self.del
    }

    pub fn hypothesis_len(&self) -> usize {
        self.cor + self.sub + self.ins
    }

    pub fn errors(&self) -> usize {
        self.sub + self.del + self.ins
    }

    /// (sub + del + ins) / (cor + sub + del). An empty reference with an empty
    /// hypothesis scores 0.
    pub fn wer(&self) -> Result<f64> {
        let n = self.reference_len();
        if n == 0 {
            if self.ins > 0 {
                return Err(Error::DegenerateReference(
                    "empty reference with non-empty hypothesis".into(),
                ));
            }
            return Ok(0.0);
        }
        Ok(self.errors() as f64 / n as f64)
    }
}

impl std::ops::Add for ErrorCounts {
    type Output = ErrorCounts;
    fn add(self, o: ErrorCounts) -> ErrorCounts {
        ErrorCounts {
            cor: self.cor + o.cor,
            sub: self.sub + o.sub,
            del: self.del + o.del,
            ins: self.ins + o.ins,
        }
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: ErrorCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = ErrorCounts>>(iter: I) -> Self {
        iter.fold(ErrorCounts::default(), |a, b| a + b)
    }
}

pub fn error_counts(alignment: &Alignment) -> ErrorCounts {
    let mut counts = ErrorCounts::default();
    for op in &alignment.ops {
        match op {
            EditOp::Cor { .. } => counts.cor += 1,
            EditOp::Sub { .. } => counts.sub += 1,
            EditOp::Del { .. } => counts.del += 1,
            EditOp::Ins { .. } => counts.ins += 1,
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identity_is_all_correct() {
        let a = levenshtein_align(&toks("a b c"), &toks("a b c"), EditWeights::default());
        assert_eq!(a.total_cost, 0);
        assert!(a.ops.iter().all(|op| matches!(op, EditOp::Cor { .. })));
        assert_eq!(a.ops.len(), 3);
    }

    #[test]
    fn middle_deletion() {
        let a = levenshtein_align(&toks("a c"), &toks("a b c"), EditWeights::default());
        assert_eq!(
            a.ops,
            vec![
                EditOp::Cor { hyp: 0, reference: 0 },
                EditOp::Del { reference: 1 },
                EditOp::Cor { hyp: 1, reference: 2 },
            ]
        );
        assert_eq!(a.total_cost, 7);
        let t = derive_targets(&a, 2).unwrap();
        assert_eq!(t.c, vec![true, true]);
        assert_eq!(t.d, vec![true, false]);
        assert!(!t.s);
        let counts = error_counts(&a);
        assert_eq!(counts, ErrorCounts { cor: 2, sub: 0, del: 1, ins: 0 });
        assert!((counts.wer().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_reference_gives_insertion() {
        let w = EditWeights::default();
        let a = levenshtein_align(&toks("x"), &Vec::<String>::new(), w);
        assert_eq!(a.ops, vec![EditOp::Ins { hyp: 0 }]);
        assert_eq!(a.total_cost, w.ins_cost as u64);
        assert!(matches!(error_counts(&a).wer(), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn start_deletion() {
        let a = levenshtein_align(&toks("a"), &toks("b a"), EditWeights::default());
        let t = derive_targets(&a, 1).unwrap();
        assert_eq!(t.c, vec![true]);
        assert_eq!(t.d, vec![false]);
        assert!(t.s);
    }

    #[test]
    fn leading_insertion() {
        let a = levenshtein_align(&toks("x a"), &toks("a"), EditWeights::default());
        let counts = error_counts(&a);
        assert_eq!(counts, ErrorCounts { cor: 1, sub: 0, del: 0, ins: 1 });
        assert_eq!(counts.wer().unwrap(), 1.0);
    }

    #[test]
    fn identity_counts() {
        let a = levenshtein_align(&toks("a b c d e"), &toks("a b c d e"), EditWeights::default());
        let counts = error_counts(&a);
        assert_eq!(counts, ErrorCounts { cor: 5, ..Default::default() });
        assert_eq!(counts.wer().unwrap(), 0.0);
        let t = derive_targets(&a, 5).unwrap();
        assert!(t.c.iter().all(|&x| x) && t.d.iter().all(|&x| !x) && !t.s);
    }

    #[test]
    fn consecutive_deletions_collapse() {
        let a = levenshtein_align(&toks("a d"), &toks("a b c d"), EditWeights::default());
        let t = derive_targets(&a, 2).unwrap();
        assert_eq!(t.d, vec![true, false]);
        assert_eq!(error_counts(&a).del, 2);
    }

    #[test]
    fn final_gap_counts_in_last_word() {
        let a = levenshtein_align(&toks("a b"), &toks("a b c"), EditWeights::default());
        let t = derive_targets(&a, 2).unwrap();
        assert_eq!(t.d, vec![false, true]);
    }

    #[test]
    fn length_mismatch_is_error() {
        let a = levenshtein_align(&toks("a b"), &toks("a b"), EditWeights::default());
        assert!(derive_targets(&a, 3).is_err());
        assert!(derive_targets(&a, 1).is_err());
    }

    #[test]
    fn zero_weight_rejected() {
        assert!(EditWeights::new(0, 1, 1).is_err());
    }

    fn seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..7)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn script_is_consistent(hyp in seq(), reference in seq(), sub in 1u32..12, del in 1u32..12, ins in 1u32..12) {
            let w = EditWeights::new(sub, del, ins).unwrap();
            let a = levenshtein_align(&hyp, &reference, w);
            let total: u64 = a.ops.iter().map(|op| w.cost(op)).sum();
            prop_assert_eq!(total, a.total_cost);
            let mut hi = 0;
            let mut ri = 0;
            for op in &a.ops {
                match *op {
                    EditOp::Cor { hyp: h, reference: r } => {
                        prop_assert_eq!(&hyp[h], &reference[r]);
                        prop_assert_eq!((h, r), (hi, ri)); hi += 1; ri += 1;
                    }
                    EditOp::Sub { hyp: h, reference: r } => {
                        prop_assert_ne!(&hyp[h], &reference[r]);
                        prop_assert_eq!((h, r), (hi, ri)); hi += 1; ri += 1;
                    }
                    EditOp::Ins { hyp: h } => { prop_assert_eq!(h, hi); hi += 1; }
                    EditOp::Del { reference: r } => { prop_assert_eq!(r, ri); ri += 1; }
                }
            }
            prop_assert_eq!(hi, hyp.len());
            prop_assert_eq!(ri, reference.len());

            let counts = error_counts(&a);
            let t = derive_targets(&a, hyp.len()).unwrap();
            prop_assert_eq!(t.c.iter().filter(|&&x| x).count(), counts.cor);
            prop_assert_eq!(hyp.len(), counts.hypothesis_len());
            let marked = t.d.iter().filter(|&&x| x).count() + t.s as usize;
            prop_assert!(marked <= counts.del);
        }

        #[test]
        fn swap_symmetry(hyp in seq(), reference in seq(), sub in 1u32..12, del in 1u32..12, ins in 1u32..12) {
            let forward = levenshtein_align(&hyp, &reference, EditWeights::new(sub, del, ins).unwrap());
            let swapped = levenshtein_align(&reference, &hyp, EditWeights::new(sub, ins, del).unwrap());
            prop_assert_eq!(forward.total_cost, swapped.total_cost);
        }
    }
}
