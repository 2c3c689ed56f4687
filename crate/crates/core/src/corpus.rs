//! Hypothesis/reference data model and JSON-lines corpus IO.
//!
//! One record per line:
//!
//! ```text
//! {"id": str, "recording_id": str,
//!  "words": [{"w": str, "start": num, "dur": num, "post": num}],
//!  "ref": [str]?, "targets": {"c": [0|1], "d": [0|1], "s": 0|1}?,
//!  "pred": {"c": [num], "d": [num]?, "s": num?}?}
//! ```
//!
//! Numbers are written in the shortest decimal form that parses back to the
//! same binary64 value, so a read/write cycle is bit-exact.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Length of one acoustic frame in seconds.
pub const FRAME_SECONDS: f64 = 0.01;

const TIME_TOLERANCE: f64 = 1e-9;

/// Frame count for a word of the given duration.
pub fn frames_for_duration(duration: f64) -> u32 {
    (duration / FRAME_SECONDS).round() as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypWord {
    pub text: String,
    pub start: f64,
    pub duration: f64,
    pub frames: u32,
    pub raw_posterior: f64,
}

impl HypWord {
    /// Builds a word, deriving the frame count from the duration.
    pub fn new(text: impl Into<String>, start: f64, duration: f64, raw_posterior: f64) -> Result<Self> {
        let word = HypWord {
            text: text.into(),
            start,
            duration,
            frames: frames_for_duration(duration),
            raw_posterior,
        };
        word.validate()?;
        Ok(word)
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    fn validate(&self) -> Result<()> {
        let ctx = || format!("word {:?}", self.text);
        if self.text.is_empty() || self.text.chars().any(char::is_whitespace) {
            return Err(Error::invalid(ctx(), "token must be non-empty and free of whitespace"));
        }
        if !(self.start.is_finite() && self.start >= 0.0) {
            return Err(Error::invalid(ctx(), format!("start {} must be finite and >= 0", self.start)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(ctx(), format!("dur {} must be finite and > 0", self.duration)));
        }
        if self.frames < 1 || self.frames != frames_for_duration(self.duration) {
            return Err(Error::invalid(
                ctx(),
                format!("frames {} inconsistent with dur {}", self.frames, self.duration),
            ));
        }
        if !(0.0..=1.0).contains(&self.raw_posterior) {
            return Err(Error::invalid(ctx(), format!("post {} outside [0, 1]", self.raw_posterior)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub recording_id: String,
    pub words: Vec<HypWord>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.words.iter().map(|w| w.text.as_str()).collect()
    }

    pub fn frames(&self) -> Vec<u32> {
        self.words.iter().map(|w| w.frames).collect()
    }

    pub fn raw_posteriors(&self) -> Vec<f64> {
        self.words.iter().map(|w| w.raw_posterior).collect()
    }

    /// Total hypothesised speech in seconds.
    pub fn duration(&self) -> f64 {
        self.words.iter().map(|w| w.duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("utterance {}", self.id);
        if self.id.is_empty() {
            return Err(Error::invalid("utterance", "empty id"));
        }
        if self.words.is_empty() {
            return Err(Error::invalid(ctx(), "no hypothesised words"));
        }
        for w in &self.words {
            w.validate().map_err(|e| Error::invalid(ctx(), e.to_string()))?;
        }
        for pair in self.words.windows(2) {
            if pair[1].start + TIME_TOLERANCE < pair[0].end() {
                return Err(Error::invalid(
                    ctx(),
                    format!("word {:?} starts before the previous word ends", pair[1].text),
                ));
            }
        }
        Ok(())
    }
}

/// Binary training targets: correctness per word, deletion after each word,
/// and deletion before the first word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Targets {
    pub c: Vec<bool>,
    pub d: Vec<bool>,
    pub s: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub c: Vec<f64>,
    pub d: Option<Vec<f64>>,
    pub s: Option<f64>,
}

impl Predictions {
    pub fn confidence_only(c: Vec<f64>) -> Self {
        Predictions { c, d: None, s: None }
    }

    pub fn with_deletions(c: Vec<f64>, d: Vec<f64>, s: f64) -> Self {
        Predictions {
            c,
            d: Some(d),
            s: Some(s),
        }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn has_deletions(&self) -> bool {
        self.d.is_some() && self.s.is_some()
    }

    pub(crate) fn validate(&self, expected_len: usize) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.c.len() != expected_len {
            return Err(Error::invalid("pred.c", format!("length {} != {}", self.c.len(), expected_len)));
        }
        if !self.c.iter().all(|&x| unit(x)) {
            return Err(Error::invalid("pred.c", "values must lie in [0, 1]"));
        }
        match (&self.d, self.s) {
            (None, None) => Ok(()),
            (Some(d), Some(s)) => {
                if d.len() != expected_len {
                    return Err(Error::invalid("pred.d", format!("length {} != {}", d.len(), expected_len)));
                }
                if !d.iter().all(|&x| unit(x)) || !unit(s) {
                    return Err(Error::invalid("pred.d/pred.s", "values must lie in [0, 1]"));
                }
                Ok(())
            }
            _ => Err(Error::invalid("pred", "d and s must be given together")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledUtterance {
    pub utterance: Utterance,
    pub reference: Option<Vec<String>>,
    pub targets: Option<Targets>,
    pub predictions: Option<Predictions>,
}

impl LabeledUtterance {
    pub fn new(utterance: Utterance, reference: Option<Vec<String>>) -> Self {
        LabeledUtterance {
            utterance,
            reference,
            targets: None,
            predictions: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.utterance.id
    }

    pub fn validate(&self) -> Result<()> {
        self.utterance.validate()?;
        let ctx = || format!("utterance {}", self.utterance.id);
        let n = self.utterance.len();
        if let Some(reference) = &self.reference {
            if reference.iter().any(|t| t.is_empty()) {
                return Err(Error::invalid(ctx(), "empty reference token"));
            }
        }
        if let Some(t) = &self.targets {
            if t.c.len() != n || t.d.len() != n {
                return Err(Error::invalid(ctx(), "targets length differs from word count"));
            }
        }
        if let Some(p) = &self.predictions {
            p.validate(n).map_err(|e| Error::invalid(ctx(), e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct WordRecord {
    w: String,
    start: f64,
    dur: f64,
    post: f64,
    #[serde(default, skip_serializing)]
    frames: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct TargetRecord {
    c: Vec<u8>,
    d: Vec<u8>,
    s: u8,
}

#[derive(Serialize, Deserialize)]
struct PredRecord {
    c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    recording_id: String,
    words: Vec<WordRecord>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    targets: Option<TargetRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pred: Option<PredRecord>,
}

fn binary(values: &[u8], field: &str) -> std::result::Result<Vec<bool>, String> {
    values
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("{field} holds {other}, expected 0 or 1")),
        })
        .collect()
}

impl Record {
    fn into_utterance(self) -> std::result::Result<LabeledUtterance, String> {
        let id = self.id;
        let words = self
            .words
            .into_iter()
            .map(|w| HypWord {
                frames: w.frames.unwrap_or_else(|| frames_for_duration(w.dur)),
                text: w.w,
                start: w.start,
                duration: w.dur,
                raw_posterior: w.post,
            })
            .collect();
        let targets = match self.targets {
            Some(t) => Some(Targets {
                c: binary(&t.c, "targets.c")?,
                d: binary(&t.d, "targets.d")?,
                s: binary(&[t.s], "targets.s")?[0],
            }),
            None => None,
        };
        Ok(LabeledUtterance {
            utterance: Utterance {
                id,
                recording_id: self.recording_id,
                words,
            },
            reference: self.reference,
            targets,
            predictions: self.pred.map(|p| Predictions { c: p.c, d: p.d, s: p.s }),
        })
    }

    fn from_utterance(u: &LabeledUtterance) -> Self {
        Record {
            id: u.utterance.id.clone(),
            recording_id: u.utterance.recording_id.clone(),
            words: u
                .utterance
                .words
                .iter()
                .map(|w| WordRecord {
                    w: w.text.clone(),
                    start: w.start,
                    dur: w.duration,
                    post: w.raw_posterior,
                    frames: None,
                })
                .collect(),
            reference: u.reference.clone(),
            targets: u.targets.as_ref().map(|t| TargetRecord {
                c: t.c.iter().map(|&b| b as u8).collect(),
                d: t.d.iter().map(|&b| b as u8).collect(),
                s: t.s as u8,
            }),
            pred: u.predictions.as_ref().map(|p| PredRecord {
                c: p.c.clone(),
                d: p.d.clone(),
                s: p.s,
            }),
        }
    }
}

/// Parses one JSON line into a validated utterance. `line_no` is 1-based and
/// only used for error messages.
pub fn parse_line(line: &str, line_no: usize) -> Result<LabeledUtterance> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    let utt = record.into_utterance().map_err(|message| Error::Parse { line: line_no, message })?;
    utt.validate()?;
    Ok(utt)
}

pub fn to_json_line(utt: &LabeledUtterance) -> String {
    serde_json::to_string(&Record::from_utterance(utt)).expect("corpus records always serialize")
}

pub fn read_corpus_from<R: BufRead>(reader: R) -> Result<Vec<LabeledUtterance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt = parse_line(&line, idx + 1)?;
        if !seen.insert(utt.utterance.id.clone()) {
            return Err(Error::invalid(format!("utterance {}", utt.utterance.id), "duplicate id"));
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledUtterance>> {
    let file = File::open(path)?;
    read_corpus_from(BufReader::new(file))
}

pub fn write_corpus_to<W: Write>(utterances: &[LabeledUtterance], mut writer: W) -> Result<()> {
    for u in utterances {
        writer.write_all(to_json_line(u).as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the corpus atomically: nothing appears at `path` unless every
/// record was written.
pub fn write_corpus(utterances: &[LabeledUtterance], path: impl AsRef<Path>) -> Result<()> {
    for u in utterances {
        u.validate()?;
    }
    write_atomic(path.as_ref(), |w| write_corpus_to(utterances, BufWriter::new(w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str) -> LabeledUtterance {
        let words = vec![
            HypWord::new("a", 0.0, 0.3, 0.9).unwrap(),
            HypWord::new("bc", 0.3, 0.25, 0.1 + 0.2).unwrap(),
        ];
        LabeledUtterance::new(
            Utterance {
                id: id.to_string(),
                recording_id: "rec".to_string(),
                words,
            },
            Some(vec!["a".into(), "b".into()]),
        )
    }

    #[test]
    fn two_lines_keep_order() {
        let corpus = vec![utt("u2"), utt("u1")];
        let mut buf = Vec::new();
        write_corpus_to(&corpus, &mut buf).unwrap();
        let back = read_corpus_from(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back[0].id(), "u2");
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(read_corpus_from(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn posterior_out_of_range_is_rejected() {
        let line = r#"{"id":"x","recording_id":"r","words":[{"w":"a","start":0,"dur":0.2,"post":1.3}]}"#;
        match parse_line(line, 1) {
            Err(Error::Invalid { context, message }) => {
                assert!(context.contains('x'));
                assert!(message.contains("post"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_line_number() {
        let data = format!("{}\n{{not json\n", to_json_line(&utt("a")));
        match read_corpus_from(data.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn absent_targets_omit_key() {
        let line = to_json_line(&utt("a"));
        assert!(!line.contains("targets"));
        assert!(!line.contains("pred"));
        let mut u = utt("a");
        u.targets = Some(Targets {
            c: vec![true, false],
            d: vec![false, false],
            s: true,
        });
        let line = to_json_line(&u);
        assert!(line.contains(r#""targets":{"c":[1,0],"d":[0,0],"s":1}"#), "{line}");
    }

    #[test]
    fn frames_derived_from_duration() {
        let u = utt("a");
        assert_eq!(u.utterance.frames(), vec![30, 25]);
    }

    #[test]
    fn overlapping_words_rejected() {
        let mut u = utt("a");
        u.utterance.words[1].start = 0.1;
        assert!(u.validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let data = format!("{}\n{}\n", to_json_line(&utt("a")), to_json_line(&utt("a")));
        assert!(read_corpus_from(data.as_bytes()).is_err());
    }

    #[test]
    fn targets_with_non_binary_value_rejected() {
        let line = r#"{"id":"x","recording_id":"r","words":[{"w":"a","start":0,"dur":0.2,"post":0.5}],"targets":{"c":[2],"d":[0],"s":0}}"#;
        assert!(matches!(parse_line(line, 7), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn write_to_missing_directory_is_io_error() {
        let err = write_corpus(&[utt("a")], "/nonexistent-dir/x/corpus.jsonl").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
