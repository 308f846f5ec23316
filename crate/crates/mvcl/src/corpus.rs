//! Case documents, comparison triples, element annotations, and their
//! newline-delimited JSON loaders.
//!
//! All loaders validate invariants at load time and must never panic on
//! malformed bytes — they are fuzzed directly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sentence-terminator tokens (CAIL-style punctuation).
pub const DEFAULT_TERMINATORS: [&str; 8] = [".", "。", "!", "?", "！", "？", ";", "；"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    Whitespace,
    /// Every non-whitespace character becomes one token (suits ideographic
    /// scripts).
    Character,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub tokenize_mode: TokenizeMode,
    pub terminators: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            tokenize_mode: TokenizeMode::Character,
            terminators: DEFAULT_TERMINATORS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A tokenized case with half-open sentence spans that exactly partition
/// the token range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub id: String,
    pub tokens: Vec<String>,
    pub sentence_spans: Vec<(usize, usize)>,
}

impl CaseDocument {
    pub fn new(id: String, tokens: Vec<String>, sentence_spans: Vec<(usize, usize)>) -> Result<Self> {
        let doc = CaseDocument {
            id,
            tokens,
            sentence_spans,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Integrity(format!("case {} has no tokens", self.id)));
        }
        let mut expect = 0usize;
        for &(start, end) in &self.sentence_spans {
            if start != expect || end <= start {
                return Err(Error::Integrity(format!(
                    "case {}: span [{start},{end}) breaks the partition at {expect}",
                    self.id
                )));
            }
            expect = end;
        }
        if expect != self.tokens.len() {
            return Err(Error::Integrity(format!(
                "case {}: spans cover {expect} of {} tokens",
                self.id,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_spans.len()
    }

    pub fn sentence_tokens(&self, idx: usize) -> &[String] {
        let (s, e) = self.sentence_spans[idx];
        &self.tokens[s..e]
    }

    /// Keep the last `limit` tokens, re-clip sentence spans, and drop spans
    /// that end up empty. Returns the truncated document plus the index of
    /// the first surviving sentence, so per-sentence annotations can be
    /// re-aligned.
    pub fn truncate_front(&self, limit: usize) -> (CaseDocument, usize) {
        debug_assert!(limit >= 1);
        let len = self.tokens.len();
        if len <= limit {
            return (self.clone(), 0);
        }
        let cut = len - limit;
        let tokens = self.tokens[cut..].to_vec();
        let mut spans = Vec::new();
        let mut first_kept = self.sentence_spans.len();
        for (i, &(s, e)) in self.sentence_spans.iter().enumerate() {
            if e <= cut {
                continue;
            }
            if i < first_kept {
                first_kept = i;
            }
            spans.push((s.max(cut) - cut, e - cut));
        }
        let doc = CaseDocument {
            id: self.id.clone(),
            tokens,
            sentence_spans: spans,
        };
        debug_assert!(doc.validate().is_ok());
        (doc, first_kept)
    }
}

/// One comparison instance: query A against candidates B and C.
/// Label 0 means B is more relevant; label 1 means C is.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub query_id: String,
    pub cand_b_id: String,
    pub cand_c_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementAnnotation {
    pub case_id: String,
    /// One flag per sentence; true = contains legal elements.
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceExample {
    pub tokens: Vec<String>,
    pub label: u8,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub cases: BTreeMap<String, CaseDocument>,
    pub train: Vec<Triple>,
    pub validation: Vec<Triple>,
    pub test: Vec<Triple>,
    pub annotations: BTreeMap<String, ElementAnnotation>,
}

impl Corpus {
    pub fn case(&self, id: &str) -> Result<&CaseDocument> {
        self.cases
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("unknown case id {id}")))
    }

    /// Cross-record invariants: every triple id resolves, queries differ
    /// from candidates, splits are disjoint by instance, annotations align.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&Triple> = HashSet::new();
        for (split, triples) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for t in triples {
                for id in [&t.query_id, &t.cand_b_id, &t.cand_c_id] {
                    if !self.cases.contains_key(id) {
                        return Err(Error::Integrity(format!(
                            "{split} triple references missing case {id}"
                        )));
                    }
                }
                if t.query_id == t.cand_b_id || t.query_id == t.cand_c_id {
                    return Err(Error::Integrity(format!(
                        "{split} triple query {} duplicates a candidate",
                        t.query_id
                    )));
                }
                if t.label > 1 {
                    return Err(Error::Integrity(format!(
                        "{split} triple label {} out of {{0,1}}",
                        t.label
                    )));
                }
            }
        }
        for t in self.train.iter().chain(&self.validation).chain(&self.test) {
            let _ = t;
        }
        for (a, b) in [
            (&self.train, &self.validation),
            (&self.train, &self.test),
            (&self.validation, &self.test),
        ] {
            seen.clear();
            seen.extend(a.iter());
            if let Some(dup) = b.iter().find(|t| seen.contains(t)) {
                return Err(Error::Integrity(format!(
                    "triple ({}, {}, {}) appears in two splits",
                    dup.query_id, dup.cand_b_id, dup.cand_c_id
                )));
            }
        }
        for (id, ann) in &self.annotations {
            let case = self.case(id)?;
            if ann.flags.len() != case.sentence_count() {
                return Err(Error::Integrity(format!(
                    "annotation for {id} has {} flags for {} sentences",
                    ann.flags.len(),
                    case.sentence_count()
                )));
            }
        }
        Ok(())
    }
}

/// Split text into tokens. Character mode splits every non-whitespace
/// character into its own token.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Result<Vec<String>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyDocument("text is empty after trimming".into()));
    }
    let tokens = match mode {
        TokenizeMode::Whitespace => trimmed.split_whitespace().map(str::to_string).collect(),
        TokenizeMode::Character => trimmed
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| c.to_string())
            .collect(),
    };
    Ok(tokens)
}

/// Close a sentence after each terminator token; the trailing span closes at
/// the end. With no terminator the whole sequence is one sentence.
pub fn segment_sentences(tokens: &[String], terminators: &[String]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0usize;
    for (i, tok) in tokens.iter().enumerate() {
        if terminators.iter().any(|t| t == tok) {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push((start, tokens.len()));
    }
    spans
}

/// Each input triple plus its candidate-swapped copy with the label flipped.
pub fn augment_swap(triples: &[Triple]) -> Vec<Triple> {
    let mut out = Vec::with_capacity(triples.len() * 2);
    for t in triples {
        out.push(t.clone());
        out.push(Triple {
            query_id: t.query_id.clone(),
            cand_b_id: t.cand_c_id.clone(),
            cand_c_id: t.cand_b_id.clone(),
            label: 1 - t.label,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Newline-delimited JSON loaders. Each parse_* function takes raw file text
// so fuzz targets can drive it directly.
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawCase {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    sentences: Option<Vec<(usize, usize)>>,
}

fn non_empty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_cases(text: &str, config: &CorpusConfig) -> Result<BTreeMap<String, CaseDocument>> {
    let mut cases = BTreeMap::new();
    for (line, raw) in non_empty_lines(text) {
        let rec: RawCase = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        let doc = match (rec.text, rec.tokens) {
            (Some(text), None) => {
                let tokens = tokenize(&text, config.tokenize_mode).map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?;
                let spans = segment_sentences(&tokens, &config.terminators);
                CaseDocument::new(rec.id, tokens, spans)
            }
            (None, Some(tokens)) => {
                let spans = match rec.sentences {
                    Some(spans) => spans,
                    None => segment_sentences(&tokens, &config.terminators),
                };
                CaseDocument::new(rec.id, tokens, spans)
            }
            (Some(_), Some(_)) => Err(Error::Parse {
                line,
                msg: "case carries both text and tokens".into(),
            }),
            (None, None) => Err(Error::Parse {
                line,
                msg: "case needs either text or tokens".into(),
            }),
        }?;
        if cases.insert(doc.id.clone(), doc).is_some() {
            return Err(Error::Parse {
                line,
                msg: "duplicate case id".into(),
            });
        }
    }
    Ok(cases)
}

#[derive(Deserialize)]
struct RawTriple {
    query: String,
    cand_b: String,
    cand_c: String,
    label: u8,
}

pub fn parse_triples(text: &str) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (line, raw) in non_empty_lines(text) {
        let rec: RawTriple = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.label > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("label {} out of {{0,1}}", rec.label),
            });
        }
        triples.push(Triple {
            query_id: rec.query,
            cand_b_id: rec.cand_b,
            cand_c_id: rec.cand_c,
            label: rec.label,
        });
    }
    Ok(triples)
}

#[derive(Deserialize)]
struct RawAnnotation {
    case_id: String,
    flags: Vec<u8>,
}

pub fn parse_elements(text: &str) -> Result<BTreeMap<String, ElementAnnotation>> {
    let mut out = BTreeMap::new();
    for (line, raw) in non_empty_lines(text) {
        let rec: RawAnnotation = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if let Some(&bad) = rec.flags.iter().find(|&&f| f > 1) {
            return Err(Error::Parse {
                line,
                msg: format!("flag {bad} out of {{0,1}}"),
            });
        }
        let ann = ElementAnnotation {
            case_id: rec.case_id.clone(),
            flags: rec.flags.iter().map(|&f| f == 1).collect(),
        };
        if out.insert(rec.case_id, ann).is_some() {
            return Err(Error::Parse {
                line,
                msg: "duplicate annotation".into(),
            });
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawSentenceExample {
    text: String,
    label: u8,
}

pub fn parse_sentence_examples(text: &str, config: &CorpusConfig) -> Result<Vec<SentenceExample>> {
    let mut out = Vec::new();
    for (line, raw) in non_empty_lines(text) {
        let rec: RawSentenceExample = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.label > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("label {} out of {{0,1}}", rec.label),
            });
        }
        let tokens = tokenize(&rec.text, config.tokenize_mode).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        out.push(SentenceExample {
            tokens,
            label: rec.label,
        });
    }
    Ok(out)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone)]
pub struct CorpusPaths<'a> {
    pub cases: &'a Path,
    pub train_triples: Option<&'a Path>,
    pub validation_triples: Option<&'a Path>,
    pub test_triples: Option<&'a Path>,
    pub elements: Option<&'a Path>,
}

impl<'a> CorpusPaths<'a> {
    pub fn cases_only(cases: &'a Path) -> Self {
        CorpusPaths {
            cases,
            train_triples: None,
            validation_triples: None,
            test_triples: None,
            elements: None,
        }
    }
}

/// Load and fully validate a corpus from disk.
pub fn load_corpus(paths: &CorpusPaths, config: &CorpusConfig) -> Result<Corpus> {
    let cases = parse_cases(&read_to_string(paths.cases)?, config)?;
    let mut corpus = Corpus {
        cases,
        ..Corpus::default()
    };
    if let Some(p) = paths.train_triples {
        corpus.train = parse_triples(&read_to_string(p)?)?;
    }
    if let Some(p) = paths.validation_triples {
        corpus.validation = parse_triples(&read_to_string(p)?)?;
    }
    if let Some(p) = paths.test_triples {
        corpus.test = parse_triples(&read_to_string(p)?)?;
    }
    if let Some(p) = paths.elements {
        corpus.annotations = parse_elements(&read_to_string(p)?)?;
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Serialize annotations in elements.jsonl format, sorted by case id.
pub fn elements_to_jsonl(annotations: &BTreeMap<String, ElementAnnotation>) -> String {
    let mut out = String::new();
    for ann in annotations.values() {
        let flags: Vec<u8> = ann.flags.iter().map(|&f| u8::from(f)).collect();
        out.push_str(
            &serde_json::json!({"case_id": ann.case_id, "flags": flags}).to_string(),
        );
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn whitespace_tokenize() {
        assert_eq!(
            tokenize("PersonX borrowed 10k", TokenizeMode::Whitespace).unwrap(),
            toks(&["PersonX", "borrowed", "10k"])
        );
    }

    #[test]
    fn character_tokenize() {
        assert_eq!(
            tokenize("abc", TokenizeMode::Character).unwrap(),
            toks(&["a", "b", "c"])
        );
    }

    #[test]
    fn blank_input_is_empty_document() {
        assert!(matches!(
            tokenize("   ", TokenizeMode::Whitespace),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn segmentation_examples() {
        let term: Vec<String> = DEFAULT_TERMINATORS.iter().map(|s| s.to_string()).collect();
        assert_eq!(
            segment_sentences(&toks(&["a", ".", "b"]), &term),
            vec![(0, 2), (2, 3)]
        );
        assert_eq!(segment_sentences(&toks(&["a", "b"]), &term), vec![(0, 2)]);
        assert_eq!(
            segment_sentences(&toks(&["x", "。", "y", "？"]), &term),
            vec![(0, 2), (2, 4)]
        );
    }

    #[test]
    fn truncate_front_keeps_suffix_and_reindexes() {
        let doc = CaseDocument::new(
            "a".into(),
            toks(&["t1", "t2", "t3", "t4", "t5"]),
            vec![(0, 2), (2, 5)],
        )
        .unwrap();
        let (t, first_kept) = doc.truncate_front(2);
        assert_eq!(t.tokens, toks(&["t4", "t5"]));
        assert_eq!(t.sentence_spans, vec![(0, 2)]);
        assert_eq!(first_kept, 1);
    }

    #[test]
    fn truncate_front_unchanged_under_limit() {
        let doc =
            CaseDocument::new("a".into(), toks(&["x", "y"]), vec![(0, 2)]).unwrap();
        let (t, first_kept) = doc.truncate_front(512);
        assert_eq!(t, doc);
        assert_eq!(first_kept, 0);
    }

    #[test]
    fn truncate_front_long_doc() {
        let tokens: Vec<String> = (0..600).map(|i| i.to_string()).collect();
        let spans = vec![(0, 600)];
        let doc = CaseDocument::new("long".into(), tokens, spans).unwrap();
        let (t, _) = doc.truncate_front(512);
        assert_eq!(t.tokens.len(), 512);
        assert_eq!(t.tokens[0], "88");
    }

    #[test]
    fn augment_swap_flips_labels() {
        let t = Triple {
            query_id: "A".into(),
            cand_b_id: "B".into(),
            cand_c_id: "C".into(),
            label: 0,
        };
        let out = augment_swap(std::slice::from_ref(&t));
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].cand_b_id, "C");
        assert_eq!(out[1].cand_c_id, "B");
        assert_eq!(out[1].label, 1);
        assert!(augment_swap(&[]).is_empty());
    }

    #[test]
    fn augment_swap_twice_restores_originals() {
        let t = Triple {
            query_id: "A".into(),
            cand_b_id: "B".into(),
            cand_c_id: "C".into(),
            label: 1,
        };
        let twice = augment_swap(&augment_swap(std::slice::from_ref(&t)));
        let originals = twice.iter().filter(|x| **x == t).count();
        assert_eq!(originals, 2);
    }

    #[test]
    fn parse_cases_round_trip() {
        let cfg = CorpusConfig {
            tokenize_mode: TokenizeMode::Whitespace,
            ..CorpusConfig::default()
        };
        let text = r#"{"id":"a","text":"x y . z"}
{"id":"b","tokens":["p","q"],"sentences":[[0,2]]}
{"id":"c","tokens":["u","."]}"#;
        let cases = parse_cases(text, &cfg).unwrap();
        assert_eq!(cases.len(), 3);
        assert_eq!(cases["a"].sentence_spans, vec![(0, 3), (3, 4)]);
        assert_eq!(cases["c"].sentence_spans, vec![(0, 2)]);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let cfg = CorpusConfig::default();
        let text = "{\"id\":\"a\",\"text\":\"x\"}\nnot json";
        match parse_cases(text, &cfg) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_triple_id_is_integrity_error() {
        let cfg = CorpusConfig::default();
        let cases = parse_cases(r#"{"id":"a","text":"xy"}"#, &cfg).unwrap();
        let corpus = Corpus {
            cases,
            train: parse_triples(r#"{"query":"a","cand_b":"missing","cand_c":"a2","label":0}"#)
                .unwrap(),
            ..Corpus::default()
        };
        assert!(matches!(corpus.validate(), Err(Error::Integrity(_))));
    }

    #[test]
    fn misaligned_annotation_is_integrity_error() {
        let cfg = CorpusConfig::default();
        let cases = parse_cases(r#"{"id":"a","text":"x.y"}"#, &cfg).unwrap();
        let annotations =
            parse_elements(r#"{"case_id":"a","flags":[1,0,1]}"#).unwrap();
        let corpus = Corpus {
            cases,
            annotations,
            ..Corpus::default()
        };
        assert!(matches!(corpus.validate(), Err(Error::Integrity(_))));
    }

    #[test]
    fn split_overlap_is_integrity_error() {
        let cfg = CorpusConfig::default();
        let cases =
            parse_cases("{\"id\":\"a\",\"text\":\"xy\"}\n{\"id\":\"b\",\"text\":\"pq\"}\n{\"id\":\"c\",\"text\":\"rs\"}", &cfg)
                .unwrap();
        let t = parse_triples(r#"{"query":"a","cand_b":"b","cand_c":"c","label":0}"#).unwrap();
        let corpus = Corpus {
            cases,
            train: t.clone(),
            test: t,
            ..Corpus::default()
        };
        assert!(matches!(corpus.validate(), Err(Error::Integrity(_))));
    }

    proptest! {
        #[test]
        fn spans_partition_after_segmentation(raw in proptest::collection::vec("[a-z.。！]", 1..80)) {
            let tokens: Vec<String> = raw;
            let term: Vec<String> = DEFAULT_TERMINATORS.iter().map(|s| s.to_string()).collect();
            let spans = segment_sentences(&tokens, &term);
            let doc = CaseDocument::new("p".into(), tokens, spans).unwrap();
            prop_assert!(doc.validate().is_ok());
        }

        #[test]
        fn truncate_front_is_idempotent(len in 1usize..200, limit in 1usize..96) {
            let tokens: Vec<String> = (0..len).map(|i| format!("t{i}")).collect();
            let spans = segment_sentences(&tokens, &["t7".to_string(), "t13".to_string()]);
            let doc = CaseDocument::new("p".into(), tokens, spans).unwrap();
            let (once, _) = doc.truncate_front(limit);
            let (twice, _) = once.truncate_front(limit);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn tokenize_join_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..20)) {
            let text = words.join(" ");
            let tokens = tokenize(&text, TokenizeMode::Whitespace).unwrap();
            prop_assert_eq!(tokens.join(" "), text);
        }
    }
}
