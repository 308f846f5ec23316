//! Evaluation metrics (accuracy and macro-averaged precision/recall/F1)
//! and the lexical TF-IDF / BM25 baselines for triple classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Triple};
use crate::error::{Error, Result};

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.is_empty() || predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "confusion counts need matching non-empty inputs ({} vs {})",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(Error::Contract(format!("label {p}/{y} out of {{0,1}}"))),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub ma_p: f64,
    pub ma_r: f64,
    pub ma_f: f64,
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn prf(tp: f64, fp: f64, fn_: f64) -> (f64, f64, f64) {
    let p = safe_div(tp, tp + fp);
    let r = safe_div(tp, tp + fn_);
    let f1 = safe_div(2.0 * p * r, p + r);
    (p, r, f1)
}

/// Macro metrics: per-class precision/recall/F1 averaged unweighted over
/// the two classes; zero denominators score 0; MaF averages the per-class
/// F1 values.
pub fn macro_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    let c = ConfusionCounts::from_predictions(predictions, labels)?;
    let accuracy = (c.tp + c.tn) as f64 / c.total() as f64;
    let (p1, r1, f1_1) = prf(c.tp as f64, c.fp as f64, c.fn_ as f64);
    // class 0 by symmetry: its positives are the negatives of class 1
    let (p0, r0, f1_0) = prf(c.tn as f64, c.fn_ as f64, c.fp as f64);
    Ok(MetricsReport {
        accuracy,
        ma_p: (p0 + p1) / 2.0,
        ma_r: (r0 + r1) / 2.0,
        ma_f: (f1_0 + f1_1) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 0.0 {
            return Err(Error::Config(format!("k1 {} must be >= 0", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b {} must be in [0,1]", self.b)));
        }
        Ok(())
    }
}

/// Document frequencies and lengths over the whole case corpus.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub df: BTreeMap<String, usize>,
    pub avg_len: f64,
}

impl CorpusStats {
    pub fn from_cases<'a>(docs: impl Iterator<Item = &'a [String]> + Clone) -> Self {
        let mut df = BTreeMap::new();
        let mut doc_count = 0usize;
        let mut total_len = 0usize;
        for tokens in docs {
            doc_count += 1;
            total_len += tokens.len();
            let mut seen: Vec<&String> = tokens.iter().collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        CorpusStats {
            doc_count,
            df,
            avg_len: if doc_count == 0 {
                0.0
            } else {
                total_len as f64 / doc_count as f64
            },
        }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        let docs: Vec<&[String]> = corpus.cases.values().map(|c| c.tokens.as_slice()).collect();
        Self::from_cases(docs.iter().copied())
    }

    fn df_of(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// Smoothed tf-idf idf: ln((N+1)/(df+1)) + 1.
    pub fn tfidf_idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.df_of(term) as f64;
        ((n + 1.0) / (df + 1.0)).ln() + 1.0
    }

    /// Okapi idf: ln((N - df + 0.5)/(df + 0.5) + 1).
    pub fn bm25_idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.df_of(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    counts
}

/// Cosine similarity between raw-count tf-idf vectors of the two token
/// sequences.
pub fn tfidf_score(query: &[String], doc: &[String], stats: &CorpusStats) -> f64 {
    let q = term_counts(query);
    let d = term_counts(doc);
    let mut dot = 0.0;
    let mut qn = 0.0;
    let mut dn = 0.0;
    for (term, tf) in &q {
        let w = tf * stats.tfidf_idf(term);
        qn += w * w;
        if let Some(dtf) = d.get(term) {
            dot += w * dtf * stats.tfidf_idf(term);
        }
    }
    for (term, tf) in &d {
        let w = tf * stats.tfidf_idf(term);
        dn += w * w;
    }
    let denom = (qn.sqrt() * dn.sqrt()).max(1e-12);
    dot / denom
}

/// Okapi BM25 of `doc` against the distinct terms of `query`.
pub fn bm25_score(query: &[String], doc: &[String], stats: &CorpusStats, params: &Bm25Params) -> f64 {
    let d = term_counts(doc);
    let len_ratio = if stats.avg_len == 0.0 {
        1.0
    } else {
        doc.len() as f64 / stats.avg_len
    };
    let mut terms: Vec<&str> = query.iter().map(String::as_str).collect();
    terms.sort_unstable();
    terms.dedup();
    let mut score = 0.0;
    for term in terms {
        let tf = d.get(term).copied().unwrap_or(0.0);
        if tf == 0.0 {
            continue;
        }
        let idf = stats.bm25_idf(term);
        score += idf * (tf * (params.k1 + 1.0))
            / (tf + params.k1 * (1.0 - params.b + params.b * len_ratio));
    }
    score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Tfidf,
    Bm25,
}

/// Score a (query, candidate) pair with the chosen lexical method.
pub fn baseline_pair_score(
    method: BaselineMethod,
    query: &[String],
    doc: &[String],
    stats: &CorpusStats,
    params: &Bm25Params,
) -> f64 {
    match method {
        BaselineMethod::Tfidf => tfidf_score(query, doc, stats),
        BaselineMethod::Bm25 => bm25_score(query, doc, stats, params),
    }
}

/// Predict 0 when B scores at least as high as C against the query (exact
/// ties default to B per the label semantics), else 1.
pub fn baseline_classify(
    triple: &Triple,
    corpus: &Corpus,
    method: BaselineMethod,
    stats: &CorpusStats,
    params: &Bm25Params,
) -> Result<u8> {
    let a = &corpus.case(&triple.query_id)?.tokens;
    let b = &corpus.case(&triple.cand_b_id)?.tokens;
    let c = &corpus.case(&triple.cand_c_id)?.tokens;
    let sab = baseline_pair_score(method, a, b, stats, params);
    let sac = baseline_pair_score(method, a, c, stats, params);
    Ok(u8::from(sab < sac))
}

/// Run a lexical baseline over a triple split.
pub fn baseline_evaluate(
    corpus: &Corpus,
    triples: &[Triple],
    method: BaselineMethod,
    params: &Bm25Params,
) -> Result<MetricsReport> {
    params.validate()?;
    let stats = CorpusStats::from_corpus(corpus);
    let mut predictions = Vec::with_capacity(triples.len());
    let mut labels = Vec::with_capacity(triples.len());
    for t in triples {
        predictions.push(baseline_classify(t, corpus, method, &stats, params)?);
        labels.push(t.label);
    }
    macro_metrics(&predictions, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let r = macro_metrics(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.ma_p, 1.0);
        assert_eq!(r.ma_r, 1.0);
        assert_eq!(r.ma_f, 1.0);
    }

    #[test]
    fn balanced_half_right() {
        // hand confusion matrix: tp=1 fp=1 fn=1 tn=1
        let r = macro_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.ma_p, 0.5);
        assert_eq!(r.ma_r, 0.5);
        assert_eq!(r.ma_f, 0.5);
    }

    #[test]
    fn all_zero_predictions_hand_matrix() {
        // class0: P=0.5 R=1 F1=2/3; class1: P=R=F1=0
        let r = macro_metrics(&[0, 0], &[0, 1]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!((r.ma_p - 0.25).abs() < 1e-12);
        assert!((r.ma_r - 0.5).abs() < 1e-12);
        assert!((r.ma_f - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_contract_error() {
        assert!(matches!(
            macro_metrics(&[], &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn macro_metrics_symmetric_under_relabeling() {
        let preds = [0u8, 1, 1, 0, 1, 0, 0];
        let labels = [1u8, 1, 0, 0, 1, 1, 0];
        let flip = |v: &[u8]| -> Vec<u8> { v.iter().map(|&x| 1 - x).collect() };
        let a = macro_metrics(&preds, &labels).unwrap();
        let b = macro_metrics(&flip(&preds), &flip(&labels)).unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        assert!((a.ma_p - b.ma_p).abs() < 1e-12);
        assert!((a.ma_r - b.ma_r).abs() < 1e-12);
        assert!((a.ma_f - b.ma_f).abs() < 1e-12);
    }

    fn three_doc_stats() -> (Vec<Vec<String>>, CorpusStats) {
        let docs = vec![
            toks(&["loan", "rate", "rate"]),
            toks(&["loan", "court"]),
            toks(&["court", "note"]),
        ];
        let slices: Vec<&[String]> = docs.iter().map(|d| d.as_slice()).collect();
        let stats = CorpusStats::from_cases(slices.iter().copied());
        (docs, stats)
    }

    #[test]
    fn tfidf_self_similarity_and_disjoint() {
        let (docs, stats) = three_doc_stats();
        assert!((tfidf_score(&docs[0], &docs[0], &stats) - 1.0).abs() < 1e-12);
        assert_eq!(tfidf_score(&docs[0], &docs[2], &stats), 0.0);
    }

    #[test]
    fn tfidf_matches_hand_evaluation() {
        let (docs, stats) = three_doc_stats();
        // idf(t) = ln((N+1)/(df+1)) + 1 with N = 3
        let idf_loan = (4.0f64 / 3.0).ln() + 1.0;
        let idf_rate = (4.0f64 / 2.0).ln() + 1.0;
        let idf_court = (4.0f64 / 3.0).ln() + 1.0;
        assert!((stats.tfidf_idf("loan") - idf_loan).abs() < 1e-12);
        assert!((stats.tfidf_idf("rate") - idf_rate).abs() < 1e-12);

        // doc0 = [loan, rate, rate], doc1 = [loan, court]
        let w0_loan = 1.0 * idf_loan;
        let w0_rate = 2.0 * idf_rate;
        let w1_loan = 1.0 * idf_loan;
        let w1_court = 1.0 * idf_court;
        let dot = w0_loan * w1_loan;
        let n0 = (w0_loan * w0_loan + w0_rate * w0_rate).sqrt();
        let n1 = (w1_loan * w1_loan + w1_court * w1_court).sqrt();
        let expect = dot / (n0 * n1);
        assert!((tfidf_score(&docs[0], &docs[1], &stats) - expect).abs() < 1e-9);
    }

    #[test]
    fn bm25_absent_term_contributes_zero() {
        let (docs, stats) = three_doc_stats();
        let score = bm25_score(
            &toks(&["absent"]),
            &docs[0],
            &stats,
            &Bm25Params::default(),
        );
        assert_eq!(score, 0.0);
    }

    #[test]
    fn bm25_single_doc_hand_evaluation() {
        let doc = toks(&["loan"]);
        let stats = CorpusStats::from_cases(std::iter::once(doc.as_slice()));
        let p = Bm25Params::default();
        // N=1, df=1: idf = ln(0.5/1.5 + 1) = ln(4/3); tf=1, len=avglen
        let idf = (4.0f64 / 3.0).ln();
        let expect = idf * (p.k1 + 1.0) / (1.0 + p.k1);
        let got = bm25_score(&toks(&["loan"]), &doc, &stats, &p);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((got - idf).abs() < 1e-9);
    }

    #[test]
    fn bm25_b_zero_removes_length_normalization() {
        let (_, stats) = three_doc_stats();
        let p = Bm25Params { k1: 1.2, b: 0.0 };
        let short = toks(&["rate", "x"]);
        let long = toks(&["rate", "x", "y", "z", "w", "v"]);
        let qs = toks(&["rate"]);
        let s1 = bm25_score(&qs, &short, &stats, &p);
        let s2 = bm25_score(&qs, &long, &stats, &p);
        assert!((s1 - s2).abs() < 1e-12);
    }

    fn tiny_corpus() -> Corpus {
        use crate::corpus::{parse_cases, CorpusConfig, TokenizeMode};
        let cfg = CorpusConfig {
            tokenize_mode: TokenizeMode::Whitespace,
            ..CorpusConfig::default()
        };
        let cases = parse_cases(
            "{\"id\":\"A\",\"text\":\"loan rate ten\"}\n{\"id\":\"B\",\"text\":\"loan rate ten\"}\n{\"id\":\"C\",\"text\":\"weather sunny today\"}",
            &cfg,
        )
        .unwrap();
        Corpus {
            cases,
            ..Corpus::default()
        }
    }

    #[test]
    fn baseline_prefers_identical_candidate() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::from_corpus(&corpus);
        let t = Triple {
            query_id: "A".into(),
            cand_b_id: "B".into(),
            cand_c_id: "C".into(),
            label: 0,
        };
        for method in [BaselineMethod::Tfidf, BaselineMethod::Bm25] {
            let label =
                baseline_classify(&t, &corpus, method, &stats, &Bm25Params::default()).unwrap();
            assert_eq!(label, 0);
        }
    }

    #[test]
    fn baseline_tie_defaults_to_zero_and_swap_flips() {
        let corpus = tiny_corpus();
        let stats = CorpusStats::from_corpus(&corpus);
        // tie: compare B against itself on both sides
        let tie = Triple {
            query_id: "A".into(),
            cand_b_id: "B".into(),
            cand_c_id: "B".into(),
            label: 0,
        };
        let label = baseline_classify(
            &tie,
            &corpus,
            BaselineMethod::Tfidf,
            &stats,
            &Bm25Params::default(),
        )
        .unwrap();
        assert_eq!(label, 0);

        let t = Triple {
            query_id: "A".into(),
            cand_b_id: "B".into(),
            cand_c_id: "C".into(),
            label: 0,
        };
        let swapped = Triple {
            query_id: "A".into(),
            cand_b_id: "C".into(),
            cand_c_id: "B".into(),
            label: 1,
        };
        let l1 = baseline_classify(
            &t,
            &corpus,
            BaselineMethod::Bm25,
            &stats,
            &Bm25Params::default(),
        )
        .unwrap();
        let l2 = baseline_classify(
            &swapped,
            &corpus,
            BaselineMethod::Bm25,
            &stats,
            &Bm25Params::default(),
        )
        .unwrap();
        assert_ne!(l1, l2);
    }
}
