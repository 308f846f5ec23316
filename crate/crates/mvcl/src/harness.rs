//! Synthetic corpora and end-to-end verification harnesses: the planted
//! interest-rate discrimination task for directional experiments, and the
//! full-composition gradient check driven through the training forward
//! pass.

use std::collections::HashSet;

use crate::autodiff::{gradcheck, GradCheckReport};
use crate::corpus::{CaseDocument, Corpus, ElementAnnotation, SentenceExample, Triple};
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::matcher::MatchConfig;
use crate::rng::Rng;
use crate::rnn::RnnKind;
use crate::trainer::{RunConfig, TrainConfig, Trainer};

/// Spec of a synthetic corpus whose relevance is planted in a single
/// element token (an interest-rate marker): two cases are relevant iff
/// they carry the same rate token. Every case has one element sentence
/// "rate r<k> ." plus filler sentences; gold annotations flag exactly the
/// element sentence.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub rates: usize,
    pub cases_per_rate: usize,
    pub filler_vocab: usize,
    pub filler_sentences: usize,
    pub filler_len: usize,
    pub train_triples: usize,
    pub test_triples: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            rates: 4,
            cases_per_rate: 10,
            filler_vocab: 20,
            filler_sentences: 2,
            filler_len: 4,
            train_triples: 400,
            test_triples: 100,
            seed: 7,
        }
    }
}

pub fn synthetic_rate_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.rates < 2 || spec.cases_per_rate < 2 {
        return Err(Error::Config("need >= 2 rates and >= 2 cases per rate".into()));
    }
    let mut rng = Rng::derive(spec.seed, 0x51_u64);
    let mut corpus = Corpus::default();
    let mut ids_by_rate: Vec<Vec<String>> = vec![Vec::new(); spec.rates];

    for rate in 0..spec.rates {
        for k in 0..spec.cases_per_rate {
            let id = format!("case_r{rate}_{k}");
            let mut tokens: Vec<String> = Vec::new();
            let mut spans = Vec::new();
            let mut flags = Vec::new();
            let element_at = rng.below(spec.filler_sentences + 1);
            let mut sentence = 0;
            let mut pushed = 0usize;
            while pushed < spec.filler_sentences + 1 {
                let start = tokens.len();
                if sentence == element_at {
                    tokens.push("rate".to_string());
                    tokens.push(format!("r{rate}"));
                    tokens.push(".".to_string());
                    flags.push(true);
                } else {
                    for _ in 0..spec.filler_len {
                        tokens.push(format!("f{}", rng.below(spec.filler_vocab)));
                    }
                    tokens.push(".".to_string());
                    flags.push(false);
                }
                spans.push((start, tokens.len()));
                sentence += 1;
                pushed += 1;
            }
            let doc = CaseDocument::new(id.clone(), tokens, spans)?;
            corpus
                .annotations
                .insert(id.clone(), ElementAnnotation { case_id: id.clone(), flags });
            corpus.cases.insert(id.clone(), doc);
            ids_by_rate[rate].push(id);
        }
    }

    let mut seen: HashSet<Triple> = HashSet::new();
    let mut make_split = |count: usize, rng: &mut Rng| -> Result<Vec<Triple>> {
        let mut out = Vec::with_capacity(count);
        let mut guard = 0usize;
        while out.len() < count {
            guard += 1;
            if guard > count * 1000 {
                return Err(Error::Config(
                    "synthetic spec too small to produce distinct triples".into(),
                ));
            }
            let rate = rng.below(spec.rates);
            let query = &ids_by_rate[rate][rng.below(spec.cases_per_rate)];
            let same = &ids_by_rate[rate][rng.below(spec.cases_per_rate)];
            if same == query {
                continue;
            }
            let mut other_rate = rng.below(spec.rates);
            if other_rate == rate {
                other_rate = (other_rate + 1) % spec.rates;
            }
            let diff = &ids_by_rate[other_rate][rng.below(spec.cases_per_rate)];
            // alternate label orientation for balance
            let triple = if out.len() % 2 == 0 {
                Triple {
                    query_id: query.clone(),
                    cand_b_id: same.clone(),
                    cand_c_id: diff.clone(),
                    label: 0,
                }
            } else {
                Triple {
                    query_id: query.clone(),
                    cand_b_id: diff.clone(),
                    cand_c_id: same.clone(),
                    label: 1,
                }
            };
            if seen.insert(triple.clone()) {
                out.push(triple);
            }
        }
        Ok(out)
    };
    corpus.train = make_split(spec.train_triples, &mut rng)?;
    corpus.test = make_split(spec.test_triples, &mut rng)?;
    corpus.validate()?;
    Ok(corpus)
}

/// Labeled sentences realizing the same planted rule ("sentence contains a
/// rate marker"), for indicator training against the synthetic corpus.
pub fn synthetic_sentence_examples(spec: &SyntheticSpec, count: usize) -> Vec<SentenceExample> {
    let mut rng = Rng::derive(spec.seed, 0x53_u64);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let positive = i % 2 == 0;
        let tokens: Vec<String> = if positive {
            vec![
                "rate".to_string(),
                format!("r{}", rng.below(spec.rates)),
                ".".to_string(),
            ]
        } else {
            let mut t: Vec<String> = (0..spec.filler_len)
                .map(|_| format!("f{}", rng.below(spec.filler_vocab)))
                .collect();
            t.push(".".to_string());
            t
        };
        out.push(SentenceExample {
            tokens,
            label: u8::from(positive),
        });
    }
    out
}

/// Desk-scale config for the synthetic task.
pub fn synthetic_run_config(seed: u64, total_steps: usize) -> RunConfig {
    RunConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::Lookup,
            dim: 16,
            hash_buckets: 8,
            recurrent_hidden: 0,
            fixture_path: None,
        },
        matcher: MatchConfig {
            d: 16,
            h_rnn: 8,
            mlp_hidden: 16,
            use_ba: true,
            use_sr: true,
            rnn_kind: RnnKind::Lstm,
        },
        train: TrainConfig {
            seed,
            total_steps,
            batch_size: 8,
            learning_rate: 5e-3,
            lambda_case: 0.5,
            lambda_ele: 0.5,
            l1_budget: 10,
            eval_every: 50,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

/// Configuration used by the full-composition gradient check: recurrent
/// desk encoder, full matcher, both contrastive views.
pub fn gradcheck_run_config(d: usize, h_rnn: usize, seed: u64) -> RunConfig {
    RunConfig {
        encoder: EncoderConfig {
            kind: EncoderKind::LookupRecurrent,
            dim: d,
            hash_buckets: 4,
            recurrent_hidden: (d / 2).max(2),
            fixture_path: None,
        },
        matcher: MatchConfig {
            d,
            h_rnn,
            mlp_hidden: 2 * h_rnn,
            use_ba: true,
            use_sr: true,
            rnn_kind: RnnKind::Lstm,
        },
        train: TrainConfig {
            seed,
            total_steps: 10,
            batch_size: 2,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

/// Verify gradients of the complete composition — encoder, bidirectional
/// attention, strengthening, recurrent aggregation, pooling, classifier
/// cross-entropy, case-view and element-view losses, weighted total —
/// against central finite differences.
pub fn gradcheck_full_composition(
    d: usize,
    h_rnn: usize,
    seed: u64,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let spec = SyntheticSpec {
        rates: 2,
        cases_per_rate: 3,
        filler_vocab: 6,
        filler_sentences: 1,
        filler_len: 3,
        train_triples: 4,
        test_triples: 2,
        seed,
    };
    let corpus = synthetic_rate_corpus(&spec)?;
    let config = gradcheck_run_config(d, h_rnn, seed);
    let mut trainer = Trainer::new(&corpus, None, config)?;

    let (batch, instances) = trainer.peek_step_inputs()?;
    let store = trainer.store.clone();
    gradcheck(
        &store,
        |_, tape, bind| {
            let parts = trainer.loss_for_gradcheck(tape, bind, &batch, &instances)?;
            Ok(parts)
        },
        eps,
        tolerance,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_corpus_validates_and_is_balanced() {
        let spec = SyntheticSpec {
            train_triples: 40,
            test_triples: 10,
            ..SyntheticSpec::default()
        };
        let corpus = synthetic_rate_corpus(&spec).unwrap();
        assert_eq!(corpus.cases.len(), 40);
        assert_eq!(corpus.train.len(), 40);
        assert_eq!(corpus.test.len(), 10);
        let zeros = corpus.train.iter().filter(|t| t.label == 0).count();
        assert_eq!(zeros, 20);
        // every case has exactly one element sentence
        for (id, ann) in &corpus.annotations {
            assert_eq!(ann.flags.iter().filter(|&&f| f).count(), 1, "{id}");
        }
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let spec = SyntheticSpec {
            train_triples: 20,
            test_triples: 5,
            ..SyntheticSpec::default()
        };
        let a = synthetic_rate_corpus(&spec).unwrap();
        let b = synthetic_rate_corpus(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.cases.keys().collect::<Vec<_>>(), b.cases.keys().collect::<Vec<_>>());
    }

    #[test]
    fn relevance_is_planted_in_the_rate_token() {
        let spec = SyntheticSpec::default();
        let corpus = synthetic_rate_corpus(&spec).unwrap();
        for t in corpus.train.iter().take(50) {
            let rate_of = |id: &str| {
                corpus.cases[id]
                    .tokens
                    .iter()
                    .find(|tok| tok.starts_with('r') && tok.len() > 1 && tok[1..].chars().all(|c| c.is_ascii_digit()))
                    .cloned()
                    .unwrap()
            };
            let q = rate_of(&t.query_id);
            let b = rate_of(&t.cand_b_id);
            let c = rate_of(&t.cand_c_id);
            if t.label == 0 {
                assert_eq!(q, b);
                assert_ne!(q, c);
            } else {
                assert_eq!(q, c);
                assert_ne!(q, b);
            }
        }
    }
}
