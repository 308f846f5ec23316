//! The legal element indicator: a binary sentence classifier with its own
//! encoder, trained independently and then used to produce per-sentence
//! element annotations for the retrieval corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Binding, ParameterStore, Tape, TensorId};
use crate::contrastive;
use crate::corpus::{Corpus, CorpusConfig, ElementAnnotation, SentenceExample};
use crate::encoder::{self, EncoderConfig, EncoderKind, Vocabulary};
use crate::error::{Error, Result};
use crate::evalkit::ConfusionCounts;
use crate::matcher::main_loss;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    /// Use the [CLS] row (autoencoding convention).
    ClsToken,
    /// Use the last token's row (autoregressive convention).
    LastToken,
    /// Learned attention-pooling over all rows.
    AttentionPool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorConfig {
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub pooling: PoolingKind,
    pub batch_size: usize,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_len: usize,
    /// Fraction of examples held out for F1-based model selection.
    pub holdout_fraction: f64,
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig {
            corpus: CorpusConfig::default(),
            encoder: EncoderConfig {
                kind: EncoderKind::LookupRecurrent,
                dim: 32,
                hash_buckets: 32,
                recurrent_hidden: 16,
                fixture_path: None,
            },
            pooling: PoolingKind::AttentionPool,
            batch_size: 32,
            total_steps: 500,
            learning_rate: 1e-3,
            seed: 1,
            max_len: 512,
            holdout_fraction: 0.2,
            eval_every: 25,
            adam: AdamConfig::default(),
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch/steps/eval_every must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        if self.encoder.kind == EncoderKind::Fixture {
            return Err(Error::Config(
                "the indicator classifies raw sentences; fixture encoding is keyed by case id"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorPrediction {
    pub label: u8,
    pub probability_one: f64,
}

pub struct IndicatorModel {
    pub config: IndicatorConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
}

fn register_indicator(
    store: &mut ParameterStore,
    config: &IndicatorConfig,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<()> {
    encoder::register_encoder(store, "enc", &config.encoder, vocab, rng)?;
    if config.pooling == PoolingKind::AttentionPool {
        contrastive::register_attention_pool(store, "ind.pool", config.encoder.dim, rng)?;
    }
    let d = config.encoder.dim;
    store.register("ind.head.w", &[d, 2], d, rng)?;
    store.register_zeros("ind.head.b", &[2])
}

fn sentence_prob(
    tape: &mut Tape,
    bind: &Binding,
    config: &IndicatorConfig,
    vocab: &Vocabulary,
    tokens: &[String],
) -> Result<TensorId> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument("indicator got an empty sentence".into()));
    }
    // front truncation applies to the indicator input as well
    let start = tokens.len().saturating_sub(config.max_len);
    let tokens = &tokens[start..];
    let cls = config.pooling == PoolingKind::ClsToken;
    let h = encoder::encode(
        tape,
        bind,
        "enc",
        &config.encoder,
        vocab,
        None,
        tokens,
        None,
        cls,
    )?;
    let n = tape.shape(h)[0];
    let d = config.encoder.dim;
    let pooled = match config.pooling {
        PoolingKind::ClsToken => {
            let row = tape.slice(h, 0, 0, 1)?;
            tape.reshape(row, &[d])?
        }
        PoolingKind::LastToken => {
            let row = tape.slice(h, 0, n - 1, n)?;
            tape.reshape(row, &[d])?
        }
        PoolingKind::AttentionPool => contrastive::attention_pool(tape, bind, "ind.pool", h)?,
    };
    let x = tape.reshape(pooled, &[1, d])?;
    let w = bind.get("ind.head.w")?;
    let b = bind.get("ind.head.b")?;
    let logits = tape.matmul(x, w)?;
    let logits = tape.add_bias(logits, b)?;
    let probs = tape.softmax(logits, 1)?;
    let p1 = tape.slice(probs, 1, 1, 2)?;
    tape.reshape(p1, &[1])
}

impl IndicatorModel {
    pub fn predict_sentence(&self, tokens: &[String]) -> Result<IndicatorPrediction> {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let p = sentence_prob(&mut tape, &bind, &self.config, &self.vocab, tokens)?;
        let probability_one = tape.scalar_value(p);
        Ok(IndicatorPrediction {
            // ties at exactly 0.5 resolve to label 0
            label: u8::from(probability_one > 0.5),
            probability_one,
        })
    }

    /// Predict one element flag per sentence for every case.
    pub fn annotate_corpus(&self, corpus: &Corpus) -> Result<BTreeMap<String, ElementAnnotation>> {
        let mut out = BTreeMap::new();
        for (id, case) in &corpus.cases {
            let mut flags = Vec::with_capacity(case.sentence_count());
            for s in 0..case.sentence_count() {
                let pred = self.predict_sentence(case.sentence_tokens(s))?;
                flags.push(pred.label == 1);
            }
            out.insert(
                id.clone(),
                ElementAnnotation {
                    case_id: id.clone(),
                    flags,
                },
            );
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write = |name: &str, text: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write(
            "config.json",
            serde_json::to_string_pretty(&self.config).expect("config serializes"),
        )?;
        write(
            "vocab.json",
            serde_json::to_string(&self.vocab).expect("vocab serializes"),
        )?;
        write(
            "params.json",
            serde_json::to_string(&self.store).expect("params serialize"),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))
        };
        let config: IndicatorConfig = serde_json::from_str(&read("config.json")?)
            .map_err(|e| Error::Format(format!("config.json: {e}")))?;
        config.validate()?;
        let vocab: Vocabulary = serde_json::from_str(&read("vocab.json")?)
            .map_err(|e| Error::Format(format!("vocab.json: {e}")))?;
        let store: ParameterStore = serde_json::from_str(&read("params.json")?)
            .map_err(|e| Error::Format(format!("params.json: {e}")))?;
        let mut expected = ParameterStore::new();
        let mut rng = Rng::new(0);
        register_indicator(&mut expected, &config, &vocab, &mut rng)?;
        let reg: Vec<(&String, &[usize])> = expected
            .iter()
            .map(|(n, p)| (n, p.shape.as_slice()))
            .collect();
        let got: Vec<(&String, &[usize])> =
            store.iter().map(|(n, p)| (n, p.shape.as_slice())).collect();
        if reg != got {
            return Err(Error::Format(
                "indicator checkpoint does not match its config".into(),
            ));
        }
        Ok(IndicatorModel {
            config,
            vocab,
            store,
        })
    }
}

/// Binary F1 of class 1 on a held-out set; used for model selection.
fn holdout_f1(model: &IndicatorModel, examples: &[SentenceExample]) -> Result<f64> {
    let mut predictions = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        predictions.push(model.predict_sentence(&ex.tokens)?.label);
        labels.push(ex.label);
    }
    let c = ConfusionCounts::from_predictions(&predictions, &labels)?;
    let p = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Train the indicator on labeled sentences; both classes must be present.
/// Returns the parameters that scored the best held-out F1.
pub fn train_indicator(
    examples: &[SentenceExample],
    config: IndicatorConfig,
) -> Result<IndicatorModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::DegenerateDataset("no sentence examples".into()));
    }
    let ones = examples.iter().filter(|e| e.label == 1).count();
    if ones == 0 || ones == examples.len() {
        return Err(Error::DegenerateDataset(format!(
            "need both classes, got {ones} positives of {}",
            examples.len()
        )));
    }

    let vocab = Vocabulary::build(
        examples
            .iter()
            .flat_map(|e| e.tokens.iter().map(String::as_str)),
        config.encoder.hash_buckets,
    );
    let mut store = ParameterStore::new();
    let mut rng_init = Rng::derive(config.seed, 11);
    register_indicator(&mut store, &config, &vocab, &mut rng_init)?;

    // deterministic holdout split
    let mut rng_data = Rng::derive(config.seed, 12);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng_data.shuffle(&mut order);
    let holdout_n = ((examples.len() as f64 * config.holdout_fraction) as usize)
        .clamp(1, examples.len() - 1);
    let holdout: Vec<SentenceExample> = order[..holdout_n]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let train: Vec<SentenceExample> = order[holdout_n..]
        .iter()
        .map(|&i| examples[i].clone())
        .collect();
    let train_ones = train.iter().filter(|e| e.label == 1).count();
    if train_ones == 0 || train_ones == train.len() {
        return Err(Error::DegenerateDataset(
            "holdout split left a single-class training set".into(),
        ));
    }

    let mut model = IndicatorModel {
        config,
        vocab,
        store,
    };
    let mut best: Option<(f64, ParameterStore)> = None;

    let mut rng_batch = Rng::derive(model.config.seed, 13);
    let mut epoch: Vec<usize> = (0..train.len()).collect();
    rng_batch.shuffle(&mut epoch);
    let mut cursor = 0usize;

    for step in 1..=model.config.total_steps {
        let size = model.config.batch_size.min(train.len());
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if cursor == epoch.len() {
                rng_batch.shuffle(&mut epoch);
                cursor = 0;
            }
            batch.push(&train[epoch[cursor]]);
            cursor += 1;
        }

        let mut tape = Tape::new();
        let bind = model.store.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch.len());
        for ex in &batch {
            let p = sentence_prob(&mut tape, &bind, &model.config, &model.vocab, &ex.tokens)?;
            losses.push(main_loss(&mut tape, p, ex.label)?);
        }
        let stacked = tape.concat(0, &losses)?;
        let loss = tape.mean_all(stacked);
        let grads = tape.backward(loss)?;
        let by_name = bind.gradients(&model.store, &grads);
        let adam = model.config.adam;
        let lr = model.config.learning_rate;
        model.store.adam_step(&by_name, lr, &adam)?;

        if step % model.config.eval_every == 0 || step == model.config.total_steps {
            let f1 = holdout_f1(&model, &holdout)?;
            let better = match &best {
                None => true,
                Some((b, _)) => f1 > *b,
            };
            if better {
                best = Some((f1, model.store.clone()));
            }
            // early exit once the held-out rule is fully recovered
            if f1 >= 1.0 {
                break;
            }
        }
    }

    if let Some((_, params)) = best {
        model.store = params;
    }
    Ok(model)
}
