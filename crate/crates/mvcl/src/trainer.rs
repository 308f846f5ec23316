//! Joint training of the matching loss with the case-view and element-view
//! contrastive objectives: linear warmup/decay scheduling, deterministic
//! batch streams, validation-accuracy model selection, and bit-exact
//! checkpointing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Binding, ParameterStore, Tape, TensorId};
use crate::contrastive::{self, ElementViewInstance};
use crate::corpus::{augment_swap, CaseDocument, Corpus, CorpusConfig, Triple};
use crate::encoder::{self, EmbeddingFixture, EncoderConfig, EncoderKind, Vocabulary};
use crate::error::{Error, Result};
use crate::evalkit::{macro_metrics, MetricsReport};
use crate::matcher::{self, AttentionRecord, MatchConfig};
use crate::rng::Rng;

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_ELEMENT: u64 = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_case: f64,
    pub lambda_ele: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Front-truncation limit applied to every document.
    pub max_len: usize,
    /// Deletion budget L1 for element-view positives.
    pub l1_budget: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub use_case_view: bool,
    pub use_element_view: bool,
    pub augment: bool,
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_case: 0.01,
            lambda_ele: 0.01,
            learning_rate: 1e-3,
            batch_size: 16,
            total_steps: 500,
            warmup_fraction: 0.10,
            seed: 1,
            max_len: 512,
            l1_budget: 64,
            tau1: 0.1,
            tau2: 0.1,
            use_case_view: true,
            use_element_view: true,
            augment: true,
            eval_every: 50,
            adam: AdamConfig::default(),
        }
    }
}

/// Full run configuration; this is the config.json schema.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub encoder: EncoderConfig,
    pub matcher: MatchConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.matcher.validate()?;
        let t = &self.train;
        if self.matcher.d != self.encoder.dim {
            return Err(Error::Config(format!(
                "matcher d {} must equal encoder dim {}",
                self.matcher.d, self.encoder.dim
            )));
        }
        if !(0.0..1.0).contains(&t.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} must lie in [0, 1)",
                t.warmup_fraction
            )));
        }
        if t.lambda_case < 0.0 || t.lambda_ele < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if t.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if t.batch_size == 0 || t.total_steps == 0 || t.eval_every == 0 || t.max_len == 0 {
            return Err(Error::Config("batch/steps/eval_every/max_len must be >= 1".into()));
        }
        if t.use_element_view && t.batch_size < 2 {
            return Err(Error::Config(
                "element view needs batch_size >= 2 for in-batch negatives".into(),
            ));
        }
        if t.tau1 <= 0.0 || t.tau2 <= 0.0 {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over the first `warmup_fraction` of steps,
/// then linear decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_fraction: f64, base_lr: f64) -> f64 {
    debug_assert!(step <= total_steps);
    let warmup = (total_steps as f64 * warmup_fraction).floor() as usize;
    if warmup > 0 && step <= warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub main: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ele: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
struct PreparedCase {
    doc: CaseDocument,
    flags: Option<Vec<bool>>,
}

/// Encoder + matcher + pooling forward passes shared by training and
/// evaluation.
struct ModelContext<'a> {
    config: &'a RunConfig,
    vocab: &'a Vocabulary,
    fixture: Option<&'a EmbeddingFixture>,
}

struct TripleForward {
    y_hat: TensorId,
}

impl<'a> ModelContext<'a> {
    fn encode_tokens(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        tokens: &[String],
        case_id: &str,
        cls: bool,
    ) -> Result<TensorId> {
        encoder::encode(
            tape,
            bind,
            "enc",
            &self.config.encoder,
            self.vocab,
            self.fixture,
            tokens,
            Some(case_id),
            cls,
        )
    }

    fn encode_doc(&self, tape: &mut Tape, bind: &Binding, doc: &CaseDocument) -> Result<TensorId> {
        self.encode_tokens(tape, bind, &doc.tokens, &doc.id, false)
    }

    fn triple_forward(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        a: TensorId,
        b: TensorId,
        c: TensorId,
    ) -> Result<TripleForward> {
        let m = &self.config.matcher;
        let (h_ab, _) = matcher::match_pair(tape, bind, m, a, b)?;
        let (h_ac, _) = matcher::match_pair(tape, bind, m, a, c)?;
        let y_hat = matcher::classify(tape, bind, m, h_ab, h_ac)?;
        Ok(TripleForward { y_hat })
    }
}

struct LossParts {
    total: TensorId,
    main: f64,
    case: Option<f64>,
    ele: Option<f64>,
}

/// Scalar values of the objective's components on one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: f64,
    pub main: f64,
    pub case: Option<f64>,
    pub ele: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    rng_batch: u64,
    rng_element: u64,
    epoch_order: Vec<usize>,
    cursor: usize,
    best_val_accuracy: f64,
}

pub struct Trainer {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    fixture: Option<EmbeddingFixture>,
    cases: BTreeMap<String, PreparedCase>,
    train_triples: Vec<Triple>,
    validation_triples: Vec<Triple>,
    element_pool: Vec<String>,
    step: usize,
    rng_batch: Rng,
    rng_element: Rng,
    epoch_order: Vec<usize>,
    cursor: usize,
    best_val_accuracy: f64,
    best_params: Option<ParameterStore>,
    pub loss_log: Vec<LogEntry>,
}

fn register_model(
    store: &mut ParameterStore,
    config: &RunConfig,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<()> {
    encoder::register_encoder(store, "enc", &config.encoder, vocab, rng)?;
    contrastive::register_attention_pool(store, "pool", config.encoder.dim, rng)?;
    matcher::register_matcher(store, &config.matcher, rng)
}

fn prepare_cases(corpus: &Corpus, max_len: usize) -> BTreeMap<String, PreparedCase> {
    corpus
        .cases
        .iter()
        .map(|(id, doc)| {
            let (truncated, first_kept) = doc.truncate_front(max_len);
            let flags = corpus
                .annotations
                .get(id)
                .map(|ann| ann.flags[first_kept..].to_vec());
            (
                id.clone(),
                PreparedCase {
                    doc: truncated,
                    flags,
                },
            )
        })
        .collect()
}

impl Trainer {
    pub fn new(corpus: &Corpus, fixture: Option<EmbeddingFixture>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        corpus.validate()?;
        if corpus.train.is_empty() {
            return Err(Error::Config("no training triples".into()));
        }
        if config.encoder.kind == EncoderKind::Fixture && fixture.is_none() {
            return Err(Error::Config("fixture encoder requires a loaded fixture".into()));
        }

        let vocab = Vocabulary::build(
            corpus
                .cases
                .values()
                .flat_map(|c| c.tokens.iter().map(String::as_str)),
            config.encoder.hash_buckets,
        );

        let mut store = ParameterStore::new();
        let mut rng_init = Rng::derive(config.train.seed, STREAM_INIT);
        register_model(&mut store, &config, &vocab, &mut rng_init)?;

        let cases = prepare_cases(corpus, config.train.max_len);
        let train_triples = if config.train.augment {
            augment_swap(&corpus.train)
        } else {
            corpus.train.clone()
        };
        let validation_triples = if corpus.validation.is_empty() {
            corpus.train.clone()
        } else {
            corpus.validation.clone()
        };

        let mut element_pool: Vec<String> = corpus
            .train
            .iter()
            .flat_map(|t| {
                [
                    t.query_id.clone(),
                    t.cand_b_id.clone(),
                    t.cand_c_id.clone(),
                ]
            })
            .collect();
        element_pool.sort_unstable();
        element_pool.dedup();
        if config.train.use_element_view {
            element_pool.retain(|id| cases[id].flags.is_some());
            if element_pool.len() < 2 {
                return Err(Error::Config(
                    "element view needs >= 2 annotated train cases; run annotate first".into(),
                ));
            }
        }

        let mut rng_batch = Rng::derive(config.train.seed, STREAM_BATCH);
        let mut epoch_order: Vec<usize> = (0..train_triples.len()).collect();
        rng_batch.shuffle(&mut epoch_order);

        Ok(Trainer {
            rng_element: Rng::derive(config.train.seed, STREAM_ELEMENT),
            config,
            vocab,
            store,
            fixture,
            cases,
            train_triples,
            validation_triples,
            element_pool,
            step: 0,
            rng_batch,
            epoch_order,
            cursor: 0,
            best_val_accuracy: f64::NEG_INFINITY,
            best_params: None,
            loss_log: Vec::new(),
        })
    }

    fn context(&self) -> ModelContext<'_> {
        ModelContext {
            config: &self.config,
            vocab: &self.vocab,
            fixture: self.fixture.as_ref(),
        }
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn best_validation_accuracy(&self) -> f64 {
        self.best_val_accuracy
    }

    fn next_batch(&mut self) -> Vec<Triple> {
        let size = self.config.train.batch_size.min(self.train_triples.len());
        let mut batch = Vec::with_capacity(size);
        for _ in 0..size {
            if self.cursor == self.epoch_order.len() {
                self.rng_batch.shuffle(&mut self.epoch_order);
                self.cursor = 0;
            }
            batch.push(self.train_triples[self.epoch_order[self.cursor]].clone());
            self.cursor += 1;
        }
        batch
    }

    fn sample_element_instances(&mut self) -> Result<Vec<ElementViewInstance>> {
        let want = self.config.train.batch_size.min(self.element_pool.len());
        let picks = self
            .rng_element
            .sample_without_replacement(self.element_pool.len(), want);
        let mut instances = Vec::with_capacity(want);
        for pick in picks {
            let id = &self.element_pool[pick];
            let prepared = &self.cases[id];
            let flags = prepared
                .flags
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("case {id} lost its annotation")))?;
            instances.push(contrastive::build_element_positive(
                &prepared.doc,
                flags,
                self.config.train.l1_budget,
                &mut self.rng_element,
            )?);
        }
        Ok(instances)
    }

    fn compute_losses(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        batch: &[Triple],
        element_batch: &[ElementViewInstance],
    ) -> Result<LossParts> {
        let ctx = self.context();
        let t = &self.config.train;

        let mut ce_losses = Vec::with_capacity(batch.len());
        let mut pooled = Vec::with_capacity(batch.len());
        for triple in batch {
            let a = ctx.encode_doc(tape, bind, &self.cases[&triple.query_id].doc)?;
            let b = ctx.encode_doc(tape, bind, &self.cases[&triple.cand_b_id].doc)?;
            let c = ctx.encode_doc(tape, bind, &self.cases[&triple.cand_c_id].doc)?;
            let fwd = ctx.triple_forward(tape, bind, a, b, c)?;
            ce_losses.push(matcher::main_loss(tape, fwd.y_hat, triple.label)?);
            if t.use_case_view {
                let pa = contrastive::attention_pool(tape, bind, "pool", a)?;
                let pb = contrastive::attention_pool(tape, bind, "pool", b)?;
                let pc = contrastive::attention_pool(tape, bind, "pool", c)?;
                pooled.push((pa, pb, pc));
            }
        }
        let stacked = tape.concat(0, &ce_losses)?;
        let main = tape.mean_all(stacked);
        let main_value = tape.scalar_value(main);

        let mut total = main;
        let mut case_value = None;
        if t.use_case_view {
            let labels: Vec<u8> = batch.iter().map(|t| t.label).collect();
            let anchors = contrastive::build_case_view_batch(&pooled, &labels)?;
            let loss = contrastive::case_view_loss(tape, &anchors, t.tau1)?;
            case_value = Some(tape.scalar_value(loss));
            let weighted = tape.scale(loss, t.lambda_case);
            total = tape.add(total, weighted)?;
        }

        let mut ele_value = None;
        if t.use_element_view {
            let mut originals = Vec::with_capacity(element_batch.len());
            let mut positives = Vec::with_capacity(element_batch.len());
            for inst in element_batch {
                let h_orig =
                    ctx.encode_tokens(tape, bind, &inst.original_tokens, &inst.case_id, false)?;
                let h_pos =
                    ctx.encode_tokens(tape, bind, &inst.positive_tokens, &inst.case_id, false)?;
                originals.push(contrastive::attention_pool(tape, bind, "pool", h_orig)?);
                positives.push(contrastive::attention_pool(tape, bind, "pool", h_pos)?);
            }
            let loss = contrastive::element_view_loss(tape, &originals, &positives, t.tau2)?;
            ele_value = Some(tape.scalar_value(loss));
            let weighted = tape.scale(loss, t.lambda_ele);
            total = tape.add(total, weighted)?;
        }

        Ok(LossParts {
            total,
            main: main_value,
            case: case_value,
            ele: ele_value,
        })
    }

    /// Draw the inputs the next step would use (advancing the batch and
    /// element streams). Exposed for the gradient-check harness, which
    /// needs a fixed batch to perturb parameters around.
    pub fn peek_step_inputs(&mut self) -> Result<(Vec<Triple>, Vec<ElementViewInstance>)> {
        let batch = self.next_batch();
        let instances = if self.config.train.use_element_view {
            self.sample_element_instances()?
        } else {
            Vec::new()
        };
        Ok((batch, instances))
    }

    /// Total-loss node for a fixed batch, for finite-difference checks.
    pub fn loss_for_gradcheck(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        batch: &[Triple],
        instances: &[ElementViewInstance],
    ) -> Result<TensorId> {
        Ok(self.compute_losses(tape, bind, batch, instances)?.total)
    }

    /// Scalar component values of the joint objective on a fixed batch.
    pub fn loss_breakdown(
        &self,
        batch: &[Triple],
        instances: &[ElementViewInstance],
    ) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let parts = self.compute_losses(&mut tape, &bind, batch, instances)?;
        Ok(LossBreakdown {
            total: tape.scalar_value(parts.total),
            main: parts.main,
            case: parts.case,
            ele: parts.ele,
        })
    }

    /// One optimizer step; returns the log entry it appended.
    pub fn train_step(&mut self) -> Result<LogEntry> {
        if self.step >= self.config.train.total_steps {
            return Err(Error::Contract("training budget exhausted".into()));
        }
        self.step += 1;
        let batch = self.next_batch();
        let element_batch = if self.config.train.use_element_view {
            self.sample_element_instances()?
        } else {
            Vec::new()
        };

        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let parts = self.compute_losses(&mut tape, &bind, &batch, &element_batch)?;
        let grads = tape.backward(parts.total)?;
        let by_name = bind.gradients(&self.store, &grads);

        let t = &self.config.train;
        let lr = lr_at(self.step, t.total_steps, t.warmup_fraction, t.learning_rate);
        let adam = t.adam;
        self.store.adam_step(&by_name, lr, &adam)?;

        let entry = LogEntry {
            step: self.step,
            lr,
            total: tape.scalar_value(parts.total),
            main: parts.main,
            case: parts.case,
            ele: parts.ele,
            val_accuracy: None,
        };
        self.loss_log.push(entry.clone());
        Ok(entry)
    }

    fn predict_with_store(&self, store: &ParameterStore, triple: &Triple) -> Result<f64> {
        let ctx = self.context();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let a = ctx.encode_doc(&mut tape, &bind, &self.cases[&triple.query_id].doc)?;
        let b = ctx.encode_doc(&mut tape, &bind, &self.cases[&triple.cand_b_id].doc)?;
        let c = ctx.encode_doc(&mut tape, &bind, &self.cases[&triple.cand_c_id].doc)?;
        let fwd = ctx.triple_forward(&mut tape, &bind, a, b, c)?;
        Ok(tape.scalar_value(fwd.y_hat))
    }

    /// Accuracy-style evaluation of the current parameters on a triple set.
    pub fn evaluate(&self, triples: &[Triple]) -> Result<MetricsReport> {
        if triples.is_empty() {
            return Err(Error::Contract("evaluate on empty triple set".into()));
        }
        let mut predictions = Vec::with_capacity(triples.len());
        let mut labels = Vec::with_capacity(triples.len());
        for t in triples {
            let p = self.predict_with_store(&self.store, t)?;
            predictions.push(u8::from(p > 0.5));
            labels.push(t.label);
        }
        macro_metrics(&predictions, &labels)
    }

    /// Run the configured step budget, tracking the best checkpoint by
    /// validation accuracy.
    pub fn train(&mut self) -> Result<()> {
        self.train_until(self.config.train.total_steps)
    }

    /// Advance to `target_step` (clamped to the budget) with the same
    /// evaluation cadence `train` uses, so interrupted and uninterrupted
    /// runs take identical trajectories.
    pub fn train_until(&mut self, target_step: usize) -> Result<()> {
        let total = self.config.train.total_steps;
        let target = target_step.min(total);
        while self.step < target {
            self.train_step()?;
            let t = &self.config.train;
            if self.step % t.eval_every == 0 || self.step == total {
                let report = self.evaluate(&self.validation_triples)?;
                if report.accuracy > self.best_val_accuracy {
                    self.best_val_accuracy = report.accuracy;
                    self.best_params = Some(self.store.clone());
                }
                if let Some(last) = self.loss_log.last_mut() {
                    last.val_accuracy = Some(report.accuracy);
                }
            }
        }
        Ok(())
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        let originals: Vec<Triple> = self.train_triples.clone();
        Ok(self.evaluate(&originals)?.accuracy)
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
        )?;
        if let Some(best) = &self.best_params {
            write(
                "best_params.json",
                serde_json::to_string(best).expect("params serialize"),
            )?;
        }
        let state = TrainerState {
            step: self.step,
            rng_batch: self.rng_batch.state(),
            rng_element: self.rng_element.state(),
            epoch_order: self.epoch_order.clone(),
            cursor: self.cursor,
            best_val_accuracy: self.best_val_accuracy,
        };
        write(
            "state.json",
            serde_json::to_string(&state).expect("state serializes"),
        )?;
        let mut log = String::new();
        for entry in &self.loss_log {
            log.push_str(&serde_json::to_string(entry).expect("log serializes"));
            log.push('\n');
        }
        write("loss_log.jsonl", log)?;
        Ok(())
    }

    /// Resume training from a checkpoint directory. Shapes of the stored
    /// parameters are validated against a fresh registration of the model
    /// the config describes.
    pub fn load(dir: &Path, corpus: &Corpus, fixture: Option<EmbeddingFixture>) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))
        };
        let config: RunConfig = serde_json::from_str(&read("config.json")?)
            .map_err(|e| Error::Format(format!("config.json: {e}")))?;
        let vocab: Vocabulary = serde_json::from_str(&read("vocab.json")?)
            .map_err(|e| Error::Format(format!("vocab.json: {e}")))?;
        let store: ParameterStore = serde_json::from_str(&read("params.json")?)
            .map_err(|e| Error::Format(format!("params.json: {e}")))?;
        let state: TrainerState = serde_json::from_str(&read("state.json")?)
            .map_err(|e| Error::Format(format!("state.json: {e}")))?;
        let best_params: Option<ParameterStore> = match fs::read_to_string(dir.join("best_params.json"))
        {
            Ok(text) => Some(
                serde_json::from_str(&text)
                    .map_err(|e| Error::Format(format!("best_params.json: {e}")))?,
            ),
            Err(_) => None,
        };
        let loss_log = match fs::read_to_string(dir.join("loss_log.jsonl")) {
            Ok(text) => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l).map_err(|e| Error::Format(format!("loss_log: {e}")))
                })
                .collect::<Result<Vec<LogEntry>>>()?,
            Err(_) => Vec::new(),
        };

        let mut trainer = Trainer::new(corpus, fixture, config)?;
        // the stored vocabulary is authoritative; the corpus may have
        // drifted, but token ids must match the checkpoint's embeddings
        let mut expected = ParameterStore::new();
        let mut rng = Rng::new(0);
        register_model(&mut expected, &trainer.config, &vocab, &mut rng)?;
        validate_shapes(&expected, &store)?;
        trainer.vocab = vocab;
        trainer.store = store;
        trainer.best_params = best_params;
        trainer.step = state.step;
        trainer.rng_batch = Rng::restore(state.rng_batch);
        trainer.rng_element = Rng::restore(state.rng_element);
        if state.epoch_order.len() != trainer.epoch_order.len() {
            return Err(Error::Format(format!(
                "checkpoint epoch order covers {} triples, corpus has {}",
                state.epoch_order.len(),
                trainer.epoch_order.len()
            )));
        }
        trainer.epoch_order = state.epoch_order;
        trainer.cursor = state.cursor;
        trainer.best_val_accuracy = state.best_val_accuracy;
        trainer.loss_log = loss_log;
        Ok(trainer)
    }
}

fn validate_shapes(registered: &ParameterStore, loaded: &ParameterStore) -> Result<()> {
    let reg: Vec<(&String, &[usize])> = registered
        .iter()
        .map(|(n, p)| (n, p.shape.as_slice()))
        .collect();
    let got: Vec<(&String, &[usize])> =
        loaded.iter().map(|(n, p)| (n, p.shape.as_slice())).collect();
    if reg != got {
        return Err(Error::Format(
            "checkpoint parameters do not match the registered model".into(),
        ));
    }
    Ok(())
}

/// Read-only view of a trained checkpoint for evaluation, ranking, and
/// attention inspection. Prefers the best-validation parameters when the
/// checkpoint has them.
pub struct TrainedModel {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub fixture: Option<EmbeddingFixture>,
}

impl TrainedModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))
        };
        let config: RunConfig = serde_json::from_str(&read("config.json")?)
            .map_err(|e| Error::Format(format!("config.json: {e}")))?;
        let vocab: Vocabulary = serde_json::from_str(&read("vocab.json")?)
            .map_err(|e| Error::Format(format!("vocab.json: {e}")))?;
        let params_text = match fs::read_to_string(dir.join("best_params.json")) {
            Ok(text) => text,
            Err(_) => read("params.json")?,
        };
        let store: ParameterStore = serde_json::from_str(&params_text)
            .map_err(|e| Error::Format(format!("params: {e}")))?;
        let fixture = match (&config.encoder.kind, &config.encoder.fixture_path) {
            (EncoderKind::Fixture, Some(path)) => Some(encoder::load_fixture(Path::new(path))?),
            _ => None,
        };
        Ok(TrainedModel {
            config,
            vocab,
            store,
            fixture,
        })
    }

    pub fn from_trainer(trainer: &Trainer) -> Self {
        TrainedModel {
            config: trainer.config.clone(),
            vocab: trainer.vocab.clone(),
            store: trainer
                .best_params
                .clone()
                .unwrap_or_else(|| trainer.store.clone()),
            fixture: trainer.fixture.clone(),
        }
    }

    fn context(&self) -> ModelContext<'_> {
        ModelContext {
            config: &self.config,
            vocab: &self.vocab,
            fixture: self.fixture.as_ref(),
        }
    }

    fn truncated(&self, corpus: &Corpus, id: &str) -> Result<CaseDocument> {
        let (doc, _) = corpus.case(id)?.truncate_front(self.config.train.max_len);
        Ok(doc)
    }

    /// P(candidate C more relevant than B) for one triple.
    pub fn predict_triple(&self, corpus: &Corpus, triple: &Triple) -> Result<f64> {
        let ctx = self.context();
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let a_doc = self.truncated(corpus, &triple.query_id)?;
        let b_doc = self.truncated(corpus, &triple.cand_b_id)?;
        let c_doc = self.truncated(corpus, &triple.cand_c_id)?;
        let a = ctx.encode_doc(&mut tape, &bind, &a_doc)?;
        let b = ctx.encode_doc(&mut tape, &bind, &b_doc)?;
        let c = ctx.encode_doc(&mut tape, &bind, &c_doc)?;
        let fwd = ctx.triple_forward(&mut tape, &bind, a, b, c)?;
        Ok(tape.scalar_value(fwd.y_hat))
    }

    pub fn evaluate(&self, corpus: &Corpus, triples: &[Triple]) -> Result<MetricsReport> {
        if triples.is_empty() {
            return Err(Error::Contract("evaluate on empty triple set".into()));
        }
        let mut predictions = Vec::with_capacity(triples.len());
        let mut labels = Vec::with_capacity(triples.len());
        for t in triples {
            predictions.push(u8::from(self.predict_triple(corpus, t)? > 0.5));
            labels.push(t.label);
        }
        macro_metrics(&predictions, &labels)
    }

    /// Attention records for one (query, candidate) pair.
    pub fn pair_attention(
        &self,
        corpus: &Corpus,
        query_id: &str,
        cand_id: &str,
    ) -> Result<(AttentionRecord, CaseDocument, CaseDocument)> {
        if !self.config.matcher.use_ba {
            return Err(Error::Contract(
                "attention inspection requires the bidirectional attention layer".into(),
            ));
        }
        let ctx = self.context();
        let mut tape = Tape::new();
        let bind = self.store.bind(&mut tape);
        let q_doc = self.truncated(corpus, query_id)?;
        let c_doc = self.truncated(corpus, cand_id)?;
        let q = ctx.encode_doc(&mut tape, &bind, &q_doc)?;
        let c = ctx.encode_doc(&mut tape, &bind, &c_doc)?;
        let (_, record) = matcher::match_pair(&mut tape, &bind, &self.config.matcher, q, c)?;
        let record = record.expect("use_ba checked above");
        Ok((record, q_doc, c_doc))
    }
}
