//! Token-sequence encoders: context-free lookup, lookup plus one
//! bidirectional recurrent layer, and an external embedding fixture that
//! serves pre-computed per-token vectors (the plug point for real PLM
//! outputs).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParameterStore, Tape, Tensor, TensorId};
use crate::corpus::read_to_string;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rnn;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const DEL_TOKEN: &str = "[DEL]";

const RESERVED: usize = 4;

fn fnv1a_64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Token-to-id map with stable reserved ids and deterministic FNV hash
/// buckets for out-of-vocabulary tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: BTreeMap<String, usize>,
    hash_buckets: usize,
}

impl Vocabulary {
    /// Build from an iterator of tokens; known ids follow lexicographic
    /// order so two builds over the same corpus agree.
    pub fn build<'a>(tokens: impl Iterator<Item = &'a str>, hash_buckets: usize) -> Self {
        let mut uniq: Vec<&str> = tokens
            .filter(|t| ![PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, DEL_TOKEN].contains(t))
            .collect();
        uniq.sort_unstable();
        uniq.dedup();
        let tokens = uniq
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.to_string(), RESERVED + i))
            .collect();
        Vocabulary {
            tokens,
            hash_buckets,
        }
    }

    pub fn pad_id(&self) -> usize {
        0
    }
    pub fn unk_id(&self) -> usize {
        1
    }
    pub fn cls_id(&self) -> usize {
        2
    }
    pub fn del_id(&self) -> usize {
        3
    }

    pub fn total_size(&self) -> usize {
        RESERVED + self.tokens.len() + self.hash_buckets
    }

    pub fn lookup(&self, token: &str) -> usize {
        match token {
            PAD_TOKEN => 0,
            UNK_TOKEN => 1,
            CLS_TOKEN => 2,
            DEL_TOKEN => 3,
            _ => match self.tokens.get(token) {
                Some(&id) => id,
                None if self.hash_buckets > 0 => {
                    RESERVED
                        + self.tokens.len()
                        + (fnv1a_64(token) % self.hash_buckets as u64) as usize
                }
                None => 1,
            },
        }
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Lookup,
    LookupRecurrent,
    Fixture,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output dimension d of every per-token representation.
    pub dim: usize,
    pub hash_buckets: usize,
    /// Hidden size of the recurrent layer (lookup_recurrent only).
    pub recurrent_hidden: usize,
    pub fixture_path: Option<String>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::LookupRecurrent,
            dim: 64,
            hash_buckets: 64,
            recurrent_hidden: 32,
            fixture_path: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("encoder dim {} < 2", self.dim)));
        }
        if self.kind == EncoderKind::LookupRecurrent && self.recurrent_hidden == 0 {
            return Err(Error::Config("recurrent_hidden must be >= 1".into()));
        }
        if self.kind == EncoderKind::Fixture && self.fixture_path.is_none() {
            return Err(Error::Config("fixture encoder needs fixture_path".into()));
        }
        Ok(())
    }
}

/// Pre-computed per-token embeddings keyed by case id.
#[derive(Debug, Clone)]
pub struct EmbeddingFixture {
    map: BTreeMap<String, Tensor>,
    dim: usize,
}

#[derive(Deserialize)]
struct RawFixtureRecord {
    id: String,
    vectors: Vec<Vec<f64>>,
}

/// Parse an embeddings.jsonl fixture. Ragged rows or a dimension change
/// across records is a `FormatError`.
pub fn parse_embeddings_fixture(text: &str) -> Result<EmbeddingFixture> {
    let mut map = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, raw) in text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
    {
        let rec: RawFixtureRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.vectors.is_empty() {
            return Err(Error::Format(format!("fixture {} has no vectors", rec.id)));
        }
        let d = rec.vectors[0].len();
        if d == 0 {
            return Err(Error::Format(format!("fixture {} has empty rows", rec.id)));
        }
        if let Some(expect) = dim {
            if d != expect {
                return Err(Error::Format(format!(
                    "fixture {} has dimension {d}, earlier records use {expect}",
                    rec.id
                )));
            }
        }
        dim = Some(d);
        let mut values = Vec::with_capacity(rec.vectors.len() * d);
        for row in &rec.vectors {
            if row.len() != d {
                return Err(Error::Format(format!(
                    "fixture {} has a ragged row ({} vs {d})",
                    rec.id,
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        let t = Tensor::new(vec![rec.vectors.len(), d], values)
            .map_err(|e| Error::Format(format!("fixture {}: {e}", rec.id)))?;
        if map.insert(rec.id.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate fixture id {}", rec.id)));
        }
    }
    let dim = dim.ok_or_else(|| Error::Format("fixture file has no records".into()))?;
    Ok(EmbeddingFixture { map, dim })
}

pub fn load_fixture(path: &Path) -> Result<EmbeddingFixture> {
    parse_embeddings_fixture(&read_to_string(path)?)
}

impl EmbeddingFixture {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, case_id: &str) -> Result<&Tensor> {
        self.map
            .get(case_id)
            .ok_or_else(|| Error::FixtureMiss(format!("no embeddings for case {case_id}")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Register encoder parameters under `prefix`.
pub fn register_encoder(
    store: &mut ParameterStore,
    prefix: &str,
    config: &EncoderConfig,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<()> {
    config.validate()?;
    let d = config.dim;
    match config.kind {
        EncoderKind::Lookup => {
            store.register(&format!("{prefix}.embed"), &[vocab.total_size(), d], d, rng)?;
        }
        EncoderKind::LookupRecurrent => {
            store.register(&format!("{prefix}.embed"), &[vocab.total_size(), d], d, rng)?;
            let h = config.recurrent_hidden;
            rnn::register_gru_cell(store, &format!("{prefix}.rnn"), d, h, rng)?;
            store.register(&format!("{prefix}.proj.w"), &[2 * h, d], 2 * h, rng)?;
            store.register_zeros(&format!("{prefix}.proj.b"), &[d])?;
        }
        EncoderKind::Fixture => {
            // Trainable rows substituted for [CLS] framing and [DEL] masks.
            store.register(&format!("{prefix}.cls"), &[d], d, rng)?;
            store.register(&format!("{prefix}.del"), &[d], d, rng)?;
        }
    }
    Ok(())
}

/// Encode a token sequence to per-token representations of width d.
/// `case_id` is required for the fixture kind. The caller truncates the
/// sequence beforehand; with `cls` an extra [CLS] row is prepended.
#[allow(clippy::too_many_arguments)]
pub fn encode(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    config: &EncoderConfig,
    vocab: &Vocabulary,
    fixture: Option<&EmbeddingFixture>,
    tokens: &[String],
    case_id: Option<&str>,
    cls: bool,
) -> Result<TensorId> {
    if tokens.is_empty() {
        return Err(Error::EmptyDocument("encode on empty token sequence".into()));
    }
    match config.kind {
        EncoderKind::Lookup => {
            let mut ids = Vec::with_capacity(tokens.len() + 1);
            if cls {
                ids.push(vocab.cls_id());
            }
            ids.extend(vocab.ids(tokens));
            let table = bind.get(&format!("{prefix}.embed"))?;
            tape.gather_rows(table, &ids)
        }
        EncoderKind::LookupRecurrent => {
            let mut ids = Vec::with_capacity(tokens.len() + 1);
            if cls {
                ids.push(vocab.cls_id());
            }
            ids.extend(vocab.ids(tokens));
            let table = bind.get(&format!("{prefix}.embed"))?;
            let rows = tape.gather_rows(table, &ids)?;
            let ctx = rnn::run_bigru(tape, bind, &format!("{prefix}.rnn"), rows, config.recurrent_hidden)?;
            let w = bind.get(&format!("{prefix}.proj.w"))?;
            let b = bind.get(&format!("{prefix}.proj.b"))?;
            let proj = tape.matmul(ctx, w)?;
            tape.add_bias(proj, b)
        }
        EncoderKind::Fixture => {
            let fixture = fixture
                .ok_or_else(|| Error::Contract("fixture encoder without loaded fixture".into()))?;
            if fixture.dim() != config.dim {
                return Err(Error::Format(format!(
                    "fixture dimension {} != configured {}",
                    fixture.dim(),
                    config.dim
                )));
            }
            let id = case_id
                .ok_or_else(|| Error::Contract("fixture encoder needs a case id".into()))?;
            let stored = fixture.get(id)?;
            let rows_stored = stored.shape()[0];
            if rows_stored < tokens.len() {
                return Err(Error::Format(format!(
                    "fixture for {id} has {rows_stored} rows, need {}",
                    tokens.len()
                )));
            }
            // Front truncation keeps the token suffix, so serve the last rows.
            let offset = rows_stored - tokens.len();
            let base = tape.leaf(stored.clone());
            let has_del = tokens.iter().any(|t| t == DEL_TOKEN);
            let mut parts: Vec<TensorId> = Vec::new();
            if cls {
                let cls_row = bind.get(&format!("{prefix}.cls"))?;
                parts.push(tape.reshape(cls_row, &[1, config.dim])?);
            }
            if !has_del {
                if offset == 0 && !cls {
                    return Ok(base);
                }
                parts.push(tape.slice(base, 0, offset, rows_stored)?);
                return tape.concat(0, &parts);
            }
            let del_row = bind.get(&format!("{prefix}.del"))?;
            let del_row = tape.reshape(del_row, &[1, config.dim])?;
            let mut i = 0;
            while i < tokens.len() {
                if tokens[i] == DEL_TOKEN {
                    parts.push(del_row);
                    i += 1;
                } else {
                    let start = i;
                    while i < tokens.len() && tokens[i] != DEL_TOKEN {
                        i += 1;
                    }
                    parts.push(tape.slice(base, 0, offset + start, offset + i)?);
                }
            }
            tape.concat(0, &parts)
        }
    }
}
