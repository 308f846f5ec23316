//! Multi-view contrastive objectives: learned attention-pooling of token
//! representations into one document vector, the case-view loss over
//! labeled triples, and the element-view loss whose positives mask
//! non-element sentences with [DEL] under a token budget.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParameterStore, Tape, TensorId};
use crate::corpus::CaseDocument;
use crate::encoder::DEL_TOKEN;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Register the attention-pool head (W, b, u_w) under `prefix`.
pub fn register_attention_pool(
    store: &mut ParameterStore,
    prefix: &str,
    d: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.register(&format!("{prefix}.w"), &[d, d], d, rng)?;
    store.register_zeros(&format!("{prefix}.b"), &[d])?;
    store.register(&format!("{prefix}.uw"), &[d], d, rng)
}

/// u_i = ReLU(W h_i + b); alpha = softmax_i <u_i, u_w>; output = sum alpha_i u_i.
pub fn attention_pool(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    h: TensorId,
) -> Result<TensorId> {
    attention_pool_with_weights(tape, bind, prefix, h).map(|(pooled, _)| pooled)
}

/// As [`attention_pool`] but also returns the weight distribution alpha.
pub fn attention_pool_with_weights(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    h: TensorId,
) -> Result<(TensorId, TensorId)> {
    let (n, d) = match *tape.shape(h) {
        [n, d] => (n, d),
        _ => {
            return Err(Error::Shape {
                op: "attention_pool",
                lhs: tape.shape(h).to_vec(),
                rhs: vec![],
            })
        }
    };
    let w = bind.get(&format!("{prefix}.w"))?;
    let b = bind.get(&format!("{prefix}.b"))?;
    let uw = bind.get(&format!("{prefix}.uw"))?;
    let w_t = tape.transpose(w)?;
    let pre = tape.matmul(h, w_t)?;
    let pre = tape.add_bias(pre, b)?;
    let u = tape.relu(pre);
    let uw_col = tape.reshape(uw, &[d, 1])?;
    let scores = tape.matmul(u, uw_col)?;
    let scores = tape.reshape(scores, &[n])?;
    let alpha = tape.softmax(scores, 0)?;
    let alpha_row = tape.reshape(alpha, &[1, n])?;
    let pooled = tape.matmul(alpha_row, u)?;
    Ok((tape.reshape(pooled, &[d])?, alpha))
}

/// -log( e^{s+ / tau} / (e^{s+ / tau} + sum e^{s- / tau}) ) from raw
/// similarity scalars, computed as logsumexp minus the positive term.
pub fn info_nce_from_sims(
    tape: &mut Tape,
    sim_pos: TensorId,
    sim_negs: &[TensorId],
    tau: f64,
) -> Result<TensorId> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    if sim_negs.is_empty() {
        return Err(Error::Contract("contrastive loss needs >= 1 negative".into()));
    }
    let mut all = Vec::with_capacity(1 + sim_negs.len());
    all.push(sim_pos);
    all.extend_from_slice(sim_negs);
    let sims = tape.concat(0, &all)?;
    let scaled = tape.scale(sims, 1.0 / tau);
    let lse = tape.log_sum_exp(scaled)?;
    let pos_scaled = tape.slice(scaled, 0, 0, 1)?;
    tape.sub(lse, pos_scaled)
}

/// One case-view anchor: pooled query representation, its positive, and its
/// negatives (in-triple negative first, then every case of the other
/// triples in the batch).
pub struct CaseViewAnchor {
    pub anchor: TensorId,
    pub positive: TensorId,
    pub negatives: Vec<TensorId>,
}

/// Assemble case-view anchors from per-triple pooled (query, b, c)
/// representations. The positive follows the triple label; all three cases
/// of every other triple in the batch are extra negatives.
pub fn build_case_view_batch(
    pooled: &[(TensorId, TensorId, TensorId)],
    labels: &[u8],
) -> Result<Vec<CaseViewAnchor>> {
    if pooled.len() != labels.len() {
        return Err(Error::Contract("pooled/labels length mismatch".into()));
    }
    let mut anchors = Vec::with_capacity(pooled.len());
    for (i, ((a, b, c), &label)) in pooled.iter().zip(labels).enumerate() {
        let (positive, in_triple_neg) = if label == 0 { (*b, *c) } else { (*c, *b) };
        let mut negatives = vec![in_triple_neg];
        for (j, (oa, ob, oc)) in pooled.iter().enumerate() {
            if j != i {
                negatives.extend_from_slice(&[*oa, *ob, *oc]);
            }
        }
        anchors.push(CaseViewAnchor {
            anchor: *a,
            positive,
            negatives,
        });
    }
    Ok(anchors)
}

/// Mean InfoNCE over the batch anchors, similarities by cosine.
pub fn case_view_loss(tape: &mut Tape, anchors: &[CaseViewAnchor], tau: f64) -> Result<TensorId> {
    if anchors.is_empty() {
        return Err(Error::Contract("case_view_loss on empty batch".into()));
    }
    let mut losses = Vec::with_capacity(anchors.len());
    for a in anchors {
        let sim_pos = tape.cosine_similarity(a.anchor, a.positive)?;
        let mut sim_negs = Vec::with_capacity(a.negatives.len());
        for &n in &a.negatives {
            sim_negs.push(tape.cosine_similarity(a.anchor, n)?);
        }
        losses.push(info_nce_from_sims(tape, sim_pos, &sim_negs, tau)?);
    }
    let stacked = tape.concat(0, &losses)?;
    Ok(tape.mean_all(stacked))
}

/// An original sequence T with its [DEL]-masked positive T+.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElementViewInstance {
    pub case_id: String,
    pub original_tokens: Vec<String>,
    pub positive_tokens: Vec<String>,
    /// Sentence indices chosen for deletion, in draw order.
    pub deleted_sentences: Vec<usize>,
    /// Tokens deleted per chosen sentence, aligned with `deleted_sentences`.
    pub deleted_lengths: Vec<usize>,
    pub deleted_total: usize,
    /// True when the case had no non-element sentence to delete (T+ = T).
    pub degenerate: bool,
}

/// Build the element-view positive: draw non-element sentences uniformly
/// without replacement and replace their tokens with [DEL] until the
/// cumulative deleted length reaches `l1` (the last drawn sentence is
/// masked only on its first remaining-budget tokens). When the total
/// non-element length is below the budget, everything deletable is deleted.
pub fn build_element_positive(
    case: &CaseDocument,
    flags: &[bool],
    l1: usize,
    rng: &mut Rng,
) -> Result<ElementViewInstance> {
    if flags.len() != case.sentence_count() {
        return Err(Error::Contract(format!(
            "{} flags for {} sentences of case {}",
            flags.len(),
            case.sentence_count(),
            case.id
        )));
    }
    let candidates: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
    let mut positive = case.tokens.clone();
    let mut deleted_sentences = Vec::new();
    let mut deleted_lengths = Vec::new();
    let mut remaining = l1;

    if candidates.is_empty() || l1 == 0 {
        return Ok(ElementViewInstance {
            case_id: case.id.clone(),
            original_tokens: case.tokens.clone(),
            positive_tokens: positive,
            deleted_sentences,
            deleted_lengths,
            deleted_total: 0,
            degenerate: candidates.is_empty(),
        });
    }

    let order = rng.sample_without_replacement(candidates.len(), candidates.len());
    for pick in order {
        if remaining == 0 {
            break;
        }
        let sentence = candidates[pick];
        let (start, end) = case.sentence_spans[sentence];
        let len = (end - start).min(remaining);
        for slot in positive.iter_mut().take(start + len).skip(start) {
            *slot = DEL_TOKEN.to_string();
        }
        deleted_sentences.push(sentence);
        deleted_lengths.push(len);
        remaining -= len;
    }

    Ok(ElementViewInstance {
        case_id: case.id.clone(),
        original_tokens: case.tokens.clone(),
        positive_tokens: positive,
        deleted_sentences,
        deleted_lengths,
        deleted_total: l1 - remaining,
        degenerate: false,
    })
}

/// Element-view loss over N instances whose originals and positives are
/// already pooled. Anchor i takes its own positive; the other 2N-2 pooled
/// representations are its negatives.
pub fn element_view_loss(
    tape: &mut Tape,
    pooled_originals: &[TensorId],
    pooled_positives: &[TensorId],
    tau: f64,
) -> Result<TensorId> {
    let n = pooled_originals.len();
    if n != pooled_positives.len() {
        return Err(Error::Contract("original/positive count mismatch".into()));
    }
    if n < 2 {
        return Err(Error::Contract(
            "element-view loss needs batch size >= 2 for negatives".into(),
        ));
    }
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let anchor = pooled_originals[i];
        let sim_pos = tape.cosine_similarity(anchor, pooled_positives[i])?;
        let mut sim_negs = Vec::with_capacity(2 * n - 2);
        for j in 0..n {
            if j != i {
                sim_negs.push(tape.cosine_similarity(anchor, pooled_originals[j])?);
                sim_negs.push(tape.cosine_similarity(anchor, pooled_positives[j])?);
            }
        }
        losses.push(info_nce_from_sims(tape, sim_pos, &sim_negs, tau)?);
    }
    let stacked = tape.concat(0, &losses)?;
    Ok(tape.mean_all(stacked))
}
