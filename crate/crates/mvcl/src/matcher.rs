//! The interaction-focused matching network: scaled bidirectional attention
//! between query and candidate token representations, strengthened local
//! matching features, shared recurrent aggregation with dual pooling, and a
//! difference-MLP classifier over the two candidate matches.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParameterStore, Tape, Tensor, TensorId};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rnn::{self, RnnKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Encoder output dimension d.
    pub d: usize,
    pub h_rnn: usize,
    pub mlp_hidden: usize,
    pub use_ba: bool,
    pub use_sr: bool,
    pub rnn_kind: RnnKind,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            d: 64,
            h_rnn: 64,
            mlp_hidden: 128,
            use_ba: true,
            use_sr: true,
            rnn_kind: RnnKind::Lstm,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h_rnn == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("matcher sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of a strengthened token representation.
    pub fn strengthened_width(&self) -> usize {
        if self.use_sr {
            4 * self.d
        } else {
            2 * self.d
        }
    }

    /// Width of the pooled match representation H.
    pub fn match_width(&self) -> usize {
        8 * self.h_rnn
    }
}

/// Attention weights of one (query, candidate) pair, extracted from the
/// tape for inspection. `alpha_query` rows sum to 1 (weights over candidate
/// tokens per query token); `alpha_cand` columns sum to 1.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub scores: Tensor,
    pub alpha_query: Tensor,
    pub alpha_cand: Tensor,
}

pub fn register_matcher(
    store: &mut ParameterStore,
    config: &MatchConfig,
    rng: &mut Rng,
) -> Result<()> {
    config.validate()?;
    let width = config.strengthened_width();
    rnn::register_aggregator(store, "match.rnn", config.rnn_kind, width, config.h_rnn, rng)?;
    let h = config.match_width();
    store.register("match.mlp.w1", &[h, config.mlp_hidden], h, rng)?;
    store.register_zeros("match.mlp.b1", &[config.mlp_hidden])?;
    store.register("match.mlp.w2", &[config.mlp_hidden, 2], config.mlp_hidden, rng)?;
    store.register_zeros("match.mlp.b2", &[2])?;
    Ok(())
}

/// Scaled-dot-product soft alignment in both directions.
///
/// Returns the aligned summaries for both sequences plus the attention
/// record. Scores are e_ij = <h_a_i, h_b_j> / sqrt(d); query-side weights
/// are row-normalized, candidate-side weights column-normalized.
pub fn bidirectional_attention(
    tape: &mut Tape,
    h_a: TensorId,
    h_b: TensorId,
) -> Result<(TensorId, TensorId, AttentionRecord)> {
    let (o, d) = match *tape.shape(h_a) {
        [o, d] => (o, d),
        _ => {
            return Err(Error::Shape {
                op: "bidirectional_attention",
                lhs: tape.shape(h_a).to_vec(),
                rhs: tape.shape(h_b).to_vec(),
            })
        }
    };
    let (m, d2) = match *tape.shape(h_b) {
        [m, d2] => (m, d2),
        _ => {
            return Err(Error::Shape {
                op: "bidirectional_attention",
                lhs: tape.shape(h_a).to_vec(),
                rhs: tape.shape(h_b).to_vec(),
            })
        }
    };
    if d != d2 {
        return Err(Error::Shape {
            op: "bidirectional_attention",
            lhs: vec![o, d],
            rhs: vec![m, d2],
        });
    }
    let h_b_t = tape.transpose(h_b)?;
    let raw = tape.matmul(h_a, h_b_t)?;
    let e = tape.scale(raw, 1.0 / (d as f64).sqrt());
    let alpha_query = tape.softmax(e, 1)?;
    let alpha_cand = tape.softmax(e, 0)?;
    let tilde_a = tape.matmul(alpha_query, h_b)?;
    let alpha_cand_t = tape.transpose(alpha_cand)?;
    let tilde_b = tape.matmul(alpha_cand_t, h_a)?;
    let record = AttentionRecord {
        scores: Tensor::new(vec![o, m], tape.values(e).to_vec())?,
        alpha_query: Tensor::new(vec![o, m], tape.values(alpha_query).to_vec())?,
        alpha_cand: Tensor::new(vec![o, m], tape.values(alpha_cand).to_vec())?,
    };
    Ok((tilde_a, tilde_b, record))
}

/// [h; h~; h - h~; h ⊙ h~] per token, or plain [h; h~] when strengthening
/// is ablated.
pub fn strengthen(
    tape: &mut Tape,
    h: TensorId,
    h_tilde: TensorId,
    use_sr: bool,
) -> Result<TensorId> {
    if tape.shape(h) != tape.shape(h_tilde) {
        return Err(Error::Shape {
            op: "strengthen",
            lhs: tape.shape(h).to_vec(),
            rhs: tape.shape(h_tilde).to_vec(),
        });
    }
    if !use_sr {
        return tape.concat(1, &[h, h_tilde]);
    }
    let diff = tape.sub(h, h_tilde)?;
    let prod = tape.mul(h, h_tilde)?;
    tape.concat(1, &[h, h_tilde, diff, prod])
}

/// H = [avg(v_a); max(v_a); avg(v_b); max(v_b)] over time.
pub fn pool_and_concat(tape: &mut Tape, v_a: TensorId, v_b: TensorId) -> Result<TensorId> {
    let a_avg = tape.avg_pool(v_a, 0)?;
    let a_max = tape.max_pool(v_a, 0)?;
    let b_avg = tape.avg_pool(v_b, 0)?;
    let b_max = tape.max_pool(v_b, 0)?;
    tape.concat(0, &[a_avg, a_max, b_avg, b_max])
}

/// Full per-pair pipeline: attention (unless ablated), strengthening,
/// shared aggregation, dual pooling.
pub fn match_pair(
    tape: &mut Tape,
    bind: &Binding,
    config: &MatchConfig,
    h_a: TensorId,
    h_b: TensorId,
) -> Result<(TensorId, Option<AttentionRecord>)> {
    let (tilde_a, tilde_b, record) = if config.use_ba {
        let (ta, tb, rec) = bidirectional_attention(tape, h_a, h_b)?;
        (ta, tb, Some(rec))
    } else {
        // ablation: self-substitution keeps downstream shapes intact
        (h_a, h_b, None)
    };
    let m_a = strengthen(tape, h_a, tilde_a, config.use_sr)?;
    let m_b = strengthen(tape, h_b, tilde_b, config.use_sr)?;
    let v_a = rnn::aggregate(tape, bind, "match.rnn", config.rnn_kind, m_a, config.h_rnn)?;
    let v_b = rnn::aggregate(tape, bind, "match.rnn", config.rnn_kind, m_b, config.h_rnn)?;
    let h = pool_and_concat(tape, v_a, v_b)?;
    Ok((h, record))
}

/// P(y = 1), i.e. candidate C more relevant, from the difference of the two
/// match representations: one hidden affine layer, Tanh, affine to two
/// logits, softmax.
pub fn classify(
    tape: &mut Tape,
    bind: &Binding,
    config: &MatchConfig,
    h_ab: TensorId,
    h_ac: TensorId,
) -> Result<TensorId> {
    if tape.shape(h_ab) != tape.shape(h_ac) {
        return Err(Error::Shape {
            op: "classify",
            lhs: tape.shape(h_ab).to_vec(),
            rhs: tape.shape(h_ac).to_vec(),
        });
    }
    let diff = tape.sub(h_ab, h_ac)?;
    let x = tape.reshape(diff, &[1, config.match_width()])?;
    let w1 = bind.get("match.mlp.w1")?;
    let b1 = bind.get("match.mlp.b1")?;
    let w2 = bind.get("match.mlp.w2")?;
    let b2 = bind.get("match.mlp.b2")?;
    let pre = tape.matmul(x, w1)?;
    let pre = tape.add_bias(pre, b1)?;
    let hidden = tape.tanh(pre);
    let logits = tape.matmul(hidden, w2)?;
    let logits = tape.add_bias(logits, b2)?;
    let probs = tape.softmax(logits, 1)?;
    let p1 = tape.slice(probs, 1, 1, 2)?;
    tape.reshape(p1, &[1])
}

#[derive(Debug, Clone, Serialize)]
pub struct TokenWeight {
    pub index: usize,
    pub token: String,
    pub weight: f64,
}

/// Machine-readable attention inspection for one (query, candidate) pair:
/// the top tokens on each side by summed incoming attention mass.
#[derive(Debug, Clone, Serialize)]
pub struct AttentionDump {
    pub query_id: String,
    pub cand_id: String,
    pub top_query_tokens: Vec<TokenWeight>,
    pub top_cand_tokens: Vec<TokenWeight>,
}

fn top_tokens(tokens: &[String], mass: Vec<f64>, top_k: usize) -> Vec<TokenWeight> {
    let mut weighted: Vec<TokenWeight> = mass
        .into_iter()
        .enumerate()
        .map(|(index, weight)| TokenWeight {
            index,
            token: tokens[index].clone(),
            weight,
        })
        .collect();
    weighted.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)));
    weighted.truncate(top_k);
    weighted
}

/// Summed incoming attention mass per token. A query token collects mass
/// from the candidate-side (column-normalized) weights; a candidate token
/// from the query-side (row-normalized) weights.
pub fn summarize_attention(
    record: &AttentionRecord,
    query_id: &str,
    cand_id: &str,
    query_tokens: &[String],
    cand_tokens: &[String],
    top_k: usize,
) -> Result<AttentionDump> {
    let [o, m] = *record.alpha_query.shape() else {
        return Err(Error::Contract("attention record is not a matrix".into()));
    };
    if query_tokens.len() != o || cand_tokens.len() != m {
        return Err(Error::Contract(format!(
            "attention record is {o}x{m} but tokens are {}x{}",
            query_tokens.len(),
            cand_tokens.len()
        )));
    }
    let mut query_mass = vec![0.0; o];
    let mut cand_mass = vec![0.0; m];
    for i in 0..o {
        for j in 0..m {
            query_mass[i] += record.alpha_cand.values()[i * m + j];
            cand_mass[j] += record.alpha_query.values()[i * m + j];
        }
    }
    Ok(AttentionDump {
        query_id: query_id.to_string(),
        cand_id: cand_id.to_string(),
        top_query_tokens: top_tokens(query_tokens, query_mass, top_k),
        top_cand_tokens: top_tokens(cand_tokens, cand_mass, top_k),
    })
}

/// Cross-entropy of the predicted P(y=1) against the binary label, with
/// the probability clamped to [1e-12, 1 - 1e-12] before the log.
pub fn main_loss(tape: &mut Tape, y_hat: TensorId, label: u8) -> Result<TensorId> {
    if tape.values(y_hat).len() != 1 {
        return Err(Error::Contract("main_loss expects a scalar prediction".into()));
    }
    let p = tape.clamp(y_hat, 1e-12, 1.0 - 1e-12);
    let chosen = if label == 1 {
        p
    } else {
        let neg = tape.scale(p, -1.0);
        tape.add_scalar(neg, 1.0)
    };
    let lp = tape.log(chosen)?;
    Ok(tape.scale(lp, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn attention_direct_evaluation() {
        // d=4, h_a=[[1,0,0,0]], h_b=[[2,0,0,0],[0,2,0,0]]
        let mut tape = Tape::new();
        let h_a = tape.leaf_from(&[1, 4], &[1.0, 0.0, 0.0, 0.0]);
        let h_b = tape.leaf_from(&[2, 4], &[2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let (tilde_a, _, rec) = bidirectional_attention(&mut tape, h_a, h_b).unwrap();
        assert_close(rec.scores.values(), &[1.0, 0.0], 1e-12);
        let e1 = 1f64.exp();
        let a0 = e1 / (e1 + 1.0);
        assert_close(rec.alpha_query.values(), &[a0, 1.0 - a0], 1e-9);
        assert_close(
            tape.values(tilde_a),
            &[2.0 * a0, 2.0 * (1.0 - a0), 0.0, 0.0],
            1e-9,
        );
        assert!((tape.values(tilde_a)[0] - 1.4621).abs() < 1e-4);
        assert!((tape.values(tilde_a)[1] - 0.5379).abs() < 1e-4);
    }

    #[test]
    fn attention_uniform_when_scores_equal() {
        let mut tape = Tape::new();
        let h_a = tape.leaf_from(&[2, 2], &[0.0, 0.0, 0.0, 0.0]);
        let h_b = tape.leaf_from(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (tilde_a, _, _) = bidirectional_attention(&mut tape, h_a, h_b).unwrap();
        // zero query rows give equal scores, so each aligned row is the mean
        assert_close(tape.values(tilde_a), &[3.0, 4.0, 3.0, 4.0], 1e-12);
    }

    #[test]
    fn attention_single_tokens_swap_exactly() {
        let mut tape = Tape::new();
        let h_a = tape.leaf_from(&[1, 3], &[0.1, 0.2, 0.3]);
        let h_b = tape.leaf_from(&[1, 3], &[-1.0, 5.0, 2.0]);
        let (tilde_a, tilde_b, _) = bidirectional_attention(&mut tape, h_a, h_b).unwrap();
        assert_eq!(tape.values(tilde_a), tape.values(h_b));
        assert_eq!(tape.values(tilde_b), tape.values(h_a));
    }

    #[test]
    fn attention_scores_scale_quadratically() {
        let mut tape = Tape::new();
        let a_vals = [0.5, -0.3, 0.8, 0.1, 0.2, -0.7];
        let b_vals = [0.9, 0.4, -0.2, 0.6, -0.5, 0.3];
        let h_a = tape.leaf_from(&[2, 3], &a_vals);
        let h_b = tape.leaf_from(&[2, 3], &b_vals);
        let (_, _, rec) = bidirectional_attention(&mut tape, h_a, h_b).unwrap();
        let c = 3.0;
        let sa: Vec<f64> = a_vals.iter().map(|x| x * c).collect();
        let sb: Vec<f64> = b_vals.iter().map(|x| x * c).collect();
        let h_a2 = tape.leaf_from(&[2, 3], &sa);
        let h_b2 = tape.leaf_from(&[2, 3], &sb);
        let (_, _, rec2) = bidirectional_attention(&mut tape, h_a2, h_b2).unwrap();
        for (x, y) in rec.scores.values().iter().zip(rec2.scores.values()) {
            assert!((y - c * c * x).abs() < 1e-9);
        }
        // and the divisor matches the unscaled dot product / sqrt(d)
        let dot: f64 = (0..3).map(|k| a_vals[k] * b_vals[k]).sum();
        assert!((rec.scores.values()[0] - dot / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn alpha_rows_and_columns_normalize() {
        let mut rng = Rng::new(5);
        for _ in 0..25 {
            let o = 1 + rng.below(6);
            let m = 1 + rng.below(6);
            let d = 4;
            let av: Vec<f64> = (0..o * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let bv: Vec<f64> = (0..m * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let mut tape = Tape::new();
            let h_a = tape.leaf_from(&[o, d], &av);
            let h_b = tape.leaf_from(&[m, d], &bv);
            let (_, _, rec) = bidirectional_attention(&mut tape, h_a, h_b).unwrap();
            for i in 0..o {
                let sum: f64 = (0..m).map(|j| rec.alpha_query.values()[i * m + j]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            for j in 0..m {
                let sum: f64 = (0..o).map(|i| rec.alpha_cand.values()[i * m + j]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn strengthen_direct_arithmetic() {
        let mut tape = Tape::new();
        let h = tape.leaf_from(&[1, 2], &[1.0, 2.0]);
        let ht = tape.leaf_from(&[1, 2], &[3.0, 4.0]);
        let m = strengthen(&mut tape, h, ht, true).unwrap();
        assert_eq!(tape.values(m), &[1.0, 2.0, 3.0, 4.0, -2.0, -2.0, 3.0, 8.0]);
        let plain = strengthen(&mut tape, h, ht, false).unwrap();
        assert_eq!(tape.values(plain), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn strengthen_self_match() {
        let mut tape = Tape::new();
        let h = tape.leaf_from(&[1, 2], &[2.0, -3.0]);
        let m = strengthen(&mut tape, h, h, true).unwrap();
        assert_eq!(tape.values(m), &[2.0, -3.0, 2.0, -3.0, 0.0, 0.0, 4.0, 9.0]);
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let v_a = tape.leaf_from(&[2, 2], &[1.0, 4.0, 3.0, 2.0]);
        let v_b = tape.leaf_from(&[1, 2], &[7.0, 8.0]);
        let h = pool_and_concat(&mut tape, v_a, v_b).unwrap();
        assert_eq!(tape.values(h), &[2.0, 3.0, 3.0, 4.0, 7.0, 8.0, 7.0, 8.0]);
    }

    #[test]
    fn constant_sequence_pools_to_constant() {
        let mut tape = Tape::new();
        let v = tape.leaf_from(&[3, 2], &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        let h = pool_and_concat(&mut tape, v, v).unwrap();
        assert_eq!(tape.values(h), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
    }

    fn tiny_config() -> MatchConfig {
        MatchConfig {
            d: 3,
            h_rnn: 2,
            mlp_hidden: 4,
            use_ba: true,
            use_sr: true,
            rnn_kind: RnnKind::Lstm,
        }
    }

    #[test]
    fn zero_mlp_weights_predict_half() {
        let cfg = tiny_config();
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(7);
        register_matcher(&mut store, &cfg, &mut rng).unwrap();
        for name in ["match.mlp.w1", "match.mlp.w2"] {
            for v in &mut store.get_mut(name).unwrap().values {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let h_ab = tape.leaf_from(&[16], &(0..16).map(|i| i as f64).collect::<Vec<_>>());
        let h_ac = tape.leaf_from(&[16], &(0..16).map(|i| -(i as f64)).collect::<Vec<_>>());
        let y = classify(&mut tape, &bind, &cfg, h_ab, h_ac).unwrap();
        assert!((tape.scalar_value(y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equal_matches_predict_half() {
        let cfg = tiny_config();
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(7);
        register_matcher(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let h = tape.leaf_from(&[16], &(0..16).map(|i| 0.1 * i as f64).collect::<Vec<_>>());
        let y = classify(&mut tape, &bind, &cfg, h, h).unwrap();
        assert!((tape.scalar_value(y) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classify_matches_hand_chained_evaluation() {
        let cfg = tiny_config();
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(31);
        register_matcher(&mut store, &cfg, &mut rng).unwrap();
        // fill biases too so every term participates
        for name in ["match.mlp.b1", "match.mlp.b2"] {
            for v in &mut store.get_mut(name).unwrap().values {
                *v = rng.uniform(-0.3, 0.3);
            }
        }
        let ab: Vec<f64> = (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ac: Vec<f64> = (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect();

        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let h_ab = tape.leaf_from(&[16], &ab);
        let h_ac = tape.leaf_from(&[16], &ac);
        let y = classify(&mut tape, &bind, &cfg, h_ab, h_ac).unwrap();

        // independent direct evaluation
        let w1 = &store.get("match.mlp.w1").unwrap().values;
        let b1 = &store.get("match.mlp.b1").unwrap().values;
        let w2 = &store.get("match.mlp.w2").unwrap().values;
        let b2 = &store.get("match.mlp.b2").unwrap().values;
        let x: Vec<f64> = ab.iter().zip(&ac).map(|(a, c)| a - c).collect();
        let mut hid = [0.0; 4];
        for (j, slot) in hid.iter_mut().enumerate() {
            let mut s = b1[j];
            for k in 0..16 {
                s += x[k] * w1[k * 4 + j];
            }
            *slot = s.tanh();
        }
        let mut logits = [b2[0], b2[1]];
        for (j, logit) in logits.iter_mut().enumerate() {
            for k in 0..4 {
                *logit += hid[k] * w2[k * 2 + j];
            }
        }
        let z = logits[0].max(logits[1]);
        let e0 = (logits[0] - z).exp();
        let e1 = (logits[1] - z).exp();
        let expect = e1 / (e0 + e1);
        assert!((tape.scalar_value(y) - expect).abs() < 1e-12);
    }

    #[test]
    fn classifier_input_is_antisymmetric() {
        let mut tape = Tape::new();
        let h_ab = tape.leaf_from(&[8], &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0, -1.0, 2.0]);
        let h_ac = tape.leaf_from(&[8], &[0.5, 1.0, -1.0, 2.0, 3.0, -4.0, 0.0, 1.0]);
        let fwd = tape.sub(h_ab, h_ac).unwrap();
        let rev = tape.sub(h_ac, h_ab).unwrap();
        let fv: Vec<f64> = tape.values(fwd).to_vec();
        let rv: Vec<f64> = tape.values(rev).to_vec();
        for (x, y) in fv.iter().zip(&rv) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn main_loss_closed_forms() {
        let mut tape = Tape::new();
        let half = tape.leaf_from(&[1], &[0.5]);
        let l0 = main_loss(&mut tape, half, 0).unwrap();
        let l1 = main_loss(&mut tape, half, 1).unwrap();
        assert!((tape.scalar_value(l0) - 2f64.ln()).abs() < 1e-12);
        assert!((tape.scalar_value(l1) - 2f64.ln()).abs() < 1e-12);

        let p9 = tape.leaf_from(&[1], &[0.9]);
        let l = main_loss(&mut tape, p9, 0).unwrap();
        assert!((tape.scalar_value(l) - (-(0.1f64).ln())).abs() < 1e-12);

        let near = tape.leaf_from(&[1], &[0.999_999]);
        let l = main_loss(&mut tape, near, 1).unwrap();
        assert!(tape.scalar_value(l) < 1e-5);
    }

    #[test]
    fn no_ba_makes_query_side_independent_of_candidate() {
        let cfg = MatchConfig {
            use_ba: false,
            ..tiny_config()
        };
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(13);
        register_matcher(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let h_a = tape.leaf_from(&[2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let h_b1 = tape.leaf_from(&[2, 3], &[1.0, -1.0, 0.5, 0.2, 0.9, -0.3]);
        let h_b2 = tape.leaf_from(&[3, 3], &[-0.7, 0.1, 0.0, 0.3, 0.3, 0.3, 2.0, -2.0, 1.0]);

        // with use_ba=false the pooled query half of H ignores the candidate
        let (h1, rec1) = match_pair(&mut tape, &bind, &cfg, h_a, h_b1).unwrap();
        let (h2, rec2) = match_pair(&mut tape, &bind, &cfg, h_a, h_b2).unwrap();
        assert!(rec1.is_none() && rec2.is_none());
        let w = cfg.match_width();
        assert_eq!(tape.values(h1)[..w / 2], tape.values(h2)[..w / 2]);
    }

    #[test]
    fn every_ablation_variant_passes_gradcheck() {
        use crate::autodiff::gradcheck;
        let variants = [
            (true, true, RnnKind::Lstm),
            (true, false, RnnKind::Lstm),
            (false, true, RnnKind::Lstm),
            (true, true, RnnKind::Gru),
            (true, true, RnnKind::None),
            (false, false, RnnKind::Gru),
        ];
        for (use_ba, use_sr, rnn_kind) in variants {
            let cfg = MatchConfig {
                d: 3,
                h_rnn: 2,
                mlp_hidden: 4,
                use_ba,
                use_sr,
                rnn_kind,
            };
            let mut store = ParameterStore::new();
            let mut rng = Rng::new(19);
            register_matcher(&mut store, &cfg, &mut rng).unwrap();
            // token representations enter as trainable leaves so the check
            // also covers gradients flowing back into the encoder side
            store.register("x.a", &[4, 3], 3, &mut rng).unwrap();
            store.register("x.b", &[3, 3], 3, &mut rng).unwrap();
            store.register("x.c", &[5, 3], 3, &mut rng).unwrap();

            let report = gradcheck(
                &store,
                |_, tape, bind| {
                    let a = bind.get("x.a")?;
                    let b = bind.get("x.b")?;
                    let c = bind.get("x.c")?;
                    let (h_ab, _) = match_pair(tape, bind, &cfg, a, b)?;
                    let (h_ac, _) = match_pair(tape, bind, &cfg, a, c)?;
                    let y = classify(tape, bind, &cfg, h_ab, h_ac)?;
                    main_loss(tape, y, 1)
                },
                1e-5,
                1e-4,
                19,
            )
            .unwrap();
            assert!(
                report.passed,
                "ba={use_ba} sr={use_sr} {rnn_kind:?}: max rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn match_pair_width_is_config_contract() {
        for (use_sr, rnn_kind) in [
            (true, RnnKind::Lstm),
            (false, RnnKind::Gru),
            (true, RnnKind::None),
        ] {
            let cfg = MatchConfig {
                use_sr,
                rnn_kind,
                ..tiny_config()
            };
            let mut store = ParameterStore::new();
            let mut rng = Rng::new(3);
            register_matcher(&mut store, &cfg, &mut rng).unwrap();
            let mut tape = Tape::new();
            let bind = store.bind(&mut tape);
            let h_a = tape.leaf_from(&[2, 3], &[0.1; 6]);
            let h_b = tape.leaf_from(&[4, 3], &[0.2; 12]);
            let (h, _) = match_pair(&mut tape, &bind, &cfg, h_a, h_b).unwrap();
            assert_eq!(tape.shape(h), &[cfg.match_width()]);
        }
    }
}
