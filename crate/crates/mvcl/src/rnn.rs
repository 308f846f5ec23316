//! Recurrent aggregation layers built from tape primitives.
//!
//! Each bidirectional layer shares one cell parameter set across the two
//! directions; the forward and backward sweeps are concatenated to width
//! 2·hidden. Gate layouts: LSTM [input, forget, cell, output], GRU
//! [reset, update, candidate] with the candidate's hidden path gated by
//! reset before the tanh.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParameterStore, Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnKind {
    Lstm,
    Gru,
    None,
}

pub fn register_lstm_cell(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.register(&format!("{prefix}.wx"), &[input, 4 * hidden], input, rng)?;
    store.register(&format!("{prefix}.wh"), &[hidden, 4 * hidden], hidden, rng)?;
    store.register_zeros(&format!("{prefix}.b"), &[4 * hidden])
}

pub fn register_gru_cell(
    store: &mut ParameterStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut Rng,
) -> Result<()> {
    store.register(&format!("{prefix}.wx"), &[input, 3 * hidden], input, rng)?;
    store.register(&format!("{prefix}.wh"), &[hidden, 3 * hidden], hidden, rng)?;
    store.register_zeros(&format!("{prefix}.b"), &[3 * hidden])
}

/// Register the aggregation layer for the given kind; `None` is a plain
/// affine projection to the same output width 2·hidden.
pub fn register_aggregator(
    store: &mut ParameterStore,
    prefix: &str,
    kind: RnnKind,
    input: usize,
    hidden: usize,
    rng: &mut Rng,
) -> Result<()> {
    match kind {
        RnnKind::Lstm => register_lstm_cell(store, prefix, input, hidden, rng),
        RnnKind::Gru => register_gru_cell(store, prefix, input, hidden, rng),
        RnnKind::None => {
            store.register(&format!("{prefix}.w"), &[input, 2 * hidden], input, rng)?;
            store.register_zeros(&format!("{prefix}.b"), &[2 * hidden])
        }
    }
}

struct LstmParams {
    wx: TensorId,
    wh: TensorId,
    b: TensorId,
}

fn cell_params(bind: &Binding, prefix: &str) -> Result<LstmParams> {
    Ok(LstmParams {
        wx: bind.get(&format!("{prefix}.wx"))?,
        wh: bind.get(&format!("{prefix}.wh"))?,
        b: bind.get(&format!("{prefix}.b"))?,
    })
}

fn lstm_step(
    tape: &mut Tape,
    p: &LstmParams,
    hidden: usize,
    x_t: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
) -> Result<(TensorId, TensorId)> {
    let px = tape.matmul(x_t, p.wx)?;
    let ph = tape.matmul(h_prev, p.wh)?;
    let s = tape.add(px, ph)?;
    let b2 = tape.reshape(p.b, &[1, 4 * hidden])?;
    let pre = tape.add(s, b2)?;
    let i_pre = tape.slice(pre, 1, 0, hidden)?;
    let f_pre = tape.slice(pre, 1, hidden, 2 * hidden)?;
    let g_pre = tape.slice(pre, 1, 2 * hidden, 3 * hidden)?;
    let o_pre = tape.slice(pre, 1, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let ct = tape.tanh(c);
    let h = tape.mul(o, ct)?;
    Ok((h, c))
}

fn gru_step(
    tape: &mut Tape,
    p: &LstmParams,
    hidden: usize,
    x_t: TensorId,
    h_prev: TensorId,
) -> Result<TensorId> {
    let px = tape.matmul(x_t, p.wx)?;
    let b2 = tape.reshape(p.b, &[1, 3 * hidden])?;
    let px = tape.add(px, b2)?;
    let ph = tape.matmul(h_prev, p.wh)?;
    let r_pre = {
        let a = tape.slice(px, 1, 0, hidden)?;
        let b = tape.slice(ph, 1, 0, hidden)?;
        tape.add(a, b)?
    };
    let z_pre = {
        let a = tape.slice(px, 1, hidden, 2 * hidden)?;
        let b = tape.slice(ph, 1, hidden, 2 * hidden)?;
        tape.add(a, b)?
    };
    let r = tape.sigmoid(r_pre);
    let z = tape.sigmoid(z_pre);
    let n_pre = {
        let a = tape.slice(px, 1, 2 * hidden, 3 * hidden)?;
        let hn = tape.slice(ph, 1, 2 * hidden, 3 * hidden)?;
        let gated = tape.mul(r, hn)?;
        tape.add(a, gated)?
    };
    let n = tape.tanh(n_pre);
    // h' = (1-z) ⊙ n + z ⊙ h_prev
    let zn = tape.mul(z, n)?;
    let n_minus_zn = tape.sub(n, zn)?;
    let zh = tape.mul(z, h_prev)?;
    tape.add(n_minus_zn, zh)
}

#[derive(Clone, Copy)]
enum Cell {
    Lstm,
    Gru,
}

fn run_bidirectional(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    input: TensorId,
    hidden: usize,
    cell: Cell,
) -> Result<TensorId> {
    let n = tape.shape(input)[0];
    let p = cell_params(bind, prefix)?;
    let sweep = |tape: &mut Tape, reverse: bool| -> Result<Vec<TensorId>> {
        let mut h = tape.leaf_from(&[1, hidden], &vec![0.0; hidden]);
        let mut c = tape.leaf_from(&[1, hidden], &vec![0.0; hidden]);
        let mut outs = vec![TensorId(0); n];
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let x_t = tape.slice(input, 0, t, t + 1)?;
            match cell {
                Cell::Lstm => {
                    let (h_new, c_new) = lstm_step(tape, &p, hidden, x_t, h, c)?;
                    h = h_new;
                    c = c_new;
                }
                Cell::Gru => {
                    h = gru_step(tape, &p, hidden, x_t, h)?;
                }
            }
            outs[t] = h;
        }
        Ok(outs)
    };
    let fw = sweep(tape, false)?;
    let bw = sweep(tape, true)?;
    let mut rows = Vec::with_capacity(n);
    for t in 0..n {
        rows.push(tape.concat(1, &[fw[t], bw[t]])?);
    }
    tape.concat(0, &rows)
}

pub fn run_bilstm(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    input: TensorId,
    hidden: usize,
) -> Result<TensorId> {
    run_bidirectional(tape, bind, prefix, input, hidden, Cell::Lstm)
}

pub fn run_bigru(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    input: TensorId,
    hidden: usize,
) -> Result<TensorId> {
    run_bidirectional(tape, bind, prefix, input, hidden, Cell::Gru)
}

/// Aggregate a strengthened sequence to width 2·hidden with the configured
/// layer.
pub fn aggregate(
    tape: &mut Tape,
    bind: &Binding,
    prefix: &str,
    kind: RnnKind,
    input: TensorId,
    hidden: usize,
) -> Result<TensorId> {
    if tape.shape(input).len() != 2 {
        return Err(Error::Contract("aggregate expects a (n, d) sequence".into()));
    }
    match kind {
        RnnKind::Lstm => run_bilstm(tape, bind, prefix, input, hidden),
        RnnKind::Gru => run_bigru(tape, bind, prefix, input, hidden),
        RnnKind::None => {
            let w = bind.get(&format!("{prefix}.w"))?;
            let b = bind.get(&format!("{prefix}.b"))?;
            let proj = tape.matmul(input, w)?;
            tape.add_bias(proj, b)
        }
    }
}
