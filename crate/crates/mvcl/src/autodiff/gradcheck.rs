//! Central finite-difference verification of tape gradients.

use serde::Serialize;

use crate::error::Result;
use crate::rng::Rng;

use super::params::{Binding, ParameterStore};
use super::tape::{Tape, TensorId};

/// One checked coordinate that landed among the worst offenders.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub total_coordinates: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Worst coordinates, highest relative error first (at most 10).
    pub worst: Vec<GradCheckEntry>,
}

/// Above this many coordinates a seeded random subsample is checked.
pub const SUBSAMPLE_THRESHOLD: usize = 10_000;

/// Relative error with a floor so coordinates where both gradients are tiny
/// compare on an absolute scale.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Check analytic gradients of `f` against central differences.
///
/// `f` must build the loss deterministically from the bound parameters; it
/// is re-run two times per checked coordinate with perturbed values.
pub fn gradcheck<F>(
    store: &ParameterStore,
    f: F,
    eps: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore, &mut Tape, &Binding) -> Result<TensorId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let loss = f(store, &mut tape, &binding)?;
    let grads = tape.backward(loss)?;
    let analytic = binding.gradients(store, &grads);

    let loss_at = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let loss = f(store, &mut tape, &binding)?;
        Ok(tape.scalar_value(loss))
    };

    // Flat list of (param, coordinate) pairs, name order.
    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, p) in store.iter() {
        for i in 0..p.values.len() {
            coords.push((name.clone(), i));
        }
    }
    let total = coords.len();
    if total > SUBSAMPLE_THRESHOLD {
        let mut rng = Rng::derive(seed, 0x6743_6845);
        let picked = rng.sample_without_replacement(total, SUBSAMPLE_THRESHOLD);
        let mut sorted = picked;
        sorted.sort_unstable();
        coords = sorted.into_iter().map(|i| coords[i].clone()).collect();
    }

    let mut scratch = store.clone();
    let mut entries: Vec<GradCheckEntry> = Vec::new();
    let mut max_err = 0.0f64;
    for (name, i) in &coords {
        let orig = scratch.get(name)?.values[*i];
        scratch.get_mut(name)?.values[*i] = orig + eps;
        let plus = loss_at(&scratch)?;
        scratch.get_mut(name)?.values[*i] = orig - eps;
        let minus = loss_at(&scratch)?;
        scratch.get_mut(name)?.values[*i] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[name][*i];
        let err = rel_err(a, numeric);
        max_err = max_err.max(err);
        entries.push(GradCheckEntry {
            param: name.clone(),
            index: *i,
            analytic: a,
            numeric,
            rel_err: err,
        });
    }

    entries.sort_by(|x, y| y.rel_err.total_cmp(&x.rel_err));
    entries.truncate(10);

    Ok(GradCheckReport {
        checked: coords.len(),
        total_coordinates: total,
        max_rel_err: max_err,
        tolerance,
        passed: max_err <= tolerance,
        worst: entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_tightly() {
        let mut rng = Rng::new(1);
        let mut store = ParameterStore::new();
        store.register("x", &[4], 4, &mut rng).unwrap();
        let report = gradcheck(
            &store,
            |_, tape, bind| {
                let x = bind.get("x")?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum_all(sq))
            },
            1e-5,
            1e-7,
            1,
        )
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn broken_gradient_is_caught() {
        // tanh forward with a deliberately wrong backward: compare analytic
        // grad of tanh against finite differences of tanh + offset drift.
        let mut store = ParameterStore::new();
        store.register_with("x", &[1], vec![0.3]).unwrap();
        // f = tanh(x) analytically, but numeric side sees tanh(x) * 1.5
        // via a scale the analytic graph never took: simulate by comparing
        // analytic of tanh vs numeric of scale(tanh).
        let report = gradcheck(
            &store,
            |st, tape, bind| {
                let x = bind.get("x")?;
                let y = tape.tanh(x);
                // A non-deterministic-looking but parameter-dependent bug:
                // scale forward-only by reading the stored value directly.
                let c = if st.get("x").unwrap().values[0] > 0.3 {
                    1.5
                } else {
                    1.0
                };
                Ok(tape.scale(y, c))
            },
            1e-4,
            1e-4,
            1,
        )
        .unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn relu_at_kink_uses_zero_subgradient() {
        let mut store = ParameterStore::new();
        store.register_with("x", &[1], vec![0.0]).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = bind.get("x").unwrap();
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0]);
    }
}
