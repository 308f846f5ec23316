//! Trainable parameters and the Adam update.
//!
//! Parameters are kept in a `BTreeMap` so every iteration order (binding,
//! update, serialization) is deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::tape::{Gradients, Tape, TensorId};
use super::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    /// First-moment accumulator.
    pub m: Vec<f64>,
    /// Second-moment accumulator.
    pub v: Vec<f64>,
    /// Adam step count for bias correction.
    pub step: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
}

/// Hyper-parameters of the Adam update.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Mapping from parameter names to their leaf nodes on one tape.
pub struct Binding {
    ids: BTreeMap<String, TensorId>,
}

impl Binding {
    pub fn get(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unbound parameter {name}")))
    }

    /// Collect per-parameter gradients after a backward pass. Parameters the
    /// loss never touched come back as zeros.
    pub fn gradients(&self, store: &ParameterStore, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.ids {
            let len = store.params[name].values.len();
            let g = grads
                .get(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; len]);
            out.insert(name.clone(), g);
        }
        out
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Register a parameter initialized uniformly in
    /// [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn register(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        self.register_with(name, shape, values)
    }

    /// Register a parameter with explicit initial values (e.g. zero biases).
    pub fn register_with(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!("parameter {name} already registered")));
        }
        let t = Tensor::new(shape.to_vec(), values)?;
        let (shape, values) = t.into_parts();
        let n = values.len();
        self.params.insert(
            name.to_string(),
            Param {
                shape,
                values,
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            },
        );
        Ok(())
    }

    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        self.register_with(name, shape, vec![0.0; n])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn coordinate_count(&self) -> usize {
        self.params.values().map(|p| p.values.len()).sum()
    }

    /// Insert every parameter as a leaf on the tape, in name order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut ids = BTreeMap::new();
        for (name, p) in &self.params {
            let id = tape.leaf_from(&p.shape, &p.values);
            ids.insert(name.clone(), id);
        }
        Binding { ids }
    }

    /// One Adam step with bias correction. Parameters without a gradient
    /// entry are treated as having zero gradient: their moments decay and
    /// (from a zero-moment state) their values stay put.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Vec<f64>>,
        learning_rate: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        for (name, p) in self.params.iter_mut() {
            let zero;
            let g = match grads.get(name) {
                Some(g) => {
                    if g.len() != p.values.len() {
                        return Err(Error::Contract(format!(
                            "gradient length {} for parameter {name} of size {}",
                            g.len(),
                            p.values.len()
                        )));
                    }
                    g
                }
                None => {
                    zero = vec![0.0; p.values.len()];
                    &zero
                }
            };
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for i in 0..p.values.len() {
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // Bias correction makes the very first step ≈ lr for unit gradient.
        let mut store = ParameterStore::new();
        store.register_with("w", &[1], vec![1.0]).unwrap();
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        store.adam_step(&grads, 0.1, &AdamConfig::default()).unwrap();
        let w = store.get("w").unwrap().values[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn zero_gradient_from_init_is_fixed_point() {
        let mut store = ParameterStore::new();
        store.register_with("w", &[2], vec![0.5, -0.5]).unwrap();
        store
            .adam_step(&BTreeMap::new(), 0.1, &AdamConfig::default())
            .unwrap();
        let p = store.get("w").unwrap();
        assert_eq!(p.values, vec![0.5, -0.5]);
        assert_eq!(p.step, 1);
    }

    #[test]
    fn same_seed_registers_identical_values() {
        let mk = || {
            let mut rng = Rng::new(5);
            let mut s = ParameterStore::new();
            s.register("a", &[3, 3], 3, &mut rng).unwrap();
            s.register("b", &[3], 3, &mut rng).unwrap();
            s
        };
        let s1 = mk();
        let s2 = mk();
        assert_eq!(s1.get("a").unwrap().values, s2.get("a").unwrap().values);
        assert_eq!(s1.get("b").unwrap().values, s2.get("b").unwrap().values);
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut store = ParameterStore::new();
        store.register_with("used", &[1], vec![2.0]).unwrap();
        store.register_with("unused", &[1], vec![3.0]).unwrap();
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = bind.get("used").unwrap();
        let loss = {
            let sq = tape.mul(x, x).unwrap();
            tape.sum_all(sq)
        };
        let grads = tape.backward(loss).unwrap();
        let by_name = bind.gradients(&store, &grads);
        assert_eq!(by_name["used"], vec![4.0]);
        assert_eq!(by_name["unused"], vec![0.0]);
    }
}
