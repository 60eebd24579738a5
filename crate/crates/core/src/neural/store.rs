//! Named trainable parameters and their optimizers.

use std::collections::HashMap;

use super::tape::Tape;
use super::tensor::Tensor;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter {name:?} registered twice"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let ix = self.index[name];
        &self.tensors[ix]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let ix = self.index[name];
        &mut self.tensors[ix]
    }

    /// Bind the parameter into a tape as a (cached) named leaf.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> super::tape::NodeId {
        tape.named_leaf(name, self.get(name).clone())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Adam with bias correction; first/second moments per parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: HashMap<String, Vec<f64>>,
    second: HashMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter bound in `tape`. Requires that
    /// `backward` has already run.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (name, id) in tape.bindings() {
            if !store.contains(name) {
                continue;
            }
            let grad = tape.grad(id);
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; grad.len()]);
            let param = store.get_mut(name);
            for (((p, g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

/// Plain SGD update of every parameter bound in `tape`. Returns the largest
/// absolute value written (NaN poisons the maximum), so callers can detect
/// divergence at the update boundary.
pub fn sgd_step(store: &mut ParamStore, tape: &Tape, lr: f64) -> f64 {
    sgd_step_filtered(store, tape, lr, |_| true)
}

/// SGD restricted to parameters whose name passes the filter; everything
/// else bound in the tape is left untouched.
pub fn sgd_step_filtered(
    store: &mut ParamStore,
    tape: &Tape,
    lr: f64,
    keep: impl Fn(&str) -> bool,
) -> f64 {
    let mut max_abs = 0.0_f64;
    for (name, id) in tape.bindings() {
        if !store.contains(name) || !keep(name) {
            continue;
        }
        let grad = tape.grad(id);
        let param = store.get_mut(name);
        for (p, g) in param.data_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
            if p.is_nan() {
                max_abs = f64::NAN;
            } else {
                max_abs = max_abs.max(p.abs());
            }
        }
    }
    max_abs
}
