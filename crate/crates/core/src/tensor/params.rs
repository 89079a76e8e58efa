use std::cell::RefCell;
use std::collections::BTreeMap;

use super::tape::{Gradients, Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Named model parameters, enumerated in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("invalid parameter name {name:?}")));
        }
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

/// Binds stored parameters onto a tape, one leaf per name per tape.
///
/// Reusing a name returns the same leaf, so every use of a shared parameter
/// accumulates into one gradient.
pub struct Binder<'s, 't> {
    store: &'s ParamStore,
    tape: &'t Tape,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var<'t>>>,
}

impl<'s, 't> Binder<'s, 't> {
    pub fn trainable(store: &'s ParamStore, tape: &'t Tape) -> Self {
        Self::with_mode(store, tape, true)
    }

    /// Binds parameters as constants (inference).
    pub fn frozen(store: &'s ParamStore, tape: &'t Tape) -> Self {
        Self::with_mode(store, tape, false)
    }

    fn with_mode(store: &'s ParamStore, tape: &'t Tape, trainable: bool) -> Self {
        Binder {
            store,
            tape,
            trainable,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    /// A binder whose parameters are the given leaves; names not listed
    /// fall back to `store`.
    pub fn preset(
        store: &'s ParamStore,
        tape: &'t Tape,
        vars: impl IntoIterator<Item = (String, Var<'t>)>,
    ) -> Self {
        let b = Self::with_mode(store, tape, true);
        b.bound.borrow_mut().extend(vars);
        b
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?
            .clone();
        let var = if self.trainable {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), var);
        Ok(var)
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn collect_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(name, var)| grads.take(*var).map(|g| (name.clone(), g)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
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

/// Adam with bias correction. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter in `store`. Parameters absent
    /// from `grads` see a zero gradient. `grads` is consumed.
    pub fn step(&mut self, store: &mut ParamStore, grads: BTreeMap<String, Vec<f64>>) -> Result<()> {
        for (name, g) in &grads {
            let p = store
                .get(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in store.params.iter_mut() {
            let n = p.len();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(name);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
