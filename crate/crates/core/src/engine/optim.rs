use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named parameters plus AdamW state. Iteration order is the sorted name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    state: BTreeMap<String, AdamState>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.state.get(name)
    }

    /// Drops optimizer moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.state.clear();
        self.step = 0;
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn zero_grads(&self) -> Gradients {
        let mut g = Gradients::default();
        for (name, t) in &self.params {
            g.map.insert(name.clone(), Tensor::zeros(t.shape()));
        }
        g
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.map.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise `self += other`; names missing from `self` are copied in.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.map {
            match self.map.get_mut(name) {
                Some(acc) => {
                    acc.same_shape(g, name)?;
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.map.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, g) in &self.map {
            g.ensure_finite(&format!("gradient of `{name}`"))?;
        }
        Ok(())
    }
}

/// Storage precision of parameters between optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Full double precision; required for gradient checks.
    #[default]
    F64,
    /// Parameters rounded to f32 after each step.
    F32,
}

/// AdamW hyperparameters with a cosine-annealed learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            lr_min: 1e-6,
            total_steps: 1,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(Error::Config(format!(
                "need 0 <= lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("weight decay must be >= 0 and eps > 0".into()));
        }
        Ok(())
    }

    pub fn with_total_steps(mut self, total_steps: usize) -> Self {
        self.total_steps = total_steps.max(1);
        self
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi step / total)) / 2`.
pub fn cosine_lr(step: usize, schedule: &TrainSchedule) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::InvalidStep {
            step,
            total: schedule.total_steps,
        });
    }
    let frac = step as f64 / schedule.total_steps as f64;
    Ok(schedule.lr_min
        + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, lr: f64, schedule: &TrainSchedule) -> Result<()> {
    for (name, p) in &store.params {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        p.same_shape(g, name)?;
    }
    grads.ensure_finite()?;
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - schedule.beta1.powi(t);
    let bc2 = 1.0 - schedule.beta2.powi(t);
    let (b1, b2) = (schedule.beta1, schedule.beta2);
    for (name, p) in store.params.iter_mut() {
        let g = grads.get(name).expect("checked above").data();
        let st = store.state.entry(name.clone()).or_insert_with(|| AdamState {
            m: vec![0.0; g.len()],
            v: vec![0.0; g.len()],
        });
        let decay = lr * schedule.weight_decay;
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            if decay != 0.0 {
                *theta -= decay * *theta;
            }
            st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
            st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + schedule.eps);
        }
        p.ensure_finite(name)?;
    }
    Ok(())
}
