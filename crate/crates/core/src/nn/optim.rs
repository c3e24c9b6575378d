use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::{Error, Real, Result};

pub trait Optimizer {
    /// Applies one descent step to `ids` using their accumulated gradients.
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], lr: Real) -> Result<()>;
}

fn check_lr(lr: Real) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidLearningRate(lr as f64));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], lr: Real) -> Result<()> {
        check_lr(lr)?;
        for &id in ids {
            let g = store.grad(id).clone();
            let v = store.value_mut(id);
            v.scaled_add(-lr, &g);
        }
        Ok(())
    }
}

/// Moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    /// Number of steps taken so far (bias-correction exponent).
    pub t: u64,
    moments: Vec<Option<Moments>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: Real, beta2: Real, eps: Real) -> Self {
        Self { beta1, beta2, eps, t: 0, moments: Vec::new() }
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }

    pub fn set_moments(&mut self, id: ParamId, m: Moments) {
        if self.moments.len() <= id.0 {
            self.moments.resize(id.0 + 1, None);
        }
        self.moments[id.0] = Some(m);
    }

    pub fn iter_moments(&self) -> impl Iterator<Item = (ParamId, &Moments)> {
        self.moments.iter().enumerate().filter_map(|(i, m)| m.as_ref().map(|m| (ParamId(i), m)))
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore, ids: &[ParamId], lr: Real) -> Result<()> {
        check_lr(lr)?;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for &id in ids {
            if self.moments.len() <= id.0 {
                self.moments.resize(id.0 + 1, None);
            }
            let shape = store.value(id).raw_dim();
            let mom = self.moments[id.0].get_or_insert_with(|| Moments { m: Array2::zeros(shape), v: Array2::zeros(shape) });
            let g = store.grad(id).clone();
            Zip::from(&mut mom.m).and(&mut mom.v).and(&g).for_each(|m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
            });
            let value = store.value_mut(id);
            Zip::from(value).and(&mom.m).and(&mom.v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Step-decayed learning rate: `max(lr_min, lr0 * decay^floor(k / period))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub period: usize,
    pub lr_min: f64,
}

impl LrSchedule {
    pub fn at(&self, iteration: usize) -> Real {
        let periods = (iteration / self.period.max(1)) as i32;
        (self.lr0 * self.decay.powi(periods)).max(self.lr_min) as Real
    }
}
