//! Output distributions: the offset mixture and the pen-state categorical.
//!
//! The raw offset head output of width `6M` is laid out in blocks of `M`:
//! `[pi_logits, mu_x, mu_y, log_sigma_x, log_sigma_y, rho_raw]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::stroke::{PenState, StrokePoint5};
use crate::{Error, Real, Result};

/// Sampling temperature, strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Temperature(Real);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(tau: Real) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidTemperature(tau as f64));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> Real {
        self.0
    }
}

/// Mixture of `M` bivariate normals over `(dx, dy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub pi: Vec<Real>,
    pub mu_x: Vec<Real>,
    pub mu_y: Vec<Real>,
    pub sigma_x: Vec<Real>,
    pub sigma_y: Vec<Real>,
    pub rho: Vec<Real>,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    /// Log of the mixture density at `(x, y)`.
    pub fn log_density(&self, x: Real, y: Real) -> Real {
        let terms: Vec<Real> = (0..self.components())
            .map(|j| {
                self.pi[j].ln()
                    + bivariate_log_density(x, y, self.mu_x[j], self.mu_y[j], self.sigma_x[j], self.sigma_y[j], self.rho[j])
            })
            .collect();
        log_sum_exp(&terms)
    }
}

pub fn bivariate_log_density(x: Real, y: Real, mx: Real, my: Real, sx: Real, sy: Real, rho: Real) -> Real {
    let zx = (x - mx) / sx;
    let zy = (y - my) / sy;
    let omr = 1.0 - rho * rho;
    let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
    -(2.0 * std::f64::consts::PI as Real).ln() - sx.ln() - sy.ln() - 0.5 * omr.ln() - z / (2.0 * omr)
}

fn log_sum_exp(v: &[Real]) -> Real {
    let m = v.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    if m == Real::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<Real>().ln()
}

pub fn softmax(logits: &[Real]) -> Vec<Real> {
    let m = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let e: Vec<Real> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: Real = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Mixture parameters from a raw `6M` head output. Mixture logits are divided
/// by `tau` and variances multiplied by it (`sigma * sqrt(tau)`).
pub fn gmm_params_from(y: &[Real], tau: Temperature) -> Result<GmmParams> {
    if y.is_empty() || !y.len().is_multiple_of(6) {
        return Err(Error::Shape { op: "gmm_params_from", detail: format!("expected 6M values, got {}", y.len()) });
    }
    let m = y.len() / 6;
    let t = tau.get();
    let block = |k: usize| &y[k * m..(k + 1) * m];
    let logits: Vec<Real> = block(0).iter().map(|v| v / t).collect();
    let st = t.sqrt();
    Ok(GmmParams {
        pi: softmax(&logits),
        mu_x: block(1).to_vec(),
        mu_y: block(2).to_vec(),
        sigma_x: block(3).iter().map(|v| v.exp() * st).collect(),
        sigma_y: block(4).iter().map(|v| v.exp() * st).collect(),
        rho: block(5).iter().map(|v| v.tanh()).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenStateProbs {
    pub q: [Real; 3],
}

impl PenStateProbs {
    pub fn argmax(&self) -> PenState {
        let mut best = 0;
        for k in 1..3 {
            if self.q[k] > self.q[best] {
                best = k;
            }
        }
        PenState::ALL[best]
    }
}

/// Softmax of the pen logits divided by `tau`.
pub fn pen_probs_from(y: &[Real], tau: Temperature) -> Result<PenStateProbs> {
    if y.len() != 3 {
        return Err(Error::Shape { op: "pen_probs_from", detail: format!("expected 3 values, got {}", y.len()) });
    }
    let scaled: Vec<Real> = y.iter().map(|v| v / tau.get()).collect();
    let p = softmax(&scaled);
    Ok(PenStateProbs { q: [p[0], p[1], p[2]] })
}

/// Index drawn from a categorical distribution given by `probs`.
pub fn sample_categorical<R: Rng>(probs: &[Real], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0f64;
    for (i, &p) in probs.iter().enumerate() {
        acc += p as f64;
        if u < acc {
            return i;
        }
    }
    // rounding left the total just below 1; take the last non-zero entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Correlated bivariate normal draw via the 2x2 Cholesky factor.
pub fn sample_bivariate<R: Rng>(mx: Real, my: Real, sx: Real, sy: Real, rho: Real, rng: &mut R) -> (Real, Real) {
    let e1: f64 = StandardNormal.sample(rng);
    let e2: f64 = StandardNormal.sample(rng);
    let (e1, e2) = (e1 as Real, e2 as Real);
    let dx = mx + sx * e1;
    let dy = my + sy * (rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2);
    (dx, dy)
}

/// Draws one 5-tuple: component, then offsets from that component, then pen state.
pub fn sample_point<R: Rng>(gmm: &GmmParams, pen: &PenStateProbs, rng: &mut R) -> StrokePoint5 {
    let j = sample_categorical(&gmm.pi, rng);
    let (dx, dy) = sample_bivariate(gmm.mu_x[j], gmm.mu_y[j], gmm.sigma_x[j], gmm.sigma_y[j], gmm.rho[j], rng);
    let q = PenState::ALL[sample_categorical(&pen.q, rng)];
    StrokePoint5::new(dx, dy, q)
}
