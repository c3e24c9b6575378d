use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
}

/// Named parameters with accumulated gradients of identical shape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name: name.clone(), value: Arc::new(value), grad });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Glorot-uniform initialized `[rows, cols]` matrix.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let t = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng) as Real);
        self.add(name, t)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: Real) -> Result<ParamId> {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access; clones the tensor if a graph still holds it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.dim() != value.dim() {
            return Err(Error::Shape {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", p.name, p.value.dim(), value.dim()),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.dim() != g.dim() {
            return Err(Error::Shape { op: "accumulate_grad", detail: format!("{}: {:?} vs {:?}", p.name, p.grad.dim(), g.dim()) });
        }
        p.grad += g;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Fails with the parameter's name if any gradient component is not finite.
    pub fn check_grads(&self, ids: &[ParamId]) -> Result<()> {
        for &id in ids {
            if !self.grad(id).iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite { op: "gradient" });
            }
        }
        Ok(())
    }

    /// Copies values from `other` for every parameter with a matching name and shape.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let id = other.id(&p.name).ok_or_else(|| Error::UnknownParam(p.name.clone()))?;
            let v = other.value_arc(id);
            if v.dim() != p.value.dim() {
                return Err(Error::Shape { op: "copy_from", detail: format!("{}: {:?} vs {:?}", p.name, p.value.dim(), v.dim()) });
            }
            p.value = v;
        }
        Ok(())
    }

    /// Bitwise equality of names, shapes and values.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.dim() == b.value.dim()
                    && a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Clamps every gradient component of `ids` into `[lo, hi]`.
pub fn clip_gradients(store: &mut ParamStore, ids: &[ParamId], lo: Real, hi: Real) {
    assert!(lo < hi, "clip range must be non-empty");
    for &id in ids {
        store.grad_mut(id).mapv_inplace(|g| g.clamp(lo, hi));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn clipping_bounds_gradients() {
        let mut s = ParamStore::new();
        let id = s.add("w", array![[0.0, 0.0, 0.0]]).unwrap();
        *s.grad_mut(id) = array![[3.0, -0.5, -7.0]];
        clip_gradients(&mut s, &[id], -1.0, 1.0);
        assert_eq!(s.grad(id), &array![[1.0, -0.5, -1.0]]);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = s.add_glorot("r", 8, 8, &mut rng).unwrap();
        *s.grad_mut(r) = s.value(r) * 40.0;
        clip_gradients(&mut s, &[r], -1.0, 1.0);
        assert!(s.grad(r).iter().all(|g| g.abs() <= 1.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", array![[1.0]]).unwrap();
        assert!(s.add("w", array![[1.0]]).is_err());
    }
}
