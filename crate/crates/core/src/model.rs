//! Either trained model behind one sampling and completion interface, with
//! the dataset facts needed to talk to it in raw drawing units.

use rand::Rng;

use crate::config::{config_hash, ModelKind};
use crate::nn::ParamStore;
use crate::skegan::{SkeganModel, Temperature};
use crate::stroke::{Sketch, StrokePoint3, StrokePoint5};
use crate::vaskegan::VaskeganModel;
use crate::{Real, Result};

#[derive(Clone, Debug)]
pub enum Model {
    Skegan(SkeganModel),
    Vaskegan(VaskeganModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Skegan(_) => ModelKind::Skegan,
            Self::Vaskegan(_) => ModelKind::Vaskegan,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Self::Skegan(m) => &m.store,
            Self::Vaskegan(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::Skegan(m) => &mut m.store,
            Self::Vaskegan(m) => &mut m.store,
        }
    }

    pub fn config_hash(&self) -> u32 {
        match self {
            Self::Skegan(m) => config_hash(&m.config),
            Self::Vaskegan(m) => config_hash(&m.config),
        }
    }

    pub fn sample<R: Rng>(&self, count: usize, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Vec<Sketch>> {
        match self {
            Self::Skegan(m) => m.generator.generate_batch(&m.store, count, tau, n_max, rng),
            Self::Vaskegan(m) => m.sample(count, tau, n_max, rng),
        }
    }

    pub fn complete<R: Rng>(&self, partial: &Sketch, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Sketch> {
        match self {
            Self::Skegan(m) => m.generator.complete(&m.store, partial, tau, n_max, rng),
            Self::Vaskegan(m) => m.complete(partial, tau, n_max, rng),
        }
    }
}

/// A model plus the sequence bound and offset scale of the data it was trained on.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub n_max: usize,
    /// Raw offsets were divided by this before training.
    pub offset_scale: Real,
    pub category: String,
}

impl TrainedModel {
    fn to_model_units(&self, strokes: &[StrokePoint3]) -> Sketch {
        let s = self.offset_scale;
        let scaled: Vec<StrokePoint3> = strokes.iter().map(|p| StrokePoint3::new(p.dx / s, p.dy / s, p.lift)).collect();
        let mut sketch = Sketch::from_stroke3(&scaled, self.category.clone());
        sketch.points.pop();
        sketch
    }

    fn to_raw_units(&self, sketch: &Sketch) -> Vec<StrokePoint3> {
        let s = self.offset_scale;
        sketch.to_stroke3().into_iter().map(|p| StrokePoint3::new(p.dx * s, p.dy * s, p.lift)).collect()
    }

    /// Completes a raw-unit stroke-3 prefix; the returned strokes include the prefix.
    pub fn complete_strokes<R: Rng>(&self, strokes: &[StrokePoint3], tau: Temperature, rng: &mut R) -> Result<Vec<StrokePoint3>> {
        let partial = self.to_model_units(strokes);
        let done = self.model.complete(&partial, tau, self.n_max, rng)?;
        let mut out = self.to_raw_units(&done);
        // the prefix comes back exactly as sent, not rescaled twice
        out[..strokes.len()].copy_from_slice(strokes);
        Ok(out)
    }

    pub fn sample_strokes<R: Rng>(&self, count: usize, tau: Temperature, rng: &mut R) -> Result<Vec<Vec<StrokePoint3>>> {
        Ok(self.model.sample(count, tau, self.n_max, rng)?.iter().map(|s| self.to_raw_units(s)).collect())
    }

    pub fn sample<R: Rng>(&self, count: usize, tau: Temperature, rng: &mut R) -> Result<Vec<Sketch>> {
        self.model.sample(count, tau, self.n_max, rng)
    }

    /// Whether a generated sketch stopped on its own rather than at the length bound.
    pub fn terminated(sketch: &Sketch) -> bool {
        sketch.points.last().is_some_and(|p| *p == StrokePoint5::END)
    }
}
