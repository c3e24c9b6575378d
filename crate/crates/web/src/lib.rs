//! Browser demo. [`Studio`] is plain Rust and testable natively; the
//! `#[wasm_bindgen]` wrappers only translate errors and strings.

use strokegan::checkpoint::Checkpoint;
use strokegan::config::SkeganConfig;
use strokegan::model::{Model, TrainedModel};
use strokegan::render::{render_grid, render_svg_styled, RenderStyle};
use strokegan::skegan::{GeneratorConfig, SkeganModel, Temperature};
use strokegan::stroke::{normalize_offsets, ske_score, Sketch, StrokePoint3};
use strokegan::toy::toy_corpus;
use strokegan::train::SkeganTrainer;
use strokegan::{seeded_rng, Real, Rng};
use wasm_bindgen::prelude::*;

fn parse_strokes(json: &str) -> Result<Vec<StrokePoint3>, String> {
    serde_json::from_str(json).map_err(|e| format!("strokes must be [[dx, dy, p], ...]: {e}"))
}

fn temperature(tau: f64) -> Result<Temperature, String> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(format!("temperature must be in (0, 1], got {tau}"));
    }
    Temperature::new(tau as Real).map_err(|e| e.to_string())
}

/// SVG of a stroke-3 drawing; points from `highlight_from` on use the accent color.
pub fn strokes_svg(json: &str, highlight_from: Option<usize>, size: f64) -> Result<String, String> {
    let strokes = parse_strokes(json)?;
    let style = RenderStyle { canvas_size: size, stroke_width: 3.0, ..RenderStyle::default() };
    Ok(render_svg_styled(&Sketch::from_stroke3(&strokes, ""), highlight_from, &style))
}

/// Ske-score of a drawing as `{"value", "degenerate"}` JSON.
pub fn strokes_score(json: &str) -> Result<String, String> {
    let s = ske_score(&Sketch::from_stroke3(&parse_strokes(json)?, ""));
    serde_json::to_string(&s).map_err(|e| e.to_string())
}

/// A small SkeGAN that trains on the procedural box corpus in the page,
/// or a model loaded from checkpoint bytes.
pub struct Studio {
    trainer: Option<(SkeganTrainer, Vec<Sketch>)>,
    model: TrainedModel,
    rng: Rng,
}

impl Studio {
    pub fn toy(seed: u64) -> Result<Self, String> {
        let raw = toy_corpus(200, &mut seeded_rng(seed)).map_err(|e| e.to_string())?;
        let data = normalize_offsets(&raw).map_err(|e| e.to_string())?;
        let cfg = SkeganConfig {
            generator: GeneratorConfig { hidden: 32, mixtures: 5, recurrent_dropout: 0.0 },
            disc_hidden: 8,
            ..SkeganConfig::toy()
        };
        let trainer = SkeganTrainer::new(SkeganModel::new(cfg, seed).map_err(|e| e.to_string())?, data.n_max, seed);
        let model = TrainedModel {
            model: Model::Skegan(trainer.model.clone()),
            n_max: data.n_max,
            offset_scale: data.offset_scale,
            category: "box".into(),
        };
        Ok(Self { trainer: Some((trainer, data.sketches)), model, rng: seeded_rng(seed ^ 0xdead_beef) })
    }

    pub fn from_checkpoint(bytes: &[u8], seed: u64) -> Result<Self, String> {
        let model = Checkpoint::from_bytes(bytes).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
        Ok(Self { trainer: None, model, rng: seeded_rng(seed) })
    }

    /// Runs `steps` likelihood steps and returns the last batch L_R.
    pub fn train(&mut self, steps: usize) -> Result<f64, String> {
        let (t, data) = self.trainer.as_mut().ok_or("a loaded checkpoint cannot be trained here")?;
        let mut last = f64::NAN;
        for _ in 0..steps {
            last = t.pretrain_generator_step(data).map_err(|e| e.to_string())?[2];
        }
        self.model.model = Model::Skegan(t.model.clone());
        Ok(last)
    }

    pub fn iterations(&self) -> usize {
        self.trainer.as_ref().map_or(0, |(t, _)| t.counters.pretrain_g)
    }

    pub fn n_max(&self) -> usize {
        self.model.n_max
    }

    pub fn offset_scale(&self) -> f64 {
        self.model.offset_scale
    }

    pub fn sample_svg(&mut self, count: usize, columns: usize, tau: f64) -> Result<String, String> {
        let sketches = self.model.sample(count, temperature(tau)?, &mut self.rng).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<Sketch>> = sketches.chunks(columns.max(1)).map(<[Sketch]>::to_vec).collect();
        Ok(render_grid(&rows, 120.0, 2.0))
    }

    /// Completes a stroke-3 prefix given as JSON; returns the full drawing as JSON.
    pub fn complete(&mut self, json: &str, tau: f64) -> Result<String, String> {
        let prefix = parse_strokes(json)?;
        if prefix.is_empty() {
            return Err("draw something first".into());
        }
        let done = self.model.complete_strokes(&prefix, temperature(tau)?, &mut self.rng).map_err(|e| e.to_string())?;
        serde_json::to_string(&done).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen(js_name = renderStrokes)]
pub fn render_strokes(json: &str, highlight_from: Option<usize>, size: f64) -> Result<String, JsError> {
    strokes_svg(json, highlight_from, size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = skeScore)]
pub fn ske_score_json(json: &str) -> Result<String, JsError> {
    strokes_score(json).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct Demo(Studio);

#[wasm_bindgen]
impl Demo {
    /// Untrained tiny model over the box corpus.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsError> {
        Studio::toy(seed).map(Demo).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = fromCheckpoint)]
    pub fn from_checkpoint(bytes: &[u8], seed: u64) -> Result<Demo, JsError> {
        Studio::from_checkpoint(bytes, seed).map(Demo).map_err(|e| JsError::new(&e))
    }

    pub fn train(&mut self, steps: usize) -> Result<f64, JsError> {
        self.0.train(steps).map_err(|e| JsError::new(&e))
    }

    pub fn iterations(&self) -> usize {
        self.0.iterations()
    }

    #[wasm_bindgen(js_name = nMax)]
    pub fn n_max(&self) -> usize {
        self.0.n_max()
    }

    #[wasm_bindgen(js_name = offsetScale)]
    pub fn offset_scale(&self) -> f64 {
        self.0.offset_scale()
    }

    #[wasm_bindgen(js_name = sampleSvg)]
    pub fn sample_svg(&mut self, count: usize, columns: usize, tau: f64) -> Result<String, JsError> {
        self.0.sample_svg(count, columns, tau).map_err(|e| JsError::new(&e))
    }

    pub fn complete(&mut self, json: &str, tau: f64) -> Result<String, JsError> {
        self.0.complete(json, tau).map_err(|e| JsError::new(&e))
    }
}
