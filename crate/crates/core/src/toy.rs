//! Procedural toy corpus: an open box drawn as two strokes plus a lifted diagonal.
//!
//! Every sketch has the same pen sequence, so its Ske-score is known exactly.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::stroke::{SketchDataset, Sketch, StrokePoint3};
use crate::{Real, Result};

/// Lift flags of the seven points: top, right (lift), move, left, bottom (lift),
/// move, diagonal (lift).
const LIFTS: [bool; 7] = [false, true, false, false, true, false, true];

/// Ske-score of every toy sketch: 3 lifts over 4 on-paper points.
pub const TOY_SKE_SCORE: Real = 0.75;

pub fn box_with_diagonal<R: Rng>(rng: &mut R) -> Sketch {
    let w: Real = rng.random_range(0.6..1.4) as Real;
    let h: Real = rng.random_range(0.6..1.4) as Real;
    let jitter = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut j = || jitter.sample(rng) as Real;
    let offsets = [(w, 0.0), (0.0, h), (-w, -h), (0.0, h), (w, 0.0), (-w, -h), (w, h)];
    let points: Vec<StrokePoint3> = offsets.iter().zip(LIFTS).map(|(&(dx, dy), lift)| StrokePoint3::new(dx + j(), dy + j(), lift)).collect();
    Sketch::from_stroke3(&points, "box")
}

/// `count` toy sketches (not normalized).
pub fn toy_corpus<R: Rng>(count: usize, rng: &mut R) -> Result<SketchDataset> {
    SketchDataset::new((0..count).map(|_| box_with_diagonal(rng)).collect())
}
