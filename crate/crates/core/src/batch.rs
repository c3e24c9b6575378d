//! Fixed-length tensor layouts for batches of sketches.

use ndarray::Array2;

use crate::nn::Tensor;
use crate::stroke::{PenState, Sketch, StrokePoint5};
use crate::Real;

/// Teacher-forcing layout over `steps = n_max + 1` positions: inputs are
/// `S0, p1, .., p_{n_max}` and targets are `p1, .., p_{n_max + 1}` (padded).
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<Tensor>,
    /// `[batch, 1]` per step: 1 where the target is a real (pre-end) point.
    pub real_mask: Vec<Tensor>,
    pub batch: usize,
}

impl SequenceBatch {
    pub fn new(sketches: &[&Sketch], n_max: usize) -> Self {
        let steps = n_max + 1;
        let padded: Vec<Vec<StrokePoint5>> = sketches.iter().map(|s| s.padded(steps)).collect();
        let b = sketches.len();
        let mut inputs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        let mut real_mask = Vec::with_capacity(steps);
        for t in 0..steps {
            inputs.push(Array2::from_shape_fn((b, 5), |(r, k)| {
                if t == 0 { StrokePoint5::START.to_array()[k] } else { padded[r][t - 1].to_array()[k] }
            }));
            targets.push(Array2::from_shape_fn((b, 5), |(r, k)| padded[r][t].to_array()[k]));
            real_mask.push(Array2::from_shape_fn((b, 1), |(r, _)| {
                if padded[r][t].pen == PenState::End { 0.0 } else { 1.0 }
            }));
        }
        Self { inputs, targets, real_mask, batch: b }
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Discriminator layout: `S0` followed by the sketch padded to `n_max + 1`,
/// one `[batch, 5]` tensor per step.
pub fn discriminator_inputs(sketches: &[&Sketch], n_max: usize) -> Vec<Tensor> {
    let padded: Vec<Vec<StrokePoint5>> = sketches.iter().map(|s| s.padded(n_max + 1)).collect();
    let b = sketches.len();
    let mut out = Vec::with_capacity(n_max + 2);
    out.push(Array2::from_shape_fn((b, 5), |(_, k)| StrokePoint5::START.to_array()[k]));
    for t in 0..=n_max {
        out.push(Array2::from_shape_fn((b, 5), |(r, k)| padded[r][t].to_array()[k]));
    }
    out
}

/// `[rows, 5]` tensor of points.
pub fn points_tensor(points: &[StrokePoint5]) -> Tensor {
    Array2::from_shape_fn((points.len(), 5), |(r, k)| points[r].to_array()[k])
}

/// Repeats a `[rows, 1]` column `cols` times.
pub fn repeat_col(col: &Tensor, cols: usize) -> Tensor {
    Array2::from_shape_fn((col.nrows(), cols), |(r, _)| col[[r, 0]])
}

pub fn column(values: &[Real]) -> Tensor {
    Array2::from_shape_fn((values.len(), 1), |(r, _)| values[r])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stroke::StrokePoint3;

    #[test]
    fn teacher_forcing_layout() {
        let s = Sketch::from_stroke3(&[StrokePoint3::new(1.0, 2.0, false), StrokePoint3::new(3.0, 4.0, true)], "");
        let b = SequenceBatch::new(&[&s], 3);
        assert_eq!(b.steps(), 4);
        assert_eq!(b.inputs[0].row(0).to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.inputs[1].row(0).to_vec(), vec![1.0, 2.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.targets[1].row(0).to_vec(), vec![3.0, 4.0, 0.0, 1.0, 0.0]);
        assert_eq!(b.targets[2].row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        let mask: Vec<Real> = b.real_mask.iter().map(|m| m[[0, 0]]).collect();
        assert_eq!(mask, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn discriminator_layout_prepends_start() {
        let s = Sketch::from_stroke3(&[StrokePoint3::new(1.0, 2.0, true)], "");
        let d = discriminator_inputs(&[&s, &s], 2);
        assert_eq!(d.len(), 4);
        assert_eq!(d[0].row(1).to_vec(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(d[1].row(0).to_vec(), vec![1.0, 2.0, 0.0, 1.0, 0.0]);
        assert_eq!(d[3].row(0).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
