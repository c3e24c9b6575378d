//! Minimal differentiable substrate: 2-D tensors on a reverse-mode tape,
//! recurrent cells, optimizers and a finite-difference checker.

pub mod cells;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;

/// Row-major 2-D tensor. Vectors are `[1, n]`; batches are `[batch, n]`.
pub type Tensor = ndarray::Array2<crate::Real>;

pub use cells::{dropout_mask, BiLstm, CellKind, GruCell, Linear, LstmCell, RecurrentCellSpec};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{sigmoid, Graph, Var};
pub use optim::{Adam, LrSchedule, Moments, Optimizer, Sgd};
pub use params::{clip_gradients, ParamId, ParamStore};
