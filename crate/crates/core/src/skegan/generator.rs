//! Coupled generator: an offset LSTM and a pen-state LSTM whose states are
//! blended by learned update gates.

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::heads::{gmm_params_from, pen_probs_from, sample_categorical, sample_point, softmax, Temperature};
use crate::batch::{column, repeat_col, SequenceBatch};
use crate::nn::{dropout_mask, Graph, Linear, LstmCell, ParamId, ParamStore, Tensor, Var};
use crate::stroke::{PenState, Sketch, StrokePoint5};
use crate::{Error, Real, Result};

/// Densities below this are floored before taking the log.
pub const DENSITY_FLOOR: f64 = 1e-20;
/// Lower bound on `1 - rho^2` inside the bivariate density and sampler.
pub const CORRELATION_FLOOR: Real = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub mixtures: usize,
    pub recurrent_dropout: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledGenerator {
    pub offset_core: LstmCell,
    pub pen_core: LstmCell,
    pub gate_h: Linear,
    pub gate_c: Linear,
    pub offset_head: Linear,
    pub pen_head: Linear,
    pub config: GeneratorConfig,
}

/// Recurrent state on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub h_offset: Var,
    pub c_offset: Var,
    pub h_pen: Var,
    pub c_pen: Var,
}

/// Detached recurrent state `(h~, c~, h^, c^)`, one row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledGenState {
    pub h_offset: Tensor,
    pub c_offset: Tensor,
    pub h_pen: Tensor,
    pub c_pen: Tensor,
}

impl CoupledGenState {
    pub fn zeros(rows: usize, hidden: usize) -> Self {
        let z = Array2::zeros((rows, hidden));
        Self { h_offset: z.clone(), c_offset: z.clone(), h_pen: z.clone(), c_pen: z }
    }

    pub fn rows(&self) -> usize {
        self.h_offset.nrows()
    }

    pub fn to_graph(&self, g: &mut Graph) -> GraphState {
        GraphState {
            h_offset: g.constant(self.h_offset.clone()),
            c_offset: g.constant(self.c_offset.clone()),
            h_pen: g.constant(self.h_pen.clone()),
            c_pen: g.constant(self.c_pen.clone()),
        }
    }

    pub fn from_graph(g: &Graph, s: &GraphState) -> Self {
        Self {
            h_offset: g.value(s.h_offset).clone(),
            c_offset: g.value(s.c_offset).clone(),
            h_pen: g.value(s.h_pen).clone(),
            c_pen: g.value(s.c_pen).clone(),
        }
    }

    /// New state whose row `i` is row `rows[i]` of `self`.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |t: &Tensor| Array2::from_shape_fn((rows.len(), t.ncols()), |(r, c)| t[[rows[r], c]]);
        Self { h_offset: pick(&self.h_offset), c_offset: pick(&self.c_offset), h_pen: pick(&self.h_pen), c_pen: pick(&self.c_pen) }
    }

    pub fn is_finite(&self) -> bool {
        [&self.h_offset, &self.c_offset, &self.h_pen, &self.c_pen].iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Raw offset head, `[rows, 6M]`.
    pub y_offset: Var,
    /// Raw pen head, `[rows, 3]`.
    pub y_pen: Var,
    pub state: GraphState,
}

#[derive(Clone, Copy, Debug)]
pub struct DropoutMasks {
    pub offset: Var,
    pub pen: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ReconstructionLoss {
    pub ls: Var,
    pub lp: Var,
    pub lr: Var,
}

impl CoupledGenerator {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        let h = config.hidden;
        let m = config.mixtures;
        if h == 0 || m == 0 {
            return Err(Error::InvalidArgument("generator sizes must be positive".into()));
        }
        Ok(Self {
            offset_core: LstmCell::new(store, &format!("{prefix}.offset_core"), 5, h, rng)?,
            pen_core: LstmCell::new(store, &format!("{prefix}.pen_core"), 5, h, rng)?,
            gate_h: Linear::new(store, &format!("{prefix}.gate_h"), 2 * h, h, rng)?,
            gate_c: Linear::new(store, &format!("{prefix}.gate_c"), 2 * h, h, rng)?,
            offset_head: Linear::new(store, &format!("{prefix}.offset_head"), h, 6 * m, rng)?,
            pen_head: Linear::new(store, &format!("{prefix}.pen_head"), h, 3, rng)?,
            config,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn mixtures(&self) -> usize {
        self.config.mixtures
    }

    /// Offset-generator parameters (gamma).
    pub fn offset_params(&self) -> Vec<ParamId> {
        let mut p = self.offset_core.params();
        p.extend(self.offset_head.params());
        p
    }

    /// Pen-state generator parameters including the coupling gates (theta).
    pub fn pen_params(&self) -> Vec<ParamId> {
        let mut p = self.pen_core.params();
        p.extend(self.gate_h.params());
        p.extend(self.gate_c.params());
        p.extend(self.pen_head.params());
        p
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.offset_params();
        p.extend(self.pen_params());
        p
    }

    pub fn initial_state(&self, g: &mut Graph, rows: usize) -> GraphState {
        CoupledGenState::zeros(rows, self.hidden()).to_graph(g)
    }

    /// Per-sequence recurrent-dropout masks, `None` when dropout is disabled.
    pub fn sample_dropout<R: Rng>(&self, g: &mut Graph, rows: usize, rng: &mut R) -> Option<DropoutMasks> {
        let p = self.config.recurrent_dropout as Real;
        if p <= 0.0 {
            return None;
        }
        let offset = g.constant(dropout_mask(rows, self.hidden(), p, rng));
        let pen = g.constant(dropout_mask(rows, self.hidden(), p, rng));
        Some(DropoutMasks { offset, pen })
    }

    /// `gate * a + (1 - gate) * b` with `gate = sigmoid(W [a, b] + b)`.
    fn couple(&self, g: &mut Graph, store: &ParamStore, gate: &Linear, a: Var, b: Var) -> Var {
        let cat = g.concat_cols(&[a, b]);
        let z = gate.forward(g, store, cat);
        let w = g.sigmoid(z);
        let keep = g.one_minus(w);
        let from_a = g.mul(w, a);
        let from_b = g.mul(keep, b);
        g.add(from_a, from_b)
    }

    /// One coupled step: both cores read `x`, then the pen state is blended
    /// with the offset core's fresh state.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, s: GraphState, masks: Option<DropoutMasks>) -> StepOutput {
        let (h_offset, c_offset) = self.offset_core.step(g, store, x, s.h_offset, s.c_offset, masks.map(|m| m.offset));
        let (h_bar, c_bar) = self.pen_core.step(g, store, x, s.h_pen, s.c_pen, masks.map(|m| m.pen));
        let h_pen = self.couple(g, store, &self.gate_h, h_offset, h_bar);
        let c_pen = self.couple(g, store, &self.gate_c, c_offset, c_bar);
        let y_offset = self.offset_head.forward(g, store, h_offset);
        let y_pen = self.pen_head.forward(g, store, h_pen);
        StepOutput { y_offset, y_pen, state: GraphState { h_offset, c_offset, h_pen, c_pen } }
    }

    /// Teacher-forced `(L_s, L_p, L_R)`, each normalized by the number of
    /// target steps and averaged over the batch.
    pub fn reconstruction_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &SequenceBatch,
        masks: Option<DropoutMasks>,
    ) -> ReconstructionLoss {
        let m = self.mixtures();
        let mut state = self.initial_state(g, batch.batch);
        let mut ll_terms = Vec::with_capacity(batch.steps());
        let mut pen_terms = Vec::with_capacity(batch.steps());
        for t in 0..batch.steps() {
            let x = g.constant(batch.inputs[t].clone());
            let out = self.step(g, store, x, state, masks);
            state = out.state;
            let target = &batch.targets[t];
            let tx = target.slice(s![.., 0..1]).to_owned();
            let ty = target.slice(s![.., 1..2]).to_owned();
            let ll = gmm_log_likelihood(g, out.y_offset, &tx, &ty, m);
            let mask = g.constant(batch.real_mask[t].clone());
            let ll = g.mul(ll, mask);
            ll_terms.push(g.sum(ll));
            let log_q = g.log_softmax(out.y_pen);
            let p = g.constant(target.slice(s![.., 2..5]).to_owned());
            let picked = g.mul(p, log_q);
            pen_terms.push(g.sum(picked));
        }
        let norm = -1.0 / (batch.steps() * batch.batch) as Real;
        let ll = sum_all(g, &ll_terms);
        let ls = g.scale(ll, norm);
        let pen = sum_all(g, &pen_terms);
        let lp = g.scale(pen, norm);
        let lr = g.add(ls, lp);
        ReconstructionLoss { ls, lp, lr }
    }

    /// Log pen-state probabilities at every step of a teacher-forced pass.
    pub fn pen_log_probs(&self, g: &mut Graph, store: &ParamStore, inputs: &[Tensor]) -> Vec<Var> {
        let rows = inputs.first().map_or(0, |t| t.nrows());
        let mut state = self.initial_state(g, rows);
        inputs
            .iter()
            .map(|x| {
                let x = g.constant(x.clone());
                let out = self.step(g, store, x, state, None);
                state = out.state;
                g.log_softmax(out.y_pen)
            })
            .collect()
    }

    /// One detached step evaluated on a fresh tape.
    pub fn step_detached(&self, store: &ParamStore, x: &Tensor, state: &CoupledGenState) -> Result<(Tensor, Tensor, CoupledGenState)> {
        let mut g = Graph::new();
        let s = state.to_graph(&mut g);
        let xv = g.constant(x.clone());
        let out = self.step(&mut g, store, xv, s, None);
        g.check()?;
        Ok((g.value(out.y_offset).clone(), g.value(out.y_pen).clone(), CoupledGenState::from_graph(&g, &out.state)))
    }

    /// Teacher-forced states: element `k` is the state after reading `inputs[..k]`.
    pub fn condition(&self, store: &ParamStore, inputs: &[Tensor]) -> Result<Vec<CoupledGenState>> {
        let rows = inputs.first().map_or(0, |t| t.nrows());
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(CoupledGenState::zeros(rows, self.hidden()));
        for x in inputs {
            let (_, _, next) = self.step_detached(store, x, states.last().expect("non-empty"))?;
            states.push(next);
        }
        Ok(states)
    }

    /// Free-running sampling. Row `r` starts from `state` with next input
    /// `x.row(r)` and stops after emitting an end token. After `budgets[r]` drawn
    /// tuples one more step is taken, kept only if it is the end token.
    pub fn sample_continuations<R: Rng>(
        &self,
        store: &ParamStore,
        state: CoupledGenState,
        x: Tensor,
        budgets: &[usize],
        tau: Temperature,
        rng: &mut R,
    ) -> Result<Vec<Vec<StrokePoint5>>> {
        let rows = budgets.len();
        if state.rows() != rows || x.nrows() != rows {
            return Err(Error::Shape { op: "sample_continuations", detail: format!("{} budgets, {} state rows, {} inputs", rows, state.rows(), x.nrows()) });
        }
        let mut out = vec![Vec::new(); rows];
        let mut done = vec![false; rows];
        let (mut state, mut x) = (state, x);
        while done.iter().any(|d| !d) {
            let (y_off, y_pen, next) = self.step_detached(store, &x, &state)?;
            state = next;
            for r in 0..rows {
                if done[r] {
                    continue;
                }
                let p = sample_from_heads(y_off.row(r), y_pen.row(r), tau, rng)?;
                if out[r].len() >= budgets[r] {
                    if p.pen == PenState::End {
                        out[r].push(StrokePoint5::END);
                    }
                    done[r] = true;
                } else {
                    out[r].push(p);
                    done[r] = p.pen == PenState::End;
                }
                x.row_mut(r).assign(&ndarray::arr1(&p.to_array()));
            }
        }
        Ok(out)
    }

    /// Unconditional sample of at most `n_max` drawn tuples plus the end token, starting from `S0`.
    pub fn generate<R: Rng>(&self, store: &ParamStore, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Sketch> {
        Ok(self.generate_batch(store, 1, tau, n_max, rng)?.pop().expect("one sketch"))
    }

    pub fn generate_batch<R: Rng>(&self, store: &ParamStore, count: usize, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Vec<Sketch>> {
        let x = Array2::from_shape_fn((count, 5), |(_, k)| StrokePoint5::START.to_array()[k]);
        let seqs = self.sample_continuations(store, CoupledGenState::zeros(count, self.hidden()), x, &vec![n_max; count], tau, rng)?;
        Ok(seqs.into_iter().map(|p| Sketch::new(p, "")).collect())
    }

    /// Conditions on `S0` and the real points of `partial`, then samples the
    /// remainder. The returned sketch starts with `partial`'s points unchanged.
    pub fn complete<R: Rng>(&self, store: &ParamStore, partial: &Sketch, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Sketch> {
        let prefix = partial.real_points();
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("cannot complete an empty sketch".into()));
        }
        if prefix.len() > n_max {
            return Err(Error::TooLong { len: prefix.len(), n_max });
        }
        let mut points = prefix.to_vec();
        let mut inputs = vec![crate::batch::points_tensor(&[StrokePoint5::START])];
        inputs.extend(prefix[..prefix.len() - 1].iter().map(|p| crate::batch::points_tensor(&[*p])));
        let state = self.condition(store, &inputs)?.pop().expect("non-empty");
        let x = crate::batch::points_tensor(&prefix[prefix.len() - 1..]);
        let tail = self.sample_continuations(store, state, x, &[n_max - prefix.len()], tau, rng)?;
        points.extend(tail.into_iter().flatten());
        Ok(Sketch::new(points, partial.label.clone()))
    }

    /// Free-running generation on the tape with reparameterized offsets:
    /// component choice and pen states are sampled constants, offsets are
    /// `mu + L eps` with fixed noise. Returns `n_max + 1` tokens of `[rows, 5]`;
    /// every token after a sampled end is the padding tuple.
    pub fn free_running_reparam<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rows: usize,
        n_max: usize,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let m = self.mixtures();
        let mut state = self.initial_state(g, rows);
        let mut x = g.constant(Array2::from_shape_fn((rows, 5), |(_, k)| StrokePoint5::START.to_array()[k]));
        let mut alive = vec![true; rows];
        let mut tokens = Vec::with_capacity(n_max + 1);
        for _ in 0..n_max {
            let out = self.step(g, store, x, state, None);
            state = out.state;
            g.check()?;
            let y_off = g.value(out.y_offset).clone();
            let y_pen = g.value(out.y_pen).clone();
            let mut comp = vec![0usize; rows];
            let mut e1 = vec![0.0; rows];
            let mut e2 = vec![0.0; rows];
            let mut keep = vec![0.0; rows];
            let mut pens = Array2::zeros((rows, 3));
            for r in 0..rows {
                let pi = softmax(&y_off.row(r).slice(s![0..m]).to_vec());
                comp[r] = sample_categorical(&pi, rng);
                e1[r] = StandardNormal.sample(rng);
                e2[r] = StandardNormal.sample(rng);
                let q = softmax(&y_pen.row(r).to_vec());
                let pen = if alive[r] { PenState::ALL[sample_categorical(&q, rng)] } else { PenState::End };
                if pen == PenState::End {
                    alive[r] = false;
                } else {
                    keep[r] = 1.0;
                }
                pens.row_mut(r).assign(&ndarray::arr1(&pen.one_hot()));
            }
            let block = |g: &mut Graph, k: usize| {
                let b = g.slice_cols(out.y_offset, k * m, m);
                g.gather_cols(b, &comp)
            };
            let mux = block(g, 1);
            let muy = block(g, 2);
            let lsx = block(g, 3);
            let lsy = block(g, 4);
            let rr = block(g, 5);
            let sx = g.exp(lsx);
            let sy = g.exp(lsy);
            let rho = g.tanh(rr);
            let e1v = g.constant(column(&e1.iter().map(|&v: &f64| v as Real).collect::<Vec<_>>()));
            let e2v = g.constant(column(&e2.iter().map(|&v: &f64| v as Real).collect::<Vec<_>>()));
            let nx = g.mul(sx, e1v);
            let dx = g.add(mux, nx);
            let rho2 = g.square(rho);
            let omr = g.one_minus(rho2);
            let omr = g.clamp_min(omr, CORRELATION_FLOOR);
            let root = g.sqrt(omr);
            let a = g.mul(rho, e1v);
            let b = g.mul(root, e2v);
            let mix = g.add(a, b);
            let ny = g.mul(sy, mix);
            let dy = g.add(muy, ny);
            let keep = g.constant(column(&keep));
            let dx = g.mul(dx, keep);
            let dy = g.mul(dy, keep);
            let pens = g.constant(pens);
            let token = g.concat_cols(&[dx, dy, pens]);
            tokens.push(token);
            x = token;
        }
        tokens.push(g.constant(Array2::from_shape_fn((rows, 5), |(_, k)| StrokePoint5::END.to_array()[k])));
        Ok(tokens)
    }
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

/// Samples one tuple from raw head rows.
pub fn sample_from_heads<R: Rng>(y_offset: ArrayView1<Real>, y_pen: ArrayView1<Real>, tau: Temperature, rng: &mut R) -> Result<StrokePoint5> {
    let gmm = gmm_params_from(y_offset.as_slice().expect("contiguous row"), tau)?;
    let pen = pen_probs_from(y_pen.as_slice().expect("contiguous row"), tau)?;
    let p = sample_point(&gmm, &pen, rng);
    Ok(if p.pen == PenState::End { StrokePoint5::END } else { p })
}

/// Row-wise log of the mixture density at the targets, floored at
/// `ln(DENSITY_FLOOR)`, shape `[rows, 1]`. `y_offset` uses the blocked layout.
pub fn gmm_log_likelihood(g: &mut Graph, y_offset: Var, target_x: &Tensor, target_y: &Tensor, m: usize) -> Var {
    let logits = g.slice_cols(y_offset, 0, m);
    let log_pi = g.log_softmax(logits);
    let mux = g.slice_cols(y_offset, m, m);
    let muy = g.slice_cols(y_offset, 2 * m, m);
    let lsx = g.slice_cols(y_offset, 3 * m, m);
    let lsy = g.slice_cols(y_offset, 4 * m, m);
    let rr = g.slice_cols(y_offset, 5 * m, m);
    let rho = g.tanh(rr);
    let x = g.constant(repeat_col(target_x, m));
    let y = g.constant(repeat_col(target_y, m));
    let zx = standardize(g, x, mux, lsx);
    let zy = standardize(g, y, muy, lsy);
    let rho2 = g.square(rho);
    let omr = g.one_minus(rho2);
    let omr = g.clamp_min(omr, CORRELATION_FLOOR);
    let zx2 = g.square(zx);
    let zy2 = g.square(zy);
    let rz = g.mul(rho, zx);
    let rzz = g.mul(rz, zy);
    let cross = g.scale(rzz, -2.0);
    let sq = g.add(zx2, zy2);
    let z = g.add(sq, cross);
    let log_omr = g.ln(omr);
    let neg_log_omr = g.neg(log_omr);
    let inv_omr = g.exp(neg_log_omr);
    let zq = g.mul(z, inv_omr);
    let quad = g.scale(zq, -0.5);
    let log_sigma = g.add(lsx, lsy);
    let neg_log_sigma = g.neg(log_sigma);
    let norm = g.offset(neg_log_sigma, -(2.0 * std::f64::consts::PI).ln() as Real);
    let half = g.scale(log_omr, -0.5);
    let norm = g.add(norm, half);
    let log_n = g.add(norm, quad);
    let comp = g.add(log_pi, log_n);
    let ll = g.logsumexp(comp);
    g.clamp_min(ll, DENSITY_FLOOR.ln() as Real)
}

fn standardize(g: &mut Graph, v: Var, mu: Var, log_sigma: Var) -> Var {
    let d = g.sub(v, mu);
    let neg = g.neg(log_sigma);
    let inv = g.exp(neg);
    g.mul(d, inv)
}
