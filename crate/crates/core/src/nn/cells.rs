//! LSTM, GRU and bidirectional-LSTM cells built on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Lstm,
    Gru,
    BidirectionalLstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentCellSpec {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
}

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let w = store.add_glorot(format!("{name}.w"), input, output, rng)?;
        let b = store.add_filled(format!("{name}.b"), 1, output, 0.0)?;
        Ok(Self { w, b, input, output })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Standard LSTM with gate layout `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let wx = store.add_glorot(format!("{name}.wx"), input, 4 * hidden, rng)?;
        let wh = store.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng)?;
        let b = store.add_filled(format!("{name}.b"), 1, 4 * hidden, 0.0)?;
        // forget-gate bias starts at 1
        store.value_mut(b).slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        Ok(Self { wx, wh, b, input, hidden })
    }

    pub fn spec(&self) -> RecurrentCellSpec {
        RecurrentCellSpec { kind: CellKind::Lstm, input: self.input, hidden: self.hidden }
    }

    /// One step. `dropout_mask`, if given, multiplies the candidate update
    /// (recurrent dropout that leaves the memory path intact).
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var, dropout_mask: Option<Var>) -> (Var, Var) {
        let hs = self.hidden;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, wx);
        let hw = g.matmul(h, wh);
        let pre = g.add(xw, hw);
        let pre = g.add_row(pre, b);
        let i = g.slice_cols(pre, 0, hs);
        let f = g.slice_cols(pre, hs, hs);
        let cand = g.slice_cols(pre, 2 * hs, hs);
        let o = g.slice_cols(pre, 3 * hs, hs);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let mut cand = g.tanh(cand);
        if let Some(m) = dropout_mask {
            cand = g.mul(cand, m);
        }
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }
}

/// GRU: `r`, `z` gates and candidate `n = tanh(x Wn + r * (h Un) + b)`,
/// `h' = (1 - z) * n + z * h`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let wx = store.add_glorot(format!("{name}.wx"), input, 3 * hidden, rng)?;
        let wh = store.add_glorot(format!("{name}.wh"), hidden, 3 * hidden, rng)?;
        let b = store.add_filled(format!("{name}.b"), 1, 3 * hidden, 0.0)?;
        Ok(Self { wx, wh, b, input, hidden })
    }

    pub fn spec(&self) -> RecurrentCellSpec {
        RecurrentCellSpec { kind: CellKind::Gru, input: self.input, hidden: self.hidden }
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, dropout_mask: Option<Var>) -> Var {
        let hs = self.hidden;
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, wx);
        let xw = g.add_row(xw, b);
        let hw = g.matmul(h, wh);
        let xr = g.slice_cols(xw, 0, hs);
        let xz = g.slice_cols(xw, hs, hs);
        let xn = g.slice_cols(xw, 2 * hs, hs);
        let hr = g.slice_cols(hw, 0, hs);
        let hz = g.slice_cols(hw, hs, hs);
        let hn = g.slice_cols(hw, 2 * hs, hs);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let mut n = g.tanh(n);
        if let Some(m) = dropout_mask {
            n = g.mul(n, m);
        }
        let one_minus_z = g.one_minus(z);
        let a = g.mul(one_minus_z, n);
        let bpart = g.mul(z, h);
        g.add(a, bpart)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }
}

/// Two independent LSTMs, one reading the sequence forward and one backward.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: LstmCell::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn spec(&self) -> RecurrentCellSpec {
        RecurrentCellSpec { kind: CellKind::BidirectionalLstm, input: self.forward.input, hidden: self.forward.hidden }
    }

    /// Final hidden states `(forward, backward)`; the backward cell consumes
    /// the reversed sequence.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<(Var, Var)> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("bidirectional encoder needs a non-empty sequence".into()));
        }
        let rows = g.shape(seq[0]).0;
        let run = |g: &mut Graph, cell: &LstmCell, it: &mut dyn Iterator<Item = &Var>| {
            let mut h = g.zeros(rows, cell.hidden);
            let mut c = g.zeros(rows, cell.hidden);
            for &x in it {
                (h, c) = cell.step(g, store, x, h, c, None);
            }
            h
        };
        let hf = run(g, &self.forward, &mut seq.iter());
        let hb = run(g, &self.backward, &mut seq.iter().rev());
        Ok((hf, hb))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }
}

/// Variational recurrent-dropout mask: one Bernoulli keep-mask per sequence,
/// scaled by `1 / (1 - p)`, reused at every step.
pub fn dropout_mask<R: Rng>(rows: usize, cols: usize, p: Real, rng: &mut R) -> super::Tensor {
    let keep = 1.0 - p;
    ndarray::Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < keep as f64 { 1.0 / keep } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::sigmoid;
    use crate::nn::Tensor;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_lstm_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng()).unwrap();
        for id in cell.params() {
            store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.zeros(2, 3);
        let h = g.zeros(2, 4);
        let c = g.zeros(2, 4);
        let (h1, c1) = cell.step(&mut g, &store, x, h, c, None);
        assert!(g.value(h1).iter().all(|&v| v == 0.0));
        assert!(g.value(c1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_hidden_is_bounded() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 6, &mut rng()).unwrap();
        for id in cell.params() {
            store.value_mut(id).mapv_inplace(|v| v * 50.0);
        }
        let mut g = Graph::new();
        let x = g.constant(array![[100.0, -40.0, 3.0]]);
        let mut h = g.zeros(1, 6);
        let mut c = g.zeros(1, 6);
        for _ in 0..5 {
            (h, c) = cell.step(&mut g, &store, x, h, c, None);
            assert!(g.value(h).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn single_unit_lstm_matches_hand_derivation() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 1, 1, &mut rng()).unwrap();
        // gate order i, f, g, o
        store.set_value(cell.wx, array![[0.5, -0.3, 0.8, 0.1]]).unwrap();
        store.set_value(cell.wh, array![[0.2, 0.4, -0.6, 0.7]]).unwrap();
        store.set_value(cell.b, array![[0.1, 1.0, -0.2, 0.05]]).unwrap();
        let (x, h0, c0) = (0.9, -0.4, 0.25);
        let i = sigmoid(0.5 * x + 0.2 * h0 + 0.1);
        let f = sigmoid(-0.3 * x + 0.4 * h0 + 1.0);
        let gg = (0.8 * x - 0.6 * h0 - 0.2).tanh();
        let o = sigmoid(0.1 * x + 0.7 * h0 + 0.05);
        let c1 = f * c0 + i * gg;
        let h1 = o * c1.tanh();

        let mut g = Graph::new();
        let xv = g.constant(array![[x]]);
        let hv = g.constant(array![[h0]]);
        let cv = g.constant(array![[c0]]);
        let (h, c) = cell.step(&mut g, &store, xv, hv, cv, None);
        assert!((g.value(h)[[0, 0]] - h1).abs() < 1e-12);
        assert!((g.value(c)[[0, 0]] - c1).abs() < 1e-12);
    }

    #[test]
    fn zero_gru_keeps_half_of_previous_state() {
        // all-zero weights: z = 0.5, n = 0 -> h' = 0.5 h
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 3, &mut rng()).unwrap();
        for id in cell.params() {
            store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let x = g.zeros(1, 2);
        let h = g.zeros(1, 3);
        let h1 = cell.step(&mut g, &store, x, h, None);
        assert!(g.value(h1).iter().all(|&v| v == 0.0));
        let h = g.constant(array![[0.4, -0.2, 1.0]]);
        let h1 = cell.step(&mut g, &store, x, h, None);
        assert_eq!(g.value(h1), &array![[0.2, -0.1, 0.5]]);
    }

    #[test]
    fn gru_hidden_is_bounded() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 5, &mut rng()).unwrap();
        for id in cell.params() {
            store.value_mut(id).mapv_inplace(|v| v * 3.0);
        }
        let mut g = Graph::new();
        let x = g.constant(array![[1.0, -4.0, 3.0]]);
        let mut h = g.zeros(1, 5);
        for _ in 0..6 {
            h = cell.step(&mut g, &store, x, h, None);
            assert!(g.value(h).iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn single_unit_gru_matches_hand_derivation() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng()).unwrap();
        // column order r, z, n
        store.set_value(cell.wx, array![[0.3, -0.5, 0.9]]).unwrap();
        store.set_value(cell.wh, array![[0.6, 0.2, -0.4]]).unwrap();
        store.set_value(cell.b, array![[0.1, -0.1, 0.2]]).unwrap();
        let (x, h0) = (-0.7, 0.35);
        let r = sigmoid(0.3 * x + 0.1 + 0.6 * h0);
        let z = sigmoid(-0.5 * x - 0.1 + 0.2 * h0);
        let n = (0.9 * x + 0.2 + r * (-0.4 * h0)).tanh();
        let h1 = (1.0 - z) * n + z * h0;

        let mut g = Graph::new();
        let xv = g.constant(array![[x]]);
        let hv = g.constant(array![[h0]]);
        let h = cell.step(&mut g, &store, xv, hv, None);
        assert!((g.value(h)[[0, 0]] - h1).abs() < 1e-12);
    }

    fn seq_consts(g: &mut Graph, rows: &[[Real; 2]]) -> Vec<Var> {
        rows.iter().map(|r| g.constant(Array2::from_shape_vec((1, 2), r.to_vec()).unwrap())).collect()
    }

    #[test]
    fn bilstm_length_one_sees_same_element() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 2, 3, &mut rng()).unwrap();
        for (f, b) in bi.forward.params().into_iter().zip(bi.backward.params()) {
            let v = store.value(f).clone();
            store.set_value(b, v).unwrap();
        }
        let mut g = Graph::new();
        let seq = seq_consts(&mut g, &[[0.3, -1.2]]);
        let (hf, hb) = bi.encode(&mut g, &store, &seq).unwrap();
        assert_eq!(g.value(hf), g.value(hb));
    }

    #[test]
    fn bilstm_palindrome_with_tied_weights_is_symmetric() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 2, 4, &mut rng()).unwrap();
        for (f, b) in bi.forward.params().into_iter().zip(bi.backward.params()) {
            let v = store.value(f).clone();
            store.set_value(b, v).unwrap();
        }
        let mut g = Graph::new();
        let seq = seq_consts(&mut g, &[[0.1, 0.2], [-0.5, 0.9], [1.5, -0.3], [-0.5, 0.9], [0.1, 0.2]]);
        let (hf, hb) = bi.encode(&mut g, &store, &seq).unwrap();
        assert_eq!(g.value(hf), g.value(hb));
    }

    // Independent unrolled loop over plain arrays.
    fn manual_lstm(store: &ParamStore, cell: &LstmCell, seq: &[[Real; 2]]) -> Tensor {
        let hs = cell.hidden;
        let (wx, wh, b) = (store.value(cell.wx), store.value(cell.wh), store.value(cell.b));
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        for x in seq {
            let mut pre = vec![0.0; 4 * hs];
            for j in 0..4 * hs {
                let mut acc = b[[0, j]];
                for k in 0..2 {
                    acc += x[k] * wx[[k, j]];
                }
                for k in 0..hs {
                    acc += h[k] * wh[[k, j]];
                }
                pre[j] = acc;
            }
            for u in 0..hs {
                let i = sigmoid(pre[u]);
                let f = sigmoid(pre[hs + u]);
                let gg = pre[2 * hs + u].tanh();
                let o = sigmoid(pre[3 * hs + u]);
                c[u] = f * c[u] + i * gg;
                h[u] = o * c[u].tanh();
            }
        }
        Array2::from_shape_vec((1, hs), h).unwrap()
    }

    #[test]
    fn bilstm_matches_unrolled_loop() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 2, 5, &mut rng()).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let seq: Vec<[Real; 2]> = (0..5).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
        let mut g = Graph::new();
        let vars = seq_consts(&mut g, &seq);
        let (hf, hb) = bi.encode(&mut g, &store, &vars).unwrap();
        let rev: Vec<_> = seq.iter().rev().cloned().collect();
        let want_f = manual_lstm(&store, &bi.forward, &seq);
        let want_b = manual_lstm(&store, &bi.backward, &rev);
        for (a, b) in g.value(hf).iter().zip(want_f.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in g.value(hb).iter().zip(want_b.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilstm_rejects_empty_sequence() {
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "b", 2, 3, &mut rng()).unwrap();
        assert!(bi.encode(&mut Graph::new(), &store, &[]).is_err());
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let m = dropout_mask(50, 40, 0.1, &mut rng());
        let keep = 1.0 / 0.9;
        assert!(m.iter().all(|&v| v == 0.0 || (v - keep).abs() < 1e-12));
        let frac = m.iter().filter(|&&v| v == 0.0).count() as f64 / 2000.0;
        assert!((frac - 0.1).abs() < 0.03);
    }
}
