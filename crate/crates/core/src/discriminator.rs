//! Sequence discriminators and labeled real/fake batches.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::discriminator_inputs;
use crate::nn::{BiLstm, Graph, GruCell, Linear, LstmCell, ParamId, ParamStore, Tensor, Var};
use crate::stroke::Sketch;
use crate::{Error, Real, Result};

/// Column of the "real" class in the discriminator's two logits.
pub const REAL: usize = 0;
pub const FAKE: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorOutput {
    pub p_real: Real,
    pub p_fake: Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorKind {
    /// Final forward and backward states concatenated.
    BiLstm,
    Gru,
    Lstm,
}

impl std::str::FromStr for DiscriminatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilstm" | "bi-lstm" => Ok(Self::BiLstm),
            "gru" => Ok(Self::Gru),
            "lstm" => Ok(Self::Lstm),
            other => Err(Error::InvalidArgument(format!("unknown discriminator kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Core {
    BiLstm(BiLstm),
    Gru(GruCell),
    Lstm(LstmCell),
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    core: Core,
    pub head: Linear,
    pub kind: DiscriminatorKind,
    pub hidden: usize,
}

impl Discriminator {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, kind: DiscriminatorKind, hidden: usize, rng: &mut R) -> Result<Self> {
        let core_name = format!("{prefix}.core");
        let (core, features) = match kind {
            DiscriminatorKind::BiLstm => (Core::BiLstm(BiLstm::new(store, &core_name, 5, hidden, rng)?), 2 * hidden),
            DiscriminatorKind::Gru => (Core::Gru(GruCell::new(store, &core_name, 5, hidden, rng)?), hidden),
            DiscriminatorKind::Lstm => (Core::Lstm(LstmCell::new(store, &core_name, 5, hidden, rng)?), hidden),
        };
        let head = Linear::new(store, &format!("{prefix}.head"), features, 2, rng)?;
        Ok(Self { core, head, kind, hidden })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = match &self.core {
            Core::BiLstm(c) => c.params(),
            Core::Gru(c) => c.params(),
            Core::Lstm(c) => c.params(),
        };
        p.extend(self.head.params());
        p
    }

    /// Class logits `[rows, 2]` for a sequence of `[rows, 5]` steps.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<Var> {
        let rows = seq.first().map_or(0, |&v| g.shape(v).0);
        if rows == 0 {
            return Err(Error::InvalidArgument("discriminator needs a non-empty batch".into()));
        }
        let features = match &self.core {
            Core::BiLstm(c) => {
                let (hf, hb) = c.encode(g, store, seq)?;
                g.concat_cols(&[hf, hb])
            }
            Core::Gru(c) => {
                let mut h = g.zeros(rows, self.hidden);
                for &x in seq {
                    h = c.step(g, store, x, h, None);
                }
                h
            }
            Core::Lstm(c) => {
                let mut h = g.zeros(rows, self.hidden);
                let mut cs = g.zeros(rows, self.hidden);
                for &x in seq {
                    (h, cs) = c.step(g, store, x, h, cs, None);
                }
                h
            }
        };
        Ok(self.head.forward(g, store, features))
    }

    pub fn log_probs(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<Var> {
        let l = self.logits(g, store, seq)?;
        Ok(g.log_softmax(l))
    }

    pub fn classify(&self, store: &ParamStore, seq: &[Tensor]) -> Result<Vec<DiscriminatorOutput>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
        let lp = self.log_probs(&mut g, store, &vars)?;
        g.check()?;
        Ok(g.value(lp)
            .rows()
            .into_iter()
            .map(|r| DiscriminatorOutput { p_real: r[REAL].exp(), p_fake: r[FAKE].exp() })
            .collect())
    }

    /// `D(x)` read as the probability of being real, for each sketch.
    pub fn score_sketches(&self, store: &ParamStore, sketches: &[&Sketch], n_max: usize) -> Result<Vec<Real>> {
        Ok(self.classify(store, &discriminator_inputs(sketches, n_max))?.into_iter().map(|o| o.p_real).collect())
    }

    /// Mean negative log-likelihood of the labels (binary cross-entropy).
    pub fn nll(&self, g: &mut Graph, store: &ParamStore, seq: &[Var], real: &[bool]) -> Result<Var> {
        let lp = self.log_probs(g, store, seq)?;
        let idx: Vec<usize> = real.iter().map(|&r| if r { REAL } else { FAKE }).collect();
        let picked = g.gather_cols(lp, &idx);
        let m = g.mean(picked);
        Ok(g.neg(m))
    }

    /// Non-saturating generator loss `-mean ln D_real(seq)`.
    pub fn generator_loss(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<Var> {
        let rows = seq.first().map_or(0, |&v| g.shape(v).0);
        self.nll(g, store, seq, &vec![true; rows])
    }

    /// `BCE(D(fake), 0) + BCE(D(real), 1)`, each a batch mean.
    pub fn adversarial_loss(&self, g: &mut Graph, store: &ParamStore, real: &[Var], fake: &[Var]) -> Result<Var> {
        let rows_real = real.first().map_or(0, |&v| g.shape(v).0);
        let rows_fake = fake.first().map_or(0, |&v| g.shape(v).0);
        let lr = self.nll(g, store, real, &vec![true; rows_real])?;
        let lf = self.nll(g, store, fake, &vec![false; rows_fake])?;
        Ok(g.add(lr, lf))
    }
}

/// Where a batch element came from: an index into the real pool or into the
/// generated fakes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real(usize),
    Fake(usize),
}

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub sketches: Vec<Sketch>,
    pub provenance: Vec<Provenance>,
}

impl LabeledBatch {
    pub fn labels(&self) -> Vec<bool> {
        self.provenance.iter().map(|p| matches!(p, Provenance::Real(_))).collect()
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    pub fn inputs(&self, n_max: usize) -> Vec<Tensor> {
        let refs: Vec<&Sketch> = self.sketches.iter().collect();
        discriminator_inputs(&refs, n_max)
    }
}

/// Half real sketches drawn from `pool`, half produced by `fakes`, shuffled.
pub fn make_adversarial_batch<R, F>(pool: &[Sketch], batch_size: usize, rng: &mut R, mut fakes: F) -> Result<LabeledBatch>
where
    R: Rng,
    F: FnMut(usize, &mut R) -> Result<Vec<Sketch>>,
{
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("adversarial batch size must be even and positive, got {batch_size}")));
    }
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let half = batch_size / 2;
    let real_idx: Vec<usize> = if pool.len() >= half {
        rand::seq::index::sample(rng, pool.len(), half).into_vec()
    } else {
        (0..half).map(|_| rng.random_range(0..pool.len())).collect()
    };
    let fake = fakes(half, rng)?;
    if fake.len() != half {
        return Err(Error::Shape { op: "make_adversarial_batch", detail: format!("asked for {half} fakes, got {}", fake.len()) });
    }
    let mut items: Vec<(Sketch, Provenance)> = real_idx.iter().map(|&i| (pool[i].clone(), Provenance::Real(i))).collect();
    items.extend(fake.into_iter().enumerate().map(|(i, s)| (s, Provenance::Fake(i))));
    items.shuffle(rng);
    let (sketches, provenance) = items.into_iter().unzip();
    Ok(LabeledBatch { sketches, provenance })
}

/// Fraction of outputs whose larger class matches the label.
pub fn accuracy(outputs: &[DiscriminatorOutput], real: &[bool]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let hits = outputs.iter().zip(real).filter(|(o, &r)| (o.p_real > o.p_fake) == r).count();
    hits as f64 / outputs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::seeded_rng;
    use crate::stroke::{StrokePoint3, StrokePoint5};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn disc(kind: DiscriminatorKind, seed: u64) -> (ParamStore, Discriminator) {
        let mut store = ParamStore::new();
        let d = Discriminator::new(&mut store, "disc", kind, 5, &mut seeded_rng(seed)).unwrap();
        (store, d)
    }

    fn random_seq(rows: usize, steps: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = seeded_rng(seed);
        (0..steps).map(|_| Array2::from_shape_simple_fn((rows, 5), || rng.random_range(-3.0..3.0) as Real)).collect()
    }

    const KINDS: [DiscriminatorKind; 3] = [DiscriminatorKind::BiLstm, DiscriminatorKind::Gru, DiscriminatorKind::Lstm];

    #[test]
    fn zero_weights_give_even_odds_and_ln2() {
        for kind in KINDS {
            let (mut store, d) = disc(kind, 1);
            for id in d.params() {
                store.value_mut(id).fill(0.0);
            }
            let seq = random_seq(4, 6, 2);
            for o in d.classify(&store, &seq).unwrap() {
                assert_eq!((o.p_real, o.p_fake), (0.5, 0.5));
            }
            let mut g = Graph::new();
            let vars: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
            let l = d.nll(&mut g, &store, &vars, &[true, false, true, false]).unwrap();
            assert!((g.scalar(l).unwrap() - (2.0 as Real).ln()).abs() < 1e-12);
            let mut g = Graph::new();
            let vars: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
            let l = d.adversarial_loss(&mut g, &store, &vars, &vars).unwrap();
            assert!((g.scalar(l).unwrap() - 2.0 * (2.0 as Real).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        for kind in KINDS {
            let (store, d) = disc(kind, 3);
            let seq = random_seq(3, 5, 4);
            let perm = [2usize, 0, 1];
            let permuted: Vec<Tensor> = seq.iter().map(|t| Array2::from_shape_fn((3, 5), |(r, c)| t[[perm[r], c]])).collect();
            let a = d.classify(&store, &seq).unwrap();
            let b = d.classify(&store, &permuted).unwrap();
            for r in 0..3 {
                assert_eq!(b[r], a[perm[r]]);
            }
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (store, d) = disc(DiscriminatorKind::Gru, 1);
        assert!(d.classify(&store, &[]).is_err());
        assert!(d.classify(&store, &[Array2::zeros((0, 5))]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn outputs_are_probabilities(seed in 0u64..10_000, k in 0usize..3) {
            let (store, d) = disc(KINDS[k], seed);
            let outs = d.classify(&store, &random_seq(3, 4, seed + 1)).unwrap();
            for o in outs {
                prop_assert!(o.p_real > 0.0 && o.p_real < 1.0 && o.p_fake > 0.0 && o.p_fake < 1.0);
                prop_assert!((o.p_real + o.p_fake - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn nll_is_nonnegative(seed in 0u64..10_000, labels in prop::collection::vec(any::<bool>(), 3)) {
            let (store, d) = disc(DiscriminatorKind::BiLstm, seed);
            let mut g = Graph::new();
            let vars: Vec<Var> = random_seq(3, 4, seed).into_iter().map(|t| g.constant(t)).collect();
            let l = d.nll(&mut g, &store, &vars, &labels).unwrap();
            prop_assert!(g.scalar(l).unwrap() >= 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in KINDS {
            let (mut store, d) = disc(kind, 5);
            let seq = random_seq(2, 4, 6);
            let ids = d.params();
            let report = finite_diff_check(
                &mut store,
                &ids,
                |st| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = seq.iter().map(|t| g.constant(t.clone())).collect();
                    let l = d.nll(&mut g, st, &vars, &[true, false])?;
                    Ok((g, l))
                },
                1e-5,
                1e-4,
                Some(10),
            )
            .unwrap();
            assert!(report.passed(), "{kind:?}: {report:?}");
        }
    }

    fn pool(n: usize) -> Vec<Sketch> {
        (0..n).map(|i| Sketch::from_stroke3(&[StrokePoint3::new(i as Real, 0.0, true)], "real")).collect()
    }

    fn fake_maker(count: usize, _: &mut crate::Rng) -> Result<Vec<Sketch>> {
        Ok((0..count).map(|i| Sketch::new(vec![StrokePoint5::new(-(i as Real) - 1.0, 0.0, crate::stroke::PenState::Up), StrokePoint5::END], "fake")).collect())
    }

    #[test]
    fn adversarial_batch_is_half_and_half_with_traceable_labels() {
        let real = pool(120);
        let b = make_adversarial_batch(&real, 100, &mut seeded_rng(1), fake_maker).unwrap();
        assert_eq!(b.len(), 100);
        let labels = b.labels();
        assert_eq!(labels.iter().filter(|&&r| r).count(), 50);
        for (s, p) in b.sketches.iter().zip(&b.provenance) {
            match *p {
                Provenance::Real(i) => assert_eq!(s, &real[i]),
                Provenance::Fake(i) => assert_eq!(s.points[0].dx, -(i as Real) - 1.0),
            }
        }
        // shuffled: not all reals first
        assert!(labels[..50].iter().any(|&r| !r));
    }

    #[test]
    fn adversarial_batch_is_reproducible_and_even() {
        let real = pool(10);
        let a = make_adversarial_batch(&real, 8, &mut seeded_rng(2), fake_maker).unwrap();
        let b = make_adversarial_batch(&real, 8, &mut seeded_rng(2), fake_maker).unwrap();
        assert_eq!(a.provenance, b.provenance);
        assert!(make_adversarial_batch(&real, 7, &mut seeded_rng(2), fake_maker).is_err());
        // smaller pool than half a batch still fills it
        let small = make_adversarial_batch(&real[..2], 8, &mut seeded_rng(2), fake_maker).unwrap();
        assert_eq!(small.labels().iter().filter(|&&r| r).count(), 4);
    }

    #[test]
    fn accuracy_counts_matches() {
        let o = [DiscriminatorOutput { p_real: 0.9, p_fake: 0.1 }, DiscriminatorOutput { p_real: 0.3, p_fake: 0.7 }];
        assert_eq!(accuracy(&o, &[true, true]), 0.5);
        assert_eq!(accuracy(&o, &[true, false]), 1.0);
    }
}
