//! Two-stage SkeGAN training: likelihood pre-training of the generator,
//! discriminator pre-training, then adversarial rounds where the pen-state
//! generator follows Monte Carlo policy gradients and the offset generator
//! follows the discriminator through reparameterized samples.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{points_tensor, SequenceBatch};
use crate::discriminator::{accuracy, make_adversarial_batch, Discriminator, DiscriminatorOutput};
use crate::nn::{clip_gradients, Adam, Graph, Optimizer, ParamId, ParamStore, Sgd, Tensor, Var};
use crate::skegan::{CoupledGenerator, SkeganModel, Temperature};
use crate::stroke::{PenState, Sketch, StrokePoint5};
use crate::{seeded_rng, Error, Real, Result, Rng as ChaRng};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: String,
    pub iteration: usize,
    pub round: usize,
    pub lr: f64,
    pub values: BTreeMap<String, f64>,
}

/// In-memory training log with an optional line-delimited JSON sink.
#[derive(Default)]
pub struct Metrics {
    pub records: Vec<MetricRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Metrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metrics").field("records", &self.records.len()).field("sink", &self.sink.is_some()).finish()
    }
}

impl Metrics {
    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        Self { records: Vec::new(), sink: Some(sink) }
    }

    pub fn set_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.sink = Some(sink);
    }

    pub fn record(&mut self, phase: &str, iteration: usize, round: usize, lr: Real, values: &[(&str, f64)]) -> Result<()> {
        let rec = MetricRecord {
            phase: phase.to_string(),
            iteration,
            round,
            lr: lr as f64,
            values: values.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        };
        if let Some(w) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Values of `key` over records of `phase`, in order.
    pub fn series(&self, phase: &str, key: &str) -> Vec<f64> {
        self.records.iter().filter(|r| r.phase == phase).filter_map(|r| r.values.get(key).copied()).collect()
    }
}

/// Distinct indices when the pool allows it, otherwise drawn with replacement.
pub fn sample_indices<R: Rng>(pool: usize, count: usize, rng: &mut R) -> Vec<usize> {
    if pool >= count {
        rand::seq::index::sample(rng, pool, count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    }
}

fn diverged(iteration: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Diverged { iteration, source: Box::new(e) }
}

/// Backpropagates `loss`, clips the gradients of `ids` and applies one optimizer step to them.
pub fn apply_update(
    g: Graph,
    loss: Var,
    store: &mut ParamStore,
    ids: &[ParamId],
    opt: &mut dyn Optimizer,
    lr: Real,
    clip: Real,
) -> Result<()> {
    store.zero_grad();
    g.backward(loss, store)?;
    drop(g);
    clip_gradients(store, ids, -clip, clip);
    store.check_grads(ids)?;
    opt.step(store, ids, lr)
}

/// `beta <- rate * beta + (1 - rate) * theta` on `ids`.
pub fn soft_update(beta: &mut ParamStore, theta: &ParamStore, ids: &[ParamId], rate: Real) {
    for &id in ids {
        let src = theta.value(id).clone();
        let dst = beta.value_mut(id);
        dst.zip_mut_with(&src, |b, &t| *b = rate * *b + (1.0 - rate) * t);
    }
}

/// Mean teacher-forced `(L_s, L_p, L_R)` over `data` without dropout.
pub fn reconstruction_eval(gen: &CoupledGenerator, store: &ParamStore, data: &[Sketch], n_max: usize, chunk: usize) -> Result<[Real; 3]> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = [0.0; 3];
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&Sketch> = part.iter().collect();
        let batch = SequenceBatch::new(&refs, n_max);
        let mut g = Graph::new();
        let l = gen.reconstruction_loss(&mut g, store, &batch, None);
        let w = part.len() as Real / data.len() as Real;
        acc[0] += w * g.scalar(l.ls)?;
        acc[1] += w * g.scalar(l.lp)?;
        acc[2] += w * g.scalar(l.lr)?;
    }
    Ok(acc)
}

/// Per-step action values of one generated sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionValueTable {
    pub q: Vec<Real>,
}

/// Completes `prefix` `n` times with the rollout policy, extending each copy
/// by at most `max_steps` tuples and never past `n_max` drawn tuples.
pub fn mc_rollout<R: Rng>(
    gen: &CoupledGenerator,
    rollout_store: &ParamStore,
    prefix: &[StrokePoint5],
    n: usize,
    max_steps: usize,
    n_max: usize,
    tau: Temperature,
    rng: &mut R,
) -> Result<Vec<Sketch>> {
    let t = prefix.len();
    if t == 0 {
        return Err(Error::InvalidArgument("rollout prefix must be non-empty".into()));
    }
    let budget = max_steps.min(n_max.saturating_sub(t));
    if prefix[t - 1].pen == PenState::End || max_steps == 0 {
        return Ok(vec![Sketch::new(prefix.to_vec(), ""); n]);
    }
    let mut inputs = vec![points_tensor(&[StrokePoint5::START])];
    inputs.extend(prefix[..t - 1].iter().map(|p| points_tensor(&[*p])));
    let state = gen.condition(rollout_store, &inputs)?.pop().expect("non-empty").select_rows(&vec![0; n]);
    let x = points_tensor(&vec![prefix[t - 1]; n]);
    let tails = gen.sample_continuations(rollout_store, state, x, &vec![budget; n], tau, rng)?;
    Ok(tails
        .into_iter()
        .map(|tail| {
            let mut p = prefix.to_vec();
            p.extend(tail);
            Sketch::new(p, "")
        })
        .collect())
}

/// `Q = mean D(rollout)` over one position's rollouts.
pub fn action_value(scores: &[Real]) -> Real {
    scores.iter().sum::<Real>() / scores.len().max(1) as Real
}

/// Teacher-forcing inputs `S0, y_1, .., y_{steps-1}` for sequences of unequal
/// length; positions past a sequence's end hold the padding tuple.
fn sequence_inputs(seqs: &[Vec<StrokePoint5>], steps: usize) -> Vec<Tensor> {
    (0..steps)
        .map(|t| {
            Array2::from_shape_fn((seqs.len(), 5), |(r, k)| {
                let p = if t == 0 { StrokePoint5::START } else { seqs[r].get(t - 1).copied().unwrap_or(StrokePoint5::END) };
                p.to_array()[k]
            })
        })
        .collect()
}

/// Action values for a batch of generated sequences: for every position
/// before the last, the mean discriminator score of `n` rollouts of the
/// prefix; at the last position, the score of the sequence itself.
pub fn rollout_action_values<R: Rng>(
    gen: &CoupledGenerator,
    rollout_store: &ParamStore,
    disc: &Discriminator,
    disc_store: &ParamStore,
    seqs: &[Vec<StrokePoint5>],
    n: usize,
    max_steps: usize,
    n_max: usize,
    rng: &mut R,
) -> Result<Vec<ActionValueTable>> {
    let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut tables: Vec<ActionValueTable> = seqs.iter().map(|s| ActionValueTable { q: vec![0.0; s.len()] }).collect();
    if steps == 0 {
        return Ok(tables);
    }
    let states = gen.condition(rollout_store, &sequence_inputs(seqs, steps))?;
    for t in 1..steps {
        let active: Vec<usize> = (0..seqs.len()).filter(|&r| t < seqs[r].len()).collect();
        if active.is_empty() {
            continue;
        }
        let budget = max_steps.min(n_max.saturating_sub(t));
        let mut sketches = Vec::with_capacity(active.len() * n);
        if max_steps == 0 {
            for &r in &active {
                sketches.extend(std::iter::repeat_n(Sketch::new(seqs[r][..t].to_vec(), ""), n));
            }
        } else {
            let rows: Vec<usize> = active.iter().flat_map(|&r| std::iter::repeat_n(r, n)).collect();
            let state = states[t].select_rows(&rows);
            let x = points_tensor(&rows.iter().map(|&r| seqs[r][t - 1]).collect::<Vec<_>>());
            let tails = gen.sample_continuations(rollout_store, state, x, &vec![budget; rows.len()], Temperature::ONE, rng)?;
            for (&r, tail) in rows.iter().zip(tails) {
                let mut p = seqs[r][..t].to_vec();
                p.extend(tail);
                sketches.push(Sketch::new(p, ""));
            }
        }
        let refs: Vec<&Sketch> = sketches.iter().collect();
        let scores = disc.score_sketches(disc_store, &refs, n_max)?;
        for (i, &r) in active.iter().enumerate() {
            tables[r].q[t - 1] = action_value(&scores[i * n..(i + 1) * n]);
        }
    }
    let full: Vec<Sketch> = seqs.iter().map(|s| Sketch::new(s.clone(), "")).collect();
    let refs: Vec<&Sketch> = full.iter().collect();
    let scores = disc.score_sketches(disc_store, &refs, n_max)?;
    for (tab, &score) in tables.iter_mut().zip(&scores) {
        if let Some(last) = tab.q.last_mut() {
            *last = score;
        }
    }
    Ok(tables)
}

/// `-(1/B) sum_t sum_r w[t][r] * log_probs[t][r, actions[t][r]]`.
pub fn reinforce_loss(g: &mut Graph, log_probs: &[Var], actions: &[Vec<usize>], weights: &[Vec<Real>]) -> Var {
    let rows = actions.first().map_or(1, Vec::len).max(1);
    let mut total: Option<Var> = None;
    for ((&lp, a), w) in log_probs.iter().zip(actions).zip(weights) {
        let picked = g.gather_cols(lp, a);
        let wv = g.constant(crate::batch::column(w));
        let term = g.mul(picked, wv);
        let s = g.sum(term);
        total = Some(match total {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    let total = total.unwrap_or_else(|| g.zeros(1, 1));
    g.scale(total, -1.0 / rows as Real)
}

/// One policy-gradient ascent step on the pen-state parameters. Returns the
/// surrogate loss; no step is taken when every weighted action value is zero.
pub fn policy_gradient_update(
    gen: &CoupledGenerator,
    store: &mut ParamStore,
    opt: &mut dyn Optimizer,
    seqs: &[Vec<StrokePoint5>],
    q: &[ActionValueTable],
    lr: Real,
    pg_weight: Real,
    clip: Real,
) -> Result<Real> {
    let steps = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let weights: Vec<Vec<Real>> =
        (0..steps).map(|t| q.iter().map(|tab| tab.q.get(t).map_or(0.0, |v| v * pg_weight)).collect()).collect();
    if weights.iter().flatten().all(|&w| w == 0.0) {
        return Ok(0.0);
    }
    let actions: Vec<Vec<usize>> =
        (0..steps).map(|t| seqs.iter().map(|s| s.get(t).map_or(PenState::End.index(), |p| p.pen.index())).collect()).collect();
    let mut g = Graph::new();
    let log_q = gen.pen_log_probs(&mut g, store, &sequence_inputs(seqs, steps));
    let loss = reinforce_loss(&mut g, &log_q, &actions, &weights);
    let value = g.scalar(loss)?;
    apply_update(g, loss, store, &gen.pen_params(), opt, lr, clip)?;
    Ok(value)
}

/// One step of the non-saturating adversarial loss `-mean ln D_real(G(.))`
/// on the offset parameters only. Returns the unweighted loss.
pub fn adversarial_update_offsets<R: Rng>(
    gen: &CoupledGenerator,
    disc: &Discriminator,
    store: &mut ParamStore,
    opt: &mut dyn Optimizer,
    rows: usize,
    n_max: usize,
    lr: Real,
    weight: Real,
    clip: Real,
    rng: &mut R,
) -> Result<Real> {
    let mut g = Graph::new();
    let (loss, value) = offset_adversarial_loss(gen, disc, &mut g, store, rows, n_max, rng)?;
    let scaled = g.scale(loss, weight);
    apply_update(g, scaled, store, &gen.offset_params(), opt, lr, clip)?;
    Ok(value)
}

/// The offset generator's adversarial loss on a fresh free-running batch.
pub fn offset_adversarial_loss<R: Rng>(
    gen: &CoupledGenerator,
    disc: &Discriminator,
    g: &mut Graph,
    store: &ParamStore,
    rows: usize,
    n_max: usize,
    rng: &mut R,
) -> Result<(Var, Real)> {
    let start = g.constant(points_tensor(&vec![StrokePoint5::START; rows]));
    let mut seq = vec![start];
    seq.extend(gen.free_running_reparam(g, store, rows, n_max, rng)?);
    let loss = disc.generator_loss(g, store, &seq)?;
    let value = g.scalar(loss)?;
    Ok((loss, value))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Generator updates so far (pre-training and adversarial); drives its schedule.
    pub g_iter: usize,
    /// Discriminator updates so far; drives its schedule.
    pub d_iter: usize,
    pub pretrain_g: usize,
    pub pretrain_d: usize,
    pub rounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorStep {
    pub nll: Real,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStep {
    pub mean_q: Real,
    pub pg_loss: Real,
    pub adv_loss: Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_q: Real,
    pub adv_loss: Real,
    pub d_nll: Real,
    pub d_accuracy: f64,
}

/// Mutable training state: model, rollout policy, optimizers, counters and rng.
#[derive(Debug)]
pub struct SkeganTrainer {
    pub model: SkeganModel,
    /// Rollout policy `beta`: a full copy of the store, only generator entries used.
    pub rollout: ParamStore,
    pub pretrain_opt: Adam,
    pub pen_opt: Adam,
    pub offset_opt: Adam,
    pub counters: Counters,
    pub rng: ChaRng,
    pub n_max: usize,
    pub metrics: Metrics,
}

impl SkeganTrainer {
    pub fn new(model: SkeganModel, n_max: usize, seed: u64) -> Self {
        let rollout = model.store.clone();
        Self {
            model,
            rollout,
            pretrain_opt: Adam::default(),
            pen_opt: Adam::default(),
            offset_opt: Adam::default(),
            counters: Counters::default(),
            // offset so the training stream differs from the initialization stream
            rng: seeded_rng(seed ^ 0x5eed_0000_0000_0001),
            n_max,
            metrics: Metrics::default(),
        }
    }

    fn clip(&self) -> Real {
        self.model.config.clip as Real
    }

    pub fn g_lr(&self) -> Real {
        self.model.config.g_lr.at(self.counters.g_iter)
    }

    pub fn d_lr(&self) -> Real {
        self.model.config.d_lr.at(self.counters.d_iter)
    }

    /// One teacher-forced likelihood step; returns `[L_s, L_p, L_R]` before the update.
    pub fn pretrain_generator_step(&mut self, data: &[Sketch]) -> Result<[Real; 3]> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let it = self.counters.g_iter;
        let lr = self.g_lr();
        let clip = self.clip();
        let idx = sample_indices(data.len(), self.model.config.batch, &mut self.rng);
        let refs: Vec<&Sketch> = idx.iter().map(|&i| &data[i]).collect();
        let batch = SequenceBatch::new(&refs, self.n_max);
        let m = &mut self.model;
        let mut g = Graph::new();
        let masks = m.generator.sample_dropout(&mut g, batch.batch, &mut self.rng);
        let l = m.generator.reconstruction_loss(&mut g, &m.store, &batch, masks);
        let vals = [g.scalar(l.ls), g.scalar(l.lp), g.scalar(l.lr)];
        let vals = [vals[0].as_ref().copied(), vals[1].as_ref().copied(), vals[2].as_ref().copied()];
        let (ls, lp, lr_val) = match vals {
            [Ok(a), Ok(b), Ok(c)] => (a, b, c),
            _ => return Err(diverged(it)(g.check().err().unwrap_or(Error::NonFinite { op: "loss" }))),
        };
        apply_update(g, l.lr, &mut m.store, &m.generator.params(), &mut self.pretrain_opt, lr, clip).map_err(diverged(it))?;
        self.counters.g_iter += 1;
        self.counters.pretrain_g += 1;
        let round = self.counters.rounds;
        self.metrics.record("pretrain-g", it, round, lr, &[("ls", ls as f64), ("lp", lp as f64), ("lr", lr_val as f64)])?;
        Ok([ls, lp, lr_val])
    }

    pub fn pretrain_generator(&mut self, data: &[Sketch], iters: usize) -> Result<Vec<Real>> {
        (0..iters).map(|_| self.pretrain_generator_step(data).map(|v| v[2])).collect()
    }

    /// Fresh fakes from the current generator.
    pub fn generate_fakes(&mut self, count: usize) -> Result<Vec<Sketch>> {
        self.model.generator.generate_batch(&self.model.store, count, Temperature::ONE, self.n_max, &mut self.rng)
    }

    fn discriminator_step(&mut self, data: &[Sketch], phase: &str) -> Result<DiscriminatorStep> {
        let it = self.counters.d_iter;
        let lr = self.d_lr();
        let clip = self.clip();
        let n_max = self.n_max;
        let m = &mut self.model;
        let gen = &m.generator;
        let store = &m.store;
        let batch = make_adversarial_batch(data, m.config.batch, &mut self.rng, |k, rng| {
            gen.generate_batch(store, k, Temperature::ONE, n_max, rng)
        })?;
        let labels = batch.labels();
        let mut g = Graph::new();
        let seq: Vec<Var> = batch.inputs(n_max).into_iter().map(|t| g.constant(t)).collect();
        let lp = m.discriminator.log_probs(&mut g, &m.store, &seq)?;
        let outputs: Vec<DiscriminatorOutput> =
            g.value(lp).rows().into_iter().map(|r| DiscriminatorOutput { p_real: r[0].exp(), p_fake: r[1].exp() }).collect();
        let acc = accuracy(&outputs, &labels);
        let idx: Vec<usize> = labels.iter().map(|&r| if r { 0 } else { 1 }).collect();
        let picked = g.gather_cols(lp, &idx);
        let mean = g.mean(picked);
        let loss = g.neg(mean);
        let nll = g.scalar(loss).map_err(diverged(it))?;
        apply_update(g, loss, &mut m.store, &m.discriminator.params(), &mut Sgd, lr, clip).map_err(diverged(it))?;
        self.counters.d_iter += 1;
        let round = self.counters.rounds;
        self.metrics.record(phase, it, round, lr, &[("nll", nll as f64), ("accuracy", acc)])?;
        Ok(DiscriminatorStep { nll, accuracy: acc })
    }

    /// One SGD step of binary cross-entropy on a shuffled half-real, half-fake batch.
    pub fn pretrain_discriminator_step(&mut self, data: &[Sketch]) -> Result<DiscriminatorStep> {
        let s = self.discriminator_step(data, "pretrain-d")?;
        self.counters.pretrain_d += 1;
        Ok(s)
    }

    pub fn pretrain_discriminator(&mut self, data: &[Sketch], iters: usize) -> Result<Vec<DiscriminatorStep>> {
        (0..iters).map(|_| self.pretrain_discriminator_step(data)).collect()
    }

    /// Discriminator accuracy on `count` held reals against as many fresh fakes, no update.
    pub fn discriminator_accuracy(&mut self, reals: &[Sketch], count: usize) -> Result<f64> {
        let reals: Vec<Sketch> = sample_indices(reals.len(), count, &mut self.rng).into_iter().map(|i| reals[i].clone()).collect();
        let fakes = self.generate_fakes(count)?;
        let all: Vec<&Sketch> = reals.iter().chain(&fakes).collect();
        let labels: Vec<bool> = (0..2 * count).map(|i| i < count).collect();
        let out = self.model.discriminator.classify(&self.model.store, &crate::batch::discriminator_inputs(&all, self.n_max))?;
        Ok(accuracy(&out, &labels))
    }

    /// One adversarial generator iteration: sample a batch, estimate action
    /// values by rollout, then update pen and offset parameters.
    pub fn generator_step(&mut self) -> Result<GeneratorStep> {
        let it = self.counters.g_iter;
        let lr = self.g_lr();
        let clip = self.clip();
        let cfg = self.model.config.clone();
        let fakes = self.generate_fakes(cfg.batch)?;
        let seqs: Vec<Vec<StrokePoint5>> = fakes.into_iter().map(|s| s.points).collect();
        let m = &mut self.model;
        let q = rollout_action_values(
            &m.generator,
            &self.rollout,
            &m.discriminator,
            &m.store,
            &seqs,
            cfg.rollout_count,
            cfg.rollout_max_steps,
            self.n_max,
            &mut self.rng,
        )
        .map_err(diverged(it))?;
        let (sum_q, count_q) = q.iter().flat_map(|t| &t.q).fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
        let mean_q = sum_q / count_q.max(1) as Real;
        let mut pg_loss = 0.0;
        if cfg.pg_weight > 0.0 {
            pg_loss = policy_gradient_update(&m.generator, &mut m.store, &mut self.pen_opt, &seqs, &q, lr, cfg.pg_weight as Real, clip)
                .map_err(diverged(it))?;
        }
        let mut adv_loss = 0.0;
        if cfg.adversarial_weight > 0.0 {
            adv_loss = adversarial_update_offsets(
                &m.generator,
                &m.discriminator,
                &mut m.store,
                &mut self.offset_opt,
                cfg.batch,
                self.n_max,
                lr,
                cfg.adversarial_weight as Real,
                clip,
                &mut self.rng,
            )
            .map_err(diverged(it))?;
        }
        self.counters.g_iter += 1;
        let round = self.counters.rounds;
        self.metrics.record(
            "adversarial-g",
            it,
            round,
            lr,
            &[("mean_q", mean_q as f64), ("pg_loss", pg_loss as f64), ("adv_loss", adv_loss as f64)],
        )?;
        Ok(GeneratorStep { mean_q, pg_loss, adv_loss })
    }

    pub fn adversarial_discriminator_step(&mut self, data: &[Sketch]) -> Result<DiscriminatorStep> {
        self.discriminator_step(data, "adversarial-d")
    }

    /// Generator iterations per round.
    pub fn epoch_iters(&self, data_len: usize) -> usize {
        self.model.config.epoch_iters.unwrap_or_else(|| (data_len / self.model.config.batch).max(1))
    }

    /// One round: an epoch of generator updates, the rollout-policy soft
    /// update, then `d_epochs_per_round` epochs of discriminator updates.
    pub fn train_round(&mut self, data: &[Sketch]) -> Result<RoundSummary> {
        let epoch = self.epoch_iters(data.len());
        let (mut q, mut adv) = (0.0, 0.0);
        for _ in 0..epoch {
            let s = self.generator_step()?;
            q += s.mean_q;
            adv += s.adv_loss;
        }
        let rate = self.model.config.rollout_update_rate as Real;
        soft_update(&mut self.rollout, &self.model.store, &self.model.generator.params(), rate);
        let (mut nll, mut acc) = (0.0, 0.0);
        let d_iters = epoch * self.model.config.d_epochs_per_round;
        for _ in 0..d_iters {
            let s = self.adversarial_discriminator_step(data)?;
            nll += s.nll;
            acc += s.accuracy;
        }
        self.counters.rounds += 1;
        let summary = RoundSummary {
            round: self.counters.rounds,
            mean_q: q / epoch as Real,
            adv_loss: adv / epoch as Real,
            d_nll: nll / d_iters.max(1) as Real,
            d_accuracy: acc / d_iters.max(1) as f64,
        };
        log::info!("round {} done: {:?}", summary.round, summary);
        Ok(summary)
    }

    /// Held-out `(L_R, D NLL)` without updates. The NLL is over every
    /// held-out sketch plus as many fresh fakes.
    pub fn eval_losses(&mut self, held_out: &[Sketch]) -> Result<(Real, Real)> {
        let lr = reconstruction_eval(&self.model.generator, &self.model.store, held_out, self.n_max, self.model.config.batch)?[2];
        let fakes = self.generate_fakes(held_out.len())?;
        let all: Vec<&Sketch> = held_out.iter().chain(&fakes).collect();
        let labels: Vec<bool> = (0..all.len()).map(|i| i < held_out.len()).collect();
        let mut g = Graph::new();
        let seq: Vec<Var> = crate::batch::discriminator_inputs(&all, self.n_max).into_iter().map(|t| g.constant(t)).collect();
        let nll = self.model.discriminator.nll(&mut g, &self.model.store, &seq, &labels)?;
        let nll = g.scalar(nll)?;
        let round = self.counters.rounds;
        self.metrics.record("eval", self.counters.g_iter, round, 0.0, &[("lr", lr as f64), ("d_nll", nll as f64)])?;
        Ok((lr, nll))
    }
}
