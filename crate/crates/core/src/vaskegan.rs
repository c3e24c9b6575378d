//! VAE-GAN sketch model: a bidirectional LSTM encoder, a latent code drawn by
//! reparameterization, an LSTM decoder conditioned on the code at every step,
//! and a recurrent discriminator trained against free-running decodes.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{column, points_tensor, SequenceBatch};
use crate::config::VaskeganConfig;
use crate::discriminator::Discriminator;
use crate::nn::{dropout_mask, Adam, BiLstm, Graph, Linear, LstmCell, ParamId, ParamStore, Sgd, Tensor, Var};
use crate::skegan::heads::{sample_categorical, softmax};
use crate::skegan::{PenStateProbs, Temperature};
use crate::stroke::{PenState, Sketch, StrokePoint5};
use crate::train::{apply_update, sample_indices, Metrics};
use crate::{seeded_rng, Error, Real, Result, Rng as ChaRng};

const HALF_LN_2PI: Real = 0.918_938_533_204_672_8;

/// Mean, log-variance and one reparameterized sample of the latent code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<Real>,
    pub log_var: Vec<Real>,
    pub z: Vec<Real>,
}

impl LatentCode {
    pub fn sigma(&self) -> Vec<Real> {
        self.log_var.iter().map(|v| (v / 2.0).exp()).collect()
    }
}

/// Activated decoder output for one row.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStepOutput {
    pub mu_x: Real,
    pub mu_y: Real,
    pub sigma_x: Real,
    pub sigma_y: Real,
    pub pen: PenStateProbs,
}

/// Activates the raw 7-vector `[mu_x, mu_y, s_x, s_y, q1, q2, q3]`:
/// `sigma = exp(s) sqrt(tau)`, pen probabilities `softmax(q / tau)`.
pub fn decoder_output_from(raw: &[Real], tau: Temperature) -> Result<DecoderStepOutput> {
    if raw.len() != 7 {
        return Err(Error::Shape { op: "decoder_output_from", detail: format!("expected 7 values, got {}", raw.len()) });
    }
    let t = tau.get();
    let scaled: Vec<Real> = raw[4..7].iter().map(|v| v / t).collect();
    let q = softmax(&scaled);
    Ok(DecoderStepOutput {
        mu_x: raw[0],
        mu_y: raw[1],
        sigma_x: raw[2].exp() * t.sqrt(),
        sigma_y: raw[3].exp() * t.sqrt(),
        pen: PenStateProbs { q: [q[0], q[1], q[2]] },
    })
}

impl DecoderStepOutput {
    /// `dx = mu_x + sigma_x e`, `e ~ N(0, 1)`, same for `dy`; pen sampled from the probabilities.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> StrokePoint5 {
        let pen = PenState::ALL[sample_categorical(&self.pen.q, rng)];
        if pen == PenState::End {
            return StrokePoint5::END;
        }
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        StrokePoint5::new(self.mu_x + self.sigma_x * e1 as Real, self.mu_y + self.sigma_y * e2 as Real, pen)
    }
}

/// `-(1 / 2 N_z) sum (1 + s - mu^2 - exp s)` for one code.
pub fn kl_loss(mu: &[Real], log_var: &[Real]) -> Result<Real> {
    if mu.len() != log_var.len() || mu.is_empty() {
        return Err(Error::Shape { op: "kl_loss", detail: format!("{} vs {}", mu.len(), log_var.len()) });
    }
    let s: Real = mu.iter().zip(log_var).map(|(m, s)| 1.0 + s - m * m - s.exp()).sum();
    Ok(-s / (2 * mu.len()) as Real)
}

/// `eta_t = 1 - (1 - eta_min) R^t`.
pub fn kl_anneal(t: usize, eta_min: f64, rate: f64) -> f64 {
    1.0 - (1.0 - eta_min) * rate.powf(t as f64)
}

/// `L_R + w_KL eta_t max(L_KL, KL_min) + L_adv`.
pub fn vae_total_loss(l_r: f64, l_kl: f64, l_adv: f64, t: usize, cfg: &VaskeganConfig) -> f64 {
    l_r + cfg.w_kl * kl_anneal(t, cfg.eta_min, cfg.anneal_rate) * l_kl.max(cfg.kl_min) + l_adv
}

/// `BCE(D(fake), 0) + BCE(D(real), 1)` from real-class probabilities, each a batch mean.
pub fn disc_loss(d_fake: &[Real], d_real: &[Real]) -> Real {
    let mean = |v: &[Real], f: &dyn Fn(Real) -> Real| v.iter().map(|&p| f(p)).sum::<Real>() / v.len().max(1) as Real;
    mean(d_fake, &|p| -(1.0 - p).ln()) + mean(d_real, &|p| -p.ln())
}

#[derive(Clone, Copy, Debug)]
pub struct VaeLossTerms {
    pub lr: Var,
    pub ls: Var,
    pub lp: Var,
    pub kl: Option<Var>,
    pub adv: Option<Var>,
    pub total: Var,
}

#[derive(Clone, Debug)]
pub struct Vae {
    pub encoder: BiLstm,
    pub mu_head: Linear,
    pub log_var_head: Linear,
    pub init: Linear,
    pub decoder: LstmCell,
    pub out: Linear,
    pub latent: usize,
    pub recurrent_dropout: f64,
}

impl Vae {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &VaskeganConfig, rng: &mut R) -> Result<Self> {
        let (e, d, nz) = (cfg.encoder_hidden, cfg.decoder_hidden, cfg.latent);
        Ok(Self {
            encoder: BiLstm::new(store, &format!("{prefix}.encoder"), 5, e, rng)?,
            mu_head: Linear::new(store, &format!("{prefix}.mu"), 2 * e, nz, rng)?,
            log_var_head: Linear::new(store, &format!("{prefix}.log_var"), 2 * e, nz, rng)?,
            init: Linear::new(store, &format!("{prefix}.init"), nz, 2 * d, rng)?,
            decoder: LstmCell::new(store, &format!("{prefix}.decoder"), 5 + nz, d, rng)?,
            out: Linear::new(store, &format!("{prefix}.out"), d, 7, rng)?,
            latent: nz,
            recurrent_dropout: cfg.recurrent_dropout,
        })
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut p = self.encoder.params();
        p.extend(self.mu_head.params());
        p.extend(self.log_var_head.params());
        p
    }

    pub fn decoder_params(&self) -> Vec<ParamId> {
        let mut p = self.init.params();
        p.extend(self.decoder.params());
        p.extend(self.out.params());
        p
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.encoder_params();
        p.extend(self.decoder_params());
        p
    }

    fn hidden(&self) -> usize {
        self.decoder.hidden
    }

    /// `(mu, log_var)`, each `[rows, N_z]`, from the bidirectional final states.
    pub fn encode_graph(&self, g: &mut Graph, store: &ParamStore, seq: &[Var]) -> Result<(Var, Var)> {
        let (hf, hb) = self.encoder.encode(g, store, seq)?;
        let h = g.concat_cols(&[hf, hb]);
        Ok((self.mu_head.forward(g, store, h), self.log_var_head.forward(g, store, h)))
    }

    /// `z = mu + exp(log_var / 2) * eps` with the given noise.
    pub fn reparameterize(g: &mut Graph, mu: Var, log_var: Var, eps: Tensor) -> Var {
        let half = g.scale(log_var, 0.5);
        let sigma = g.exp(half);
        let e = g.constant(eps);
        let noise = g.mul(sigma, e);
        g.add(mu, noise)
    }

    /// `[h0; c0] = tanh(W z + b)`.
    pub fn decoder_init(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<(Var, Var)> {
        let cols = g.shape(z).1;
        if cols != self.latent {
            return Err(Error::Shape { op: "decoder_init", detail: format!("latent size {cols}, expected {}", self.latent) });
        }
        let pre = self.init.forward(g, store, z);
        let hc = g.tanh(pre);
        let d = self.hidden();
        Ok((g.slice_cols(hc, 0, d), g.slice_cols(hc, d, d)))
    }

    /// One decoder step on input `[prev, z]`; returns the raw `[rows, 7]` output and the new state.
    pub fn decode_step_graph(&self, g: &mut Graph, store: &ParamStore, prev: Var, z: Var, h: Var, c: Var, mask: Option<Var>) -> (Var, Var, Var) {
        let x = g.concat_cols(&[prev, z]);
        let (h, c) = self.decoder.step(g, store, x, h, c, mask);
        (self.out.forward(g, store, h), h, c)
    }

    /// Teacher-forced `(L_s, L_p)` with the diagonal Gaussian offset likelihood,
    /// normalized like the coupled generator's loss.
    pub fn reconstruction_graph(&self, g: &mut Graph, store: &ParamStore, batch: &SequenceBatch, z: Var, mask: Option<Var>) -> Result<(Var, Var)> {
        let (mut h, mut c) = self.decoder_init(g, store, z)?;
        let mut ll_terms = Vec::with_capacity(batch.steps());
        let mut pen_terms = Vec::with_capacity(batch.steps());
        for t in 0..batch.steps() {
            let x = g.constant(batch.inputs[t].clone());
            let (y, h2, c2) = self.decode_step_graph(g, store, x, z, h, c, mask);
            (h, c) = (h2, c2);
            let target = &batch.targets[t];
            let mut ll = None;
            for axis in 0..2 {
                let mu = g.slice_cols(y, axis, 1);
                let s = g.slice_cols(y, 2 + axis, 1);
                let tv = g.constant(target.slice(ndarray::s![.., axis..axis + 1]).to_owned());
                let diff = g.sub(tv, mu);
                let ns = g.neg(s);
                let inv = g.exp(ns);
                let zs = g.mul(diff, inv);
                let sq = g.square(zs);
                let half = g.scale(sq, -0.5);
                let a = g.sub(half, s);
                let term = g.offset(a, -HALF_LN_2PI);
                ll = Some(match ll {
                    Some(prev) => g.add(prev, term),
                    None => term,
                });
            }
            let m = g.constant(batch.real_mask[t].clone());
            let ll = g.mul(ll.expect("two axes"), m);
            ll_terms.push(g.sum(ll));
            let logits = g.slice_cols(y, 4, 3);
            let log_q = g.log_softmax(logits);
            let p = g.constant(target.slice(ndarray::s![.., 2..5]).to_owned());
            let picked = g.mul(p, log_q);
            pen_terms.push(g.sum(picked));
        }
        let norm = -1.0 / (batch.steps() * batch.batch) as Real;
        let ll = sum_all(g, &ll_terms);
        let pen = sum_all(g, &pen_terms);
        Ok((g.scale(ll, norm), g.scale(pen, norm)))
    }

    /// Batch-mean KL divergence to the standard normal.
    pub fn kl_graph(g: &mut Graph, mu: Var, log_var: Var) -> Var {
        let (rows, nz) = g.shape(mu);
        let e = g.exp(log_var);
        let m2 = g.square(mu);
        let a = g.offset(log_var, 1.0);
        let b = g.sub(a, m2);
        let inner = g.sub(b, e);
        let s = g.sum(inner);
        g.scale(s, -1.0 / (2 * nz * rows) as Real)
    }

    /// Free-running decode with reparameterized offsets: `n_max` sampled
    /// tuples then one padding tuple; rows stay at padding after they end.
    pub fn free_running_graph<R: Rng>(&self, g: &mut Graph, store: &ParamStore, z: Var, n_max: usize, rng: &mut R) -> Result<Vec<Var>> {
        let rows = g.shape(z).0;
        let (mut h, mut c) = self.decoder_init(g, store, z)?;
        let mut x = g.constant(points_tensor(&vec![StrokePoint5::START; rows]));
        let mut alive = vec![true; rows];
        let mut tokens = Vec::with_capacity(n_max + 1);
        for _ in 0..n_max {
            let (y, h2, c2) = self.decode_step_graph(g, store, x, z, h, c, None);
            (h, c) = (h2, c2);
            g.check()?;
            let yv = g.value(y).clone();
            let mut e = [vec![0.0; rows], vec![0.0; rows]];
            let mut keep = vec![0.0; rows];
            let mut pens = Array2::zeros((rows, 3));
            for r in 0..rows {
                let q = softmax(&yv.row(r).to_vec()[4..7]);
                let pen = if alive[r] { PenState::ALL[sample_categorical(&q, rng)] } else { PenState::End };
                if pen == PenState::End {
                    alive[r] = false;
                } else {
                    keep[r] = 1.0;
                }
                for v in e.iter_mut() {
                    v[r] = StandardNormal.sample(rng);
                }
                pens.row_mut(r).assign(&ndarray::arr1(&pen.one_hot()));
            }
            let keep = g.constant(column(&keep));
            let mut axes = Vec::with_capacity(2);
            for (axis, noise) in e.iter().enumerate() {
                let mu = g.slice_cols(y, axis, 1);
                let s = g.slice_cols(y, 2 + axis, 1);
                let sigma = g.exp(s);
                let ev = g.constant(column(noise));
                let n = g.mul(sigma, ev);
                let d = g.add(mu, n);
                axes.push(g.mul(d, keep));
            }
            let pens = g.constant(pens);
            let token = g.concat_cols(&[axes[0], axes[1], pens]);
            tokens.push(token);
            x = token;
        }
        tokens.push(g.constant(points_tensor(&vec![StrokePoint5::END; rows])));
        Ok(tokens)
    }

    /// Encodes one sketch; `z` uses fresh noise from `rng`.
    pub fn encode<R: Rng>(&self, store: &ParamStore, sketch: &Sketch, rng: &mut R) -> Result<LatentCode> {
        if sketch.len_real() == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty sketch".into()));
        }
        let mut g = Graph::new();
        let seq: Vec<Var> = sketch.points.iter().map(|p| g.constant(points_tensor(&[*p]))).collect();
        let (mu, lv) = self.encode_graph(&mut g, store, &seq)?;
        let eps = self.noise(1, rng);
        let z = Self::reparameterize(&mut g, mu, lv, eps);
        g.check()?;
        let row = |v: Var| g.value(v).row(0).to_vec();
        Ok(LatentCode { mu: row(mu), log_var: row(lv), z: row(z) })
    }

    pub fn noise<R: Rng>(&self, rows: usize, rng: &mut R) -> Tensor {
        Array2::from_shape_simple_fn((rows, self.latent), || {
            let v: f64 = StandardNormal.sample(rng);
            v as Real
        })
    }

    /// Decodes each row of `z` until the end state. A row that reaches `n_max`
    /// drawn tuples gets one more step, kept only if it is the end token.
    pub fn decode<R: Rng>(&self, store: &ParamStore, z: &Tensor, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Vec<Sketch>> {
        let rows = z.nrows();
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let (mut h, mut c) = self.decoder_init(&mut g, store, zv)?;
        let mut x = points_tensor(&vec![StrokePoint5::START; rows]);
        let mut out: Vec<Vec<StrokePoint5>> = vec![Vec::new(); rows];
        let mut alive = vec![true; rows];
        for step in 0..=n_max {
            if !alive.iter().any(|&a| a) {
                break;
            }
            let xv = g.constant(x.clone());
            let (y, h2, c2) = self.decode_step_graph(&mut g, store, xv, zv, h, c, None);
            (h, c) = (h2, c2);
            g.check()?;
            let yv = g.value(y);
            let mut next = Vec::with_capacity(rows);
            for r in 0..rows {
                if !alive[r] {
                    next.push(StrokePoint5::END);
                    continue;
                }
                let p = decoder_output_from(&yv.row(r).to_vec(), tau)?.sample(rng);
                if step == n_max {
                    if p.pen == PenState::End {
                        out[r].push(StrokePoint5::END);
                    }
                    continue;
                }
                out[r].push(p);
                alive[r] = p.pen != PenState::End;
                next.push(p);
            }
            x = points_tensor(&next);
        }
        Ok(out.into_iter().map(|p| Sketch::new(p, "")).collect())
    }
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

#[derive(Clone, Debug)]
pub struct VaskeganModel {
    pub store: ParamStore,
    pub vae: Vae,
    pub discriminator: Discriminator,
    pub config: VaskeganConfig,
}

impl VaskeganModel {
    pub fn new(config: VaskeganConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let vae = Vae::new(&mut store, "vae", &config, &mut rng)?;
        let discriminator = Discriminator::new(&mut store, "disc", config.disc_kind, config.disc_hidden, &mut rng)?;
        Ok(Self { store, vae, discriminator, config })
    }

    /// Encode `input`, then decode freely at temperature `tau`.
    pub fn conditional_generate<R: Rng>(&self, input: &Sketch, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Sketch> {
        let code = self.vae.encode(&self.store, input, rng)?;
        let z = Array2::from_shape_vec((1, self.vae.latent), code.z).expect("latent row");
        let mut s = self.vae.decode(&self.store, &z, tau, n_max, rng)?;
        Ok(s.pop().expect("one row"))
    }

    /// Encodes `partial`, feeds its points through the decoder and samples the
    /// remainder. The result starts with `partial`'s points unchanged.
    pub fn complete<R: Rng>(&self, partial: &Sketch, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Sketch> {
        let prefix = partial.real_points();
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("cannot complete an empty sketch".into()));
        }
        if prefix.len() > n_max {
            return Err(Error::TooLong { len: prefix.len(), n_max });
        }
        let mut points = prefix.to_vec();
        let code = self.vae.encode(&self.store, partial, rng)?;
        let vae = &self.vae;
        let mut g = Graph::new();
        let z = g.constant(Array2::from_shape_vec((1, vae.latent), code.z).expect("latent row"));
        let (mut h, mut c) = vae.decoder_init(&mut g, &self.store, z)?;
        let mut x = StrokePoint5::START;
        for &p in prefix {
            let xv = g.constant(points_tensor(&[x]));
            (_, h, c) = vae.decode_step_graph(&mut g, &self.store, xv, z, h, c, None);
            x = p;
        }
        loop {
            let xv = g.constant(points_tensor(&[x]));
            let (y, h2, c2) = vae.decode_step_graph(&mut g, &self.store, xv, z, h, c, None);
            (h, c) = (h2, c2);
            g.check()?;
            x = decoder_output_from(&g.value(y).row(0).to_vec(), tau)?.sample(rng);
            if points.len() >= n_max {
                if x.pen == PenState::End {
                    points.push(StrokePoint5::END);
                }
                break;
            }
            points.push(x);
            if x.pen == PenState::End {
                break;
            }
        }
        Ok(Sketch::new(points, partial.label.clone()))
    }

    /// Unconditional samples with `z` from the prior.
    pub fn sample<R: Rng>(&self, count: usize, tau: Temperature, n_max: usize, rng: &mut R) -> Result<Vec<Sketch>> {
        let z = self.vae.noise(count, rng);
        self.vae.decode(&self.store, &z, tau, n_max, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaskeganStep {
    pub iteration: usize,
    pub lr: Real,
    pub ls: Real,
    pub lp: Real,
    pub kl: Real,
    pub adv: Real,
    pub total: Real,
    pub eta: f64,
    pub d_loss: Real,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaskeganCounters {
    pub iteration: usize,
    pub d_iter: usize,
}

#[derive(Debug)]
pub struct VaskeganTrainer {
    pub model: VaskeganModel,
    pub opt: Adam,
    pub counters: VaskeganCounters,
    pub rng: ChaRng,
    pub n_max: usize,
    pub metrics: Metrics,
}

impl VaskeganTrainer {
    pub fn new(model: VaskeganModel, n_max: usize, seed: u64) -> Self {
        Self {
            model,
            opt: Adam::default(),
            counters: VaskeganCounters::default(),
            rng: seeded_rng(seed ^ 0x5eed_0000_0000_0002),
            n_max,
            metrics: Metrics::default(),
        }
    }

    /// Builds every loss term for one batch. With `pure_gan` the code comes
    /// from the prior and the KL term is absent.
    pub fn loss_terms<R: Rng>(&self, g: &mut Graph, store: &ParamStore, batch: &SequenceBatch, t: usize, rng: &mut R, dropout: bool) -> Result<(VaeLossTerms, Var)> {
        let m = &self.model;
        let cfg = &m.config;
        let vae = &m.vae;
        let (z, kl) = if cfg.pure_gan {
            (g.constant(vae.noise(batch.batch, rng)), None)
        } else {
            let seq: Vec<Var> = batch.targets.iter().map(|t| g.constant(t.clone())).collect();
            let (mu, lv) = vae.encode_graph(g, store, &seq)?;
            let eps = vae.noise(batch.batch, rng);
            (Vae::reparameterize(g, mu, lv, eps), Some(Vae::kl_graph(g, mu, lv)))
        };
        let p = vae.recurrent_dropout as Real;
        let mask = (dropout && p > 0.0).then(|| g.constant(dropout_mask(batch.batch, vae.hidden(), p, rng)));
        let (ls, lp) = vae.reconstruction_graph(g, store, batch, z, mask)?;
        let lr = g.add(ls, lp);
        let mut total = lr;
        if let Some(kl) = kl {
            let floored = g.clamp_min(kl, cfg.kl_min as Real);
            let eta = kl_anneal(t, cfg.eta_min, cfg.anneal_rate);
            let term = g.scale(floored, (cfg.w_kl * eta) as Real);
            total = g.add(total, term);
        }
        let mut adv = None;
        if cfg.adversarial_weight > 0.0 {
            let start = g.constant(points_tensor(&vec![StrokePoint5::START; batch.batch]));
            let mut seq = vec![start];
            seq.extend(vae.free_running_graph(g, store, z, self.n_max, rng)?);
            let l = m.discriminator.generator_loss(g, store, &seq)?;
            let w = g.scale(l, cfg.adversarial_weight as Real);
            total = g.add(total, w);
            adv = Some(l);
        }
        Ok((VaeLossTerms { lr, ls, lp, kl, adv, total }, z))
    }

    /// One VAE-side Adam step then one discriminator SGD step.
    pub fn step(&mut self, data: &[Sketch]) -> Result<VaskeganStep> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let it = self.counters.iteration;
        let cfg = self.model.config.clone();
        let lr_now = cfg.lr.at(it);
        let clip = cfg.clip as Real;
        let diverged = |e: Error| Error::Diverged { iteration: it, source: Box::new(e) };
        let idx = sample_indices(data.len(), cfg.batch, &mut self.rng);
        let refs: Vec<&Sketch> = idx.iter().map(|&i| &data[i]).collect();
        let batch = SequenceBatch::new(&refs, self.n_max);

        let mut g = Graph::new();
        let mut rng = self.rng.clone();
        let (terms, z) = self.loss_terms(&mut g, &self.model.store, &batch, it, &mut rng, true).map_err(diverged)?;
        self.rng = rng;
        let value = |v: Option<Var>| v.map_or(Ok(0.0), |v| g.scalar(v));
        let (ls, lp, kl, adv, total) = (g.scalar(terms.ls), g.scalar(terms.lp), value(terms.kl), value(terms.adv), g.scalar(terms.total));
        let (ls, lp, kl, adv, total) = (|| Ok::<_, Error>((ls?, lp?, kl?, adv?, total?)))().map_err(diverged)?;
        let z_val = g.value(z).clone();
        let params = if cfg.pure_gan { self.model.vae.decoder_params() } else { self.model.vae.params() };
        apply_update(g, terms.total, &mut self.model.store, &params, &mut self.opt, lr_now, clip).map_err(diverged)?;

        let d_loss = self.discriminator_step(&refs, &z_val)?;
        self.counters.iteration += 1;
        let eta = if cfg.pure_gan { 0.0 } else { kl_anneal(it, cfg.eta_min, cfg.anneal_rate) };
        let step = VaskeganStep { iteration: it, lr: ls + lp, ls, lp, kl, adv, total, eta, d_loss };
        self.metrics.record(
            "vaskegan",
            it,
            0,
            lr_now,
            &[
                ("lr", step.lr as f64),
                ("kl", kl as f64),
                ("adv", adv as f64),
                ("total", total as f64),
                ("eta", eta),
                ("d_loss", d_loss as f64),
            ],
        )?;
        Ok(step)
    }

    /// `L_adv^D` on the batch reals against free-running decodes of `z`.
    fn discriminator_step(&mut self, reals: &[&Sketch], z: &Tensor) -> Result<Real> {
        let it = self.counters.d_iter;
        let cfg = &self.model.config;
        let lr = cfg.d_lr.at(it);
        let clip = cfg.clip as Real;
        let fakes = self.model.vae.decode(&self.model.store, z, Temperature::ONE, self.n_max, &mut self.rng)?;
        let fake_refs: Vec<&Sketch> = fakes.iter().collect();
        let mut g = Graph::new();
        let seq = |s: &[&Sketch], g: &mut Graph| -> Vec<Var> {
            crate::batch::discriminator_inputs(s, self.n_max).into_iter().map(|t| g.constant(t)).collect()
        };
        let real_seq = seq(reals, &mut g);
        let fake_seq = seq(&fake_refs, &mut g);
        let loss = self.model.discriminator.adversarial_loss(&mut g, &self.model.store, &real_seq, &fake_seq)?;
        let value = g.scalar(loss).map_err(|e| Error::Diverged { iteration: it, source: Box::new(e) })?;
        let params = self.model.discriminator.params();
        apply_update(g, loss, &mut self.model.store, &params, &mut Sgd, lr, clip)
            .map_err(|e| Error::Diverged { iteration: it, source: Box::new(e) })?;
        self.counters.d_iter += 1;
        Ok(value)
    }

    pub fn train(&mut self, data: &[Sketch], iters: usize) -> Result<Vec<VaskeganStep>> {
        (0..iters).map(|_| self.step(data)).collect()
    }

    /// Teacher-forced `L_R` over `data` with codes `z = mu` (no noise, no dropout).
    pub fn reconstruction_eval(&self, data: &[Sketch]) -> Result<Real> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let vae = &self.model.vae;
        let store = &self.model.store;
        let mut acc = 0.0;
        for part in data.chunks(self.model.config.batch.max(1)) {
            let refs: Vec<&Sketch> = part.iter().collect();
            let batch = SequenceBatch::new(&refs, self.n_max);
            let mut g = Graph::new();
            let z = if self.model.config.pure_gan {
                g.zeros(batch.batch, vae.latent)
            } else {
                let seq: Vec<Var> = batch.targets.iter().map(|t| g.constant(t.clone())).collect();
                vae.encode_graph(&mut g, store, &seq)?.0
            };
            let (ls, lp) = vae.reconstruction_graph(&mut g, store, &batch, z, None)?;
            let lr = g.add(ls, lp);
            acc += g.scalar(lr)? * part.len() as Real / data.len() as Real;
        }
        Ok(acc)
    }

    /// Copies every parameter with a matching name from `other` (transfer initialization).
    pub fn init_from(&mut self, other: &ParamStore) -> Result<()> {
        self.model.store.copy_from(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::DiscriminatorKind;
    use crate::nn::finite_diff_check;
    use crate::toy::toy_corpus;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> VaskeganConfig {
        VaskeganConfig {
            encoder_hidden: 4,
            decoder_hidden: 6,
            latent: 3,
            disc_kind: DiscriminatorKind::Gru,
            disc_hidden: 4,
            batch: 4,
            iterations: 10,
            ..VaskeganConfig::toy()
        }
    }

    fn data(seed: u64) -> (Vec<Sketch>, usize) {
        let d = crate::stroke::normalize_offsets(&toy_corpus(12, &mut seeded_rng(seed)).unwrap()).unwrap();
        (d.sketches, d.n_max)
    }

    fn zero(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            store.value_mut(id).fill(0.0);
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(kl_loss(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!(kl_loss(&[1.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn kl_matches_per_dimension_closed_form(v in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..8)) {
            let mu: Vec<Real> = v.iter().map(|p| p.0 as Real).collect();
            let lv: Vec<Real> = v.iter().map(|p| p.1 as Real).collect();
            let kl = kl_loss(&mu, &lv).unwrap();
            // KL(N(m, s^2) || N(0, 1)) = ln(1/s) + (s^2 + m^2)/2 - 1/2
            let closed: Real = mu.iter().zip(&lv).map(|(m, l)| -l / 2.0 + (l.exp() + m * m) / 2.0 - 0.5).sum::<Real>() / mu.len() as Real;
            prop_assert!(kl >= 0.0);
            prop_assert!((kl - closed).abs() < 1e-9);
        }

        #[test]
        fn anneal_is_increasing_and_bounded(t in 0usize..100_000, eta_min in 0.0..1.0f64) {
            let a = kl_anneal(t, eta_min, 0.9999);
            let b = kl_anneal(t + 1, eta_min, 0.9999);
            prop_assert!(a >= eta_min - 1e-15 && b < 1.0);
            prop_assert!(eta_min == 1.0 || b > a);
        }
    }

    #[test]
    fn anneal_examples() {
        assert!((kl_anneal(0, 0.01, 0.9999) - 0.01).abs() < 1e-15);
        assert!((kl_anneal(10_000, 0.01, 0.9999) - 0.6359).abs() < 1e-4);
        assert!((kl_anneal(10_000_000, 0.01, 0.9999) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let mut cfg = VaskeganConfig::paper();
        cfg.eta_min = 1.0;
        assert!((vae_total_loss(1.0, 0.4, 0.7, 0, &cfg) - 1.9).abs() < 1e-12);
        assert!((vae_total_loss(1.0, 0.1, 0.0, 0, &cfg) - 1.1).abs() < 1e-12);
        cfg.w_kl = 0.0;
        assert_eq!(vae_total_loss(1.0, 5.0, 0.7, 3, &cfg), 1.7);
    }

    #[test]
    fn bce_examples() {
        assert!((disc_loss(&[0.2], &[0.9]) - 0.3285).abs() < 1e-4);
        assert!((disc_loss(&[0.5, 0.5], &[0.5]) - 2.0 * (2.0 as Real).ln()).abs() < 1e-12);
        assert!(disc_loss(&[1e-12], &[1.0 - 1e-12]) < 1e-9);
    }

    #[test]
    fn decoder_activation() {
        let o = decoder_output_from(&[0.3, -0.2, 0.0, 0.0, 1.0, 0.0, 0.0], Temperature::new(0.5).unwrap()).unwrap();
        assert!((o.pen.q[0] - 0.7870).abs() < 1e-4 && (o.pen.q[1] - 0.1065).abs() < 1e-4);
        assert!((o.sigma_x - (0.5 as Real).sqrt()).abs() < 1e-12);
        let o = decoder_output_from(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], Temperature::ONE).unwrap();
        assert_eq!((o.sigma_x, o.sigma_y), (1.0, 1.0));
        assert!(decoder_output_from(&[0.0; 6], Temperature::ONE).is_err());
        let cold = decoder_output_from(&[0.4, 0.1, 0.5, 0.5, 0.0, 2.0, 0.0], Temperature::new(1e-8).unwrap()).unwrap();
        let p = cold.sample(&mut seeded_rng(1));
        assert_eq!(p.pen, PenState::Up);
        assert!((p.dx - 0.4).abs() < 1e-3 && (p.dy - 0.1).abs() < 1e-3);
    }

    #[test]
    fn zero_encoder_gives_prior() {
        let mut store = ParamStore::new();
        let vae = Vae::new(&mut store, "vae", &tiny(), &mut seeded_rng(1)).unwrap();
        zero(&mut store, &vae.encoder_params());
        let (d, _) = data(1);
        let code = vae.encode(&store, &d[0], &mut seeded_rng(2)).unwrap();
        assert!(code.mu.iter().chain(&code.log_var).all(|&v| v == 0.0));
        assert_eq!(code.sigma(), vec![1.0; 3]);
        let expected = vae.noise(1, &mut seeded_rng(2));
        assert_eq!(code.z, expected.row(0).to_vec());
        assert!(vae.encode(&store, &Sketch::new(vec![], ""), &mut seeded_rng(2)).is_err());
    }

    #[test]
    fn decoder_init_oracles() {
        let cfg = VaskeganConfig { latent: 1, decoder_hidden: 1, ..tiny() };
        let mut store = ParamStore::new();
        let vae = Vae::new(&mut store, "vae", &cfg, &mut seeded_rng(1)).unwrap();
        let mut g = Graph::new();
        let z = g.zeros(1, 1);
        zero(&mut store, &[vae.init.b]);
        let (h, c) = vae.decoder_init(&mut g, &store, z).unwrap();
        assert_eq!((g.value(h)[[0, 0]], g.value(c)[[0, 0]]), (0.0, 0.0));
        store.set_value(vae.init.w, ndarray::array![[0.5, -2.0]]).unwrap();
        store.set_value(vae.init.b, ndarray::array![[0.1, 0.3]]).unwrap();
        let mut g = Graph::new();
        let z = g.constant(ndarray::array![[1.5]]);
        let (h, c) = vae.decoder_init(&mut g, &store, z).unwrap();
        assert!((g.value(h)[[0, 0]] - (0.5 * 1.5 + 0.1 as Real).tanh()).abs() < 1e-15);
        assert!((g.value(c)[[0, 0]] - (-2.0 * 1.5 + 0.3 as Real).tanh()).abs() < 1e-15);
        let bad = g.zeros(1, 2);
        assert!(vae.decoder_init(&mut g, &store, bad).is_err());
    }

    #[test]
    fn reparameterization_passes_gradient_to_mean() {
        // f(z) = sum z^2 through z = mu + sigma * eps: df/dmu = 2 z
        let mut store = ParamStore::new();
        let mu = store.add("mu", ndarray::array![[0.3, -0.7]]).unwrap();
        let lv = store.add("lv", ndarray::array![[0.2, -0.4]]).unwrap();
        let eps = ndarray::array![[0.5, 1.5]];
        let mut g = Graph::new();
        let (m, l) = (g.param(&store, mu), g.param(&store, lv));
        let z = Vae::reparameterize(&mut g, m, l, eps.clone());
        let zv = g.value(z).clone();
        let sq = g.square(z);
        let f = g.sum(sq);
        g.backward(f, &mut store).unwrap();
        for k in 0..2 {
            assert!((store.grad(mu)[[0, k]] - 2.0 * zv[[0, k]]).abs() < 1e-12);
        }
        let report = finite_diff_check(
            &mut store,
            &[mu, lv],
            |st| {
                let mut g = Graph::new();
                let (m, l) = (g.param(st, mu), g.param(st, lv));
                let z = Vae::reparameterize(&mut g, m, l, eps.clone());
                let sq = g.square(z);
                let f = g.sum(sq);
                Ok((g, f))
            },
            1e-6,
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.passed());
    }

    #[test]
    fn total_loss_gradients_match_finite_differences() {
        let (d, n_max) = data(3);
        let mut cfg = tiny();
        cfg.kl_min = 0.0;
        cfg.eta_min = 0.5;
        let model = VaskeganModel::new(cfg, 4).unwrap();
        let mut t = VaskeganTrainer::new(model, n_max, 4);
        let refs: Vec<&Sketch> = d[..2].iter().collect();
        let batch = SequenceBatch::new(&refs, n_max);
        let ids = t.model.vae.params();
        let mut store = std::mem::take(&mut t.model.store);
        let report = finite_diff_check(
            &mut store,
            &ids,
            |st| {
                let mut g = Graph::new();
                let (terms, _) = t.loss_terms(&mut g, st, &batch, 3, &mut seeded_rng(9), false)?;
                assert!(terms.kl.is_some() && terms.adv.is_some());
                Ok((g, terms.total))
            },
            1e-5,
            1e-4,
            Some(6),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn zero_discriminator_loss_is_two_ln2() {
        let (d, n_max) = data(5);
        let mut model = VaskeganModel::new(tiny(), 5).unwrap();
        let ids = model.discriminator.params();
        zero(&mut model.store, &ids);
        let refs: Vec<&Sketch> = d[..3].iter().collect();
        let mut g = Graph::new();
        let seq: Vec<Var> = crate::batch::discriminator_inputs(&refs, n_max).into_iter().map(|t| g.constant(t)).collect();
        let l = model.discriminator.adversarial_loss(&mut g, &model.store, &seq, &seq).unwrap();
        assert!((g.scalar(l).unwrap() - 2.0 * (2.0 as Real).ln()).abs() < 1e-12);
    }

    #[test]
    fn training_steps_run_and_are_reproducible() {
        let (d, n_max) = data(6);
        let run = || {
            let mut t = VaskeganTrainer::new(VaskeganModel::new(tiny(), 6).unwrap(), n_max, 6);
            let steps = t.train(&d, 3).unwrap();
            (steps, t.model.store)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert!(sa.bitwise_eq(&sb));
        assert!((a[0].eta - 0.01).abs() < 1e-15);
        assert!(a.iter().all(|s| s.total.is_finite() && s.d_loss > 0.0));
    }

    #[test]
    fn kl_term_uses_floor() {
        let (d, n_max) = data(7);
        let mut cfg = tiny();
        cfg.adversarial_weight = 0.0;
        cfg.kl_min = 50.0;
        let t = VaskeganTrainer::new(VaskeganModel::new(cfg.clone(), 7).unwrap(), n_max, 7);
        let refs: Vec<&Sketch> = d[..2].iter().collect();
        let batch = SequenceBatch::new(&refs, n_max);
        let mut g = Graph::new();
        let (terms, _) = t.loss_terms(&mut g, &t.model.store, &batch, 0, &mut seeded_rng(1), false).unwrap();
        let (lr, kl, total) = (g.scalar(terms.lr).unwrap(), g.scalar(terms.kl.unwrap()).unwrap(), g.scalar(terms.total).unwrap());
        assert!(kl < 50.0);
        let expected = vae_total_loss(lr as f64, kl as f64, 0.0, 0, &cfg);
        assert!((total as f64 - expected).abs() < 1e-9);
        assert!((total as f64 - (lr as f64 + 0.5 * 0.01 * 50.0)).abs() < 1e-9);
    }

    #[test]
    fn pure_gan_ablation_runs_and_leaves_encoder() {
        let (d, n_max) = data(8);
        let mut cfg = tiny();
        cfg.pure_gan = true;
        let mut t = VaskeganTrainer::new(VaskeganModel::new(cfg, 8).unwrap(), n_max, 8);
        let before = t.model.store.clone();
        let steps = t.train(&d, 3).unwrap();
        assert!(steps.iter().all(|s| s.kl == 0.0));
        for id in t.model.vae.encoder_params() {
            assert_eq!(t.model.store.value(id), before.value(id));
        }
        assert!(t.reconstruction_eval(&d).unwrap().is_finite());
    }

    #[test]
    fn transfer_initialization_copies_weights() {
        let (d, n_max) = data(9);
        let mut a = VaskeganTrainer::new(VaskeganModel::new(tiny(), 9).unwrap(), n_max, 9);
        a.train(&d, 2).unwrap();
        let mut b = VaskeganTrainer::new(VaskeganModel::new(tiny(), 10).unwrap(), n_max, 10);
        b.init_from(&a.model.store).unwrap();
        assert!(b.model.store.bitwise_eq(&a.model.store));
        b.train(&d, 2).unwrap();
    }

    #[test]
    fn conditional_generation() {
        let (d, n_max) = data(11);
        let m = VaskeganModel::new(tiny(), 11).unwrap();
        for tau in [0.2, 0.4, 0.6, 0.8, 1.0] {
            let s = m.conditional_generate(&d[0], Temperature::new(tau).unwrap(), n_max, &mut seeded_rng(1)).unwrap();
            s.validate().unwrap();
            assert!(s.len_real() <= n_max);
        }
        let z = m.vae.noise(1, &mut seeded_rng(3));
        let cold = Temperature::new(1e-9).unwrap();
        let a = m.vae.decode(&m.store, &z, cold, n_max, &mut seeded_rng(4)).unwrap();
        let b = m.vae.decode(&m.store, &z, cold, n_max, &mut seeded_rng(5)).unwrap();
        assert_eq!(a[0].points.len(), b[0].points.len());
        for (p, q) in a[0].points.iter().zip(&b[0].points) {
            assert_eq!(p.pen, q.pen);
            assert!((p.dx - q.dx).abs() < 1e-3 && (p.dy - q.dy).abs() < 1e-3);
        }
        let prior = m.sample(3, Temperature::ONE, n_max, &mut seeded_rng(6)).unwrap();
        assert_eq!(prior.len(), 3);
    }

    #[test]
    fn completion_keeps_prefix() {
        let (d, n_max) = data(12);
        let m = VaskeganModel::new(tiny(), 12).unwrap();
        let mut rng = seeded_rng(1);
        for _ in 0..5 {
            let cut = rng.random_range(1..=n_max);
            let partial = Sketch::new(d[0].points[..cut].to_vec(), "box");
            let s = m.complete(&partial, Temperature::new(0.25).unwrap(), n_max, &mut rng).unwrap();
            assert_eq!(&s.points[..cut], &partial.points[..]);
            assert!(s.len_real() <= n_max);
            s.validate().unwrap();
        }
        assert!(m.complete(&Sketch::new(vec![], ""), Temperature::ONE, n_max, &mut rng).is_err());
        let long = Sketch::new(vec![StrokePoint5::new(0.1, 0.1, PenState::Down); n_max + 1], "");
        assert!(matches!(m.complete(&long, Temperature::ONE, n_max, &mut rng), Err(Error::TooLong { .. })));
    }
}
