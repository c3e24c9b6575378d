//! Binary checkpoints: parameters, optimizer moments, counters and the RNG
//! position, so a run can be resumed bit for bit. Layout in `docs/checkpoint-format.md`.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelKind, SkeganConfig, VaskeganConfig};
use crate::model::{Model, TrainedModel};
use crate::nn::{Adam, Moments, ParamStore, Tensor};
use crate::skegan::SkeganModel;
use crate::train::SkeganTrainer;
use crate::vaskegan::{VaskeganModel, VaskeganTrainer};
use crate::{Error, Real, Result, Rng as ChaRng};

pub const MAGIC: [u8; 8] = *b"SKGNCKPT";
pub const VERSION: u32 = 1;
const REAL_WIDTH: u8 = std::mem::size_of::<Real>() as u8;
const ROLLOUT_PREFIX: &str = "rollout/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    /// The model configuration exactly as serialized; its CRC-32 is the config hash.
    pub config: String,
    pub n_max: usize,
    pub offset_scale: f64,
    pub category: String,
    /// Trainer counters as JSON, empty for inference-only checkpoints.
    pub counters: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub t: u64,
    pub moments: Vec<(String, Moments)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaRng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaRng {
        let mut rng = ChaRng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub config_hash: u32,
    pub params: Vec<(String, Tensor)>,
    pub optimizers: Vec<(String, AdamState)>,
    pub rng: Option<RngState>,
}

fn params_of(store: &ParamStore, prefix: &str) -> Vec<(String, Tensor)> {
    store.ids().map(|id| (format!("{prefix}{}", store.name(id)), store.value(id).clone())).collect()
}

fn adam_state(store: &ParamStore, opt: &Adam) -> AdamState {
    AdamState {
        beta1: opt.beta1,
        beta2: opt.beta2,
        eps: opt.eps,
        t: opt.t,
        moments: opt.iter_moments().map(|(id, m)| (store.name(id).to_string(), m.clone())).collect(),
    }
}

fn restore_adam(store: &ParamStore, s: &AdamState) -> Result<Adam> {
    let mut opt = Adam::new(s.beta1, s.beta2, s.eps);
    opt.t = s.t;
    for (name, m) in &s.moments {
        let id = store.id(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if m.m.dim() != store.value(id).dim() || m.v.dim() != store.value(id).dim() {
            return Err(Error::Checkpoint(format!("moment shape mismatch for {name}")));
        }
        opt.set_moments(id, m.clone());
    }
    Ok(opt)
}

impl Checkpoint {
    fn new<C: Serialize>(kind: ModelKind, config: &C, store: &ParamStore, n_max: usize, offset_scale: Real, category: &str) -> Result<Self> {
        let config = serde_json::to_string(config)?;
        Ok(Self {
            config_hash: crc32fast::hash(config.as_bytes()),
            meta: CheckpointMeta { kind, config, n_max, offset_scale: offset_scale as f64, category: category.to_string(), counters: String::new() },
            params: params_of(store, ""),
            optimizers: Vec::new(),
            rng: None,
        })
    }

    /// Parameters only.
    pub fn from_model(m: &TrainedModel) -> Result<Self> {
        match &m.model {
            Model::Skegan(s) => Self::new(ModelKind::Skegan, &s.config, &s.store, m.n_max, m.offset_scale, &m.category),
            Model::Vaskegan(v) => Self::new(ModelKind::Vaskegan, &v.config, &v.store, m.n_max, m.offset_scale, &m.category),
        }
    }

    /// Full SkeGAN training state, including the rollout policy.
    pub fn from_skegan_trainer(t: &SkeganTrainer, offset_scale: Real, category: &str) -> Result<Self> {
        let store = &t.model.store;
        let mut c = Self::new(ModelKind::Skegan, &t.model.config, store, t.n_max, offset_scale, category)?;
        c.params.extend(params_of(&t.rollout, ROLLOUT_PREFIX));
        c.meta.counters = serde_json::to_string(&t.counters)?;
        c.optimizers = vec![
            ("pretrain".into(), adam_state(store, &t.pretrain_opt)),
            ("pen".into(), adam_state(store, &t.pen_opt)),
            ("offset".into(), adam_state(store, &t.offset_opt)),
        ];
        c.rng = Some(RngState::capture(&t.rng));
        Ok(c)
    }

    pub fn from_vaskegan_trainer(t: &VaskeganTrainer, offset_scale: Real, category: &str) -> Result<Self> {
        let store = &t.model.store;
        let mut c = Self::new(ModelKind::Vaskegan, &t.model.config, store, t.n_max, offset_scale, category)?;
        c.meta.counters = serde_json::to_string(&t.counters)?;
        c.optimizers = vec![("vae".into(), adam_state(store, &t.opt))];
        c.rng = Some(RngState::capture(&t.rng));
        Ok(c)
    }

    fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn optimizer(&self, name: &str) -> Result<&AdamState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s).ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {name:?}")))
    }

    /// Sets every parameter of `store` from the checkpoint; all must be present with matching shapes.
    fn fill(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.name(id));
            let t = self.param(&name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))?;
            store.set_value(id, t.clone())?;
        }
        Ok(())
    }

    /// Copies parameters whose name and shape match into `store`; returns how many were copied.
    pub fn transfer_into(&self, store: &mut ParamStore) -> usize {
        let ids: Vec<_> = store.ids().collect();
        let mut copied = 0;
        for id in ids {
            if let Some(t) = self.param(store.name(id)) {
                if t.dim() == store.value(id).dim() {
                    *store.value_mut(id) = t.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    fn check_hash(&self) -> Result<()> {
        if crc32fast::hash(self.meta.config.as_bytes()) != self.config_hash {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        Ok(())
    }

    pub fn skegan_config(&self) -> Result<SkeganConfig> {
        self.check_hash()?;
        Ok(serde_json::from_str(&self.meta.config)?)
    }

    pub fn vaskegan_config(&self) -> Result<VaskeganConfig> {
        self.check_hash()?;
        Ok(serde_json::from_str(&self.meta.config)?)
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        let model = match self.meta.kind {
            ModelKind::Skegan => {
                let mut m = SkeganModel::new(self.skegan_config()?, 0)?;
                self.fill(&mut m.store, "")?;
                Model::Skegan(m)
            }
            ModelKind::Vaskegan => {
                let mut m = VaskeganModel::new(self.vaskegan_config()?, 0)?;
                self.fill(&mut m.store, "")?;
                Model::Vaskegan(m)
            }
        };
        Ok(TrainedModel { model, n_max: self.meta.n_max, offset_scale: self.meta.offset_scale as Real, category: self.meta.category.clone() })
    }

    fn rng_state(&self) -> Result<ChaRng> {
        self.rng.map(|r| r.restore()).ok_or_else(|| Error::Checkpoint("no rng state; not a training checkpoint".into()))
    }

    pub fn skegan_trainer(&self) -> Result<SkeganTrainer> {
        if self.meta.kind != ModelKind::Skegan {
            return Err(Error::Checkpoint("not a SkeGAN checkpoint".into()));
        }
        let mut model = SkeganModel::new(self.skegan_config()?, 0)?;
        self.fill(&mut model.store, "")?;
        let mut rollout = model.store.clone();
        self.fill(&mut rollout, ROLLOUT_PREFIX)?;
        let mut t = SkeganTrainer::new(model, self.meta.n_max, 0);
        t.rollout = rollout;
        t.pretrain_opt = restore_adam(&t.model.store, self.optimizer("pretrain")?)?;
        t.pen_opt = restore_adam(&t.model.store, self.optimizer("pen")?)?;
        t.offset_opt = restore_adam(&t.model.store, self.optimizer("offset")?)?;
        t.counters = serde_json::from_str(&self.meta.counters)?;
        t.rng = self.rng_state()?;
        Ok(t)
    }

    pub fn vaskegan_trainer(&self) -> Result<VaskeganTrainer> {
        if self.meta.kind != ModelKind::Vaskegan {
            return Err(Error::Checkpoint("not a VASkeGAN checkpoint".into()));
        }
        let mut model = VaskeganModel::new(self.vaskegan_config()?, 0)?;
        self.fill(&mut model.store, "")?;
        let mut t = VaskeganTrainer::new(model, self.meta.n_max, 0);
        t.opt = restore_adam(&t.model.store, self.optimizer("vae")?)?;
        t.counters = serde_json::from_str(&self.meta.counters)?;
        t.rng = self.rng_state()?;
        Ok(t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(&MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.push(REAL_WIDTH);
        w.extend_from_slice(&self.config_hash.to_le_bytes());
        put_bytes(&mut w, serde_json::to_string(&self.meta)?.as_bytes());
        put_u32(&mut w, self.params.len());
        for (name, t) in &self.params {
            put_bytes(&mut w, name.as_bytes());
            put_tensor(&mut w, t);
        }
        put_u32(&mut w, self.optimizers.len());
        for (name, s) in &self.optimizers {
            put_bytes(&mut w, name.as_bytes());
            for v in [s.beta1, s.beta2, s.eps] {
                w.extend_from_slice(&v.to_le_bytes());
            }
            w.extend_from_slice(&s.t.to_le_bytes());
            put_u32(&mut w, s.moments.len());
            for (pname, m) in &s.moments {
                put_bytes(&mut w, pname.as_bytes());
                put_tensor(&mut w, &m.m);
                put_tensor(&mut w, &m.v);
            }
        }
        match &self.rng {
            None => w.push(0),
            Some(r) => {
                w.push(1);
                w.extend_from_slice(&r.seed);
                w.extend_from_slice(&r.stream.to_le_bytes());
                w.extend_from_slice(&r.word_pos.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&w);
        w.extend_from_slice(&crc.to_le_bytes());
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: VERSION });
        }
        if bytes.len() < 16 {
            return Err(truncated());
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let width = r.take(1)?[0];
        if width != REAL_WIDTH {
            return Err(Error::Checkpoint(format!("checkpoint stores {}-byte reals, this build uses {REAL_WIDTH}", width)));
        }
        let config_hash = r.u32()? as u32;
        let meta: CheckpointMeta = serde_json::from_slice(r.bytes()?)?;
        let params = (0..r.u32()?).map(|_| Ok((r.string()?, r.tensor()?))).collect::<Result<Vec<_>>>()?;
        let mut optimizers = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let (beta1, beta2, eps) = (r.real()?, r.real()?, r.real()?);
            let t = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let moments = (0..r.u32()?).map(|_| Ok((r.string()?, Moments { m: r.tensor()?, v: r.tensor()? }))).collect::<Result<Vec<_>>>()?;
            optimizers.push((name, AdamState { beta1, beta2, eps, t, moments }));
        }
        let rng = match r.take(1)?[0] {
            0 => None,
            1 => Some(RngState {
                seed: r.take(32)?.try_into().expect("32 bytes"),
                stream: u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
            }),
            f => return Err(Error::Checkpoint(format!("bad rng flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after rng state".into()));
        }
        let c = Self { meta, config_hash, params, optimizers, rng };
        c.check_hash()?;
        Ok(c)
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated() -> Error {
    Error::Checkpoint("truncated file".into())
}

fn put_u32(w: &mut Vec<u8>, n: usize) {
    w.extend_from_slice(&u32::try_from(n).expect("count fits in u32").to_le_bytes());
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    put_u32(w, b.len());
    w.extend_from_slice(b);
}

fn put_tensor(w: &mut Vec<u8>, t: &Tensor) {
    put_u32(w, t.nrows());
    put_u32(w, t.ncols());
    for v in t.iter() {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn real(&mut self) -> Result<Real> {
        Ok(Real::from_le_bytes(self.take(REAL_WIDTH as usize)?.try_into().expect("real width")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let (rows, cols) = (self.u32()?, self.u32()?);
        let n = rows.checked_mul(cols).ok_or_else(truncated)?;
        let raw = self.take(n.checked_mul(REAL_WIDTH as usize).ok_or_else(truncated)?)?;
        let vals: Vec<Real> = raw.chunks_exact(REAL_WIDTH as usize).map(|c| Real::from_le_bytes(c.try_into().expect("real width"))).collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length matches shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use crate::skegan::GeneratorConfig;
    use crate::toy::toy_corpus;
    use rand::Rng;

    fn sk_config() -> SkeganConfig {
        SkeganConfig {
            generator: GeneratorConfig { hidden: 5, mixtures: 2, recurrent_dropout: 0.1 },
            disc_hidden: 3,
            batch: 4,
            rollout_count: 2,
            epoch_iters: Some(1),
            d_epochs_per_round: 1,
            ..SkeganConfig::toy()
        }
    }

    fn data() -> (Vec<crate::stroke::Sketch>, usize) {
        let d = crate::stroke::normalize_offsets(&toy_corpus(8, &mut seeded_rng(1)).unwrap()).unwrap();
        (d.sketches, d.n_max)
    }

    fn trained() -> (SkeganTrainer, Vec<crate::stroke::Sketch>) {
        let (d, n_max) = data();
        let mut t = SkeganTrainer::new(SkeganModel::new(sk_config(), 3).unwrap(), n_max, 3);
        t.pretrain_generator(&d, 2).unwrap();
        t.pretrain_discriminator(&d, 1).unwrap();
        t.train_round(&d).unwrap();
        (t, d)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (t, _) = trained();
        let c = Checkpoint::from_skegan_trainer(&t, 3.5, "box").unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn random_parameters_round_trip() {
        let mut rng = seeded_rng(4);
        let mut m = TrainedModel { model: Model::Skegan(SkeganModel::new(sk_config(), 4).unwrap()), n_max: 9, offset_scale: 1.25, category: "c".into() };
        let store = m.model.store_mut();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.value_mut(id).mapv_inplace(|_| rng.random::<f64>() as Real * 1e3 - 5e2);
        }
        let c = Checkpoint::from_model(&m).unwrap();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap().to_model().unwrap();
        assert!(back.model.store().bitwise_eq(m.model.store()));
        assert_eq!((back.n_max, back.offset_scale, back.category.as_str()), (9, 1.25, "c"));
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (mut a, d) = trained();
        let c = Checkpoint::from_skegan_trainer(&a, 1.0, "").unwrap();
        let mut b = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap().skegan_trainer().unwrap();
        a.train_round(&d).unwrap();
        b.train_round(&d).unwrap();
        assert!(a.model.store.bitwise_eq(&b.model.store));
        assert!(a.rollout.bitwise_eq(&b.rollout));
        assert_eq!(a.counters, b.counters);
    }

    #[test]
    fn vaskegan_trainer_round_trip_and_resume() {
        let (d, n_max) = data();
        let cfg = VaskeganConfig { encoder_hidden: 3, decoder_hidden: 4, latent: 2, disc_hidden: 3, batch: 4, ..VaskeganConfig::toy() };
        let mut a = VaskeganTrainer::new(VaskeganModel::new(cfg, 5).unwrap(), n_max, 5);
        a.train(&d, 2).unwrap();
        let c = Checkpoint::from_vaskegan_trainer(&a, 1.0, "").unwrap();
        let mut b = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap().vaskegan_trainer().unwrap();
        assert!(c.skegan_trainer().is_err());
        let sa = a.train(&d, 2).unwrap();
        let sb = b.train(&d, 2).unwrap();
        assert_eq!(sa, sb);
        assert!(a.model.store.bitwise_eq(&b.model.store));
    }

    #[test]
    fn version_truncation_and_corruption_are_errors() {
        let (t, _) = trained();
        let bytes = Checkpoint::from_skegan_trainer(&t, 1.0, "").unwrap().to_bytes().unwrap();
        let mut v2 = bytes.clone();
        v2[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::CheckpointVersion { found: 2, expected: 1 })));
        for cut in [0, 5, 13, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn transfer_loads_into_same_shaped_model() {
        let (t, _) = trained();
        let c = Checkpoint::from_skegan_trainer(&t, 1.0, "cat").unwrap();
        let mut other = SkeganModel::new(sk_config(), 99).unwrap();
        assert_eq!(c.transfer_into(&mut other.store), other.store.len());
        assert!(other.store.bitwise_eq(&t.model.store));
        let mut bigger = SkeganModel::new(SkeganConfig { disc_hidden: 6, ..sk_config() }, 1).unwrap();
        let copied = c.transfer_into(&mut bigger.store);
        assert!(copied > 0 && copied < bigger.store.len());
    }
}
