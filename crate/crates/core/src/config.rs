//! Run configuration and the two built-in profiles.

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorKind;
use crate::nn::LrSchedule;
use crate::skegan::GeneratorConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Desk-scale sizes that train on one CPU in minutes.
    Toy,
    /// Published sizes and iteration counts.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper" => Ok(Self::Paper),
            other => Err(Error::InvalidArgument(format!("unknown profile {other:?} (expected toy or paper)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Skegan,
    Vaskegan,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skegan" => Ok(Self::Skegan),
            "vaskegan" => Ok(Self::Vaskegan),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?} (expected skegan or vaskegan)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeganConfig {
    pub generator: GeneratorConfig,
    pub disc_hidden: usize,
    pub batch: usize,
    pub g_lr: LrSchedule,
    pub d_lr: LrSchedule,
    /// Gradients are clamped elementwise to `[-clip, clip]`.
    pub clip: f64,
    pub rollout_max_steps: usize,
    pub rollout_count: usize,
    /// Rollout policy update `beta <- rate * beta + (1 - rate) * theta`.
    pub rollout_update_rate: f64,
    pub pg_weight: f64,
    /// Weight of the adversarial loss on the offset generator; 0 disables that update.
    pub adversarial_weight: f64,
    pub pretrain_g_iters: usize,
    pub pretrain_d_iters: usize,
    pub rounds: usize,
    /// Generator iterations per round; `None` means one pass over the data.
    pub epoch_iters: Option<usize>,
    pub d_epochs_per_round: usize,
}

impl SkeganConfig {
    pub fn paper() -> Self {
        Self {
            generator: GeneratorConfig { hidden: 512, mixtures: 20, recurrent_dropout: 0.1 },
            disc_hidden: 256,
            batch: 100,
            g_lr: LrSchedule { lr0: 0.001, decay: 0.9999, period: 700, lr_min: 0.00001 },
            d_lr: LrSchedule { lr0: 0.001, decay: 0.9999, period: 1400, lr_min: 0.00001 },
            clip: 1.0,
            rollout_max_steps: 8,
            rollout_count: 8,
            rollout_update_rate: 0.8,
            pg_weight: 1.0,
            adversarial_weight: 1.0,
            pretrain_g_iters: 38_500,
            pretrain_d_iters: 35_000,
            rounds: 4,
            epoch_iters: Some(700),
            d_epochs_per_round: 2,
        }
    }

    pub fn toy() -> Self {
        Self {
            generator: GeneratorConfig { hidden: 128, mixtures: 20, recurrent_dropout: 0.1 },
            disc_hidden: 64,
            batch: 20,
            g_lr: LrSchedule { lr0: 0.001, decay: 0.9999, period: 50, lr_min: 0.00001 },
            d_lr: LrSchedule { lr0: 0.05, decay: 0.9999, period: 100, lr_min: 0.00001 },
            pretrain_g_iters: 2000,
            pretrain_d_iters: 1000,
            rounds: 3,
            epoch_iters: Some(50),
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.generator.hidden,
            self.generator.mixtures,
            self.disc_hidden,
            self.batch,
            self.rollout_count,
            self.d_epochs_per_round,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument("sizes and counts must be positive".into()));
        }
        if !self.batch.is_multiple_of(2) {
            return Err(Error::InvalidArgument("batch must be even (half real, half generated)".into()));
        }
        if !(self.clip > 0.0) || self.pg_weight < 0.0 || self.adversarial_weight < 0.0 {
            return Err(Error::InvalidArgument("clip must be positive and loss weights non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.rollout_update_rate) || !(0.0..1.0).contains(&self.generator.recurrent_dropout) {
            return Err(Error::InvalidArgument("update rate must be in [0, 1] and dropout in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaskeganConfig {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub latent: usize,
    pub disc_kind: DiscriminatorKind,
    pub disc_hidden: usize,
    pub recurrent_dropout: f64,
    pub w_kl: f64,
    pub kl_min: f64,
    pub eta_min: f64,
    /// Annealing base `R` in `eta_t = 1 - (1 - eta_min) R^t`.
    pub anneal_rate: f64,
    pub batch: usize,
    pub lr: LrSchedule,
    pub d_lr: LrSchedule,
    pub clip: f64,
    pub iterations: usize,
    pub adversarial_weight: f64,
    /// Ablation: drop the encoder and KL term, sample `z` from the prior.
    pub pure_gan: bool,
}

impl VaskeganConfig {
    pub fn paper() -> Self {
        Self {
            encoder_hidden: 256,
            decoder_hidden: 512,
            latent: 128,
            disc_kind: DiscriminatorKind::Gru,
            disc_hidden: 512,
            recurrent_dropout: 0.1,
            w_kl: 0.5,
            kl_min: 0.2,
            eta_min: 0.01,
            anneal_rate: 0.9999,
            batch: 100,
            lr: LrSchedule { lr0: 0.001, decay: 0.9999, period: 100, lr_min: 0.00001 },
            d_lr: LrSchedule { lr0: 0.001, decay: 0.9999, period: 100, lr_min: 0.00001 },
            clip: 1.0,
            iterations: 200_000,
            adversarial_weight: 1.0,
            pure_gan: false,
        }
    }

    pub fn toy() -> Self {
        Self {
            encoder_hidden: 64,
            decoder_hidden: 128,
            latent: 16,
            disc_hidden: 64,
            batch: 20,
            d_lr: LrSchedule { lr0: 0.05, decay: 0.9999, period: 100, lr_min: 0.00001 },
            iterations: 2000,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.encoder_hidden, self.decoder_hidden, self.latent, self.disc_hidden, self.batch].contains(&0) {
            return Err(Error::InvalidArgument("sizes must be positive".into()));
        }
        if self.w_kl < 0.0 || !(self.anneal_rate > 0.0 && self.anneal_rate < 1.0) || !(0.0..=1.0).contains(&self.eta_min) {
            return Err(Error::InvalidArgument("need w_kl >= 0, 0 < R < 1 and 0 <= eta_min <= 1".into()));
        }
        if !(self.clip > 0.0) || !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(Error::InvalidArgument("clip must be positive and dropout in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelKind,
    pub category: String,
    pub seed: u64,
    pub skegan: SkeganConfig,
    pub vaskegan: VaskeganConfig,
    /// Write a checkpoint every this many iterations; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl RunConfig {
    pub fn new(profile: Profile, model: ModelKind, seed: u64) -> Self {
        let (skegan, vaskegan) = match profile {
            Profile::Toy => (SkeganConfig::toy(), VaskeganConfig::toy()),
            Profile::Paper => (SkeganConfig::paper(), VaskeganConfig::paper()),
        };
        Self { profile, model, category: String::new(), seed, skegan, vaskegan, checkpoint_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.skegan.validate()?;
        self.vaskegan.validate()
    }

    /// CRC-32 of the canonical JSON form; stored in checkpoints.
    pub fn hash(&self) -> u32 {
        crc32fast::hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Hash of an arbitrary serializable model configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> u32 {
    crc32fast::hash(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}
