//! SkeGAN: coupled offset/pen-state generator with mixture and categorical heads.

pub mod generator;
pub mod heads;

pub use generator::{CoupledGenState, CoupledGenerator, GeneratorConfig, GraphState, ReconstructionLoss, StepOutput};
pub use heads::{gmm_params_from, pen_probs_from, sample_point, GmmParams, PenStateProbs, Temperature};

use crate::config::SkeganConfig;
use crate::discriminator::{Discriminator, DiscriminatorKind};
use crate::nn::ParamStore;
use crate::{seeded_rng, Result};

/// Generator and bidirectional-LSTM discriminator sharing one parameter store.
#[derive(Clone, Debug)]
pub struct SkeganModel {
    pub store: ParamStore,
    pub generator: CoupledGenerator,
    pub discriminator: Discriminator,
    pub config: SkeganConfig,
}

impl SkeganModel {
    pub fn new(config: SkeganConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let generator = CoupledGenerator::new(&mut store, "gen", config.generator, &mut rng)?;
        let discriminator = Discriminator::new(&mut store, "disc", DiscriminatorKind::BiLstm, config.disc_hidden, &mut rng)?;
        Ok(Self { store, generator, discriminator, config })
    }
}
