//! The bundle of models every generation stage calls into.

use std::sync::Arc;

use crate::casting::{ImageEncoder, MockImageEncoder};
use crate::conditioning::{ConditionProjector, MockTextEncoder, TextEncoder};
use crate::diffusion::{AnalyticDenoiser, DenoiserBackend, GaussianWorld, LatentShape, NoiseSchedule};
use crate::error::Result;
use crate::seed;

/// Schedule, denoiser and encoders for one run.
#[derive(Clone)]
pub struct Backend {
    pub schedule: NoiseSchedule,
    pub shape: LatentShape,
    pub denoiser: Arc<dyn DenoiserBackend>,
    pub text_encoder: Arc<dyn TextEncoder>,
    pub image_encoder: Arc<dyn ImageEncoder>,
    /// DDIM η; 0 is deterministic.
    pub eta: f64,
}

/// Parameters of the analytic toy world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyWorldParams {
    pub seed: u64,
    pub shape: LatentShape,
    pub identity_channels: usize,
    pub embedding_dim: usize,
    pub prior_std: f64,
    /// Weight of non-identity content in mock image embeddings.
    pub scene_weight: f64,
}

impl Default for ToyWorldParams {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: LatentShape::default(),
            identity_channels: 4,
            embedding_dim: 16,
            prior_std: 0.5,
            scene_weight: 0.05,
        }
    }
}

impl ToyWorldParams {
    pub fn projector(&self) -> Result<ConditionProjector> {
        ConditionProjector::new(
            seed::derive_seed(self.seed, "projector", &[]),
            self.shape,
            self.embedding_dim,
            self.identity_channels,
        )
    }

    pub fn world(&self) -> Result<GaussianWorld> {
        GaussianWorld::new(self.prior_std, Arc::new(self.projector()?))
    }

    pub fn text_encoder(&self) -> MockTextEncoder {
        MockTextEncoder {
            dim: self.embedding_dim,
            seed: seed::derive_seed(self.seed, "text-encoder", &[]),
        }
    }

    pub fn image_encoder(&self) -> Result<MockImageEncoder> {
        MockImageEncoder::new(
            seed::derive_seed(self.seed, "image-encoder", &[]),
            &self.projector()?,
            self.scene_weight,
        )
    }
}

impl Backend {
    /// Analytic denoiser and mock encoders, all fanned out from `params.seed`.
    pub fn toy(params: ToyWorldParams, schedule: NoiseSchedule) -> Result<Self> {
        Ok(Self {
            schedule,
            shape: params.shape,
            denoiser: Arc::new(AnalyticDenoiser::new(params.world()?)),
            text_encoder: Arc::new(params.text_encoder()),
            image_encoder: Arc::new(params.image_encoder()?),
            eta: 0.0,
        })
    }

    pub fn with_denoiser(mut self, denoiser: Arc<dyn DenoiserBackend>) -> Self {
        self.denoiser = denoiser;
        self
    }

    pub fn with_text_encoder(mut self, encoder: Arc<dyn TextEncoder>) -> Self {
        self.text_encoder = encoder;
        self
    }

    pub fn with_image_encoder(mut self, encoder: Arc<dyn ImageEncoder>) -> Self {
        self.image_encoder = encoder;
        self
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("steps", &self.schedule.steps())
            .field("shape", &self.shape)
            .field("eta", &self.eta)
            .finish_non_exhaustive()
    }
}
