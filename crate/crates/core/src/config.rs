//! Run-level configuration. Values come from built-in defaults, then an
//! optional JSON file, then command-line flags; the effective config is
//! written into every run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ToyWorldParams};
use crate::conditioning::ConditionProjector;
use crate::diffusion::{LatentShape, NoiseSchedule};
use crate::error::{Result, VgotError};
use crate::llm::{HttpLlm, LlmClient, MockLlm};
use crate::metrics::{CrossPairing, GramStyleExtractor, IdentityChannelExtractor, MetricsConfig, ToyClipScorer};
use crate::seed;
use crate::smooth::{SmoothConfig, SmoothMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LlmBackend {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for LlmBackend {
    type Err = VgotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock" => Ok(LlmBackend::Mock),
            "http" => Ok(LlmBackend::Http),
            other => Err(VgotError::Config(format!(
                "unknown llm backend `{other}` (expected mock or http)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: LlmBackend,
    /// Chat endpoint for the http backend.
    pub endpoint: Option<String>,
}

impl LlmConfig {
    pub fn client(&self, seed: u64) -> Result<Box<dyn LlmClient>> {
        match self.backend {
            LlmBackend::Mock => Ok(Box::new(MockLlm::new(seed::derive_seed(seed, "llm", &[])))),
            LlmBackend::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| VgotError::Config("the http llm backend needs an endpoint".into()))?;
                Ok(Box::new(HttpLlm::from_env(endpoint)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    Mock,
    /// Supplied by the caller through [`Backend::with_text_encoder`] and
    /// [`Backend::with_image_encoder`].
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceExtractorKind {
    #[default]
    IdentityChannels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleExtractorKind {
    #[default]
    GramStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipScorerKind {
    #[default]
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub n_shots: usize,
    pub frames_per_shot: usize,
    pub mode: SmoothMode,
    /// Sampling steps `T`; also the FIFO queue length.
    pub steps: usize,
    /// Length of the dense linear table the sampling steps are strided from.
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eta: f64,
    pub shape: LatentShape,
    pub identity_channels: usize,
    pub embedding_dim: usize,
    pub prior_std: f64,
    /// Weight of non-identity content in mock image embeddings.
    pub scene_weight: f64,
    pub ip_scale: f64,
    pub shots_per_avatar: usize,
    /// Reset boundary `L`; `frames_per_shot` when absent.
    pub reset_boundary: Option<usize>,
    pub parallel: bool,
    pub seed: u64,
    pub llm: LlmConfig,
    pub encoder: EncoderKind,
    pub face_extractor: FaceExtractorKind,
    pub style_extractor: StyleExtractorKind,
    pub style_features: usize,
    pub clip_scorer: ClipScorerKind,
    pub cross_pairing: CrossPairing,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_shots: 4,
            frames_per_shot: 8,
            mode: SmoothMode::FifoReset,
            steps: 50,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            eta: 0.0,
            shape: LatentShape::default(),
            identity_channels: 4,
            embedding_dim: 16,
            prior_std: 0.5,
            scene_weight: 0.05,
            ip_scale: 1.0,
            shots_per_avatar: 6,
            reset_boundary: None,
            parallel: false,
            seed: 0,
            llm: LlmConfig::default(),
            encoder: EncoderKind::Mock,
            face_extractor: FaceExtractorKind::IdentityChannels,
            style_extractor: StyleExtractorKind::GramStyle,
            style_features: 4,
            clip_scorer: ClipScorerKind::Toy,
            cross_pairing: CrossPairing::Consecutive,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8], origin: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            VgotError::parse(format!("{origin}:{path}"), e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VgotError::io(path, e))?;
        Self::from_json(&bytes, &path.display().to_string())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self).map_err(|e| VgotError::Format(e.to_string()))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_shots", self.n_shots),
            ("frames_per_shot", self.frames_per_shot),
            ("steps", self.steps),
            ("train_steps", self.train_steps),
            ("embedding_dim", self.embedding_dim),
            ("identity_channels", self.identity_channels),
            ("shots_per_avatar", self.shots_per_avatar),
            ("style_features", self.style_features),
            ("shape.h", self.shape.h),
            ("shape.w", self.shape.w),
            ("shape.d", self.shape.d),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(VgotError::Config(format!("{name} must be at least 1")));
        }
        if self.identity_channels >= self.shape.d {
            return Err(VgotError::Config(format!(
                "identity_channels ({}) must leave at least one of {} channels",
                self.identity_channels, self.shape.d
            )));
        }
        if self.steps > self.train_steps {
            return Err(VgotError::Config("steps cannot exceed train_steps".into()));
        }
        if !(self.prior_std >= 0.0 && self.prior_std.is_finite()) {
            return Err(VgotError::Config("prior_std must be finite and non-negative".into()));
        }
        if !(self.scene_weight >= 0.0 && self.scene_weight.is_finite()) {
            return Err(VgotError::Config("scene_weight must be finite and non-negative".into()));
        }
        if !(self.ip_scale >= 0.0 && self.ip_scale.is_finite()) {
            return Err(VgotError::Config("ip_scale must be finite and non-negative".into()));
        }
        if self.llm.backend == LlmBackend::Http && self.llm.endpoint.is_none() {
            return Err(VgotError::Config("the http llm backend needs llm.endpoint".into()));
        }
        self.smooth_config().validate(&self.schedule()?)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::strided(self.train_steps, self.steps, self.beta_start, self.beta_end)
    }

    pub fn world_params(&self) -> ToyWorldParams {
        ToyWorldParams {
            seed: self.seed,
            shape: self.shape,
            identity_channels: self.identity_channels,
            embedding_dim: self.embedding_dim,
            prior_std: self.prior_std,
            scene_weight: self.scene_weight,
        }
    }

    /// The toy backend. With `encoder = external` the caller must swap in
    /// its own encoders before use; this only refuses to hand out mocks.
    pub fn backend(&self) -> Result<Backend> {
        if self.encoder == EncoderKind::External {
            return Err(VgotError::Config(
                "encoder = external needs encoders supplied through the library API".into(),
            ));
        }
        self.toy_backend()
    }

    pub fn toy_backend(&self) -> Result<Backend> {
        let mut backend = Backend::toy(self.world_params(), self.schedule()?)?;
        backend.eta = self.eta;
        Ok(backend)
    }

    pub fn smooth_config(&self) -> SmoothConfig {
        let mut c = SmoothConfig::new(self.mode, self.frames_per_shot, self.steps);
        c.reset_boundary = self.reset_boundary.unwrap_or(self.frames_per_shot);
        c.eta = self.eta;
        c.parallel = self.parallel;
        c
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            cross_pairing: self.cross_pairing,
            psnr_max: None,
        }
    }

    pub fn face_extractor(&self) -> IdentityChannelExtractor {
        IdentityChannelExtractor {
            identity_channels: self.identity_channels,
        }
    }

    pub fn style_extractor(&self) -> GramStyleExtractor {
        GramStyleExtractor::new(
            seed::derive_seed(self.seed, "style-extractor", &[]),
            self.shape.d,
            self.style_features,
        )
    }

    pub fn clip_scorer(&self) -> Result<ToyClipScorer> {
        let params = self.world_params();
        let projector: ConditionProjector = params.projector()?;
        Ok(ToyClipScorer::new(params.text_encoder(), &projector))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_json(&c.to_json().unwrap(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(c.smooth_config().reset_boundary, 8);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_json(br#"{"n_shots": 2, "mode": "windowed"}"#, "mem").unwrap();
        assert_eq!(c.n_shots, 2);
        assert_eq!(c.mode, SmoothMode::Windowed);
        assert_eq!(c.frames_per_shot, 8);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            r#"{"n_shots": 0}"#,
            r#"{"mode": "rolling"}"#,
            r#"{"unknown": 1}"#,
            r#"{"reset_boundary": 9}"#,
            r#"{"identity_channels": 8}"#,
            r#"{"llm": {"backend": "http"}}"#,
            r#"{"face_extractor": "insightface"}"#,
        ] {
            assert!(PipelineConfig::from_json(bad.as_bytes(), "mem").is_err(), "{bad}");
        }
        let err = PipelineConfig::from_json(br#"{"llm": {"backend": 3}}"#, "cfg.json").unwrap_err();
        assert!(err.to_string().contains("llm.backend"), "{err}");
    }
}
