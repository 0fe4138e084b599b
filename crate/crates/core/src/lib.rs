//! Multi-shot video generation over a small analytic diffusion backend.
//!
//! The pipeline expands a one-line story into per-shot scripts, casts
//! avatars, renders identity-preserving keyframes and then generates the
//! frames of every shot, optionally smoothing across shot boundaries with a
//! FIFO latent queue. Metrics score face and style consistency within and
//! across shots.

pub mod backend;
pub mod casting;
pub mod cli;
pub mod conditioning;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod script;
pub mod seed;
pub mod shot;
pub mod smooth;
pub mod story_file;
pub mod tensor_file;

pub use backend::{Backend, ToyWorldParams};
pub use config::PipelineConfig;
pub use error::{Result, VgotError};
pub use pipeline::{run_pipeline, RunArtifacts};
