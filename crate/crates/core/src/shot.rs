//! Shot-level clips: `k` frames conditioned on the keyframe's image
//! embedding and the shot's short description (not the full script).

use crate::backend::Backend;
use crate::casting::Keyframe;
use crate::conditioning::Condition;
use crate::diffusion::{sample_reverse_eta, FrameLatent};
use crate::error::{Result, VgotError};
use crate::script::ShotDescription;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ShotClip {
    pub shot_index: usize,
    pub frames: Vec<FrameLatent>,
    pub condition: Condition,
    pub k: usize,
}

/// Condition shared by every frame of a shot.
pub fn shot_condition(
    short: &ShotDescription,
    keyframe: &Keyframe,
    ip_scale: f64,
    backend: &Backend,
) -> Result<Condition> {
    let text = backend.text_encoder.encode(&short.text)?;
    if ip_scale == 0.0 {
        return Ok(Condition::text_only(text));
    }
    let mut ip = backend.image_encoder.encode(&keyframe.latent)?;
    ip.source = format!("keyframe:{}", keyframe.shot_index);
    Condition::with_ip(text, ip, ip_scale)
}

/// Seed of frame `frame` of shot `shot`.
pub fn frame_seed(seed: u64, shot: usize, frame: usize) -> u64 {
    seed::derive_seed(seed, "shot-frame", &[shot as i64, frame as i64])
}

pub fn generate_shot_clip(
    short: &ShotDescription,
    keyframe: &Keyframe,
    k: usize,
    ip_scale: f64,
    backend: &Backend,
    seed: u64,
) -> Result<ShotClip> {
    if k == 0 {
        return Err(VgotError::Config("frames per shot must be at least 1".into()));
    }
    let condition = shot_condition(short, keyframe, ip_scale, backend)?;
    let frames = (0..k)
        .map(|f| {
            sample_reverse_eta(
                backend.denoiser.as_ref(),
                &condition,
                &backend.schedule,
                backend.shape,
                frame_seed(seed, short.index, f),
                backend.eta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShotClip {
        shot_index: short.index,
        frames,
        condition,
        k,
    })
}
