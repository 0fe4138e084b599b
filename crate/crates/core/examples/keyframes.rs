//! Render avatars and one identity-conditioned keyframe per shot.

use vgot::pipeline::{keyframe_stage, script_stage, DEFAULT_USER_INPUT};
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let config = PipelineConfig {
        n_shots: 8,
        shots_per_avatar: 4,
        ..PipelineConfig::default()
    };
    let llm = config.llm.client(config.seed)?;
    let story = script_stage(DEFAULT_USER_INPUT, &config, llm.as_ref())?;
    let backend = config.backend()?;
    let keyframes = keyframe_stage(&story, &config, &backend)?;
    for kf in &keyframes {
        let id = &kf.latent.channel_means()[..config.identity_channels];
        println!(
            "shot {} avatar {}: identity {:.3?}",
            kf.shot_index, story.assignment[kf.shot_index], id
        );
    }
    Ok(())
}
