//! Consistency metrics on a generated timeline, and the hand-sized cases.

use vgot::diffusion::{FrameLatent, LatentShape};
use vgot::metrics::{psnr, PSNR_CAP_DB};
use vgot::pipeline::{keyframe_stage, metrics_stage, script_stage, video_stage, DEFAULT_USER_INPUT};
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let shape = LatentShape::new(1, 1, 4);
    let zeros = FrameLatent::zeros(shape);
    let ones = FrameLatent::from_vec(shape, vec![0.1; 4])?;
    println!(
        "psnr(0, 0.1, max 1) = {:.2} dB (cap {PSNR_CAP_DB})",
        psnr(&zeros, &ones, 1.0)?
    );

    let config = PipelineConfig::default();
    let llm = config.llm.client(config.seed)?;
    let story = script_stage(DEFAULT_USER_INPUT, &config, llm.as_ref())?;
    let backend = config.backend()?;
    let keyframes = keyframe_stage(&story, &config, &backend)?;
    let timeline = video_stage(&story, &keyframes, &config, &backend)?;
    let report = metrics_stage(&story, &timeline, &config)?;
    print!("{}", report.render_table());
    Ok(())
}
