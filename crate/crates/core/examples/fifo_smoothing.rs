//! Windowed and FIFO generation of the same story, side by side.

use vgot::pipeline::{keyframe_stage, script_stage, video_stage, DEFAULT_USER_INPUT};
use vgot::smooth::SmoothMode;
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let base = PipelineConfig {
        n_shots: 3,
        frames_per_shot: 6,
        ..PipelineConfig::default()
    };
    let llm = base.llm.client(base.seed)?;
    let story = script_stage(DEFAULT_USER_INPUT, &base, llm.as_ref())?;
    let backend = base.backend()?;
    let keyframes = keyframe_stage(&story, &base, &backend)?;
    for mode in [SmoothMode::Windowed, SmoothMode::FifoReset] {
        let config = PipelineConfig { mode, ..base.clone() };
        let timeline = video_stage(&story, &keyframes, &config, &backend)?;
        println!("{}: {} frames", mode.as_str(), timeline.frames.len());
        for s in &timeline.switches {
            println!("  shot {} entered the queue at tick {}", s.shot, s.tick);
        }
        // identity drift across each shot boundary
        for shot in 1..story.n_shots {
            let (a, b) = (shot * config.frames_per_shot - 1, shot * config.frames_per_shot);
            let (ma, mb) = (timeline.frames[a].channel_means(), timeline.frames[b].channel_means());
            let jump: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            println!("  boundary {a}->{b}: channel-mean jump {jump:.3}");
        }
    }
    Ok(())
}
