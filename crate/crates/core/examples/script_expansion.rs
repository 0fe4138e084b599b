//! One line of story in, shot descriptions and five-domain scripts out.

use vgot::pipeline::{script_stage, DEFAULT_USER_INPUT};
use vgot::PipelineConfig;

fn main() -> vgot::Result<()> {
    let config = PipelineConfig {
        n_shots: 3,
        ..PipelineConfig::default()
    };
    let llm = config.llm.client(config.seed)?;
    let story = script_stage(DEFAULT_USER_INPUT, &config, llm.as_ref())?;
    for (d, s) in story.descriptions.iter().zip(&story.scripts) {
        println!("shot {} [{}]: {}", d.index, story.assignment[d.index], d.text);
        println!("{}\n", s.prompt.to_labeled_text());
    }
    let bytes = vgot::story_file::serialize_story(&story)?;
    println!("story file: {} bytes", bytes.len());
    Ok(())
}
