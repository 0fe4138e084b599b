//! Full run into a directory, then read the artifacts back.

use vgot::pipeline::{self, DEFAULT_USER_INPUT};
use vgot::{run_pipeline, PipelineConfig};

fn main() -> vgot::Result<()> {
    let dir = std::env::temp_dir().join("vgot-end-to-end");
    let config = PipelineConfig {
        output_dir: dir.clone(),
        ..PipelineConfig::default()
    };
    let run = run_pipeline(DEFAULT_USER_INPUT, &config)?;
    print!("{}", run.report.render_table());
    for (file, hash) in pipeline::read_manifest(&dir)? {
        println!("{} {file}", &hash[..16]);
    }
    let frames = vgot::tensor_file::read_tensor_file(&dir.join(pipeline::FRAMES_FILE))?;
    println!("frames tensor dims {:?}", frames.dims());
    Ok(())
}
