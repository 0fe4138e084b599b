//! Command-line surface. Exit codes: 0 success, 1 validation or usage
//! error, 2 I/O or transport error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{LlmBackend, PipelineConfig};
use crate::error::Result;
use crate::pipeline::{self, RunLock};
use crate::smooth::SmoothMode;

#[derive(Debug, Parser)]
#[command(
    name = "vgot",
    version,
    about = "Multi-shot video generation with cross-shot smoothing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a one-line story into shot scripts and write story.json.
    Script(ScriptArgs),
    /// Render avatars and one keyframe per shot.
    Keyframes(KeyframesArgs),
    /// Generate the frames of every shot into a run directory.
    Generate(GenerateArgs),
    /// Recompute report.json for a run directory.
    Metrics(MetricsArgs),
    /// Full pipeline from a one-line story.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScriptArgs {
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_parser = ["mock", "http"])]
    pub llm: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct KeyframesArgs {
    #[arg(long)]
    pub story: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ip_scale: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub story: PathBuf,
    #[arg(long, value_parser = ["fifo-reset", "windowed"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub frames_per_shot: Option<usize>,
    #[arg(long)]
    pub ip_scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub input: String,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_parser = ["fifo-reset", "windowed"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub frames_per_shot: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn base_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn finish(config: PipelineConfig) -> Result<PipelineConfig> {
    config.validate()?;
    Ok(config)
}

fn cmd_script(args: ScriptArgs) -> Result<String> {
    let mut config = base_config(&args.common)?;
    if let Some(n) = args.shots {
        config.n_shots = n;
    }
    if let Some(llm) = &args.llm {
        config.llm.backend = llm.parse::<LlmBackend>()?;
    }
    if args.endpoint.is_some() {
        config.llm.endpoint = args.endpoint.clone();
    }
    let config = finish(config)?;
    let llm = config.llm.client(config.seed)?;
    let story = pipeline::script_stage(&args.input, &config, llm.as_ref())?;
    pipeline::write_story(&args.out, &story)?;
    Ok(format!("wrote {} ({} shots)", args.out.display(), story.n_shots))
}

fn story_config(common: &Common, story: &crate::script::Story, out: &Path) -> Result<PipelineConfig> {
    let mut config = base_config(common)?;
    config.n_shots = story.n_shots;
    config.output_dir = out.to_path_buf();
    Ok(config)
}

fn cmd_keyframes(args: KeyframesArgs) -> Result<String> {
    let story = pipeline::read_story(&args.story)?;
    let mut config = story_config(&args.common, &story, &args.out)?;
    if let Some(s) = args.ip_scale {
        config.ip_scale = s;
    }
    let config = finish(config)?;
    let _lock = RunLock::acquire(&args.out)?;
    pipeline::write_config(&args.out, &config)?;
    pipeline::write_story(&args.out.join(pipeline::STORY_FILE), &story)?;
    let backend = config.backend()?;
    let keyframes = pipeline::staged(&args.out, "keyframe", || {
        pipeline::keyframe_stage(&story, &config, &backend)
    })?;
    pipeline::write_keyframes(&args.out, &keyframes)?;
    pipeline::write_manifest(&args.out)?;
    Ok(format!("wrote {} keyframes to {}", keyframes.len(), args.out.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<String> {
    let story = pipeline::read_story(&args.story)?;
    let mut config = story_config(&args.common, &story, &args.out)?;
    if let Some(mode) = &args.mode {
        config.mode = mode.parse::<SmoothMode>()?;
    }
    if let Some(k) = args.frames_per_shot {
        config.frames_per_shot = k;
    }
    if let Some(s) = args.ip_scale {
        config.ip_scale = s;
    }
    let config = finish(config)?;
    let _lock = RunLock::acquire(&args.out)?;
    pipeline::write_config(&args.out, &config)?;
    pipeline::write_story(&args.out.join(pipeline::STORY_FILE), &story)?;
    let backend = config.backend()?;
    let keyframes = pipeline::staged(&args.out, "keyframe", || {
        pipeline::keyframe_stage(&story, &config, &backend)
    })?;
    pipeline::write_keyframes(&args.out, &keyframes)?;
    let timeline = pipeline::staged(&args.out, "video", || {
        pipeline::video_stage(&story, &keyframes, &config, &backend)
    })?;
    pipeline::write_timeline(&args.out, &timeline, config.frames_per_shot)?;
    pipeline::write_manifest(&args.out)?;
    Ok(format!(
        "wrote {} frames ({}) to {}",
        timeline.frames.len(),
        config.mode.as_str(),
        args.out.display()
    ))
}

fn cmd_metrics(args: MetricsArgs) -> Result<String> {
    let config = PipelineConfig::load(&args.run.join(pipeline::CONFIG_FILE))?;
    let story = pipeline::read_story(&args.run.join(pipeline::STORY_FILE))?;
    let timeline = pipeline::read_timeline(&args.run)?;
    let report = pipeline::metrics_stage(&story, &timeline, &config)?;
    pipeline::write_report(&args.report, &report)?;
    Ok(report.render_table())
}

fn cmd_run(args: RunArgs) -> Result<String> {
    let mut config = base_config(&args.common)?;
    if let Some(n) = args.shots {
        config.n_shots = n;
    }
    if let Some(mode) = &args.mode {
        config.mode = mode.parse::<SmoothMode>()?;
    }
    if let Some(k) = args.frames_per_shot {
        config.frames_per_shot = k;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    let config = finish(config)?;
    let run = pipeline::run_pipeline(&args.input, &config)?;
    Ok(format!(
        "{}run directory: {}",
        run.report.render_table(),
        run.dir.display()
    ))
}

pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Script(a) => cmd_script(a),
        Command::Keyframes(a) => cmd_keyframes(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Run(a) => cmd_run(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(message) => {
            println!("{message}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
