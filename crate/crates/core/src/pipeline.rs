//! End-to-end orchestration and the run directory.
//!
//! A run directory holds `config.json`, `story.json`, `keyframes/*.vgt`,
//! `frames.vgt`, `timeline.json`, `report.json` and `manifest.json` (SHA-256
//! of every other file). A stage failure leaves whatever was written so far
//! and adds `failed/reason.txt` naming the stage.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::casting::{derive_avatars, generate_keyframe, render_avatar, Keyframe};
use crate::config::PipelineConfig;
use crate::error::{Result, VgotError};
use crate::llm::LlmClient;
use crate::metrics::{build_report, Extractors, MetricsReport};
use crate::script::{expand_story, generate_script_sequence, Story};
use crate::seed;
use crate::smooth::{run_timeline, SmoothMode, SwitchEvent, VideoTimeline};
use crate::story_file::{parse_story, serialize_story};
use crate::tensor_file::{read_tensor_file, write_tensor_file, Tensor};

pub const CONFIG_FILE: &str = "config.json";
pub const STORY_FILE: &str = "story.json";
pub const FRAMES_FILE: &str = "frames.vgt";
pub const TIMELINE_FILE: &str = "timeline.json";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const KEYFRAME_DIR: &str = "keyframes";
pub const FAILED_DIR: &str = "failed";
pub const LOCK_FILE: &str = ".vgot.lock";

/// Story used by the examples and the default toy run.
pub const DEFAULT_USER_INPUT: &str =
    "Describe a story of Mike and Jane exploring an ancient pyramid hidden in the jungle";

/// Exclusive ownership of a run directory for the life of the guard.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Creates the directory if needed and takes the lock. Also serves as
    /// the writability check before any model work.
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| VgotError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| VgotError::io(&path, e))?;
        writeln!(file, "{}", std::process::id()).map_err(|e| VgotError::io(&path, e))?;
        let failed = dir.join(FAILED_DIR);
        if failed.exists() {
            fs::remove_dir_all(&failed).map_err(|e| VgotError::io(&failed, e))?;
        }
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Everything a completed run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub story: Story,
    pub keyframes: Vec<Keyframe>,
    pub timeline: VideoTimeline,
    pub report: MetricsReport,
    /// Relative path → SHA-256 hex.
    pub manifest: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub global_frame: usize,
    pub shot: usize,
}

/// `timeline.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineFile {
    pub mode: SmoothMode,
    pub n_shots: usize,
    pub frames_per_shot: usize,
    pub entries: Vec<TimelineEntry>,
    /// Tick at which each shot's first frame entered the queue (fifo-reset).
    pub switches: Vec<SwitchEvent>,
}

impl TimelineFile {
    pub fn from_timeline(timeline: &VideoTimeline, frames_per_shot: usize) -> Self {
        Self {
            mode: timeline.mode,
            n_shots: timeline.n_shots(),
            frames_per_shot,
            entries: timeline
                .shots
                .iter()
                .enumerate()
                .map(|(global_frame, &shot)| TimelineEntry { global_frame, shot })
                .collect(),
            switches: timeline.switches.clone(),
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| VgotError::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| VgotError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| VgotError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| VgotError::io(path, e))
}

pub fn write_story(path: &Path, story: &Story) -> Result<()> {
    write_file(path, &serialize_story(story)?)
}

pub fn read_story(path: &Path) -> Result<Story> {
    parse_story(&read_file(path)?).map_err(|e| match e {
        VgotError::Parse { path: field, message } => VgotError::parse(format!("{}:{field}", path.display()), message),
        other => other,
    })
}

pub fn write_config(dir: &Path, config: &PipelineConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_FILE), &config.to_json()?)
}

pub fn keyframe_path(dir: &Path, shot: usize) -> PathBuf {
    dir.join(KEYFRAME_DIR).join(format!("shot_{shot:04}.vgt"))
}

pub fn write_keyframes(dir: &Path, keyframes: &[Keyframe]) -> Result<()> {
    let kdir = dir.join(KEYFRAME_DIR);
    fs::create_dir_all(&kdir).map_err(|e| VgotError::io(&kdir, e))?;
    for kf in keyframes {
        write_tensor_file(&keyframe_path(dir, kf.shot_index), &Tensor::from_frame(&kf.latent)?)?;
    }
    Ok(())
}

pub fn write_timeline(dir: &Path, timeline: &VideoTimeline, frames_per_shot: usize) -> Result<()> {
    write_tensor_file(&dir.join(FRAMES_FILE), &Tensor::from_frames(&timeline.frames)?)?;
    write_file(
        &dir.join(TIMELINE_FILE),
        &json_bytes(&TimelineFile::from_timeline(timeline, frames_per_shot))?,
    )
}

/// Rebuilds the timeline from `frames.vgt` and `timeline.json`.
pub fn read_timeline(dir: &Path) -> Result<VideoTimeline> {
    let path = dir.join(TIMELINE_FILE);
    let bytes = read_file(&path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    let file: TimelineFile = serde_path_to_error::deserialize(de)
        .map_err(|e| VgotError::parse(format!("{}:{}", path.display(), e.path()), e.into_inner().to_string()))?;
    let frames = read_tensor_file(&dir.join(FRAMES_FILE))?.to_frames()?;
    if frames.len() != file.entries.len() {
        return Err(VgotError::Validation(format!(
            "frames.vgt holds {} frames but timeline.json lists {}",
            frames.len(),
            file.entries.len()
        )));
    }
    if file.entries.iter().enumerate().any(|(i, e)| e.global_frame != i) {
        return Err(VgotError::Validation(
            "timeline entries are not consecutive from 0".into(),
        ));
    }
    Ok(VideoTimeline {
        frames,
        shots: file.entries.iter().map(|e| e.shot).collect(),
        mode: file.mode,
        switches: file.switches,
    })
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_file(path, &json_bytes(report)?)
}

/// Hashes every regular file under `dir` except the manifest, lock and
/// failure marker.
pub fn compute_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| VgotError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| VgotError::io(dir, e))?;
            let path = entry.path();
            let rel = path
                .strip_prefix(root)
                .expect("walked path lies under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel == MANIFEST_FILE || rel == LOCK_FILE || rel == FAILED_DIR {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.insert(rel, seed::sha256_hex(&read_file(&path)?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

pub fn write_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let manifest = compute_manifest(dir)?;
    write_file(&dir.join(MANIFEST_FILE), &json_bytes(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(MANIFEST_FILE);
    serde_json::from_slice(&read_file(&path)?).map_err(|e| VgotError::parse(path.display().to_string(), e.to_string()))
}

/// Runs `f`; on error records the stage under `failed/` and wraps the error.
pub fn staged<T>(dir: &Path, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|source| {
        let marker = dir.join(FAILED_DIR);
        let reason = format!("stage: {stage}\nerror: {source}\n");
        let _ = fs::create_dir_all(&marker).and_then(|_| fs::write(marker.join("reason.txt"), reason));
        VgotError::Stage {
            stage,
            source: Box::new(source),
        }
    })
}

/// Story expansion, avatar casting and per-shot scripts.
pub fn script_stage(user_input: &str, config: &PipelineConfig, llm: &dyn LlmClient) -> Result<Story> {
    let mut story = Story::new(user_input, config.n_shots);
    story.descriptions = expand_story(user_input, config.n_shots, llm)?;
    let (avatars, assignment) = derive_avatars(
        &story.descriptions,
        user_input,
        llm,
        config.shots_per_avatar,
        seed::derive_seed(config.seed, "casting", &[]),
    )?;
    story.avatars = avatars;
    story.assignment = assignment;
    let story = generate_script_sequence(story, llm)?;
    story.validate()?;
    Ok(story)
}

/// Renders every avatar and one keyframe per shot.
pub fn keyframe_stage(story: &Story, config: &PipelineConfig, backend: &Backend) -> Result<Vec<Keyframe>> {
    story.validate()?;
    let rendered = story
        .avatars
        .iter()
        .map(|a| render_avatar(a, backend))
        .collect::<Result<Vec<_>>>()?;
    story
        .scripts
        .iter()
        .enumerate()
        .map(|(i, script)| {
            let avatar = rendered
                .iter()
                .find(|a| a.id == script.avatar_id)
                .ok_or_else(|| VgotError::Validation(format!("shot {i} uses unknown avatar `{}`", script.avatar_id)))?;
            generate_keyframe(i, script, avatar, config.ip_scale, backend, config.seed)
        })
        .collect()
}

pub fn video_stage(
    story: &Story,
    keyframes: &[Keyframe],
    config: &PipelineConfig,
    backend: &Backend,
) -> Result<VideoTimeline> {
    let timeline = run_timeline(
        story,
        keyframes,
        &config.smooth_config(),
        config.ip_scale,
        backend,
        config.seed,
    )?;
    Ok(quantized(timeline))
}

/// The timeline exactly as `frames.vgt` stores it.
pub fn quantized(mut timeline: VideoTimeline) -> VideoTimeline {
    timeline.frames = timeline.frames.iter().map(|f| f.quantized_f32()).collect();
    timeline
}

pub fn metrics_stage(story: &Story, timeline: &VideoTimeline, config: &PipelineConfig) -> Result<MetricsReport> {
    let face = config.face_extractor();
    let style = config.style_extractor();
    let clip = config.clip_scorer()?;
    let extractors = Extractors {
        face: &face,
        style: &style,
        clip: &clip,
    };
    build_report(timeline, story, &extractors, &config.metrics_config())
}

/// Script → keyframes → video → metrics, persisted under `config.output_dir`.
pub fn run_pipeline(user_input: &str, config: &PipelineConfig) -> Result<RunArtifacts> {
    let llm = config.llm.client(config.seed)?;
    run_pipeline_with(user_input, config, llm.as_ref(), config.backend()?)
}

/// As [`run_pipeline`] with a caller-supplied LLM client and backend.
pub fn run_pipeline_with(
    user_input: &str,
    config: &PipelineConfig,
    llm: &dyn LlmClient,
    backend: Backend,
) -> Result<RunArtifacts> {
    config.validate()?;
    let dir = config.output_dir.clone();
    let _lock = RunLock::acquire(&dir)?;
    write_config(&dir, config)?;

    let story = staged(&dir, "script", || {
        let story = script_stage(user_input, config, llm)?;
        write_story(&dir.join(STORY_FILE), &story)?;
        Ok(story)
    })?;
    let keyframes = staged(&dir, "keyframe", || {
        let keyframes = keyframe_stage(&story, config, &backend)?;
        write_keyframes(&dir, &keyframes)?;
        Ok(keyframes)
    })?;
    let timeline = staged(&dir, "video", || {
        let timeline = video_stage(&story, &keyframes, config, &backend)?;
        write_timeline(&dir, &timeline, config.frames_per_shot)?;
        Ok(timeline)
    })?;
    let report = staged(&dir, "metrics", || {
        let report = metrics_stage(&story, &timeline, config)?;
        write_report(&dir.join(REPORT_FILE), &report)?;
        Ok(report)
    })?;
    let manifest = staged(&dir, "manifest", || write_manifest(&dir))?;
    Ok(RunArtifacts {
        dir,
        story,
        keyframes,
        timeline,
        report,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            n_shots: 2,
            frames_per_shot: 3,
            steps: 10,
            output_dir: dir.to_path_buf(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(VgotError::Io { .. })));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn small_run_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_pipeline("Mike and Jane search for a lost city", &small_config(dir.path())).unwrap();
        let files: Vec<&str> = run.manifest.keys().map(String::as_str).collect();
        assert_eq!(
            files,
            [
                "config.json",
                "frames.vgt",
                "keyframes/shot_0000.vgt",
                "keyframes/shot_0001.vgt",
                "report.json",
                "story.json",
                "timeline.json"
            ]
        );
        assert!(!dir.path().join(LOCK_FILE).exists());
        let back = read_timeline(dir.path()).unwrap();
        assert_eq!(back.shots, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(back.frames, run.timeline.frames);
        assert_eq!(read_manifest(dir.path()).unwrap(), run.manifest);
    }

    #[test]
    fn stage_failure_leaves_marker() {
        struct Broken;
        impl LlmClient for Broken {
            fn complete(&self, _: &str, _: &str) -> Result<String> {
                Err(VgotError::Transport {
                    shot: None,
                    message: "connection refused".into(),
                })
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let config = small_config(dir.path());
        let err = run_pipeline_with("a story", &config, &Broken, config.backend().unwrap()).unwrap_err();
        assert!(matches!(err, VgotError::Stage { stage: "script", .. }));
        assert_eq!(err.exit_code(), 2);
        let reason = fs::read_to_string(dir.path().join(FAILED_DIR).join("reason.txt")).unwrap();
        assert!(reason.starts_with("stage: script\n"));
        assert!(dir.path().join(CONFIG_FILE).exists());
    }
}
