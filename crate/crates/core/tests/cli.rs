//! The `vgot` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use vgot::pipeline;

fn vgot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgot")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = vgot(&["run", "--input", pipeline::DEFAULT_USER_INPUT, "--out", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        pipeline::STORY_FILE,
        pipeline::FRAMES_FILE,
        pipeline::TIMELINE_FILE,
        pipeline::REPORT_FILE,
        pipeline::CONFIG_FILE,
        pipeline::MANIFEST_FILE,
    ] {
        assert!(dir.join(file).is_file(), "{file}");
    }
    assert!(dir.join(pipeline::KEYFRAME_DIR).join("shot_0003.vgt").is_file());
    assert!(!dir.join(pipeline::LOCK_FILE).exists());
    let frames = vgot::tensor_file::read_tensor_file(&dir.join(pipeline::FRAMES_FILE)).unwrap();
    assert_eq!(frames.dims(), &[32, 8, 8, 8]);
    assert!(stdout(&out).contains("FC-within"), "{}", stdout(&out));
}

#[test]
fn flags_are_echoed_into_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = vgot(&[
        "run",
        "--input",
        "A short story",
        "--shots",
        "2",
        "--frames-per-shot",
        "3",
        "--mode",
        "windowed",
        "--seed",
        "5",
        "--out",
        s(&dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = vgot::PipelineConfig::load(&dir.join(pipeline::CONFIG_FILE)).unwrap();
    assert_eq!((config.n_shots, config.frames_per_shot, config.seed), (2, 3, 5));
    assert_eq!(config.mode, vgot::smooth::SmoothMode::Windowed);
}

#[test]
fn single_shot_metrics_print_null_cross_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let story = tmp.path().join("story.json");
    let dir = tmp.path().join("gen");
    let report = tmp.path().join("report.json");
    assert_eq!(
        code(&vgot(&[
            "script",
            "--input",
            "One scene",
            "--shots",
            "1",
            "--out",
            s(&story)
        ])),
        0
    );
    assert_eq!(
        code(&vgot(&[
            "generate",
            "--story",
            s(&story),
            "--frames-per-shot",
            "4",
            "--out",
            s(&dir)
        ])),
        0
    );
    let out = vgot(&["metrics", "--run", s(&dir), "--report", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("null"), "{}", stdout(&out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(json["fc_cross"].is_null() && json["sc_cross"].is_null());
    assert!(json["fc_within"].is_number());
}

#[test]
fn both_modes_label_frames_alike() {
    let tmp = tempfile::tempdir().unwrap();
    let story = tmp.path().join("story.json");
    assert_eq!(
        code(&vgot(&[
            "script",
            "--input",
            "Two friends",
            "--shots",
            "3",
            "--out",
            s(&story)
        ])),
        0
    );
    let mut labels = Vec::new();
    for mode in ["fifo-reset", "windowed"] {
        let dir = tmp.path().join(mode);
        let out = vgot(&[
            "generate",
            "--story",
            s(&story),
            "--mode",
            mode,
            "--frames-per-shot",
            "4",
            "--out",
            s(&dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let timeline = pipeline::read_timeline(&dir).unwrap();
        labels.push(timeline.shots);
    }
    assert_eq!(labels[0], labels[1]);
    assert_eq!(labels[0], vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
}

#[test]
fn keyframes_command_writes_one_file_per_shot() {
    let tmp = tempfile::tempdir().unwrap();
    let story = tmp.path().join("story.json");
    let dir = tmp.path().join("kf");
    assert_eq!(
        code(&vgot(&[
            "script",
            "--input",
            "Two friends",
            "--shots",
            "2",
            "--out",
            s(&story)
        ])),
        0
    );
    assert_eq!(code(&vgot(&["keyframes", "--story", s(&story), "--out", s(&dir)])), 0);
    let files = std::fs::read_dir(dir.join(pipeline::KEYFRAME_DIR)).unwrap().count();
    assert_eq!(files, 2);
}

#[test]
fn metrics_alone_reproduces_a_deleted_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    assert_eq!(
        code(&vgot(&["run", "--input", "A heist", "--shots", "2", "--out", s(&dir)])),
        0
    );
    let report = dir.join(pipeline::REPORT_FILE);
    let before = std::fs::read(&report).unwrap();
    std::fs::remove_file(&report).unwrap();
    assert_eq!(code(&vgot(&["metrics", "--run", s(&dir), "--report", s(&report)])), 0);
    assert_eq!(std::fs::read(&report).unwrap(), before);
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let out = vgot(&["run", "--input", "x", "--bogus"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&vgot(&["run", "--input", "x", "--shots", "0"])), 1);
    assert_eq!(
        code(&vgot(&[
            "generate", "--story", "s.json", "--mode", "rolling", "--out", "o"
        ])),
        1
    );
    assert_eq!(code(&vgot(&["--help"])), 0);
}

#[test]
fn io_and_transport_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = vgot(&["run", "--input", "x", "--out", s(&blocker.join("run"))]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(
        code(&vgot(&[
            "metrics",
            "--run",
            s(&tmp.path().join("missing")),
            "--report",
            "r.json"
        ])),
        2
    );

    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("http://127.0.0.1:{port}/chat");
    let story = tmp.path().join("story.json");
    let out = vgot(&[
        "script",
        "--input",
        "x",
        "--llm",
        "http",
        "--endpoint",
        &endpoint,
        "--out",
        s(&story),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!story.exists());
}
