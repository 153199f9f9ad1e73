#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nralign::io::write_dataset;
use nralign::synthetic::{generate, SyntheticConfig};
use nralign::{ClipRecord, Dataset, VideoDocument};

pub fn nralign() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nralign"));
    cmd.env_remove("NORTON_THREADS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    nralign().args(args).output().expect("spawn nralign")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn small_config(videos: usize) -> SyntheticConfig {
    SyntheticConfig {
        videos,
        clips: 4,
        dim: 8,
        frames_per_clip: 3,
        words_per_caption: 3,
        tasks: 2,
        ..SyntheticConfig::default()
    }
}

pub fn synthetic_manifest(dir: &Path, cfg: &SyntheticConfig) -> PathBuf {
    let dataset = generate(cfg).unwrap().dataset;
    write_dataset(&dataset, dir, false).unwrap()
}

/// Each paragraph's captions are exact copies of its own clips.
pub fn self_copy_manifest(dir: &Path, videos: usize) -> PathBuf {
    let source = generate(&small_config(videos)).unwrap().dataset;
    let copied: Vec<VideoDocument> = source
        .videos
        .iter()
        .map(|v| {
            let clips = v
                .clips
                .iter()
                .map(|c| {
                    ClipRecord::new(
                        c.clip_tokens.clone(),
                        c.clip_tokens.clone(),
                        c.start_s,
                        c.end_s,
                    )
                    .unwrap()
                })
                .collect();
            VideoDocument::new(v.id.clone(), clips).unwrap()
        })
        .collect();
    write_dataset(&Dataset::new(copied).unwrap(), dir, false).unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
