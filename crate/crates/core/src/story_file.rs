//! Canonical JSON story files.
//!
//! ```text
//! {"user_input": S, "n_shots": N,
//!  "avatars": [{"id", "prompt": {character, background, relations, camera, hdr}, "seed"}],
//!  "shots":   [{"index", "short", "script": {...}, "avatar_id"}]}
//! ```
//!
//! Keys are written in that order with two-space indentation and LF line
//! endings, so equal stories serialize to identical bytes.

use serde::{Deserialize, Serialize};

use crate::casting::AvatarProfile;
use crate::error::{Result, VgotError};
use crate::script::{DomainPrompt, ShotDescription, ShotScript, Story};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryFile {
    user_input: String,
    n_shots: usize,
    avatars: Vec<AvatarEntry>,
    shots: Vec<ShotEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AvatarEntry {
    id: String,
    prompt: DomainPrompt,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShotEntry {
    index: usize,
    short: String,
    script: DomainPrompt,
    avatar_id: String,
}

/// Canonical bytes for a fully populated story.
pub fn serialize_story(story: &Story) -> Result<Vec<u8>> {
    story.validate()?;
    let file = StoryFile {
        user_input: story.user_input.clone(),
        n_shots: story.n_shots,
        avatars: story
            .avatars
            .iter()
            .map(|a| AvatarEntry {
                id: a.id.clone(),
                prompt: a.prompt.clone(),
                seed: a.seed,
            })
            .collect(),
        shots: story
            .scripts
            .iter()
            .zip(&story.descriptions)
            .map(|(s, d)| ShotEntry {
                index: d.index,
                short: d.text.clone(),
                script: s.prompt.clone(),
                avatar_id: s.avatar_id.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&file).map_err(|e| VgotError::parse("$", e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Parse and validate a story document.
pub fn parse_story(bytes: &[u8]) -> Result<Story> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let mut file: StoryFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // serde reports a missing field at the enclosing object
        let path = match missing_field(&message) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        VgotError::parse(path, message)
    })?;

    if file.shots.len() != file.n_shots {
        return Err(VgotError::Validation(format!(
            "n_shots is {} but {} shots are listed",
            file.n_shots,
            file.shots.len()
        )));
    }
    let mut seen = vec![false; file.n_shots];
    for s in &file.shots {
        match seen.get_mut(s.index) {
            Some(slot) if *slot => return Err(VgotError::Validation(format!("duplicate shot index {}", s.index))),
            Some(slot) => *slot = true,
            None => {
                return Err(VgotError::Validation(format!(
                    "shot index {} outside 0..{}",
                    s.index, file.n_shots
                )))
            }
        }
    }
    file.shots.sort_by_key(|s| s.index);

    let mut story = Story::new(file.user_input, file.n_shots);
    story.avatars = file
        .avatars
        .into_iter()
        .map(|a| AvatarProfile::new(a.id, a.prompt, a.seed))
        .collect();
    for s in file.shots {
        story.descriptions.push(ShotDescription {
            index: s.index,
            text: s.short.clone(),
        });
        story.assignment.push(s.avatar_id.clone());
        story.scripts.push(ShotScript {
            prompt: s.script,
            avatar_id: s.avatar_id,
            short: s.short,
        });
    }
    story.validate()?;
    Ok(story)
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}
