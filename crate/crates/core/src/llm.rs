//! Language-model clients.
//!
//! Every request is an `(instruction, context)` pair. Instructions start
//! with a small `KEY: value` header (`TASK`, `SHOT`, ...) followed by
//! free-text guidance, so a real model reads them as prose while the mock
//! client can dispatch on the header.

use std::sync::Mutex;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Result, VgotError};
use crate::script::{Domain, DomainPrompt};
use crate::seed;

pub trait LlmClient: Send + Sync {
    fn complete(&self, instruction: &str, context: &str) -> Result<String>;

    /// True when equal requests always produce equal completions.
    fn is_deterministic(&self) -> bool {
        false
    }
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, instruction: &str, context: &str) -> Result<String> {
        (**self).complete(instruction, context)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, instruction: &str, context: &str) -> Result<String> {
        (**self).complete(instruction, context)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Read a `KEY: value` header line from an instruction or context block.
pub fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let (k, v) = line.split_once(':')?;
        k.trim().eq_ignore_ascii_case(key).then(|| v.trim())
    })
}

/// Everything after the first line starting with `KEY:`, up to the next
/// header line or end of text.
pub fn block_after<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    let marker = format!("{key}:");
    let start = text
        .match_indices(&marker)
        .find(|(i, _)| *i == 0 || text.as_bytes()[i - 1] == b'\n')?
        .0
        + marker.len();
    Some(text[start..].trim())
}

const BEATS: &[&str] = &[
    "the opening",
    "a quiet discovery",
    "the journey begins",
    "an unexpected encounter",
    "rising tension",
    "a turning point",
    "a moment of doubt",
    "the confrontation",
    "a reunion",
    "the resolution",
];

const ACTIONS: &[&str] = &[
    "examines an old keepsake with intense focus",
    "walks through a crowded street at dusk",
    "shares a quiet meal with a friend",
    "looks out over a wide valley",
    "runs to catch a departing train",
    "writes a letter by candlelight",
    "laughs with family in a sunlit kitchen",
    "stands alone in the rain",
    "opens a long-forgotten door",
    "kneels to plant a young tree",
];

const POSES: &[&str] = &[
    "standing tall with a determined expression",
    "seated, hands folded, gaze lowered",
    "mid-stride, coat moving in the wind",
    "leaning forward, studying something closely",
    "smiling softly, shoulders relaxed",
];

const BACKGROUNDS: &[&str] = &[
    "A dense jungle filled with mist and towering trees",
    "A small farmhouse kitchen with worn wooden floors",
    "A busy city street lined with brick buildings",
    "A quiet beach under a pale morning sky",
    "A candlelit study stacked with old books",
    "A snowy mountain pass with a narrow trail",
];

const CAMERAS: &[&str] = &[
    "Medium shot focusing on the main character",
    "Wide establishing shot from a low angle",
    "Close-up on the face, shallow depth of field",
    "Slow tracking shot following the character",
    "Over-the-shoulder shot toward the scene",
];

const LIGHTING: &[&str] = &[
    "Soft light filters through the trees, creating dynamic shadows",
    "Warm golden-hour light with long shadows",
    "Cool overcast light, muted and even",
    "High-contrast interior light from a single window",
    "Flickering candlelight with deep blacks and warm highlights",
];

/// Deterministic template engine keyed by `(text hash, shot index, domain)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm {
    pub seed: u64,
}

impl MockLlm {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn pick<'a>(&self, table: &[&'a str], key: &str, shot: usize, domain: &str) -> &'a str {
        let h = seed::derive_seed(self.seed, "mock-llm", &[hash_i64(key), shot as i64, hash_i64(domain)]);
        table[(h % table.len() as u64) as usize]
    }

    fn describe_shot(&self, context: &str, shot: usize, total: usize) -> Result<String> {
        let story = header_value(context, "STORY")
            .ok_or_else(|| VgotError::Input("mock llm: missing STORY in context".into()))?;
        let subject = subject_of(story);
        let beat = if shot == 0 {
            BEATS[0]
        } else if shot + 1 == total {
            BEATS[BEATS.len() - 1]
        } else {
            self.pick(&BEATS[1..BEATS.len() - 1], story, shot, "beat")
        };
        let action = self.pick(ACTIONS, story, shot, "action");
        Ok(format!("Shot {}, {beat}: {subject} {action}.", shot + 1))
    }

    fn domains_for(&self, key: &str, shot: usize, who: &str, prev: Option<&DomainPrompt>) -> DomainPrompt {
        let relations = match prev {
            Some(p) => format!(
                "Continuing from the previous shot ({}), {who} carries the moment forward",
                first_clause(&p.character)
            ),
            None => format!("{who} is introduced, establishing the story's first moment"),
        };
        DomainPrompt {
            character: format!("{who}, {}", self.pick(POSES, key, shot, "character")),
            background: self.pick(BACKGROUNDS, key, shot, "background").to_string(),
            relations,
            camera: self.pick(CAMERAS, key, shot, "camera").to_string(),
            hdr: self.pick(LIGHTING, key, shot, "hdr").to_string(),
        }
    }

    fn shot_script(&self, context: &str, shot: usize) -> Result<String> {
        let short = header_value(context, "SHORT")
            .ok_or_else(|| VgotError::Input("mock llm: missing SHORT in context".into()))?;
        let who = header_value(context, "AVATAR").unwrap_or("the protagonist");
        let prev = block_after(context, "PREVIOUS")
            .filter(|b| !b.is_empty())
            .map(|b| crate::script::parse_domains(b, shot))
            .transpose()?;
        Ok(self.domains_for(short, shot, who, prev.as_ref()).to_labeled_text())
    }

    fn avatars(&self, instruction: &str, context: &str) -> Result<String> {
        let shots: usize = parse_header(instruction, "SHOTS")?;
        let per: usize = parse_header(instruction, "SHOTS_PER_AVATAR")?;
        if per == 0 {
            return Err(VgotError::Input("mock llm: SHOTS_PER_AVATAR must be >= 1".into()));
        }
        let story = header_value(context, "STORY").unwrap_or("story");
        let subject = subject_of(story);
        let count = shots.div_ceil(per);
        let mut out = String::new();
        for a in 0..count {
            let who = format!("{subject} (stage {} of {count})", a + 1);
            let d = self.domains_for(story, a, &who, None);
            out.push_str(&format!("Avatar a{a}:\n{}\n", d.to_labeled_text()));
        }
        let assignment: Vec<String> = (0..shots).map(|i| format!("a{}", i / per)).collect();
        out.push_str(&format!("Assignment: {}\n", assignment.join(", ")));
        Ok(out)
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, instruction: &str, context: &str) -> Result<String> {
        match header_value(instruction, "TASK") {
            Some("shot-description") => {
                let shot = parse_header(instruction, "SHOT")?;
                let total = parse_header(instruction, "SHOTS")?;
                self.describe_shot(context, shot, total)
            }
            Some("shot-script") => self.shot_script(context, parse_header(instruction, "SHOT")?),
            Some("avatars") => self.avatars(instruction, context),
            other => Err(VgotError::Input(format!("mock llm: unknown task {other:?}"))),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

fn parse_header<T: std::str::FromStr>(text: &str, key: &str) -> Result<T> {
    header_value(text, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| VgotError::Input(format!("llm request is missing a numeric {key} header")))
}

fn hash_i64(s: &str) -> i64 {
    seed::derive_seed(0, s, &[]) as i64
}

/// Short subject phrase for templates: the text after "describe", if present.
fn subject_of(story: &str) -> String {
    let lower = story.to_lowercase();
    let tail = match lower.find("describe") {
        Some(i) => &story[i + "describe".len()..],
        None => story,
    };
    let tail = tail.trim().trim_end_matches('.');
    let tail = tail
        .strip_prefix("a story of ")
        .or_else(|| tail.strip_prefix("a story about "))
        .unwrap_or(tail);
    let tail = tail.split(',').next().unwrap_or(tail);
    // the noun phrase ends where a participle starts ("Mike and Jane exploring ...")
    let words: Vec<&str> = tail
        .split_whitespace()
        .enumerate()
        .take_while(|(i, w)| *i == 0 || !(w.len() > 4 && w.ends_with("ing")))
        .map(|(_, w)| w)
        .take(10)
        .collect();
    if words.is_empty() {
        "the protagonist".to_string()
    } else {
        words.join(" ")
    }
}

fn first_clause(text: &str) -> &str {
    text.split([',', '.']).next().unwrap_or(text).trim()
}

/// Records every request before delegating.
pub struct RecordingLlm<C> {
    inner: C,
    calls: Mutex<Vec<(String, String)>>,
}

impl<C: LlmClient> RecordingLlm<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(String, String)> {
        self.calls.lock().expect("recording lock").clone()
    }
}

impl<C: LlmClient> LlmClient for RecordingLlm<C> {
    fn complete(&self, instruction: &str, context: &str) -> Result<String> {
        self.calls
            .lock()
            .expect("recording lock")
            .push((instruction.to_string(), context.to_string()));
        self.inner.complete(instruction, context)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

/// Generic chat-completion client: POSTs `{"messages": [...]}` and reads
/// `{"content": "..."}` back.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    endpoint: String,
    api_key: Option<String>,
}

pub const LLM_KEY_ENV: &str = "VGOT_LLM_KEY";

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
        }
    }

    /// Key from `VGOT_LLM_KEY`, if set.
    pub fn from_env(endpoint: impl Into<String>) -> Self {
        Self::new(endpoint, std::env::var(LLM_KEY_ENV).ok())
    }

    pub fn request_body(instruction: &str, context: &str) -> serde_json::Value {
        json!({
            "messages": [
                {"role": "system", "content": instruction},
                {"role": "user", "content": context},
            ]
        })
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, instruction: &str, context: &str) -> Result<String> {
        let transport = |message: String| VgotError::Transport { shot: None, message };
        let mut req = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(Self::request_body(instruction, context))
            .map_err(|e| transport(e.to_string()))?;
        let body: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("bad response body: {e}")))?;
        Ok(body.content)
    }
}

/// Domain labels in the order the mock writes them.
pub fn domain_labels() -> [(Domain, &'static str); 5] {
    [
        (Domain::Character, "Character"),
        (Domain::Background, "Background"),
        (Domain::Relations, "Relation"),
        (Domain::Camera, "Camera Pose"),
        (Domain::Hdr, "HDR Description"),
    ]
}
