//! Story expansion: one-sentence input → short shot descriptions →
//! five-domain shot scripts, generated sequentially with the previous
//! script as context.

use serde::{Deserialize, Serialize};

use crate::casting::AvatarProfile;
use crate::error::{Result, VgotError};
use crate::llm::{domain_labels, LlmClient};

/// One of the five script domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Character,
    Background,
    Relations,
    Camera,
    Hdr,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Character,
        Domain::Background,
        Domain::Relations,
        Domain::Camera,
        Domain::Hdr,
    ];

    /// Field name used in story files and reports.
    pub fn key(self) -> &'static str {
        match self {
            Domain::Character => "character",
            Domain::Background => "background",
            Domain::Relations => "relations",
            Domain::Camera => "camera",
            Domain::Hdr => "hdr",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = VgotError;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.key() == s)
            .ok_or_else(|| VgotError::Input(format!("unknown domain `{s}`")))
    }
}

/// The five-domain prompt shared by shot scripts and avatar profiles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainPrompt {
    pub character: String,
    pub background: String,
    pub relations: String,
    pub camera: String,
    pub hdr: String,
}

impl DomainPrompt {
    pub fn get(&self, domain: Domain) -> &str {
        match domain {
            Domain::Character => &self.character,
            Domain::Background => &self.background,
            Domain::Relations => &self.relations,
            Domain::Camera => &self.camera,
            Domain::Hdr => &self.hdr,
        }
    }

    /// `Character: ...` lines, the format the models are asked to produce.
    pub fn to_labeled_text(&self) -> String {
        domain_labels()
            .iter()
            .map(|(d, label)| format!("{label}: {}", self.get(*d)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// First domain whose text is blank.
    pub fn first_empty(&self) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| self.get(*d).trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotDescription {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotScript {
    pub prompt: DomainPrompt,
    pub avatar_id: String,
    /// The short description this script was expanded from.
    pub short: String,
}

impl ShotScript {
    /// Text fed to the keyframe text encoder: all five domains.
    pub fn full_text(&self) -> String {
        self.prompt.to_labeled_text()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub user_input: String,
    pub n_shots: usize,
    pub descriptions: Vec<ShotDescription>,
    pub scripts: Vec<ShotScript>,
    pub avatars: Vec<AvatarProfile>,
    /// Avatar id per shot.
    pub assignment: Vec<String>,
}

impl Story {
    pub fn new(user_input: impl Into<String>, n_shots: usize) -> Self {
        Self {
            user_input: user_input.into(),
            n_shots,
            descriptions: Vec::new(),
            scripts: Vec::new(),
            avatars: Vec::new(),
            assignment: Vec::new(),
        }
    }

    pub fn avatar(&self, id: &str) -> Option<&AvatarProfile> {
        self.avatars.iter().find(|a| a.id == id)
    }

    /// Checks the fully populated invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_shots;
        if n == 0 {
            return Err(VgotError::Validation("story has no shots".into()));
        }
        if self.descriptions.len() != n || self.scripts.len() != n || self.assignment.len() != n {
            return Err(VgotError::Validation(format!(
                "expected {n} descriptions, scripts and assignments, found {}, {} and {}",
                self.descriptions.len(),
                self.scripts.len(),
                self.assignment.len()
            )));
        }
        for (i, d) in self.descriptions.iter().enumerate() {
            if d.index != i {
                return Err(VgotError::Validation(format!(
                    "description {i} carries index {}",
                    d.index
                )));
            }
            if d.text.trim().is_empty() {
                return Err(VgotError::Validation(format!("shot {i} has an empty description")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.avatars {
            if !seen.insert(a.id.as_str()) {
                return Err(VgotError::Validation(format!("duplicate avatar id `{}`", a.id)));
            }
        }
        for (i, s) in self.scripts.iter().enumerate() {
            if let Some(d) = s.prompt.first_empty() {
                return Err(VgotError::Validation(format!(
                    "shot {i} has an empty `{}` domain",
                    d.key()
                )));
            }
            if s.avatar_id != self.assignment[i] {
                return Err(VgotError::Validation(format!(
                    "shot {i} script avatar `{}` disagrees with assignment `{}`",
                    s.avatar_id, self.assignment[i]
                )));
            }
            if self.avatar(&s.avatar_id).is_none() {
                return Err(VgotError::Validation(format!(
                    "shot {i} references unknown avatar `{}`",
                    s.avatar_id
                )));
            }
        }
        Ok(())
    }
}

/// Parse labeled sections (`Character:`, `Background:`, `Relation:`,
/// `Camera Pose:`, `HDR Description:`) in any order, case-insensitively.
/// A section runs until the next label.
pub fn parse_domains(text: &str, shot: usize) -> Result<DomainPrompt> {
    let mut found: [Option<String>; 5] = Default::default();
    let mut current: Option<usize> = None;
    for raw in text.lines() {
        let line = raw.trim().trim_start_matches(['-', '*', '#', ' ']);
        if let Some((slot, rest)) = match_label(line) {
            found[slot] = Some(rest.to_string());
            current = Some(slot);
        } else if let Some(slot) = current {
            let extra = line.trim();
            if !extra.is_empty() {
                let entry = found[slot].get_or_insert_with(String::new);
                if !entry.is_empty() {
                    entry.push(' ');
                }
                entry.push_str(extra);
            }
        }
    }
    let mut take = |d: Domain| -> Result<String> {
        found[d as usize]
            .take()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or(VgotError::Schema { shot, domain: d.key() })
    };
    Ok(DomainPrompt {
        character: take(Domain::Character)?,
        background: take(Domain::Background)?,
        relations: take(Domain::Relations)?,
        camera: take(Domain::Camera)?,
        hdr: take(Domain::Hdr)?,
    })
}

fn match_label(line: &str) -> Option<(usize, &str)> {
    const LABELS: &[(&str, Domain)] = &[
        ("character", Domain::Character),
        ("background", Domain::Background),
        ("relations", Domain::Relations),
        ("relation", Domain::Relations),
        ("camera pose", Domain::Camera),
        ("camera", Domain::Camera),
        ("hdr description", Domain::Hdr),
        ("hdr", Domain::Hdr),
    ];
    let (head, rest) = line.split_once(':')?;
    let head = head.trim().trim_matches('*').trim().to_ascii_lowercase();
    let rest = rest.trim_start_matches('*');
    LABELS
        .iter()
        .find(|(label, _)| head == *label)
        .map(|(_, d)| (*d as usize, rest.trim()))
}

fn description_request(index: usize, n_shots: usize) -> String {
    format!(
        "TASK: shot-description\nSHOT: {index}\nSHOTS: {n_shots}\n\
         Write a one-sentence description of shot {} of {n_shots} for the story below. \
         Keep the storyline continuous and answer with the sentence only.",
        index + 1
    )
}

/// `S → S'`: one short description per shot.
pub fn expand_story(user_input: &str, n_shots: usize, llm: &dyn LlmClient) -> Result<Vec<ShotDescription>> {
    if n_shots == 0 {
        return Err(VgotError::Input("number of shots must be at least 1".into()));
    }
    if user_input.trim().is_empty() {
        return Err(VgotError::Input("user input is empty".into()));
    }
    let context = format!("STORY: {}", user_input.trim());
    (0..n_shots)
        .map(|index| {
            let text = llm
                .complete(&description_request(index, n_shots), &context)
                .map_err(|e| with_shot(e, index))?;
            let text = text.trim().lines().next().unwrap_or_default().trim().to_string();
            if text.is_empty() {
                return Err(VgotError::parse(format!("descriptions[{index}]"), "empty completion"));
            }
            Ok(ShotDescription { index, text })
        })
        .collect()
}

fn with_shot(err: VgotError, index: usize) -> VgotError {
    match err {
        VgotError::Transport { shot: None, message } => VgotError::Transport {
            shot: Some(index),
            message,
        },
        other => other,
    }
}

/// Expand one short description into a five-domain script, with the
/// previous shot's script as context.
pub fn generate_shot_script(
    short: &ShotDescription,
    prev: Option<&ShotScript>,
    avatar_id: &str,
    llm: &dyn LlmClient,
) -> Result<ShotScript> {
    if short.text.trim().is_empty() {
        return Err(VgotError::Input(format!(
            "shot {} has an empty description",
            short.index
        )));
    }
    let instruction = format!(
        "TASK: shot-script\nSHOT: {}\n\
         Expand the shot description into a script with exactly these labeled sections: \
         Character, Background, Relation, Camera Pose, HDR Description. \
         Stay consistent with the previous shot's script when one is given.",
        short.index
    );
    let mut context = format!("SHORT: {}\nAVATAR: {avatar_id}\nSHOT: {}\n", short.text, short.index);
    if let Some(p) = prev {
        context.push_str("PREVIOUS:\n");
        context.push_str(&p.prompt.to_labeled_text());
        context.push('\n');
    }
    let completion = llm
        .complete(&instruction, &context)
        .map_err(|e| with_shot(e, short.index))?;
    Ok(ShotScript {
        prompt: parse_domains(&completion, short.index)?,
        avatar_id: avatar_id.to_string(),
        short: short.text.clone(),
    })
}

/// Generate every shot script in order, carrying the previous script.
pub fn generate_script_sequence(mut story: Story, llm: &dyn LlmClient) -> Result<Story> {
    if story.descriptions.len() != story.n_shots || story.n_shots == 0 {
        return Err(VgotError::State(format!(
            "story needs {} descriptions before scripting, has {}",
            story.n_shots,
            story.descriptions.len()
        )));
    }
    if story.assignment.len() != story.n_shots {
        return Err(VgotError::State("avatars must be assigned before scripting".into()));
    }
    let mut scripts: Vec<ShotScript> = Vec::with_capacity(story.n_shots);
    for (desc, avatar) in story.descriptions.iter().zip(&story.assignment) {
        let script = generate_shot_script(desc, scripts.last(), avatar, llm)?;
        scripts.push(script);
    }
    story.scripts = scripts;
    Ok(story)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockLlm, RecordingLlm};

    fn desc(i: usize, text: &str) -> ShotDescription {
        ShotDescription {
            index: i,
            text: text.to_string(),
        }
    }

    #[test]
    fn expand_story_count_and_indices() {
        let d = expand_story("Mary's life", 3, &MockLlm::new(0)).unwrap();
        assert_eq!(d.iter().map(|d| d.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(d.iter().all(|d| !d.text.is_empty()));
        assert!(matches!(
            expand_story("Mary's life", 0, &MockLlm::new(0)),
            Err(VgotError::Input(_))
        ));
        assert!(expand_story("  ", 2, &MockLlm::new(0)).is_err());
    }

    struct Failing;
    impl LlmClient for Failing {
        fn complete(&self, _: &str, _: &str) -> Result<String> {
            Err(VgotError::Transport {
                shot: None,
                message: "connection refused".into(),
            })
        }
    }

    struct Fixed(&'static str);
    impl LlmClient for Fixed {
        fn complete(&self, _: &str, _: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn transport_errors_carry_the_shot() {
        let err = expand_story("x", 2, &Failing).unwrap_err();
        assert!(matches!(err, VgotError::Transport { shot: Some(0), .. }));
        assert!(matches!(
            expand_story("x", 2, &Fixed("  \n")),
            Err(VgotError::Parse { .. })
        ));
    }

    #[test]
    fn parses_the_pyramid_example() {
        let text = "**Character**: Mike, holding an ancient map with Jane by his side. \
                    **Background**: A dense jungle filled with mist and towering trees.";
        // one-line form is not sectioned; the labeled multi-line form is
        assert!(parse_domains(text, 0).is_err());
        let text = "Character: Mike, holding an ancient map with Jane by his side.\n\
                    Background: A dense jungle filled with mist and towering trees.\n\
                    Relation: Mike studies the map closely, pointing to a pyramid.\n\
                    Camera Pose: Medium shot focusing on Mike and Jane.\n\
                    HDR Description: Soft light filters through the trees, creating dynamic shadows on the map and characters.";
        let p = parse_domains(text, 0).unwrap();
        assert_eq!(p.character, "Mike, holding an ancient map with Jane by his side.");
        assert_eq!(p.background, "A dense jungle filled with mist and towering trees.");
        assert_eq!(p.camera, "Medium shot focusing on Mike and Jane.");
        assert!(p.hdr.starts_with("Soft light filters"));
    }

    #[test]
    fn parse_is_order_and_case_insensitive() {
        let text = "hdr description: warm\n  continues here\nCAMERA POSE: wide\n- relation: near\nbackground: sea\n**Character:** Ann";
        let p = parse_domains(text, 2).unwrap();
        assert_eq!(p.hdr, "warm continues here");
        assert_eq!(p.character, "Ann");
        assert_eq!(p.relations, "near");
        let missing = parse_domains("Character: a\nBackground: b\nRelation: c\nCamera Pose: d", 7).unwrap_err();
        assert!(matches!(missing, VgotError::Schema { shot: 7, domain: "hdr" }));
    }

    #[test]
    fn mock_script_is_deterministic_and_prev_sensitive() {
        let llm = MockLlm::new(0);
        let s = desc(1, "Shot 2, a quiet discovery: Mary opens a long-forgotten door.");
        let a = generate_shot_script(&s, None, "a0", &llm).unwrap();
        assert_eq!(a, generate_shot_script(&s, None, "a0", &llm).unwrap());
        assert!(a.prompt.first_empty().is_none());

        let mut p1 = a.clone();
        p1.prompt.character = "Young Mary, laughing".into();
        let mut p2 = a.clone();
        p2.prompt.character = "Old Mary, resting".into();
        let b1 = generate_shot_script(&s, Some(&p1), "a0", &llm).unwrap();
        let b2 = generate_shot_script(&s, Some(&p2), "a0", &llm).unwrap();
        assert_ne!(b1.prompt.relations, b2.prompt.relations);
        assert_eq!(b1.prompt.background, b2.prompt.background);
    }

    #[test]
    fn sequence_passes_previous_script() {
        let llm = RecordingLlm::new(MockLlm::new(0));
        let mut story = Story::new("Mary's life", 3);
        story.descriptions = expand_story(&story.user_input, 3, &llm).unwrap();
        story.assignment = vec!["a0".into(); 3];
        let story = generate_script_sequence(story, &llm).unwrap();
        let calls = llm.calls();
        let scripts: Vec<_> = calls
            .iter()
            .filter(|(i, _)| i.starts_with("TASK: shot-script"))
            .collect();
        assert_eq!(scripts.len(), 3);
        assert!(!scripts[0].1.contains("PREVIOUS:"));
        assert!(scripts[1].1.contains(&story.scripts[0].prompt.to_labeled_text()));
        assert!(scripts[2].1.contains(&story.scripts[1].prompt.to_labeled_text()));
    }

    #[test]
    fn sequence_requires_descriptions_and_assignment() {
        let story = Story::new("x", 2);
        assert!(matches!(
            generate_script_sequence(story, &MockLlm::new(0)),
            Err(VgotError::State(_))
        ));
        let mut story = Story::new("x", 1);
        story.descriptions = vec![desc(0, "a")];
        assert!(matches!(
            generate_script_sequence(story, &MockLlm::new(0)),
            Err(VgotError::State(_))
        ));
    }
}
