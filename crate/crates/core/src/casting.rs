//! Avatars and identity-preserving keyframes.

use nalgebra::DMatrix;

use crate::backend::Backend;

use crate::conditioning::{
    normalize_or_basis, Condition, ConditionProjector, Embedding, EmbeddingKind, TOKENS_PER_EMBEDDING,
};
use crate::diffusion::{sample_reverse_eta, FrameLatent, LatentShape};
use crate::error::{Result, VgotError};
use crate::llm::{header_value, LlmClient};
use crate::script::{parse_domains, DomainPrompt, ShotDescription, ShotScript};
use crate::seed;

/// One visual identity shared by a group of shots.
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarProfile {
    pub id: String,
    pub prompt: DomainPrompt,
    pub seed: u64,
    /// Set by [`render_avatar`].
    pub ip_embedding: Option<Embedding>,
}

impl AvatarProfile {
    pub fn new(id: impl Into<String>, prompt: DomainPrompt, seed: u64) -> Self {
        Self {
            id: id.into(),
            prompt,
            seed,
            ip_embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub latent: FrameLatent,
    pub shot_index: usize,
    pub avatar_id: String,
}

/// Image encoder adapter.
pub trait ImageEncoder: Send + Sync {
    fn encode(&self, latent: &FrameLatent) -> Result<Embedding>;
}

/// Fixed linear map of the flattened latent, then normalization.
///
/// Identity-channel means go through the pseudo-inverse of the world's
/// identity path and are repeated into every token, so conditioning on the
/// embedding of an image roughly reproduces that image's identity channels.
/// On top of that, a seeded Gaussian map of the identity-channel pixels,
/// weighted by `scene_weight`, picks up only what the identity path cannot
/// produce (sampler noise).
#[derive(Debug, Clone)]
pub struct MockImageEncoder {
    shape: LatentShape,
    dim: usize,
    /// `dim × shape.len()`, row-major.
    matrix: Vec<f64>,
}

impl MockImageEncoder {
    pub fn new(seed: u64, projector: &ConditionProjector, scene_weight: f64) -> Result<Self> {
        let shape = projector.shape();
        let (d, d_id) = (shape.d, projector.identity_channels());
        let map = projector.channel_mean_map();
        let token_dim = map.first().map_or(0, Vec::len);
        let dim = TOKENS_PER_EMBEDDING * token_dim;
        // channel means → embedding coordinates, `dim × d`
        let mut pooled = vec![vec![0.0; d]; dim];
        if d_id > 0 {
            let a = DMatrix::from_fn(d_id, token_dim, |c, j| map[c][j]);
            let inverse = a
                .pseudo_inverse(1e-12)
                .map_err(|e| VgotError::Config(format!("identity path has no pseudo-inverse: {e}")))?;
            for r in 0..TOKENS_PER_EMBEDDING {
                for j in 0..token_dim {
                    for c in 0..d_id {
                        pooled[r * token_dim + j][c] = inverse[(j, c)];
                    }
                }
            }
        }
        let n = shape.pixels() as f64;
        let pooled: Vec<f64> = pooled
            .iter()
            .flat_map(|row| (0..shape.pixels()).flat_map(move |_| row.iter().map(move |w| w / n)))
            .collect();
        // one scene row per token coordinate over the identity channels,
        // shared by all tokens and blind to anything the identity path can
        // produce
        let id_idx: Vec<usize> = (0..shape.len()).filter(|i| i % d < d_id).collect();
        let weights = projector.weights();
        let span = DMatrix::from_fn(id_idx.len(), token_dim, |r, v| weights[id_idx[r] * token_dim + v]);
        let q = span.qr().q();
        let raw = DMatrix::from_column_slice(
            id_idx.len(),
            token_dim,
            &seed::gaussian_vec(&mut seed::stream(seed, "image-encoder", &[]), token_dim * id_idx.len()),
        );
        let scene = &raw - &q * (q.transpose() * &raw);
        let norm = (id_idx.len().max(1) as f64).sqrt();
        let mut matrix = pooled;
        for (r, row) in matrix.chunks_exact_mut(shape.len()).enumerate() {
            for (k, &i) in id_idx.iter().enumerate() {
                row[i] += scene_weight * scene[(k, r % token_dim)] / norm;
            }
        }
        Ok(Self { shape, dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The projection before normalization.
    pub fn project(&self, latent: &FrameLatent) -> Result<Vec<f64>> {
        if latent.shape() != self.shape {
            return Err(VgotError::Shape {
                expected: self.shape.dims(),
                actual: latent.shape().dims(),
            });
        }
        Ok(self
            .matrix
            .chunks_exact(self.shape.len())
            .map(|row| row.iter().zip(latent.data()).map(|(w, x)| w * x).sum())
            .collect())
    }
}

impl ImageEncoder for MockImageEncoder {
    fn encode(&self, latent: &FrameLatent) -> Result<Embedding> {
        encode_image_mock(latent, self)
    }
}

/// Unit-norm image embedding; a zero latent maps to the first basis vector.
pub fn encode_image_mock(latent: &FrameLatent, encoder: &MockImageEncoder) -> Result<Embedding> {
    if !latent.is_finite() {
        return Err(VgotError::Numeric("image encoder input"));
    }
    let raw = encoder.project(latent)?;
    let bytes: Vec<u8> = latent.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let source = format!("latent:{}", &seed::sha256_hex(&bytes)[..16]);
    debug_assert_eq!(raw.len(), encoder.dim);
    Ok(Embedding::new(normalize_or_basis(raw), EmbeddingKind::Image, source))
}

/// Ask the model for avatar prompts and a per-shot assignment.
///
/// The completion lists `Avatar <id>:` blocks of labeled domains followed by
/// an `Assignment: id, id, ...` line with one entry per shot. Avatar seeds
/// are derived from `seed` and the avatar's position.
pub fn derive_avatars(
    descriptions: &[ShotDescription],
    user_input: &str,
    llm: &dyn LlmClient,
    shots_per_avatar: usize,
    seed: u64,
) -> Result<(Vec<AvatarProfile>, Vec<String>)> {
    if descriptions.is_empty() {
        return Err(VgotError::Input("cannot cast avatars for an empty story".into()));
    }
    if shots_per_avatar == 0 {
        return Err(VgotError::Config("shots_per_avatar must be at least 1".into()));
    }
    let n = descriptions.len();
    let instruction = format!(
        "TASK: avatars\nSHOTS: {n}\nSHOTS_PER_AVATAR: {shots_per_avatar}\n\
         Propose the recurring character appearances (avatars) for this story, \
         about one per {shots_per_avatar} shots. For each, write `Avatar <id>:` followed by \
         Character, Background, Relation, Camera Pose and HDR Description sections. \
         Finish with `Assignment:` listing one avatar id per shot, in shot order."
    );
    let mut context = format!("STORY: {}\n", user_input.trim());
    for d in descriptions {
        context.push_str(&format!("{}. {}\n", d.index + 1, d.text));
    }
    let completion = llm.complete(&instruction, &context)?;
    let (avatars, assignment) = parse_avatar_listing(&completion, seed)?;
    if assignment.len() != n {
        return Err(VgotError::Validation(format!(
            "assignment covers {} of {n} shots",
            assignment.len()
        )));
    }
    for (i, id) in assignment.iter().enumerate() {
        if !avatars.iter().any(|a| &a.id == id) {
            return Err(VgotError::Validation(format!(
                "shot {i} assigned to unknown avatar `{id}`"
            )));
        }
    }
    Ok((avatars, assignment))
}

fn parse_avatar_listing(text: &str, seed: u64) -> Result<(Vec<AvatarProfile>, Vec<String>)> {
    let mut blocks: Vec<(String, String)> = Vec::new();
    let mut assignment = None;
    for line in text.lines() {
        let trimmed = line.trim();
        if let Some(list) =
            header_value(trimmed, "Assignment").filter(|_| trimmed.to_ascii_lowercase().starts_with("assignment"))
        {
            assignment = Some(
                list.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>(),
            );
            continue;
        }
        let lower = trimmed.to_ascii_lowercase();
        if lower.starts_with("avatar ") && trimmed.ends_with(':') {
            let id = trimmed["avatar ".len()..trimmed.len() - 1].trim().to_string();
            blocks.push((id, String::new()));
        } else if let Some((_, body)) = blocks.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let assignment = assignment.ok_or_else(|| VgotError::parse("assignment", "completion has no Assignment line"))?;
    if blocks.is_empty() {
        return Err(VgotError::parse("avatars", "completion lists no avatars"));
    }
    let mut avatars = Vec::with_capacity(blocks.len());
    for (i, (id, body)) in blocks.into_iter().enumerate() {
        if id.is_empty() || avatars.iter().any(|a: &AvatarProfile| a.id == id) {
            return Err(VgotError::Validation(format!(
                "avatar {i} has an empty or duplicate id"
            )));
        }
        let prompt = parse_domains(&body, i)?;
        avatars.push(AvatarProfile::new(
            id,
            prompt,
            seed::derive_seed(seed, "avatar", &[i as i64]),
        ));
    }
    Ok((avatars, assignment))
}

/// Render the avatar portrait from its prompt alone and encode it.
pub fn render_avatar(profile: &AvatarProfile, backend: &Backend) -> Result<AvatarProfile> {
    let text = backend.text_encoder.encode(&profile.prompt.to_labeled_text())?;
    let portrait = sample_reverse_eta(
        backend.denoiser.as_ref(),
        &Condition::text_only(text),
        &backend.schedule,
        backend.shape,
        profile.seed,
        backend.eta,
    )?;
    let mut ip = backend.image_encoder.encode(&portrait)?;
    ip.source = format!("avatar:{}", profile.id);
    Ok(AvatarProfile {
        ip_embedding: Some(ip),
        ..profile.clone()
    })
}

/// `I_i = M_I(e^T_i, e^I_j)`: keyframe from the full five-domain script and
/// the avatar's image embedding.
pub fn generate_keyframe(
    shot_index: usize,
    script: &ShotScript,
    avatar: &AvatarProfile,
    ip_scale: f64,
    backend: &Backend,
    seed: u64,
) -> Result<Keyframe> {
    let ip = avatar
        .ip_embedding
        .clone()
        .ok_or_else(|| VgotError::State(format!("avatar `{}` has not been rendered", avatar.id)))?;
    let cond = keyframe_condition(script, ip, ip_scale, backend)?;
    let latent = sample_reverse_eta(
        backend.denoiser.as_ref(),
        &cond,
        &backend.schedule,
        backend.shape,
        seed::derive_seed(seed, "keyframe", &[shot_index as i64]),
        backend.eta,
    )?;
    Ok(Keyframe {
        latent,
        shot_index,
        avatar_id: avatar.id.clone(),
    })
}

pub fn keyframe_condition(script: &ShotScript, ip: Embedding, ip_scale: f64, backend: &Backend) -> Result<Condition> {
    let text = backend.text_encoder.encode(&script.full_text())?;
    if ip_scale == 0.0 {
        return Ok(Condition::text_only(text));
    }
    Condition::with_ip(text, ip, ip_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyWorldParams;
    use crate::diffusion::NoiseSchedule;
    use crate::llm::MockLlm;

    fn descriptions(n: usize) -> Vec<ShotDescription> {
        (0..n)
            .map(|index| ShotDescription {
                index,
                text: format!("shot {index}"),
            })
            .collect()
    }

    fn backend() -> Backend {
        Backend::toy(
            ToyWorldParams::default(),
            NoiseSchedule::strided(1000, 20, 1e-4, 0.02).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn floor_division_assignment() {
        let (avatars, assignment) = derive_avatars(&descriptions(4), "story", &MockLlm::new(0), 2, 0).unwrap();
        assert_eq!(avatars.iter().map(|a| a.id.as_str()).collect::<Vec<_>>(), ["a0", "a1"]);
        assert_eq!(assignment, ["a0", "a0", "a1", "a1"]);

        let (avatars, assignment) = derive_avatars(&descriptions(3), "story", &MockLlm::new(0), 1, 0).unwrap();
        assert_eq!(avatars.len(), 3);
        let mut ids = assignment.clone();
        ids.dedup();
        assert_eq!(ids.len(), 3);

        // Mary: 30 shots, six per life stage → five avatars
        let (avatars, _) = derive_avatars(&descriptions(30), "Mary's life", &MockLlm::new(0), 6, 0).unwrap();
        assert_eq!(avatars.len(), 5);
        assert!(derive_avatars(&descriptions(0), "x", &MockLlm::new(0), 6, 0).is_err());
        assert!(derive_avatars(&descriptions(2), "x", &MockLlm::new(0), 0, 0).is_err());
    }

    struct Canned(&'static str);
    impl LlmClient for Canned {
        fn complete(&self, _: &str, _: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn assignment_gaps_are_rejected() {
        let body = "Character: c\nBackground: b\nRelation: r\nCamera Pose: p\nHDR Description: h\n";
        let short = format!("Avatar kid:\n{body}Assignment: kid, kid\n");
        let llm = Canned(Box::leak(short.into_boxed_str()));
        assert!(matches!(
            derive_avatars(&descriptions(3), "x", &llm, 2, 0),
            Err(VgotError::Validation(_))
        ));
        let unknown = format!("Avatar kid:\n{body}Assignment: kid, adult\n");
        let llm = Canned(Box::leak(unknown.into_boxed_str()));
        assert!(matches!(
            derive_avatars(&descriptions(2), "x", &llm, 2, 0),
            Err(VgotError::Validation(_))
        ));
    }

    #[test]
    fn image_encoder_contract() {
        let enc = ToyWorldParams::default().image_encoder().unwrap();
        let shape = LatentShape::default();
        let zero = encode_image_mock(&FrameLatent::zeros(shape), &enc).unwrap();
        assert_eq!(zero.data[0], 1.0);
        assert!(zero.data[1..].iter().all(|v| *v == 0.0));

        let x = FrameLatent::gaussian(shape, &mut seed::stream(3, "t", &[]));
        let a = encode_image_mock(&x, &enc).unwrap();
        let b = encode_image_mock(&x.scaled(2.0), &enc).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(a, encode_image_mock(&x, &enc).unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scene_term_ignores_noise_free_identity() {
        let params = ToyWorldParams::default();
        let flat = ToyWorldParams {
            scene_weight: 0.0,
            ..params
        };
        let projector = params.projector().unwrap();
        let text = crate::conditioning::encode_text_mock("a", 16, 0).unwrap();
        let ip = encode_image_mock(
            &FrameLatent::gaussian(LatentShape::default(), &mut seed::stream(1, "t", &[])),
            &params.image_encoder().unwrap(),
        )
        .unwrap();
        let mean = projector.mean(&Condition::with_ip(text, ip, 1.0).unwrap()).unwrap();
        let a = params.image_encoder().unwrap().project(&mean).unwrap();
        let b = flat.image_encoder().unwrap().project(&mean).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }

    #[test]
    fn image_encoder_recovers_identity_direction() {
        let params = ToyWorldParams {
            scene_weight: 0.0,
            ..ToyWorldParams::default()
        };
        let enc = params.image_encoder().unwrap();
        let map = params.projector().unwrap().channel_mean_map();
        let shape = LatentShape::default();
        let u = [0.3, -0.2, 0.5, 0.1];
        let means: Vec<f64> = map
            .iter()
            .map(|row| row.iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        let mut data = vec![0.0; shape.len()];
        for (i, v) in data.iter_mut().enumerate() {
            let c = i % shape.d;
            if c < params.identity_channels {
                *v = means[c];
            }
        }
        let raw = enc.project(&FrameLatent::from_vec(shape, data).unwrap()).unwrap();
        for token in raw.chunks_exact(u.len()) {
            let back: Vec<f64> = map[..params.identity_channels]
                .iter()
                .map(|row| row.iter().zip(token).map(|(a, b)| a * b).sum())
                .collect();
            for (b, m) in back.iter().zip(&means) {
                assert!((b - m).abs() < 1e-9, "{b} vs {m}");
            }
        }
    }

    #[test]
    fn rendering_is_seeded() {
        let b = backend();
        let prompt = parse_domains(
            "Character: c\nBackground: b\nRelation: r\nCamera Pose: p\nHDR Description: h",
            0,
        )
        .unwrap();
        let p1 = AvatarProfile::new("a0", prompt.clone(), 1);
        let p2 = AvatarProfile::new("a1", prompt, 2);
        let r1 = render_avatar(&p1, &b).unwrap();
        assert_eq!(r1, render_avatar(&p1, &b).unwrap());
        let (e1, e2) = (
            r1.ip_embedding.unwrap(),
            render_avatar(&p2, &b).unwrap().ip_embedding.unwrap(),
        );
        assert!((e1.norm() - 1.0).abs() < 1e-9);
        assert!(e1.cosine(&e2) < 1.0 - 1e-6);
    }

    #[test]
    fn keyframe_needs_rendered_avatar_and_ignores_identity_at_zero_scale() {
        let b = backend();
        let prompt = parse_domains(
            "Character: c\nBackground: b\nRelation: r\nCamera Pose: p\nHDR Description: h",
            0,
        )
        .unwrap();
        let script = ShotScript {
            prompt: prompt.clone(),
            avatar_id: "a0".into(),
            short: "s".into(),
        };
        let raw = AvatarProfile::new("a0", prompt.clone(), 1);
        assert!(matches!(
            generate_keyframe(0, &script, &raw, 1.0, &b, 0),
            Err(VgotError::State(_))
        ));

        let a0 = render_avatar(&raw, &b).unwrap();
        let a1 = render_avatar(&AvatarProfile::new("a1", prompt, 99), &b).unwrap();
        let k0 = generate_keyframe(0, &script, &a0, 0.0, &b, 5).unwrap();
        let k1 = generate_keyframe(0, &script, &a1, 0.0, &b, 5).unwrap();
        assert_eq!(k0.latent, k1.latent);
        let k2 = generate_keyframe(0, &script, &a1, 1.0, &b, 5).unwrap();
        assert_ne!(k1.latent, k2.latent);
        assert_eq!(k2, generate_keyframe(0, &script, &a1, 1.0, &b, 5).unwrap());
    }
}
