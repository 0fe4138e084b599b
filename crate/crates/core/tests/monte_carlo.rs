//! Statistical checks against the analytic Gaussian world.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vgot::casting::{render_avatar, AvatarProfile, Keyframe};
use vgot::conditioning::{cosine, encode_text_mock, Condition};
use vgot::diffusion::{add_noise, sample_reverse, FrameLatent, LatentShape};
use vgot::metrics::{clip_score_mock, FeatureExtractor};
use vgot::pipeline::{self, DEFAULT_USER_INPUT};
use vgot::script::{ShotScript, Story};
use vgot::seed;
use vgot::smooth::{build_plan, SmoothMode};
use vgot::{Backend, PipelineConfig};

fn identity_means(latent: &FrameLatent, d_id: usize) -> Vec<f64> {
    latent.channel_means()[..d_id].to_vec()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn staged(config: &PipelineConfig, input: &str) -> (Story, Backend, Vec<Keyframe>) {
    let llm = config.llm.client(config.seed).unwrap();
    let story = pipeline::script_stage(input, config, llm.as_ref()).unwrap();
    let backend = config.backend().unwrap();
    let keyframes = pipeline::keyframe_stage(&story, config, &backend).unwrap();
    (story, backend, keyframes)
}

/// Two avatar groups of six shots each.
fn two_group_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        n_shots: 12,
        seed,
        ..PipelineConfig::default()
    }
}

#[test]
fn distinct_prompts_have_bounded_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut prompt = || -> String { (0..10).map(|_| rng.random_range(b'a'..=b'z') as char).collect() };
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let (a, b) = (prompt(), prompt());
        if a == b {
            continue;
        }
        let c = encode_text_mock(&a, 16, 0)
            .unwrap()
            .cosine(&encode_text_mock(&b, 16, 0).unwrap());
        worst = worst.max(c.abs());
    }
    assert!(worst < 0.9, "max |cosine| {worst}");
}

#[test]
fn forward_marginals_match() {
    let schedule = PipelineConfig::default().schedule().unwrap();
    let shape = LatentShape::new(1, 1, 1);
    let x0 = FrameLatent::from_vec(shape, vec![1.3]).unwrap();
    for t in [1, 10, 25, 50] {
        let ab = schedule.alpha_bar(t).unwrap();
        let mut rng = seed::stream(3, "marginal", &[t as i64]);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let eps = FrameLatent::gaussian(shape, &mut rng);
                add_noise(&x0, &eps, t, &schedule).unwrap().data()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let (want_mean, want_var) = (ab.sqrt() * 1.3, 1.0 - ab);
        // relative tolerance, with an absolute floor for a vanishing mean
        assert!(
            (mean - want_mean).abs() <= 0.05 * want_mean.abs().max(0.2),
            "t={t}: mean {mean} vs {want_mean}"
        );
        assert!(
            (var - want_var).abs() <= 0.05 * want_var,
            "t={t}: var {var} vs {want_var}"
        );
    }
}

#[test]
fn avatars_with_equal_prompts_but_different_seeds_differ() {
    let config = PipelineConfig::default();
    let backend = config.backend().unwrap();
    let (story, _, _) = staged(&config, DEFAULT_USER_INPUT);
    let prompt = story.avatars[0].prompt.clone();
    let a = render_avatar(&AvatarProfile::new("x", prompt.clone(), 1), &backend).unwrap();
    let b = render_avatar(&AvatarProfile::new("y", prompt, 2), &backend).unwrap();
    let c = a.ip_embedding.unwrap().cosine(&b.ip_embedding.unwrap());
    assert!(c < 1.0 - 1e-6, "cosine {c}");
}

#[test]
fn keyframe_identity_clusters_by_avatar() {
    for s in 0..5 {
        let config = two_group_config(s);
        let (story, _, keyframes) = staged(&config, DEFAULT_USER_INPUT);
        let groups: Vec<&String> = story.assignment.iter().collect();
        assert_eq!(story.avatars.len(), 2);
        let feats: Vec<Vec<f64>> = keyframes
            .iter()
            .map(|k| identity_means(&k.latent, config.identity_channels))
            .collect();
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                let d = dist(&feats[i], &feats[j]);
                if groups[i] == groups[j] {
                    within.push(d);
                } else {
                    across.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(&within) / mean(&across);
        assert!(ratio < 0.5, "seed {s}: dispersion ratio {ratio}");

        // Shared-avatar keyframes differ only by sampler noise in their identity channels.
        let bound = 3.0 * config.prior_std / (config.shape.pixels() as f64).sqrt();
        let mut deltas = Vec::new();
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                if groups[i] == groups[j] {
                    deltas.extend(feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b).abs()));
                }
            }
        }
        let mean_delta = mean(&deltas);
        assert!(mean_delta < bound, "seed {s}: mean |Δ| {mean_delta} vs {bound}");
    }
}

#[test]
fn shot_frames_stay_near_their_keyframe_identity() {
    let config = PipelineConfig {
        mode: SmoothMode::Windowed,
        ..PipelineConfig::default()
    };
    let bound = 3.0 * config.prior_std / (config.shape.pixels() as f64).sqrt();
    for s in 0..5 {
        let config = PipelineConfig {
            seed: s,
            ..config.clone()
        };
        let (story, backend, keyframes) = staged(&config, DEFAULT_USER_INPUT);
        let timeline = pipeline::video_stage(&story, &keyframes, &config, &backend).unwrap();
        let mut deltas = Vec::new();
        for (frame, &shot) in timeline.frames.iter().zip(&timeline.shots) {
            let kf = identity_means(&keyframes[shot].latent, config.identity_channels);
            let fr = identity_means(frame, config.identity_channels);
            deltas.extend(kf.iter().zip(&fr).map(|(a, b)| (a - b).abs()));
        }
        let mean_delta = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(mean_delta < bound, "seed {s}: mean |Δ| {mean_delta} vs {bound}");
    }
}

#[test]
fn fifo_frames_converge_to_their_own_shot_mean() {
    for s in 0..5 {
        let config = PipelineConfig {
            seed: s,
            ..PipelineConfig::default()
        };
        let (story, backend, keyframes) = staged(&config, DEFAULT_USER_INPUT);
        let world = config.world_params().world().unwrap();
        let plan = build_plan(&story, &keyframes, config.ip_scale, &backend).unwrap();
        let timeline = pipeline::video_stage(&story, &keyframes, &config, &backend).unwrap();
        for (shot, cond) in plan.iter().enumerate() {
            let mu = identity_means(&world.mean(cond).unwrap(), config.identity_channels);
            let frames = timeline.shot_frames(shot);
            let mut got = vec![0.0; config.identity_channels];
            for f in &frames {
                for (g, v) in got.iter_mut().zip(identity_means(f, config.identity_channels)) {
                    *g += v / frames.len() as f64;
                }
            }
            let worst = got.iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 0.1, "seed {s} shot {shot}: {worst}");
        }
    }
}

fn character_frames(script: &ShotScript, backend: &Backend, seed: u64) -> Vec<FrameLatent> {
    let cond = Condition::text_only(backend.text_encoder.encode(&script.prompt.character).unwrap());
    (0..4)
        .map(|f| {
            sample_reverse(
                backend.denoiser.as_ref(),
                &cond,
                &backend.schedule,
                backend.shape,
                seed::derive_seed(seed, "clip-check", &[f]),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn clip_prefers_own_script_over_unrelated() {
    let (mut own, mut other) = (0.0, 0.0);
    for s in 0..20 {
        let config = PipelineConfig {
            seed: s,
            ..PipelineConfig::default()
        };
        let backend = config.backend().unwrap();
        let scorer = config.clip_scorer().unwrap();
        let llm = config.llm.client(s).unwrap();
        let story = pipeline::script_stage(DEFAULT_USER_INPUT, &config, llm.as_ref()).unwrap();
        let unrelated = pipeline::script_stage(
            "Describe a story of a lighthouse keeper during a winter storm",
            &config,
            llm.as_ref(),
        )
        .unwrap();
        let frames = character_frames(&story.scripts[0], &backend, s);
        let refs: Vec<&FrameLatent> = frames.iter().collect();
        let a = clip_score_mock(&refs, &story.scripts[0], "character", &scorer).unwrap();
        let b = clip_score_mock(&refs, &unrelated.scripts[0], "character", &scorer).unwrap();
        assert!((-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b));
        own += a;
        other += b;
    }
    assert!(own > other, "own {own} vs unrelated {other}");
}

#[test]
fn identity_features_group_by_avatar() {
    for s in 0..5 {
        let config = two_group_config(s);
        let (story, backend, keyframes) = staged(&config, DEFAULT_USER_INPUT);
        let timeline = pipeline::video_stage(&story, &keyframes, &config, &backend).unwrap();
        let face = config.face_extractor();
        let feats: Vec<Vec<f64>> = timeline.frames.iter().map(|f| face.extract(f).unwrap()).collect();
        let group: Vec<&String> = timeline.shots.iter().map(|&s| &story.assignment[s]).collect();
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                let c = cosine(&feats[i], &feats[j]);
                if group[i] == group[j] {
                    within += c;
                    nw += 1;
                } else {
                    across += c;
                    na += 1;
                }
            }
        }
        let gap = within / nw as f64 - across / na as f64;
        assert!(gap > 0.1, "seed {s}: gap {gap}");
    }
}
