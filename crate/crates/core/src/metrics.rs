//! Consistency metrics over decoded frames: face and style consistency
//! within and across shots, PSNR and per-domain text alignment.

use serde::{Deserialize, Serialize};

use crate::conditioning::{cosine, dot, ConditionProjector, MockTextEncoder, TextEncoder, TOKENS_PER_EMBEDDING};
use crate::diffusion::Frame;
use crate::error::{Result, VgotError};
use crate::script::{Domain, ShotScript, Story};
use crate::seed;
use crate::smooth::VideoTimeline;

/// Frame → feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, frame: &Frame) -> Result<Vec<f64>>;
}

/// Toy face features: spatial mean of the identity channels.
#[derive(Debug, Clone, Copy)]
pub struct IdentityChannelExtractor {
    pub identity_channels: usize,
}

impl FeatureExtractor for IdentityChannelExtractor {
    fn name(&self) -> &str {
        "identity-channels"
    }

    fn extract(&self, frame: &Frame) -> Result<Vec<f64>> {
        if self.identity_channels == 0 || self.identity_channels > frame.shape().d {
            return Err(VgotError::Config(format!(
                "cannot take {} identity channels from a {}-channel frame",
                self.identity_channels,
                frame.shape().d
            )));
        }
        let mut means = frame.channel_means();
        means.truncate(self.identity_channels);
        Ok(means)
    }
}

/// Toy style features: Gram matrix of a fixed seeded per-pixel linear map
/// with `features` output channels, flattened row-major.
#[derive(Debug, Clone)]
pub struct GramStyleExtractor {
    features: usize,
    channels: usize,
    /// `features × channels`.
    map: Vec<f64>,
}

impl GramStyleExtractor {
    pub fn new(seed: u64, channels: usize, features: usize) -> Self {
        let map = seed::gaussian_vec(&mut seed::stream(seed, "style-map", &[]), features * channels);
        Self {
            features,
            channels,
            map,
        }
    }

    /// `m × m` Gram matrix `Σ_px f fᵀ / pixels`.
    pub fn gram(&self, frame: &Frame) -> Result<Vec<Vec<f64>>> {
        if frame.shape().d != self.channels {
            return Err(VgotError::Shape {
                expected: vec![self.channels],
                actual: vec![frame.shape().d],
            });
        }
        let m = self.features;
        let mut gram = vec![vec![0.0; m]; m];
        for px in frame.data().chunks_exact(self.channels) {
            let f: Vec<f64> = self.map.chunks_exact(self.channels).map(|row| dot(row, px)).collect();
            for a in 0..m {
                for b in 0..m {
                    gram[a][b] += f[a] * f[b];
                }
            }
        }
        let n = frame.shape().pixels() as f64;
        gram.iter_mut().flatten().for_each(|v| *v /= n);
        Ok(gram)
    }
}

impl FeatureExtractor for GramStyleExtractor {
    fn name(&self) -> &str {
        "gram-style"
    }

    fn extract(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok(self.gram(frame)?.concat())
    }
}

/// Batch classifier hook for an Inception-style score. No toy version.
pub trait InceptionScorer: Send + Sync {
    fn score(&self, frames: &[Frame]) -> Result<f64>;
}

/// How cross-shot similarity pairs shots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossPairing {
    #[default]
    Consecutive,
    AllPairs,
    SameAvatar,
}

/// Mean pairwise cosine among `features`; `None` with fewer than two.
fn mean_pairwise_cosine(features: &[Vec<f64>]) -> Option<f64> {
    let n = features.len();
    if n < 2 {
        return None;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine(&features[i], &features[j]);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

fn mean_vector(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs.first().map_or(0, Vec::len)];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= vs.len() as f64);
    out
}

/// `(within, cross)`.
///
/// Within: mean over shots (with ≥ 2 frames) of the mean pairwise cosine
/// among that shot's frame features. Cross: mean over shot pairs of the
/// cosine between the two shots' mean features. Undefined values are `None`.
pub fn consistency_scores(
    timeline: &VideoTimeline,
    extractor: &dyn FeatureExtractor,
    pairing: CrossPairing,
    assignment: Option<&[String]>,
) -> Result<(Option<f64>, Option<f64>)> {
    if timeline.frames.is_empty() {
        return Err(VgotError::Input("timeline has no frames".into()));
    }
    let n_shots = timeline.n_shots();
    let mut per_shot: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_shots];
    for (frame, &shot) in timeline.frames.iter().zip(&timeline.shots) {
        per_shot[shot].push(extractor.extract(frame)?);
    }
    let within: Vec<f64> = per_shot.iter().filter_map(|f| mean_pairwise_cosine(f)).collect();
    let within = (!within.is_empty()).then(|| within.iter().sum::<f64>() / within.len() as f64);

    let means: Vec<Option<Vec<f64>>> = per_shot
        .iter()
        .map(|f| (!f.is_empty()).then(|| mean_vector(f)))
        .collect();
    let pairs: Vec<(usize, usize)> = match pairing {
        CrossPairing::Consecutive => (1..n_shots).map(|j| (j - 1, j)).collect(),
        CrossPairing::AllPairs => (0..n_shots)
            .flat_map(|i| (i + 1..n_shots).map(move |j| (i, j)))
            .collect(),
        CrossPairing::SameAvatar => {
            let a = assignment
                .ok_or_else(|| VgotError::Config("same-avatar pairing needs the avatar assignment".into()))?;
            (0..n_shots)
                .flat_map(|i| (i + 1..n_shots).map(move |j| (i, j)))
                .filter(|&(i, j)| a.get(i).is_some() && a.get(i) == a.get(j))
                .collect()
        }
    };
    let sims: Vec<f64> = pairs
        .iter()
        .filter_map(|&(i, j)| Some(cosine(means[i].as_ref()?, means[j].as_ref()?)))
        .collect();
    let cross = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);
    Ok((within, cross))
}

/// Frames whose MSE is zero get this value instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `10 · log10(max² / MSE)` in dB.
pub fn psnr(a: &Frame, b: &Frame, max_value: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(VgotError::Shape {
            expected: a.shape().dims(),
            actual: b.shape().dims(),
        });
    }
    if max_value.is_nan() || max_value <= 0.0 {
        return Err(VgotError::Input(format!("max_value must be positive, got {max_value}")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB))
}

/// Text/frame alignment adapter.
pub trait ClipScorer: Send + Sync {
    /// Cosine in `[-1, 1]` between a frame and a text.
    fn score(&self, frame: &Frame, text: &str) -> Result<f64>;
}

/// Toy alignment: the frame's non-identity channel means are mapped back
/// through the adjoint of the world's channel-mean projector, tiled into
/// embedding space and compared with the mock text embedding.
#[derive(Debug, Clone)]
pub struct ToyClipScorer {
    text_encoder: MockTextEncoder,
    /// `d × token_dim`.
    channel_map: Vec<Vec<f64>>,
    identity_channels: usize,
}

impl ToyClipScorer {
    pub fn new(text_encoder: MockTextEncoder, projector: &ConditionProjector) -> Self {
        Self {
            text_encoder,
            channel_map: projector.channel_mean_map(),
            identity_channels: projector.identity_channels(),
        }
    }

    /// Frame features in the text embedding space.
    pub fn frame_embedding(&self, frame: &Frame) -> Result<Vec<f64>> {
        let means = frame.channel_means();
        if means.len() != self.channel_map.len() {
            return Err(VgotError::Shape {
                expected: vec![self.channel_map.len()],
                actual: vec![means.len()],
            });
        }
        let token_dim = self.channel_map.first().map_or(0, Vec::len);
        let mut token = vec![0.0; token_dim];
        for (row, m) in self.channel_map.iter().zip(&means).skip(self.identity_channels) {
            for (t, w) in token.iter_mut().zip(row) {
                *t += w * m;
            }
        }
        Ok(token.repeat(TOKENS_PER_EMBEDDING))
    }
}

impl ClipScorer for ToyClipScorer {
    fn score(&self, frame: &Frame, text: &str) -> Result<f64> {
        let e = self.text_encoder.encode(text)?;
        Ok(cosine(&self.frame_embedding(frame)?, &e.data))
    }
}

/// Mean alignment of a shot's frames with one domain of its script.
pub fn clip_score_mock(frames: &[&Frame], script: &ShotScript, domain: &str, scorer: &dyn ClipScorer) -> Result<f64> {
    let domain: Domain = domain.parse()?;
    if frames.is_empty() {
        return Err(VgotError::Input("no frames to score".into()));
    }
    let text = script.prompt.get(domain);
    let mut sum = 0.0;
    for f in frames {
        sum += scorer.score(f, text)?;
    }
    Ok(sum / frames.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipByDomain {
    pub character: f64,
    pub background: f64,
    pub relations: f64,
    pub camera: f64,
    pub hdr: f64,
}

impl ClipByDomain {
    pub fn get(&self, d: Domain) -> f64 {
        match d {
            Domain::Character => self.character,
            Domain::Background => self.background,
            Domain::Relations => self.relations,
            Domain::Camera => self.camera,
            Domain::Hdr => self.hdr,
        }
    }

    pub fn average(&self) -> f64 {
        Domain::ALL.iter().map(|d| self.get(*d)).sum::<f64>() / 5.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub shots: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fc_within: Option<f64>,
    pub fc_cross: Option<f64>,
    pub sc_within: Option<f64>,
    pub sc_cross: Option<f64>,
    /// Mean PSNR over consecutive frame pairs within shots.
    pub psnr_pairs: Option<f64>,
    pub clip_by_domain: ClipByDomain,
    pub counts: Counts,
}

impl MetricsReport {
    /// Plain-text table with the usual column layout.
    pub fn render_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| format!("{x:.4}"));
        let c = &self.clip_by_domain;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "",
            "CLIP(cha)",
            "CLIP(b)",
            "CLIP(r)",
            "CLIP(cam)",
            "CLIP(h)",
            "FC-within",
            "FC-cross",
            "SC-within",
            "SC-cross",
            "PSNR"
        ));
        out.push_str(&format!(
            "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "run",
            c.character,
            c.background,
            c.relations,
            c.camera,
            c.hdr,
            fmt(self.fc_within),
            fmt(self.fc_cross),
            fmt(self.sc_within),
            fmt(self.sc_cross),
            fmt(self.psnr_pairs),
        ));
        out.push_str(&format!(
            "shots: {}  frames: {}\n",
            self.counts.shots, self.counts.frames
        ));
        out
    }
}

/// Extractors used to build a report.
pub struct Extractors<'a> {
    pub face: &'a dyn FeatureExtractor,
    pub style: &'a dyn FeatureExtractor,
    pub clip: &'a dyn ClipScorer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub cross_pairing: CrossPairing,
    /// PSNR peak value; the timeline's value range when absent.
    pub psnr_max: Option<f64>,
}

pub fn build_report(
    timeline: &VideoTimeline,
    story: &Story,
    extractors: &Extractors<'_>,
    config: &MetricsConfig,
) -> Result<MetricsReport> {
    if timeline.frames.len() != timeline.shots.len() {
        return Err(VgotError::Validation(
            "timeline frames and labels differ in length".into(),
        ));
    }
    if timeline.n_shots() != story.n_shots || story.scripts.len() != story.n_shots {
        return Err(VgotError::Validation(format!(
            "timeline covers {} shots but the story has {} ({} scripts)",
            timeline.n_shots(),
            story.n_shots,
            story.scripts.len()
        )));
    }
    if timeline.shots.windows(2).any(|w| w[1] < w[0]) {
        return Err(VgotError::Validation("timeline shot labels are not ordered".into()));
    }
    let shot_frames: Vec<Vec<&Frame>> = (0..story.n_shots).map(|s| timeline.shot_frames(s)).collect();
    if let Some(empty) = shot_frames.iter().position(Vec::is_empty) {
        return Err(VgotError::Validation(format!("shot {empty} has no frames")));
    }

    let assignment = (!story.assignment.is_empty()).then_some(story.assignment.as_slice());
    let (fc_within, fc_cross) = consistency_scores(timeline, extractors.face, config.cross_pairing, assignment)?;
    let (sc_within, sc_cross) = consistency_scores(timeline, extractors.style, config.cross_pairing, assignment)?;

    let peak = config.psnr_max.unwrap_or_else(|| {
        let (lo, hi) = timeline
            .frames
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    });
    let mut psnrs = Vec::new();
    if peak > 0.0 {
        for frames in &shot_frames {
            for pair in frames.windows(2) {
                psnrs.push(psnr(pair[0], pair[1], peak)?);
            }
        }
    }
    let psnr_pairs = (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64);

    let mut clip = [0.0; 5];
    for (slot, domain) in clip.iter_mut().zip(Domain::ALL) {
        let mut sum = 0.0;
        for (frames, script) in shot_frames.iter().zip(&story.scripts) {
            sum += clip_score_mock(frames, script, domain.key(), extractors.clip)?;
        }
        *slot = sum / story.n_shots as f64;
    }
    let report = MetricsReport {
        fc_within,
        fc_cross,
        sc_within,
        sc_cross,
        psnr_pairs,
        clip_by_domain: ClipByDomain {
            character: clip[0],
            background: clip[1],
            relations: clip[2],
            camera: clip[3],
            hdr: clip[4],
        },
        counts: Counts {
            shots: story.n_shots,
            frames: timeline.frames.len(),
        },
    };
    let all = [
        report.fc_within,
        report.fc_cross,
        report.sc_within,
        report.sc_cross,
        report.psnr_pairs,
    ];
    if all.iter().flatten().chain(clip.iter()).any(|v| !v.is_finite()) {
        return Err(VgotError::Numeric("metrics report"));
    }
    Ok(report)
}
