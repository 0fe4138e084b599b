//! Cross-shot smoothing.
//!
//! Two ways to turn per-shot conditions into one timeline:
//!
//! * **windowed**: each shot is its own temporal window; clips are generated
//!   independently and concatenated.
//! * **fifo-reset**: a FIFO queue of `T` latents at noise levels `1..=T`
//!   (head to tail). Every tick applies one DDIM step to every slot at its
//!   own level under its own condition, dequeues the now-clean head and
//!   enqueues fresh noise at level `T`. A slot's condition is fixed when it
//!   enters the queue: frame `f` always carries shot `⌊f / k⌋`'s condition.
//!   That enqueue rule is the reset boundary: the next shot's fresh noise and
//!   embeddings start entering while the previous shot's last frames are
//!   still being denoised.
//!
//! Within a tick the per-slot updates are independent and may run on the
//! rayon pool; results are applied before the dequeue/enqueue.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::casting::Keyframe;
use crate::conditioning::Condition;
use crate::diffusion::{ddim_step_eta, DenoiserBackend, Frame, FrameLatent, LatentShape, NoiseSchedule, SlotTag};
use crate::error::{Result, VgotError};
use crate::script::Story;
use crate::seed;
use crate::shot::{generate_shot_clip, shot_condition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SmoothMode {
    #[serde(rename = "windowed")]
    Windowed,
    #[serde(rename = "fifo-reset")]
    FifoReset,
}

impl SmoothMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SmoothMode::Windowed => "windowed",
            SmoothMode::FifoReset => "fifo-reset",
        }
    }
}

impl std::str::FromStr for SmoothMode {
    type Err = VgotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "windowed" => Ok(SmoothMode::Windowed),
            "fifo-reset" => Ok(SmoothMode::FifoReset),
            other => Err(VgotError::Config(format!(
                "unknown mode `{other}` (expected windowed or fifo-reset)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConfig {
    pub mode: SmoothMode,
    /// Frames per shot.
    pub k: usize,
    /// Reset boundary length in frames: the first `L` frames of every shot
    /// draw their noise from a per-shot stream.
    pub reset_boundary: usize,
    /// Must match the schedule's step count.
    pub steps: usize,
    pub eta: f64,
    /// Evaluate slots of one tick on the rayon pool.
    pub parallel: bool,
}

impl SmoothConfig {
    pub fn new(mode: SmoothMode, k: usize, steps: usize) -> Self {
        Self {
            mode,
            k,
            reset_boundary: k,
            steps,
            eta: 0.0,
            parallel: false,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.k == 0 {
            return Err(VgotError::Config("frames per shot must be at least 1".into()));
        }
        if self.reset_boundary == 0 || self.reset_boundary > self.k {
            return Err(VgotError::Config(format!(
                "reset boundary must lie in 1..={}, got {}",
                self.k, self.reset_boundary
            )));
        }
        if self.steps != schedule.steps() {
            return Err(VgotError::Config(format!(
                "smooth config has {} steps but the schedule has {}",
                self.steps,
                schedule.steps()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(VgotError::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QueueSlot {
    pub latent: FrameLatent,
    /// Current noise level; 0 once fully denoised.
    pub level: usize,
    /// Negative for warm-up dummies.
    pub global_frame: i64,
    pub shot: usize,
    pub condition: Arc<Condition>,
}

impl QueueSlot {
    pub fn is_dummy(&self) -> bool {
        self.global_frame < 0
    }
}

/// Tick at which a shot's first frame entered the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub shot: usize,
    pub tick: usize,
}

#[derive(Debug, Clone)]
pub struct LatentQueue {
    slots: VecDeque<QueueSlot>,
    emitted: usize,
    ticks: usize,
    next_frame: i64,
    seed: u64,
    shape: LatentShape,
    switches: Vec<SwitchEvent>,
}

impl LatentQueue {
    pub fn slots(&self) -> impl Iterator<Item = &QueueSlot> {
        self.slots.iter()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn levels(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.level).collect()
    }

    /// Real frames emitted so far.
    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    pub fn switches(&self) -> &[SwitchEvent] {
        &self.switches
    }

    /// Levels run `1, 2, ...` from the head and frames are consecutive;
    /// a queue not yet draining holds exactly `steps` slots.
    pub fn check_invariant(&self, steps: usize, draining: bool) -> Result<()> {
        let levels_ok = self.slots.iter().enumerate().all(|(p, s)| s.level == p + 1);
        let frames_ok = self
            .slots
            .iter()
            .zip(self.slots.iter().skip(1))
            .all(|(a, b)| b.global_frame == a.global_frame + 1);
        let len_ok = draining || self.slots.len() == steps;
        if levels_ok && frames_ok && len_ok {
            Ok(())
        } else {
            Err(VgotError::State(format!(
                "queue invariant violated: levels {:?}",
                self.levels()
            )))
        }
    }
}

/// Frame `global_frame`'s initial noise at level `T`. Frames inside a shot's
/// reset boundary draw from a per-shot stream; later frames (only when
/// `L < k`) continue a timeline-wide stream. Neither reads queue contents.
pub fn fresh_noise(shape: LatentShape, seed: u64, config: &SmoothConfig, global_frame: usize) -> FrameLatent {
    let shot = global_frame / config.k;
    let within = global_frame % config.k;
    let mut rng = if within < config.reset_boundary {
        seed::stream(seed, "fifo-reset", &[shot as i64, within as i64])
    } else {
        seed::stream(seed, "fifo-carry", &[global_frame as i64])
    };
    FrameLatent::gaussian(shape, &mut rng)
}

fn real_slot(
    plan: &[Arc<Condition>],
    config: &SmoothConfig,
    shape: LatentShape,
    seed: u64,
    global_frame: usize,
) -> QueueSlot {
    let shot = global_frame / config.k;
    QueueSlot {
        latent: fresh_noise(shape, seed, config, global_frame),
        level: config.steps,
        global_frame: global_frame as i64,
        shot,
        condition: plan[shot].clone(),
    }
}

/// Queue of length `T`: slot `p` at level `p + 1` holding frame `p − T + 1`.
/// The `T − 1` warm-up slots are dummies carrying shot 0's condition; the
/// tail is frame 0.
pub fn init_queue(
    plan: &[Arc<Condition>],
    config: &SmoothConfig,
    schedule: &NoiseSchedule,
    shape: LatentShape,
    seed: u64,
) -> Result<LatentQueue> {
    if plan.is_empty() {
        return Err(VgotError::Config("smoothing plan has no shots".into()));
    }
    config.validate(schedule)?;
    let steps = schedule.steps();
    let mut slots = VecDeque::with_capacity(steps);
    for p in 0..steps {
        let level = p + 1;
        let global_frame = p as i64 - steps as i64 + 1;
        if global_frame < 0 {
            let scale = (1.0 - schedule.alpha_bar(level)?).sqrt();
            let noise = FrameLatent::gaussian(shape, &mut seed::stream(seed, "fifo-warmup", &[global_frame]));
            slots.push_back(QueueSlot {
                latent: noise.scaled(scale),
                level,
                global_frame,
                shot: 0,
                condition: plan[0].clone(),
            });
        } else {
            slots.push_back(real_slot(plan, config, shape, seed, 0));
        }
    }
    Ok(LatentQueue {
        slots,
        emitted: 0,
        ticks: 0,
        next_frame: 1,
        seed,
        shape,
        switches: vec![SwitchEvent { shot: 0, tick: 0 }],
    })
}

/// One engine step. Returns the decoded head frame when it is real.
pub fn tick(
    queue: &mut LatentQueue,
    denoiser: &dyn DenoiserBackend,
    schedule: &NoiseSchedule,
    plan: &[Arc<Condition>],
    config: &SmoothConfig,
) -> Result<Option<(usize, Frame)>> {
    if queue.slots.is_empty() {
        return Ok(None);
    }
    let seed = queue.seed;
    let step = |slot: &QueueSlot| -> Result<FrameLatent> {
        let eps = denoiser.predict_slot_noise(
            SlotTag {
                global_frame: slot.global_frame,
            },
            &slot.latent,
            slot.level,
            &slot.condition,
            schedule,
        )?;
        let z = (config.eta > 0.0).then(|| {
            FrameLatent::gaussian(
                slot.latent.shape(),
                &mut seed::stream(seed, "fifo-eta", &[slot.global_frame, slot.level as i64]),
            )
        });
        ddim_step_eta(
            &slot.latent,
            &eps,
            slot.level,
            slot.level - 1,
            schedule,
            config.eta,
            z.as_ref(),
        )
    };
    let updated: Vec<FrameLatent> = if config.parallel {
        queue
            .slots
            .make_contiguous()
            .par_iter()
            .map(step)
            .collect::<Result<_>>()?
    } else {
        queue.slots.iter().map(step).collect::<Result<_>>()?
    };
    for (slot, latent) in queue.slots.iter_mut().zip(updated) {
        slot.latent = latent;
        slot.level -= 1;
    }
    queue.ticks += 1;

    let head = queue.slots.pop_front().expect("queue is non-empty");
    debug_assert_eq!(head.level, 0);

    let total = (plan.len() * config.k) as i64;
    if queue.next_frame < total {
        let frame = queue.next_frame as usize;
        if frame.is_multiple_of(config.k) {
            queue.switches.push(SwitchEvent {
                shot: frame / config.k,
                tick: queue.ticks,
            });
        }
        queue.slots.push_back(real_slot(plan, config, queue.shape, seed, frame));
        queue.next_frame += 1;
    }

    if head.is_dummy() {
        return Ok(None);
    }
    queue.emitted += 1;
    Ok(Some((head.global_frame as usize, decode(&head.latent))))
}

/// Toy decoder: identity.
pub fn decode(latent: &FrameLatent) -> Frame {
    latent.clone()
}

/// Decoder adapter.
pub trait Decoder: Send + Sync {
    fn decode(&self, latent: &FrameLatent) -> Result<Frame>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDecoder;

impl Decoder for IdentityDecoder {
    fn decode(&self, latent: &FrameLatent) -> Result<Frame> {
        Ok(decode(latent))
    }
}

/// Ordered, shot-labeled frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTimeline {
    pub frames: Vec<Frame>,
    pub shots: Vec<usize>,
    pub mode: SmoothMode,
    /// fifo-reset only: tick at which each shot's first frame was enqueued.
    pub switches: Vec<SwitchEvent>,
}

impl VideoTimeline {
    pub fn n_shots(&self) -> usize {
        self.shots.iter().max().map_or(0, |m| m + 1)
    }

    /// Frames of one shot, in order.
    pub fn shot_frames(&self, shot: usize) -> Vec<&Frame> {
        self.frames
            .iter()
            .zip(&self.shots)
            .filter(|(_, s)| **s == shot)
            .map(|(f, _)| f)
            .collect()
    }
}

/// Drive the FIFO engine until every real frame has been emitted.
pub fn run_fifo(plan: &[Arc<Condition>], config: &SmoothConfig, backend: &Backend, seed: u64) -> Result<VideoTimeline> {
    let mut queue = init_queue(plan, config, &backend.schedule, backend.shape, seed)?;
    let total = plan.len() * config.k;
    let mut frames = Vec::with_capacity(total);
    while queue.emitted() < total {
        if let Some((gf, frame)) = tick(&mut queue, backend.denoiser.as_ref(), &backend.schedule, plan, config)? {
            if gf != frames.len() {
                return Err(VgotError::State(format!("frame {gf} emitted out of order")));
            }
            frames.push(frame);
        } else if queue.is_empty() {
            return Err(VgotError::State("queue drained before all frames were emitted".into()));
        }
    }
    Ok(VideoTimeline {
        shots: (0..total).map(|f| f / config.k).collect(),
        frames,
        mode: SmoothMode::FifoReset,
        switches: queue.switches,
    })
}

/// Per-shot conditions for a story.
pub fn build_plan(
    story: &Story,
    keyframes: &[Keyframe],
    ip_scale: f64,
    backend: &Backend,
) -> Result<Vec<Arc<Condition>>> {
    let by_shot: HashMap<usize, &Keyframe> = keyframes.iter().map(|k| (k.shot_index, k)).collect();
    story
        .descriptions
        .iter()
        .map(|d| {
            let kf = by_shot
                .get(&d.index)
                .ok_or_else(|| VgotError::State(format!("missing keyframe for shot {}", d.index)))?;
            Ok(Arc::new(shot_condition(d, kf, ip_scale, backend)?))
        })
        .collect()
}

/// Story plus keyframes → `N · k` labeled frames, by the configured mode.
pub fn run_timeline(
    story: &Story,
    keyframes: &[Keyframe],
    config: &SmoothConfig,
    ip_scale: f64,
    backend: &Backend,
    seed: u64,
) -> Result<VideoTimeline> {
    config.validate(&backend.schedule)?;
    if story.descriptions.len() != story.n_shots || story.n_shots == 0 {
        return Err(VgotError::State("story descriptions are not populated".into()));
    }
    let plan = build_plan(story, keyframes, ip_scale, backend)?;
    match config.mode {
        SmoothMode::FifoReset => run_fifo(&plan, config, backend, seed),
        SmoothMode::Windowed => {
            let by_shot: HashMap<usize, &Keyframe> = keyframes.iter().map(|k| (k.shot_index, k)).collect();
            let mut frames = Vec::with_capacity(story.n_shots * config.k);
            let mut shots = Vec::with_capacity(story.n_shots * config.k);
            for d in &story.descriptions {
                let clip = generate_shot_clip(d, by_shot[&d.index], config.k, ip_scale, backend, seed)?;
                shots.extend(std::iter::repeat_n(d.index, clip.frames.len()));
                frames.extend(clip.frames.iter().map(decode));
            }
            Ok(VideoTimeline {
                frames,
                shots,
                mode: SmoothMode::Windowed,
                switches: Vec::new(),
            })
        }
    }
}

/// One denoiser call seen by [`TracingDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub global_frame: i64,
    pub level: usize,
    /// Index of the plan entry equal to the call's condition, if any.
    pub condition_shot: Option<usize>,
}

pub type DenoiseTrace = Arc<Mutex<Vec<TraceRecord>>>;

/// Wraps a backend and appends a [`TraceRecord`] per slot call. The shot is
/// recovered by comparing the condition against the plan, not from labels.
pub struct TracingDenoiser {
    inner: Arc<dyn DenoiserBackend>,
    plan: Vec<Arc<Condition>>,
    trace: DenoiseTrace,
}

impl TracingDenoiser {
    pub fn new(inner: Arc<dyn DenoiserBackend>, plan: Vec<Arc<Condition>>) -> Self {
        Self {
            inner,
            plan,
            trace: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn trace(&self) -> DenoiseTrace {
        self.trace.clone()
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.trace.lock().expect("trace lock").clone()
    }
}

impl DenoiserBackend for TracingDenoiser {
    fn predict_noise(
        &self,
        x_t: &FrameLatent,
        t: usize,
        cond: &Condition,
        schedule: &NoiseSchedule,
    ) -> Result<FrameLatent> {
        self.inner.predict_noise(x_t, t, cond, schedule)
    }

    fn predict_slot_noise(
        &self,
        slot: SlotTag,
        x_t: &FrameLatent,
        t: usize,
        cond: &Condition,
        schedule: &NoiseSchedule,
    ) -> Result<FrameLatent> {
        let condition_shot = self.plan.iter().position(|c| **c == *cond);
        self.trace.lock().expect("trace lock").push(TraceRecord {
            global_frame: slot.global_frame,
            level: t,
            condition_shot,
        });
        self.inner.predict_slot_noise(slot, x_t, t, cond, schedule)
    }
}
