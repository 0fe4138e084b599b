//! Noise schedules, the closed-form forward process, deterministic DDIM
//! steps and the exactly solvable Gaussian denoiser.
//!
//! Step indices are 1-based to match `alpha_bar(t)`; `t = 0` denotes the
//! clean sample, with `alpha_bar(0) == 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conditioning::Condition;
use crate::error::{Result, VgotError};
use crate::seed;

/// Spatial extent `(h, w)` and channel count `d` of one frame latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentShape {
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl LatentShape {
    pub const fn new(h: usize, w: usize, d: usize) -> Self {
        Self { h, w, d }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.h, self.w, self.d]
    }
}

impl Default for LatentShape {
    fn default() -> Self {
        Self::new(8, 8, 8)
    }
}

/// A real `(h, w, d)` tensor stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLatent {
    shape: LatentShape,
    data: Vec<f64>,
}

/// Decoded frame. The toy decoder is the identity, so frames and latents share a type.
pub type Frame = FrameLatent;

impl FrameLatent {
    pub fn zeros(shape: LatentShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: LatentShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(VgotError::Shape {
                expected: shape.dims(),
                actual: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VgotError::Numeric("frame latent"));
        }
        Ok(Self { shape, data })
    }

    /// Seeded standard-normal latent.
    pub fn gaussian(shape: LatentShape, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            shape,
            data: seed::gaussian_vec(rng, shape.len()),
        }
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.shape.w + j) * self.shape.d + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Spatial mean of every channel, length `d`.
    pub fn channel_means(&self) -> Vec<f64> {
        let d = self.shape.d;
        let mut means = vec![0.0; d];
        for px in self.data.chunks_exact(d) {
            for (m, v) in means.iter_mut().zip(px) {
                *m += v;
            }
        }
        let n = self.shape.pixels() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Round every entry through `f32`, matching what the tensor file stores.
    pub fn quantized_f32(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    fn check_same_shape(&self, other: &FrameLatent) -> Result<()> {
        if self.shape != other.shape {
            return Err(VgotError::Shape {
                expected: self.shape.dims(),
                actual: other.shape.dims(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, other: &FrameLatent, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// β/ᾱ table for `T` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from `beta_start` to `beta_end` inclusive over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        check_beta_range(steps, beta_start, beta_end)?;
        let betas = linspace(beta_start, beta_end, steps);
        Self::from_betas(betas)
    }

    /// A `train_steps` linear schedule sampled every `train_steps / steps`
    /// steps, the usual DDIM timestep spacing. Each effective step's β is
    /// `1 − ᾱ_t / ᾱ_{t−1}` over the dense table.
    pub fn strided(train_steps: usize, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        check_beta_range(train_steps, beta_start, beta_end)?;
        if steps == 0 || steps > train_steps || !train_steps.is_multiple_of(steps) {
            return Err(VgotError::Config(format!(
                "{steps} inference steps must evenly divide {train_steps} training steps"
            )));
        }
        let stride = train_steps / steps;
        let dense = Self::linear(train_steps, beta_start, beta_end)?;
        let mut betas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for t in 1..=steps {
            let ab = dense.alpha_bars[t * stride - 1];
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        Self::from_betas(betas)
    }

    fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(VgotError::Config("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// ᾱ_t with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        match t {
            0 => Ok(1.0),
            t if t <= self.steps() => Ok(self.alpha_bars[t - 1]),
            t => Err(VgotError::Range {
                step: t,
                max: self.steps(),
            }),
        }
    }

    fn noisy_alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(VgotError::Range {
                step: 0,
                max: self.steps(),
            });
        }
        self.alpha_bar(t)
    }
}

/// Same as [`NoiseSchedule::linear`].
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end)
}

fn check_beta_range(steps: usize, beta_start: f64, beta_end: f64) -> Result<()> {
    if steps == 0 {
        return Err(VgotError::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(VgotError::Config(format!(
            "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    Ok(())
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

/// `√ᾱ_t · x0 + √(1−ᾱ_t) · ε`.
pub fn add_noise(x0: &FrameLatent, eps: &FrameLatent, t: usize, schedule: &NoiseSchedule) -> Result<FrameLatent> {
    let ab = schedule.noisy_alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Deterministic (η = 0) DDIM update from level `t` to `t_prev`.
pub fn ddim_step(
    x_t: &FrameLatent,
    eps_hat: &FrameLatent,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<FrameLatent> {
    ddim_step_eta(x_t, eps_hat, t, t_prev, schedule, 0.0, None)
}

/// General DDIM update. With `eta > 0` the stochastic term `σ_t · z` needs
/// `noise`; with `eta == 0` it is ignored.
pub fn ddim_step_eta(
    x_t: &FrameLatent,
    eps_hat: &FrameLatent,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    noise: Option<&FrameLatent>,
) -> Result<FrameLatent> {
    if t_prev >= t {
        return Err(VgotError::Schedule(format!("t_prev ({t_prev}) must be below t ({t})")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(VgotError::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    if !x_t.is_finite() || !eps_hat.is_finite() {
        return Err(VgotError::Numeric("ddim step input"));
    }
    let ab_t = schedule.noisy_alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar(t_prev)?;
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev)).sqrt();
    let (sqrt_ab, sqrt_one_minus) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let mut out = x_t.zip_map(eps_hat, |x, e| {
        let x0 = (x - sqrt_one_minus * e) / sqrt_ab;
        ab_prev.sqrt() * x0 + dir * e
    })?;
    if sigma > 0.0 {
        let z = noise.ok_or_else(|| VgotError::Config("eta > 0 requires a noise latent".into()))?;
        out = out.zip_map(z, |x, n| x + sigma * n)?;
    }
    if !out.is_finite() {
        return Err(VgotError::Numeric("ddim step output"));
    }
    Ok(out)
}

/// Frame identity used by instrumented denoisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTag {
    pub global_frame: i64,
}

/// ε-prediction contract `ε_θ(x_t, t, c)`.
pub trait DenoiserBackend: Send + Sync {
    fn predict_noise(
        &self,
        x_t: &FrameLatent,
        t: usize,
        cond: &Condition,
        schedule: &NoiseSchedule,
    ) -> Result<FrameLatent>;

    /// Called by the smoothing engine, which knows which frame a latent
    /// belongs to. Wrappers may record the tag; the default ignores it.
    fn predict_slot_noise(
        &self,
        _slot: SlotTag,
        x_t: &FrameLatent,
        t: usize,
        cond: &Condition,
        schedule: &NoiseSchedule,
    ) -> Result<FrameLatent> {
        self.predict_noise(x_t, t, cond, schedule)
    }
}

/// Deterministic map from a condition to the data mean μ(c).
pub trait MeanMap: Send + Sync {
    fn mean(&self, cond: &Condition) -> Result<FrameLatent>;
    fn shape(&self) -> LatentShape;
}

/// Toy data distribution `x0 ~ N(μ(c), σ0² I)`.
#[derive(Clone)]
pub struct GaussianWorld {
    prior_std: f64,
    mean_map: Arc<dyn MeanMap>,
}

impl GaussianWorld {
    pub fn new(prior_std: f64, mean_map: Arc<dyn MeanMap>) -> Result<Self> {
        if !(prior_std >= 0.0 && prior_std.is_finite()) {
            return Err(VgotError::Config(format!(
                "prior std must be finite and nonnegative, got {prior_std}"
            )));
        }
        Ok(Self { prior_std, mean_map })
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    pub fn mean(&self, cond: &Condition) -> Result<FrameLatent> {
        self.mean_map.mean(cond)
    }

    pub fn shape(&self) -> LatentShape {
        self.mean_map.shape()
    }
}

impl std::fmt::Debug for GaussianWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianWorld")
            .field("prior_std", &self.prior_std)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Exact ε̂ for the Gaussian world given the mean `mu`:
/// `E[x0|x_t] = (√ᾱ σ0² x_t + (1−ᾱ) μ) / (ᾱ σ0² + 1 − ᾱ)`,
/// `ε̂ = (x_t − √ᾱ E[x0|x_t]) / √(1−ᾱ)`.
pub fn analytic_eps_with_mean(
    x_t: &FrameLatent,
    mu: &FrameLatent,
    t: usize,
    prior_std: f64,
    schedule: &NoiseSchedule,
) -> Result<FrameLatent> {
    let ab = schedule.noisy_alpha_bar(t)?;
    let var0 = prior_std * prior_std;
    let denom = ab * var0 + 1.0 - ab;
    let sqrt_ab = ab.sqrt();
    let sqrt_one_minus = (1.0 - ab).sqrt();
    x_t.zip_map(mu, |x, m| {
        let post_mean = (sqrt_ab * var0 * x + (1.0 - ab) * m) / denom;
        (x - sqrt_ab * post_mean) / sqrt_one_minus
    })
}

pub fn analytic_eps(
    x_t: &FrameLatent,
    t: usize,
    world: &GaussianWorld,
    cond: &Condition,
    schedule: &NoiseSchedule,
) -> Result<FrameLatent> {
    let mu = world.mean(cond)?;
    analytic_eps_with_mean(x_t, &mu, t, world.prior_std(), schedule)
}

/// The analytic Gaussian denoiser as a backend.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    world: GaussianWorld,
}

impl AnalyticDenoiser {
    pub fn new(world: GaussianWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &GaussianWorld {
        &self.world
    }
}

impl DenoiserBackend for AnalyticDenoiser {
    fn predict_noise(
        &self,
        x_t: &FrameLatent,
        t: usize,
        cond: &Condition,
        schedule: &NoiseSchedule,
    ) -> Result<FrameLatent> {
        analytic_eps(x_t, t, &self.world, cond, schedule)
    }
}

/// Full reverse chain from a seeded `x_T ~ N(0, I)` with η = 0.
pub fn sample_reverse(
    denoiser: &dyn DenoiserBackend,
    cond: &Condition,
    schedule: &NoiseSchedule,
    shape: LatentShape,
    seed: u64,
) -> Result<FrameLatent> {
    sample_reverse_eta(denoiser, cond, schedule, shape, seed, 0.0)
}

pub fn sample_reverse_eta(
    denoiser: &dyn DenoiserBackend,
    cond: &Condition,
    schedule: &NoiseSchedule,
    shape: LatentShape,
    seed: u64,
    eta: f64,
) -> Result<FrameLatent> {
    let x_t = FrameLatent::gaussian(shape, &mut seed::stream(seed, "initial-noise", &[]));
    denoise_from(denoiser, x_t, cond, schedule, seed, eta)
}

/// Run `x_T` through every level down to 0. `seed` keys the η noise only.
pub fn denoise_from(
    denoiser: &dyn DenoiserBackend,
    mut x: FrameLatent,
    cond: &Condition,
    schedule: &NoiseSchedule,
    seed: u64,
    eta: f64,
) -> Result<FrameLatent> {
    for t in (1..=schedule.steps()).rev() {
        let eps = denoiser.predict_noise(&x, t, cond, schedule)?;
        let z = eta_noise(x.shape(), seed, t, eta);
        x = ddim_step_eta(&x, &eps, t, t - 1, schedule, eta, z.as_ref())?;
    }
    Ok(x)
}

pub(crate) fn eta_noise(shape: LatentShape, seed: u64, t: usize, eta: f64) -> Option<FrameLatent> {
    (eta > 0.0).then(|| FrameLatent::gaussian(shape, &mut seed::stream(seed, "ddim-eta", &[t as i64])))
}
