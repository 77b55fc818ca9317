//! End-to-end reverse diffusion over a panorama.
//!
//! Three strategies share one loop skeleton:
//!
//! * **plain** runs the denoiser on the whole panorama (`W' = W`).
//! * **multidiffusion** crops overlapping windows at fixed offsets, averages
//!   their noise predictions per pixel and takes one global reverse step.
//! * **spotdiffusion** translates the panorama by a fresh random shift,
//!   denoises the disjoint windows of the shifted panorama independently,
//!   concatenates them and translates back.
//!
//! # Randomness
//!
//! A run is a pure function of its config and seed. Noise comes from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream 0: first the initial panorama
//! (`W' * H * C` standard normals in layout order), then, for every step that
//! injects noise, one panorama-sized draw. Shifts come from the same seed on
//! stream 1, one draw per step for every strategy. Injected noise is always
//! drawn for the whole panorama and cropped per window, so strategies compare
//! like for like.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::denoisers::{digest_f32, ConditionId, Denoiser, WindowContext};
use crate::error::{Error, Result};
use crate::grid::{Latent, PanoramaLatent, WindowLatent};
use crate::planner::{check_shifted_geometry, plan_shifted, plan_static, ShiftLaw, ShiftSampler, WindowPlan};
use crate::schedule::{NoiseSchedule, StepRule};

pub const NOISE_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Plain,
    MultiDiffusion,
    SpotDiffusion,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Plain => "plain",
            Strategy::MultiDiffusion => "multidiffusion",
            Strategy::SpotDiffusion => "spotdiffusion",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Strategy::Plain),
            "multidiffusion" | "md" => Ok(Strategy::MultiDiffusion),
            "spotdiffusion" | "spot" => Ok(Strategy::SpotDiffusion),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub panorama_width: usize,
    pub window_width: usize,
    /// Used by multidiffusion only.
    pub stride: usize,
    pub height: usize,
    pub channels: usize,
    pub steps: usize,
    pub rule: StepRule,
    pub seed: u64,
    /// Used by spotdiffusion only.
    pub shift_law: ShiftLaw,
    pub condition: ConditionId,
    /// Evaluate a step's windows on the rayon pool. Results are reduced in
    /// window order either way, so this never changes output bits.
    pub parallel: bool,
}

impl SamplerConfig {
    /// 256-wide panorama, 64-wide windows, 8 rows, 1 channel, 50 DDPM steps.
    pub fn new(strategy: Strategy) -> Self {
        SamplerConfig {
            strategy,
            panorama_width: 256,
            window_width: 64,
            stride: 64,
            height: 8,
            channels: 1,
            steps: crate::schedule::DEFAULT_STEPS,
            rule: StepRule::DDPM,
            seed: 0,
            shift_law: ShiftLaw::UniformInteger,
            condition: ConditionId(0),
            parallel: false,
        }
    }

    pub fn plain(width: usize) -> Self {
        SamplerConfig {
            panorama_width: width,
            window_width: width,
            stride: width,
            ..Self::new(Strategy::Plain)
        }
    }

    pub fn multidiffusion(panorama_width: usize, window_width: usize, stride: usize) -> Self {
        SamplerConfig {
            panorama_width,
            window_width,
            stride,
            ..Self::new(Strategy::MultiDiffusion)
        }
    }

    pub fn spotdiffusion(panorama_width: usize, window_width: usize) -> Self {
        SamplerConfig {
            panorama_width,
            window_width,
            stride: window_width,
            ..Self::new(Strategy::SpotDiffusion)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_rule(mut self, rule: StepRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_shift_law(mut self, law: ShiftLaw) -> Self {
        self.shift_law = law;
        self
    }

    pub fn with_rows(mut self, height: usize, channels: usize) -> Self {
        self.height = height;
        self.channels = channels;
        self
    }

    /// Stride the windows actually use.
    pub fn effective_stride(&self) -> usize {
        match self.strategy {
            Strategy::MultiDiffusion => self.stride,
            _ => self.window_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.channels == 0 || self.window_width == 0 {
            return Err(Error::InvalidConfig("height, channels and window width must be positive".into()));
        }
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 steps, got {}", self.steps)));
        }
        match self.strategy {
            Strategy::Plain if self.panorama_width != self.window_width => Err(Error::InvalidConfig(format!(
                "plain sampling needs panorama width == window width, got {} and {}",
                self.panorama_width, self.window_width
            ))),
            Strategy::Plain => Ok(()),
            Strategy::MultiDiffusion if self.stride > self.window_width => Err(Error::InvalidGeometry(format!(
                "stride {} exceeds the window width {}, leaving columns no window covers",
                self.stride, self.window_width
            ))),
            Strategy::MultiDiffusion => plan_static(self.panorama_width, self.window_width, self.stride).map(|_| ()),
            Strategy::SpotDiffusion => check_shifted_geometry(self.panorama_width, self.window_width),
        }
    }

    /// Windows per step for this geometry.
    pub fn views_per_step(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.strategy {
            Strategy::Plain => 1,
            Strategy::MultiDiffusion => plan_static(self.panorama_width, self.window_width, self.stride)?.count(),
            Strategy::SpotDiffusion => self.panorama_width / self.window_width,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: SamplerConfig,
    pub final_latent: PanoramaLatent,
    /// Digest of the initial noise panorama.
    pub initial_digest: u64,
    /// Denoiser calls per step, in execution order (first entry is `t = T-1`).
    pub calls_per_step: Vec<usize>,
    /// Shift applied at each timestep, indexed by `t`. Zero for static plans.
    pub shifts: Vec<usize>,
    /// Wall clock per step, in execution order.
    pub step_wall: Vec<Duration>,
    /// Plan used for the last step (`t = 0`).
    pub final_plan: WindowPlan,
}

impl RunRecord {
    pub fn total_calls(&self) -> usize {
        self.calls_per_step.iter().sum()
    }

    pub fn total_wall(&self) -> Duration {
        self.step_wall.iter().sum()
    }

    /// Columns where independently denoised windows meet in the final result.
    ///
    /// Shifted plans use the last step's window edges. Static plans use the
    /// interior window edges; column 0 is excluded because static plans never
    /// wrap, so the panorama's two ends are not neighbours. `None` when there
    /// is no such edge.
    pub fn seam_boundaries(&self) -> Option<BTreeSet<usize>> {
        let set: BTreeSet<usize> = match self.config.strategy {
            Strategy::Plain => return None,
            Strategy::SpotDiffusion => self.final_plan.boundary_positions(),
            Strategy::MultiDiffusion => self.final_plan.offsets.iter().copied().filter(|&o| o != 0).collect(),
        };
        (!set.is_empty() && set.len() < self.config.panorama_width).then_some(set)
    }
}

/// Extension points inside the sampling loop.
///
/// `pre_denoise` sees each window right before its prediction and may edit it
/// (the slot where gradient-based window synchronization would go).
/// `after_step` observes the panorama entering a step together with the
/// panorama-shaped noise prediction that step used.
pub trait SamplerHook: Sync {
    fn pre_denoise(&self, _t: usize, _window_index: usize, _window: &mut WindowLatent) -> Result<()> {
        Ok(())
    }

    fn after_step(&self, _t: usize, _shift: usize, _latent: &PanoramaLatent, _eps: &PanoramaLatent) {}
}

struct NoHook;

impl SamplerHook for NoHook {}

pub struct Sampler<'a> {
    denoiser: &'a dyn Denoiser,
    schedule: &'a NoiseSchedule,
    hook: &'a dyn SamplerHook,
}

impl<'a> Sampler<'a> {
    pub fn new(denoiser: &'a dyn Denoiser, schedule: &'a NoiseSchedule) -> Self {
        Sampler {
            denoiser,
            schedule,
            hook: &NoHook,
        }
    }

    pub fn with_hook(mut self, hook: &'a dyn SamplerHook) -> Self {
        self.hook = hook;
        self
    }

    pub fn run(&self, cfg: &SamplerConfig) -> Result<RunRecord> {
        cfg.validate()?;
        if cfg.steps != self.schedule.steps() {
            return Err(Error::InvalidConfig(format!(
                "config asks for {} steps but the schedule has {}",
                cfg.steps,
                self.schedule.steps()
            )));
        }
        let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        noise_rng.set_stream(NOISE_STREAM);
        let mut shifts = ShiftSampler::new(
            match cfg.strategy {
                Strategy::SpotDiffusion => cfg.shift_law.clone(),
                _ => ShiftLaw::ForcedZero,
            },
            cfg.window_width,
            cfg.seed,
        )?;

        let mut latent = gaussian(cfg.panorama_width, cfg.height, cfg.channels, &mut noise_rng)?;
        let initial_digest = digest_f32(&latent.to_f32_vec());
        latent.timestep_tag = cfg.steps;

        let mut record = RunRecord {
            config: cfg.clone(),
            final_latent: latent.clone(),
            initial_digest,
            calls_per_step: Vec::with_capacity(cfg.steps),
            shifts: vec![0; cfg.steps],
            step_wall: Vec::with_capacity(cfg.steps),
            final_plan: plan_static(cfg.panorama_width, cfg.panorama_width, 1)?,
        };

        for t in (0..cfg.steps).rev() {
            let started = Instant::now();
            let shift = shifts.sample_shift(t)?;
            let noise = if self.schedule.needs_noise(t, cfg.rule) {
                Some(gaussian(cfg.panorama_width, cfg.height, cfg.channels, &mut noise_rng)?)
            } else {
                None
            };
            let (next, plan, calls) = match cfg.strategy {
                Strategy::Plain => {
                    let plan = plan_static(cfg.panorama_width, cfg.window_width, cfg.window_width)?;
                    let (next, calls) = self.fused_step(cfg, &plan, &latent, t, noise.as_ref())?;
                    (next, plan, calls)
                }
                Strategy::MultiDiffusion => {
                    let plan = plan_static(cfg.panorama_width, cfg.window_width, cfg.stride)?;
                    let (next, calls) = self.fused_step(cfg, &plan, &latent, t, noise.as_ref())?;
                    (next, plan, calls)
                }
                Strategy::SpotDiffusion => {
                    let plan = plan_shifted(cfg.panorama_width, cfg.window_width, shift)?;
                    let (next, calls) = self.shifted_step(cfg, &plan, &latent, t, noise.as_ref())?;
                    record.shifts[t] = shift;
                    (next, plan, calls)
                }
            };
            latent = next;
            record.calls_per_step.push(calls);
            record.step_wall.push(started.elapsed());
            record.final_plan = plan;
        }
        record.final_latent = latent;
        Ok(record)
    }

    fn predict_windows(
        &self,
        cfg: &SamplerConfig,
        plan: &WindowPlan,
        source: &PanoramaLatent,
        t: usize,
    ) -> Result<Vec<WindowLatent>> {
        let predict = |k: usize| -> Result<WindowLatent> {
            let mut window = source.crop_window(plan.offsets[k], plan.window_width)?;
            self.hook.pre_denoise(t, k, &mut window)?;
            let ctx = WindowContext {
                t,
                offset: plan.source_offset(k),
                window_index: k,
                condition: cfg.condition,
            };
            let eps = self.denoiser.predict_eps(&window, &ctx)?;
            window.ensure_same_shape(&eps)?;
            Ok(eps)
        };
        if cfg.parallel {
            (0..plan.count()).into_par_iter().map(predict).collect()
        } else {
            (0..plan.count()).map(predict).collect()
        }
    }

    /// Averages per-window predictions over each pixel's covering windows,
    /// then steps the whole panorama once.
    fn fused_step(
        &self,
        cfg: &SamplerConfig,
        plan: &WindowPlan,
        latent: &PanoramaLatent,
        t: usize,
        noise: Option<&PanoramaLatent>,
    ) -> Result<(PanoramaLatent, usize)> {
        let predictions = self.predict_windows(cfg, plan, latent, t)?;
        let eps = fuse(plan, latent, &predictions)?;
        self.hook.after_step(t, 0, latent, &eps);
        let next = self.schedule.reverse_step(latent, &eps, t, cfg.rule, noise)?;
        Ok((next, predictions.len()))
    }

    fn shifted_step(
        &self,
        cfg: &SamplerConfig,
        plan: &WindowPlan,
        latent: &PanoramaLatent,
        t: usize,
        noise: Option<&PanoramaLatent>,
    ) -> Result<(PanoramaLatent, usize)> {
        let shift = plan.shift as i64;
        let shifted = latent.translate(shift);
        let shifted_noise = noise.map(|z| z.translate(shift));
        let predictions = self.predict_windows(cfg, plan, &shifted, t)?;
        let mut stepped = Vec::with_capacity(predictions.len());
        for (k, eps) in predictions.iter().enumerate() {
            let window = shifted.crop_window(plan.offsets[k], plan.window_width)?;
            let z = shifted_noise
                .as_ref()
                .map(|z| z.crop_window(plan.offsets[k], plan.window_width))
                .transpose()?;
            stepped.push(self.schedule.reverse_step(&window, eps, t, cfg.rule, z.as_ref())?);
        }
        let next = Latent::concat_windows(&stepped)?.translate(-shift);
        let eps = Latent::concat_windows(&predictions)?.translate(-shift);
        self.hook.after_step(t, plan.shift, latent, &eps);
        Ok((next, predictions.len()))
    }
}

/// Per-pixel average of window predictions placed at their plan offsets.
///
/// Contributions are summed in window order; the first contribution to a
/// pixel is assigned rather than added, so a pixel covered once gets its
/// prediction bit for bit.
pub fn fuse(plan: &WindowPlan, like: &PanoramaLatent, predictions: &[WindowLatent]) -> Result<PanoramaLatent> {
    if predictions.len() != plan.count() {
        return Err(Error::shape(format!("{} predictions", plan.count()), predictions.len()));
    }
    let (w, h, c) = (like.width(), like.height(), like.channels());
    let mut acc = vec![0.0; like.len()];
    let mut count = vec![0u32; w];
    for (k, eps) in predictions.iter().enumerate() {
        let start = plan.offsets[k];
        for j in 0..plan.window_width {
            let col = (start + j) % w;
            let first = count[col] == 0;
            count[col] += 1;
            for row in 0..h {
                for ch in 0..c {
                    let v = eps.get(row, j, ch);
                    let slot = &mut acc[(row * w + col) * c + ch];
                    *slot = if first { v } else { *slot + v };
                }
            }
        }
    }
    if let Some(col) = count.iter().position(|&n| n == 0) {
        return Err(Error::InvalidGeometry(format!("column {col} is not covered by any window")));
    }
    for row in 0..h {
        for col in 0..w {
            let n = count[col] as f64;
            for ch in 0..c {
                acc[(row * w + col) * c + ch] /= n;
            }
        }
    }
    like.with_values(acc)
}

fn gaussian<R: Rng>(width: usize, height: usize, channels: usize, rng: &mut R) -> Result<Latent> {
    let n = width * height * channels;
    let values = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Latent::new(width, height, channels, values)
}

pub fn run_plain(cfg: &SamplerConfig, denoiser: &dyn Denoiser, schedule: &NoiseSchedule) -> Result<RunRecord> {
    expect_strategy(cfg, Strategy::Plain)?;
    Sampler::new(denoiser, schedule).run(cfg)
}

pub fn run_multidiffusion(
    cfg: &SamplerConfig,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<RunRecord> {
    expect_strategy(cfg, Strategy::MultiDiffusion)?;
    Sampler::new(denoiser, schedule).run(cfg)
}

pub fn run_spotdiffusion(
    cfg: &SamplerConfig,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<RunRecord> {
    expect_strategy(cfg, Strategy::SpotDiffusion)?;
    Sampler::new(denoiser, schedule).run(cfg)
}

fn expect_strategy(cfg: &SamplerConfig, strategy: Strategy) -> Result<()> {
    if cfg.strategy == strategy {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "expected a {} config, got {}",
            strategy.name(),
            cfg.strategy.name()
        )))
    }
}
