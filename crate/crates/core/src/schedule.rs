//! Noise schedules and the single-step update rules.
//!
//! Timesteps are indexed `0..steps`. Sampling walks `t = steps-1` down to `0`;
//! the step taken at `t` produces the state at `t-1`, with `alpha_bar(-1) = 1`
//! so the step at `t = 0` lands on the clean estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Latent, WindowLatent};

/// Default number of sampling steps.
pub const DEFAULT_STEPS: usize = 50;
/// Length of the reference chain the linear schedule is subsampled from.
pub const TRAIN_STEPS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn code(self) -> u8 {
        match self {
            ScheduleKind::Linear => 0,
            ScheduleKind::Cosine => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScheduleKind::Linear),
            1 => Some(ScheduleKind::Cosine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Linear => Self::linear(steps),
            ScheduleKind::Cosine => Self::cosine(steps),
        }
    }

    /// The standard 1000-step linear schedule (betas `1e-4` to `0.02`),
    /// subsampled at evenly spaced timesteps `0, 1000/steps, ...`. Betas of the
    /// subsampled chain are recovered from consecutive `alpha_bar` values.
    pub fn linear(steps: usize) -> Result<Self> {
        if !(2..=TRAIN_STEPS).contains(&steps) {
            return Err(Error::InvalidArgument(format!(
                "linear schedule supports 2..={TRAIN_STEPS} steps, got {steps}"
            )));
        }
        let train_alpha_bar: Vec<f64> = (0..TRAIN_STEPS)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / (TRAIN_STEPS - 1) as f64))
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let mut prev = 1.0;
        let beta = (0..steps)
            .map(|i| {
                let ab = train_alpha_bar[i * TRAIN_STEPS / steps];
                let b = 1.0 - ab / prev;
                prev = ab;
                b
            })
            .collect();
        Self::from_betas(ScheduleKind::Linear, beta)
    }

    /// Squared-cosine cumulative schedule with offset `0.008`, betas capped at `0.999`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 steps, got {steps}")));
        }
        let f = |i: usize| {
            let u = (i as f64 / steps as f64 + 0.008) / 1.008;
            (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let beta = (0..steps)
            .map(|i| (1.0 - f(i + 1) / f(i)).min(0.999))
            .collect();
        Self::from_betas(ScheduleKind::Cosine, beta)
    }

    fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Result<Self> {
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta[{i}] = {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar: Vec<f64> = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("alpha_bar is not strictly decreasing".into()));
        }
        Ok(NoiseSchedule {
            kind,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `alpha_bar(t - 1)`, which is `1` for the last step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < self.steps() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "timestep {t} outside [0, {})",
                self.steps()
            )))
        }
    }

    /// `sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise`.
    pub fn forward_sample(&self, x0: &WindowLatent, t: usize, noise: &WindowLatent) -> Result<WindowLatent> {
        self.check_t(t)?;
        x0.ensure_same_shape(noise)?;
        let ab = self.alpha_bar[t];
        Ok(forward_with(ab, x0, noise))
    }

    /// One reverse update from `x_t` to `x_{t-1}` given a noise prediction.
    ///
    /// `noise` is required only when the rule injects noise and `t > 0`.
    pub fn reverse_step(
        &self,
        xt: &Latent,
        eps_hat: &Latent,
        t: usize,
        rule: StepRule,
        noise: Option<&Latent>,
    ) -> Result<Latent> {
        self.check_t(t)?;
        xt.ensure_same_shape(eps_hat)?;
        let c = self.coefficients(t, rule);
        let values = match (c.noise_scale > 0.0, noise) {
            (false, _) => xt
                .values()
                .iter()
                .zip(eps_hat.values())
                .map(|(&x, &e)| c.apply(x, e, 0.0))
                .collect(),
            (true, Some(z)) => {
                xt.ensure_same_shape(z)?;
                xt.values()
                    .iter()
                    .zip(eps_hat.values())
                    .zip(z.values())
                    .map(|((&x, &e), &z)| c.apply(x, e, z))
                    .collect()
            }
            (true, None) => {
                return Err(Error::InvalidArgument(format!(
                    "{:?} step at t={t} needs injected noise",
                    rule.kind
                )))
            }
        };
        let mut out = xt.with_values(values)?;
        out.timestep_tag = t.saturating_sub(1);
        Ok(out)
    }

    /// Whether the step at `t` consumes injected noise under `rule`.
    pub fn needs_noise(&self, t: usize, rule: StepRule) -> bool {
        t > 0 && rule.is_stochastic()
    }

    fn coefficients(&self, t: usize, rule: StepRule) -> StepCoefficients {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar_prev(t);
        let sqrt_ab = ab.sqrt();
        let sqrt_1m_ab = (1.0 - ab).sqrt();
        match rule.kind {
            StepKind::Ddpm => {
                let beta = self.beta[t];
                let x0_coef = ab_prev.sqrt() * beta / (1.0 - ab);
                let xt_coef = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
                StepCoefficients {
                    sqrt_ab,
                    sqrt_1m_ab,
                    x0_coef,
                    xt_coef,
                    eps_coef: 0.0,
                    noise_scale: if t > 0 { var.sqrt() } else { 0.0 },
                }
            }
            StepKind::Ddim => {
                let sigma = if t > 0 {
                    rule.eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).sqrt()
                } else {
                    0.0
                };
                StepCoefficients {
                    sqrt_ab,
                    sqrt_1m_ab,
                    x0_coef: ab_prev.sqrt(),
                    xt_coef: 0.0,
                    eps_coef: (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt(),
                    noise_scale: sigma,
                }
            }
        }
    }
}

pub(crate) fn forward_with(ab: f64, x0: &Latent, noise: &Latent) -> Latent {
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values()
        .iter()
        .zip(noise.values())
        .map(|(&x, &n)| a * x + b * n)
        .collect();
    x0.with_values(values).expect("finite inputs give finite outputs")
}

#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    sqrt_ab: f64,
    sqrt_1m_ab: f64,
    x0_coef: f64,
    xt_coef: f64,
    eps_coef: f64,
    noise_scale: f64,
}

impl StepCoefficients {
    #[inline]
    fn apply(&self, x: f64, eps: f64, z: f64) -> f64 {
        let x0 = (x - self.sqrt_1m_ab * eps) / self.sqrt_ab;
        self.x0_coef * x0 + self.xt_coef * x + self.eps_coef * eps + self.noise_scale * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub kind: StepKind,
    /// DDIM stochasticity in `[0, 1]`; ignored by DDPM.
    pub eta: f64,
}

impl StepRule {
    pub const DDPM: StepRule = StepRule {
        kind: StepKind::Ddpm,
        eta: 1.0,
    };
    pub const DDIM: StepRule = StepRule {
        kind: StepKind::Ddim,
        eta: 0.0,
    };

    pub fn ddim(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
        }
        Ok(StepRule {
            kind: StepKind::Ddim,
            eta,
        })
    }

    pub fn is_stochastic(&self) -> bool {
        match self.kind {
            StepKind::Ddpm => true,
            StepKind::Ddim => self.eta > 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(w: usize, h: usize, v: f64) -> Latent {
        Latent::new(w, h, 1, vec![v; w * h]).unwrap()
    }

    #[test]
    fn default_schedule_invariants() {
        for s in [NoiseSchedule::default(), NoiseSchedule::cosine(50).unwrap()] {
            assert_eq!(s.steps(), 50);
            assert!(s.alpha_bar(0) > 0.99, "{}", s.alpha_bar(0));
            assert!(s.alpha_bar(49) < 1e-2);
            for t in 0..50 {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            }
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }
        assert!(NoiseSchedule::linear(1).is_err());
        assert!(NoiseSchedule::linear(1001).is_err());
        for steps in [2, 10, 1000] {
            let s = NoiseSchedule::linear(steps).unwrap();
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        }
        // 1000 steps reproduces the reference chain exactly.
        let full = NoiseSchedule::linear(1000).unwrap();
        assert!((full.beta(0) - 1e-4).abs() < 1e-15);
        assert!((full.beta(999) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn forward_sample_limits() {
        let x0 = filled(4, 4, 0.0);
        let noise = filled(4, 4, 1.0);
        let y = forward_with(0.25, &x0, &noise);
        assert!(y.values().iter().all(|&v| (v - 0.75f64.sqrt()).abs() < 1e-15));
        assert!((0.75f64.sqrt() - 0.8660).abs() < 1e-4);

        let x0 = Latent::from_fn(3, 2, 2, |r, c, k| (r + 2 * c + 3 * k) as f64).unwrap();
        let noise = Latent::from_fn(3, 2, 2, |r, c, k| -((r * c + k) as f64)).unwrap();
        assert_eq!(forward_with(1.0, &x0, &noise), x0);
        assert_eq!(forward_with(0.0, &x0, &noise), noise);
    }

    #[test]
    fn forward_sample_checks_shapes() {
        let s = NoiseSchedule::default();
        let r = s.forward_sample(&filled(4, 4, 0.0), 3, &filled(4, 3, 0.0));
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
        assert!(s.forward_sample(&filled(4, 4, 0.0), 50, &filled(4, 4, 0.0)).is_err());
    }

    #[test]
    fn zero_eps_ddim_scales_by_alpha_bar_ratio() {
        let s = NoiseSchedule::default();
        let xt = Latent::from_fn(4, 4, 1, |r, c, _| r as f64 - 0.5 * c as f64).unwrap();
        let eps = filled(4, 4, 0.0);
        for t in [1usize, 10, 49] {
            let out = s.reverse_step(&xt, &eps, t, StepRule::DDIM, None).unwrap();
            let k = s.alpha_bar(t - 1).sqrt() / s.alpha_bar(t).sqrt();
            for (o, x) in out.values().iter().zip(xt.values()) {
                assert!((o - k * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ddim_inverts_forward_chain_with_exact_noise() {
        for s in [NoiseSchedule::default(), NoiseSchedule::cosine(50).unwrap()] {
            let x0 = Latent::from_fn(4, 4, 1, |r, c, _| ((r * 4 + c) as f64 * 0.37).sin()).unwrap();
            let eps = Latent::from_fn(4, 4, 1, |r, c, _| ((r * 7 + c * 3) as f64 * 1.3).cos()).unwrap();
            let t0 = s.steps() - 1;
            let mut x = s.forward_sample(&x0, t0, &eps).unwrap();
            for t in (0..=t0).rev() {
                x = s.reverse_step(&x, &eps, t, StepRule::DDIM, None).unwrap();
            }
            let err = x
                .values()
                .iter()
                .zip(x0.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-4, "max error {err}");
        }
    }

    #[test]
    fn final_step_returns_clean_estimate() {
        let s = NoiseSchedule::default();
        let xt = filled(2, 2, 0.3);
        let eps = filled(2, 2, 0.1);
        let expected = (0.3 - (1.0 - s.alpha_bar(0)).sqrt() * 0.1) / s.alpha_bar(0).sqrt();
        for rule in [StepRule::DDPM, StepRule::DDIM] {
            let out = s.reverse_step(&xt, &eps, 0, rule, None).unwrap();
            for v in out.values() {
                assert!((v - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stochastic_rule_needs_noise() {
        let s = NoiseSchedule::default();
        let xt = filled(2, 2, 0.0);
        assert!(s.reverse_step(&xt, &xt, 5, StepRule::DDPM, None).is_err());
        assert!(s.needs_noise(5, StepRule::DDPM));
        assert!(!s.needs_noise(0, StepRule::DDPM));
        assert!(!s.needs_noise(5, StepRule::DDIM));
        assert!(s.needs_noise(5, StepRule::ddim(0.5).unwrap()));
        assert!(StepRule::ddim(1.5).is_err());
    }

    #[test]
    fn ddim_with_unit_eta_matches_ddpm_variance() {
        // eta = 1 reproduces the DDPM posterior variance.
        let s = NoiseSchedule::default();
        let xt = filled(1, 1, 0.0);
        let eps = filled(1, 1, 0.0);
        let z = filled(1, 1, 1.0);
        let t = 20;
        let a = s.reverse_step(&xt, &eps, t, StepRule::DDPM, Some(&z)).unwrap();
        let b = s.reverse_step(&xt, &eps, t, StepRule::ddim(1.0).unwrap(), Some(&z)).unwrap();
        assert!((a.values()[0] - b.values()[0]).abs() < 1e-12);
    }
}
