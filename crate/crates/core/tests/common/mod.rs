//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spotdiff::denoisers::{ConditionId, Denoiser, WindowContext};
use spotdiff::grid::Latent;
use spotdiff::samplers::SamplerHook;
use spotdiff::schedule::NoiseSchedule;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_latent(w: usize, h: usize, c: usize, rng: &mut ChaCha8Rng) -> Latent {
    let values = (0..w * h * c)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Latent::new(w, h, c, values).unwrap()
}

/// Window offsets found by walking from the left edge one stride at a time
/// while a window still fits. Returns `None` when the last window does not
/// end flush with the right edge, i.e. some columns would go uncovered.
pub fn brute_force_offsets(panorama: usize, window: usize, stride: usize) -> Option<Vec<usize>> {
    if window > panorama || stride == 0 {
        return None;
    }
    let mut offsets = vec![0];
    let mut o = 0;
    while o + stride + window <= panorama {
        o += stride;
        offsets.push(o);
    }
    (o + window == panorama).then_some(offsets)
}

/// Squared-exponential covariance summed over periodic images of the
/// panorama, plus jitter.
pub fn dense_covariance(panorama: usize, width: usize, sigma: f64, ell: f64) -> DMatrix<f64> {
    DMatrix::from_fn(width, width, |i, j| {
        let jitter = if i == j { 1e-8 } else { 0.0 };
        if ell == 0.0 {
            return if i == j { sigma * sigma + jitter } else { jitter };
        }
        let d = i as f64 - j as f64;
        let k: f64 = (-64..=64)
            .map(|n| {
                let x = d + (n * panorama as i64) as f64;
                (-x * x / (2.0 * ell * ell)).exp()
            })
            .sum();
        sigma * sigma * k + jitter
    })
}

/// Bayes posterior mean of the noise for `x_t = a x0 + b n`, `x0 ~ N(mu, S)`:
/// `E[n | x_t] = Cov(n, x_t) Var(x_t)^-1 (x_t - a mu) = b (a^2 S + b^2 I)^-1 (x_t - a mu)`,
/// with the inverse formed explicitly. One width-vector per (row, channel).
pub fn dense_eps(
    window: &Latent,
    mean: &[f64],
    cov: &DMatrix<f64>,
    schedule: &NoiseSchedule,
    t: usize,
) -> Vec<f64> {
    let w = window.width();
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let k = cov * (a * a) + DMatrix::identity(w, w) * (b * b);
    let k_inv = k.try_inverse().expect("posterior system is invertible");
    let mu = DVector::from_column_slice(mean);
    let mut eps = vec![0.0; window.len()];
    for row in 0..window.height() {
        for ch in 0..window.channels() {
            let x = DVector::from_fn(w, |i, _| window.get(row, i, ch));
            let e = &k_inv * (&x - &mu * a) * b;
            for i in 0..w {
                eps[window.index(row, i, ch)] = e[i];
            }
        }
    }
    eps
}

/// `E[x0 | x_t] = mu + a S (a^2 S + b^2 I)^-1 (x_t - a mu)`, explicit inverse.
pub fn dense_x0(window: &Latent, mean: &[f64], cov: &DMatrix<f64>, schedule: &NoiseSchedule, t: usize) -> Vec<f64> {
    let w = window.width();
    let ab = schedule.alpha_bar(t);
    let a = ab.sqrt();
    let k = cov * (a * a) + DMatrix::identity(w, w) * (1.0 - ab);
    let gain = cov * a * k.try_inverse().expect("posterior system is invertible");
    let mu = DVector::from_column_slice(mean);
    let mut x0 = vec![0.0; window.len()];
    for row in 0..window.height() {
        for ch in 0..window.channels() {
            let x = DVector::from_fn(w, |i, _| window.get(row, i, ch));
            let m = &mu + &gain * (&x - &mu * a);
            for i in 0..w {
                x0[window.index(row, i, ch)] = m[i];
            }
        }
    }
    x0
}

/// After each step, recomputes the fused noise prediction by visiting every
/// static window that covers each column and averaging, and records the
/// largest relative deviation from the sampler's fused prediction.
pub struct FusionOracle<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub window: usize,
    pub stride: usize,
    pub worst: Mutex<f64>,
    pub steps_seen: Mutex<usize>,
}

impl<'a> FusionOracle<'a> {
    pub fn new(denoiser: &'a dyn Denoiser, window: usize, stride: usize) -> Self {
        FusionOracle {
            denoiser,
            window,
            stride,
            worst: Mutex::new(0.0),
            steps_seen: Mutex::new(0),
        }
    }

    pub fn worst(&self) -> f64 {
        *self.worst.lock().unwrap()
    }
}

impl SamplerHook for FusionOracle<'_> {
    fn after_step(&self, t: usize, _shift: usize, latent: &Latent, eps: &Latent) {
        let (wp, h, c) = (latent.width(), latent.height(), latent.channels());
        let mut sum = vec![0.0; latent.len()];
        let mut count = vec![0usize; wp];
        let mut index = 0;
        for o in 0..wp {
            if o + self.window > wp || o % self.stride != 0 {
                continue;
            }
            let crop = Latent::from_fn(self.window, h, c, |r, i, ch| latent.get(r, o + i, ch)).unwrap();
            let ctx = WindowContext {
                t,
                offset: o,
                window_index: index,
                condition: ConditionId(0),
            };
            index += 1;
            let pred = self.denoiser.predict_eps(&crop, &ctx).unwrap();
            for r in 0..h {
                for i in 0..self.window {
                    for ch in 0..c {
                        sum[latent.index(r, o + i, ch)] += pred.get(r, i, ch);
                    }
                }
            }
            for n in &mut count[o..o + self.window] {
                *n += 1;
            }
        }
        let mut worst = self.worst.lock().unwrap();
        for r in 0..h {
            for (x, &n) in count.iter().enumerate() {
                for ch in 0..c {
                    let k = latent.index(r, x, ch);
                    let want = sum[k] / n as f64;
                    let rel = (eps.values()[k] - want).abs() / want.abs().max(1e-9);
                    *worst = worst.max(rel);
                }
            }
        }
        *self.steps_seen.lock().unwrap() += 1;
    }
}
