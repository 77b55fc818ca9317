use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{digest_bytes, Denoiser, Descriptor, WindowContext};
use crate::error::{Error, Result};
use crate::grid::{Latent, PanoramaLatent, WindowLatent};
use crate::schedule::NoiseSchedule;

/// Diagonal jitter added to every window covariance.
pub const JITTER: f64 = 1e-8;
pub const DEFAULT_CORRELATION_LENGTH: f64 = 8.0;

/// Stationary Gaussian prior along the panorama width.
///
/// Rows and channels are independent and share one covariance
/// `k(d) = sigma^2 * exp(-d^2 / (2 l^2))`, where `d` is the cyclic column
/// distance. The mean depends on the global column only. A correlation
/// length of zero means independent pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMrfPrior {
    mean_profile: Vec<f64>,
    marginal_std: f64,
    correlation_length: f64,
}

impl GaussianMrfPrior {
    pub fn new(mean_profile: Vec<f64>, marginal_std: f64, correlation_length: f64) -> Result<Self> {
        if mean_profile.is_empty() || mean_profile.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("mean profile must be non-empty and finite".into()));
        }
        if !(marginal_std > 0.0 && marginal_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("marginal std {marginal_std} must be > 0")));
        }
        if !(correlation_length >= 0.0 && correlation_length.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "correlation length {correlation_length} must be >= 0"
            )));
        }
        Ok(GaussianMrfPrior {
            mean_profile,
            marginal_std,
            correlation_length,
        })
    }

    /// Mean `amplitude * sin(2 pi cycles x / W')`, periodic over the panorama.
    pub fn sinusoid(
        panorama_width: usize,
        amplitude: f64,
        cycles: f64,
        marginal_std: f64,
        correlation_length: f64,
    ) -> Result<Self> {
        let w = panorama_width as f64;
        let mean = (0..panorama_width)
            .map(|x| amplitude * (2.0 * PI * cycles * x as f64 / w).sin())
            .collect();
        Self::new(mean, marginal_std, correlation_length)
    }

    /// Unit-amplitude two-cycle sinusoid, `sigma = 1`, `l = 8`.
    pub fn default_for(panorama_width: usize) -> Self {
        Self::sinusoid(panorama_width, 1.0, 2.0, 1.0, DEFAULT_CORRELATION_LENGTH)
            .expect("default prior parameters are valid")
    }

    pub fn panorama_width(&self) -> usize {
        self.mean_profile.len()
    }

    pub fn mean_profile(&self) -> &[f64] {
        &self.mean_profile
    }

    pub fn marginal_std(&self) -> f64 {
        self.marginal_std
    }

    pub fn correlation_length(&self) -> f64 {
        self.correlation_length
    }

    pub fn mean_at(&self, col: usize) -> f64 {
        self.mean_profile[col % self.mean_profile.len()]
    }

    /// Squared-exponential covariance wrapped around the panorama: the sum
    /// of `k(d + nW')` over all images `n`. Wrapping keeps every window
    /// covariance positive definite even when `W'` is only a few `l` wide;
    /// for `W' >> l` only the `n = 0` term is representable.
    pub fn kernel(&self, distance: usize) -> f64 {
        let var = self.marginal_std * self.marginal_std;
        let w = self.panorama_width() as f64;
        let d = (distance % self.panorama_width()) as f64;
        if self.correlation_length == 0.0 {
            return if d == 0.0 { var } else { 0.0 };
        }
        let two_l2 = 2.0 * self.correlation_length * self.correlation_length;
        let term = |x: f64| (-x * x / two_l2).exp();
        let mut sum = term(d);
        for n in 1.. {
            let n = n as f64;
            let pair = term(d - n * w) + term(d + n * w);
            sum += pair;
            if pair <= sum * 1e-18 {
                break;
            }
        }
        var * sum
    }

    fn cyclic_distance(&self, i: usize, j: usize) -> usize {
        let w = self.panorama_width();
        let d = i.abs_diff(j) % w;
        d.min(w - d)
    }

    /// Covariance of `width` consecutive columns, jitter included. Row-major `width × width`.
    ///
    /// Cyclic distance depends only on the column difference, so the result
    /// does not depend on where the window starts.
    pub fn window_covariance(&self, width: usize) -> Vec<f64> {
        let mut cov = vec![0.0; width * width];
        for i in 0..width {
            for j in 0..width {
                cov[i * width + j] = self.kernel(self.cyclic_distance(i, j));
            }
            cov[i * width + i] += JITTER;
        }
        cov
    }

    /// Exact draw from the prior over the whole panorama.
    pub fn sample<R: Rng + ?Sized>(&self, height: usize, channels: usize, rng: &mut R) -> Result<PanoramaLatent> {
        let w = self.panorama_width();
        let chol = cholesky(&self.window_covariance(w), w)
            .ok_or_else(|| Error::NumericalFailure("prior covariance is not positive definite".into()))?;
        let mut out = Latent::zeros(w, height, channels)?.into_values();
        let mut z = vec![0.0; w];
        for row in 0..height {
            for ch in 0..channels {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for i in 0..w {
                    let corr: f64 = (0..=i).map(|j| chol[i * w + j] * z[j]).sum();
                    out[(row * w + i) * channels + ch] = self.mean_profile[i] + corr;
                }
            }
        }
        Latent::new(w, height, channels, out)
    }

    fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.marginal_std.to_le_bytes());
        bytes.extend_from_slice(&self.correlation_length.to_le_bytes());
        for m in &self.mean_profile {
            bytes.extend_from_slice(&m.to_le_bytes());
        }
        digest_bytes(&bytes)
    }
}

/// Solve artifacts for one `(t, width)`.
#[derive(Debug)]
struct Factor {
    cov: Vec<f64>,
    /// Lower Cholesky factor of `a^2 cov + b^2 I`.
    chol: Vec<f64>,
}

/// Cholesky factors keyed by (window width, t).
type FactorCache = Mutex<HashMap<(usize, usize), Arc<Factor>>>;

/// Bayes-optimal noise predictor for a [`GaussianMrfPrior`].
///
/// Each window is treated as if it were the whole world: the posterior only
/// uses the window's own columns, while the mean is looked up at the window's
/// global position.
pub struct AnalyticDenoiser {
    prior: GaussianMrfPrior,
    schedule: NoiseSchedule,
    cache: Option<FactorCache>,
}

impl AnalyticDenoiser {
    pub fn new(prior: GaussianMrfPrior, schedule: NoiseSchedule) -> Self {
        AnalyticDenoiser {
            prior,
            schedule,
            cache: Some(Mutex::new(HashMap::new())),
        }
    }

    /// Refactors on every call.
    pub fn uncached(prior: GaussianMrfPrior, schedule: NoiseSchedule) -> Self {
        AnalyticDenoiser {
            prior,
            schedule,
            cache: None,
        }
    }

    pub fn prior(&self) -> &GaussianMrfPrior {
        &self.prior
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Factorizes every timestep for `width` up front.
    pub fn precompute(&self, width: usize) -> Result<()> {
        for t in 0..self.schedule.steps() {
            self.factor(t, width)?;
        }
        Ok(())
    }

    fn build_factor(&self, t: usize, width: usize) -> Result<Factor> {
        let ab = self.schedule.alpha_bar(t);
        let cov = self.prior.window_covariance(width);
        let mut k: Vec<f64> = cov.iter().map(|c| ab * c).collect();
        for i in 0..width {
            k[i * width + i] += 1.0 - ab;
        }
        let chol = cholesky(&k, width).ok_or_else(|| {
            Error::NumericalFailure(format!("posterior system not positive definite at t={t}, width {width}"))
        })?;
        Ok(Factor { cov, chol })
    }

    fn factor(&self, t: usize, width: usize) -> Result<Arc<Factor>> {
        let Some(cache) = &self.cache else {
            return Ok(Arc::new(self.build_factor(t, width)?));
        };
        if let Some(f) = cache.lock().expect("cache poisoned").get(&(t, width)) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(self.build_factor(t, width)?);
        cache
            .lock()
            .expect("cache poisoned")
            .entry((t, width))
            .or_insert_with(|| Arc::clone(&f));
        Ok(f)
    }

    /// Posterior mean `E[x0 | x_t]` for one window.
    pub fn posterior_mean(&self, window: &WindowLatent, offset: usize, t: usize) -> Result<WindowLatent> {
        self.posterior(window, offset, t).map(|(x0, _)| x0)
    }

    /// `(E[x0 | x_t], E[eps | x_t])`. With `K = a^2 S + b^2 I` and
    /// `r = x_t - a mu`, the first is `mu + a S K^-1 r` and the second
    /// `b K^-1 r`, which equals `(x_t - a x0) / b` without the cancellation
    /// that form suffers when `b` is small.
    pub fn posterior(&self, window: &WindowLatent, offset: usize, t: usize) -> Result<(WindowLatent, WindowLatent)> {
        let width = window.width();
        if width > self.prior.panorama_width() {
            return Err(Error::InvalidWindow {
                window: width,
                panorama: self.prior.panorama_width(),
            });
        }
        if t >= self.schedule.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside schedule")));
        }
        let ab = self.schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let factor = self.factor(t, width)?;
        let mean: Vec<f64> = (0..width).map(|i| self.prior.mean_at(offset + i)).collect();
        let channels = window.channels();
        let mut x0 = vec![0.0; window.len()];
        let mut eps = vec![0.0; window.len()];
        let mut r = vec![0.0; width];
        for row in 0..window.height() {
            for ch in 0..channels {
                for i in 0..width {
                    r[i] = window.get(row, i, ch) - a * mean[i];
                }
                let v = cholesky_solve(&factor.chol, width, &r);
                for i in 0..width {
                    let cov_row = &factor.cov[i * width..(i + 1) * width];
                    let smooth: f64 = cov_row.iter().zip(&v).map(|(c, v)| c * v).sum();
                    let k = window.index(row, i, ch);
                    x0[k] = mean[i] + a * smooth;
                    eps[k] = b * v[i];
                }
            }
        }
        Ok((window.with_values(x0)?, window.with_values(eps)?))
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        self.posterior(window, ctx.offset, ctx.t).map(|(_, eps)| eps)
    }

    fn descriptor(&self) -> Descriptor {
        let mut bytes = self.prior.digest().to_le_bytes().to_vec();
        for ab in self.schedule.alpha_bars() {
            bytes.extend_from_slice(&ab.to_le_bytes());
        }
        Descriptor {
            name: "mrf".into(),
            digest: digest_bytes(&bytes),
        }
    }
}

/// Lower Cholesky factor of a row-major SPD matrix, or `None` if a pivot is not positive.
pub(crate) fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            let v = a[i * n + j] - dot;
            if i == j {
                if v.is_nan() || v <= 0.0 {
                    return None;
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let dot: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - dot) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let dot: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - dot) / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(t: usize, offset: usize) -> WindowContext {
        WindowContext {
            t,
            offset,
            window_index: 0,
            condition: Default::default(),
        }
    }

    fn random_window(width: usize, height: usize, seed: u64) -> Latent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Latent::from_fn(width, height, 2, |_, _, _| rng.sample::<f64, _>(StandardNormal)).unwrap()
    }

    #[test]
    fn cholesky_solves_small_system() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let x = cholesky_solve(&l, 3, &[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn diagonal_limit_matches_conjugate_formula() {
        let schedule = NoiseSchedule::default();
        let prior = GaussianMrfPrior::sinusoid(64, 0.7, 1.0, 1.3, 0.0).unwrap();
        let den = AnalyticDenoiser::new(prior.clone(), schedule.clone());
        let x = random_window(16, 3, 5);
        for t in [0, 7, 25, 49] {
            let ab = schedule.alpha_bar(t);
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            let s2 = 1.3f64 * 1.3 + JITTER;
            let out = den.posterior_mean(&x, 20, t).unwrap();
            for row in 0..3 {
                for i in 0..16 {
                    for ch in 0..2 {
                        let mu = prior.mean_at(20 + i);
                        let want = (s2 * a * x.get(row, i, ch) + b * b * mu) / (a * a * s2 + b * b);
                        assert!((out.get(row, i, ch) - want).abs() < 1e-8);
                    }
                }
            }
        }
    }

    #[test]
    fn prior_mean_is_a_fixed_point() {
        let schedule = NoiseSchedule::default();
        let prior = GaussianMrfPrior::default_for(256);
        let den = AnalyticDenoiser::new(prior.clone(), schedule.clone());
        let t = 30;
        let a = schedule.alpha_bar(t).sqrt();
        let x = Latent::from_fn(64, 2, 1, |_, i, _| a * prior.mean_at(100 + i)).unwrap();
        let eps = den.predict_eps(&x, &ctx(t, 100)).unwrap();
        assert!(eps.values().iter().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn cache_does_not_change_bits() {
        let schedule = NoiseSchedule::default();
        let prior = GaussianMrfPrior::default_for(128);
        let cached = AnalyticDenoiser::new(prior.clone(), schedule.clone());
        cached.precompute(32).unwrap();
        let fresh = AnalyticDenoiser::uncached(prior, schedule);
        let x = random_window(32, 2, 9);
        for t in [0, 13, 49] {
            assert_eq!(
                cached.predict_eps(&x, &ctx(t, 17)).unwrap(),
                fresh.predict_eps(&x, &ctx(t, 17)).unwrap()
            );
        }
    }

    #[test]
    fn rejects_oversized_window() {
        let den = AnalyticDenoiser::new(GaussianMrfPrior::default_for(16), NoiseSchedule::default());
        let x = random_window(32, 1, 0);
        assert!(matches!(den.predict_eps(&x, &ctx(3, 0)), Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn prior_validation() {
        assert!(GaussianMrfPrior::new(vec![], 1.0, 1.0).is_err());
        assert!(GaussianMrfPrior::new(vec![0.0], 0.0, 1.0).is_err());
        assert!(GaussianMrfPrior::new(vec![0.0], 1.0, -1.0).is_err());
    }

    #[test]
    fn exact_prior_samples_have_prior_moments() {
        let prior = GaussianMrfPrior::default_for(128);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let mut sum = vec![0.0; 128];
        let mut lag1 = 0.0;
        for _ in 0..n {
            let s = prior.sample(1, 1, &mut rng).unwrap();
            for (i, acc) in sum.iter_mut().enumerate() {
                *acc += s.get(0, i, 0);
            }
            lag1 += (s.get(0, 5, 0) - prior.mean_at(5)) * (s.get(0, 6, 0) - prior.mean_at(6));
        }
        for (i, total) in sum.iter().enumerate() {
            // standard error is 1/sqrt(n) ~ 0.022
            assert!((total / n as f64 - prior.mean_at(i)).abs() < 0.1);
        }
        assert!((lag1 / n as f64 - prior.kernel(1)).abs() < 0.1);
    }
}
