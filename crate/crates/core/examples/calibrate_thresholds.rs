//! Seam-ratio thresholds from seam-free and disjoint-tiling populations,
//! then a verdict for a handful of SpotDiffusion runs.
//!
//!     cargo run --release --example calibrate_thresholds

use std::collections::BTreeSet;

use rayon::prelude::*;
use spotdiff::denoisers::{AnalyticDenoiser, GaussianMrfPrior};
use spotdiff::grid::Latent;
use spotdiff::metrics::{seam_energy, threshold_calibration};
use spotdiff::samplers::{Sampler, SamplerConfig};
use spotdiff::schedule::NoiseSchedule;

fn main() -> spotdiff::Result<()> {
    let (wp, w) = (128, 32);
    let schedule = NoiseSchedule::linear(25)?;
    let den = AnalyticDenoiser::new(GaussianMrfPrior::default_for(wp), schedule.clone());
    let population = |cfg: SamplerConfig| -> spotdiff::Result<Vec<Latent>> {
        (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let mut cfg = cfg.clone().with_seed(seed);
                cfg.steps = 25;
                Ok(Sampler::new(&den, &schedule).run(&cfg)?.final_latent)
            })
            .collect()
    };

    // Measured where a disjoint tiling puts its seams.
    let boundaries: BTreeSet<usize> = (w..wp).step_by(w).collect();
    let free = population(SamplerConfig::plain(wp))?;
    let disjoint = population(SamplerConfig::multidiffusion(wp, w, w))?;
    let t = threshold_calibration(&free, &disjoint, &boundaries)?;
    println!("no_seam < {:.3}, seam > {:.3}", t.no_seam, t.seam);

    let spot = population(SamplerConfig::spotdiffusion(wp, w))?;
    let below = spot
        .iter()
        .filter(|p| seam_energy(p, &boundaries).ok().and_then(|r| r.ratio).is_some_and(|r| r < t.no_seam))
        .count();
    println!("spotdiffusion runs below no_seam: {below}/{}", spot.len());
    Ok(())
}
