//! Cost and seam visibility of SpotDiffusion against overlapping and
//! disjoint MultiDiffusion on the same seeds.
//!
//!     cargo run --release --example compare_strategies -- [seeds]

use spotdiff::denoisers::{AnalyticDenoiser, GaussianMrfPrior};
use spotdiff::metrics::{percentile, RunMetrics};
use spotdiff::samplers::{Sampler, SamplerConfig};
use spotdiff::schedule::NoiseSchedule;

fn main() -> spotdiff::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse().expect("seed count")).unwrap_or(20);
    let schedule = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(GaussianMrfPrior::default_for(256), schedule.clone());

    let strategies = [
        ("spotdiffusion", SamplerConfig::spotdiffusion(256, 64)),
        ("multidiffusion/16", SamplerConfig::multidiffusion(256, 64, 16)),
        ("multidiffusion/64", SamplerConfig::multidiffusion(256, 64, 64)),
    ];
    println!("{:<18} {:>6} {:>10} {:>10}", "strategy", "calls", "ratio p50", "wall ms");
    for (name, cfg) in strategies {
        let (mut ratios, mut wall, mut calls) = (Vec::new(), 0.0, 0);
        for seed in 0..seeds {
            let rec = Sampler::new(&den, &schedule).run(&cfg.clone().with_seed(seed))?;
            let m = RunMetrics::from_record(&rec)?;
            ratios.extend(m.seam.and_then(|s| s.ratio));
            wall += rec.total_wall().as_secs_f64() * 1e3;
            calls = rec.total_calls();
        }
        let p50 = if ratios.is_empty() { f64::NAN } else { percentile(&ratios, 50.0) };
        println!("{name:<18} {calls:>6} {p50:>10.3} {:>10.1}", wall / seeds as f64);
    }
    Ok(())
}
