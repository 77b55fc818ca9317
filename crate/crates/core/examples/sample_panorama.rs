//! One SpotDiffusion run with the analytic denoiser, saved as a raw latent.
//!
//!     cargo run --release --example sample_panorama -- [seed] [out.plat]

use std::fs::File;
use std::io::BufWriter;

use spotdiff::denoisers::{AnalyticDenoiser, GaussianMrfPrior};
use spotdiff::metrics::RunMetrics;
use spotdiff::samplers::{Sampler, SamplerConfig};
use spotdiff::schedule::NoiseSchedule;

fn main() -> spotdiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let out = args.next().unwrap_or_else(|| "panorama.plat".into());

    let schedule = NoiseSchedule::default();
    let den = AnalyticDenoiser::new(GaussianMrfPrior::default_for(256), schedule.clone());
    let cfg = SamplerConfig::spotdiffusion(256, 64).with_seed(seed);
    let rec = Sampler::new(&den, &schedule).run(&cfg)?;

    let m = RunMetrics::from_record(&rec)?;
    println!("shifts (first 10): {:?}", &rec.shifts[..10]);
    println!("calls: {} ({} per step)", rec.total_calls(), rec.calls_per_step[0]);
    println!("final seams at {:?}", rec.seam_boundaries());
    if let Some(ratio) = m.seam.as_ref().and_then(|s| s.ratio) {
        println!("seam ratio {ratio:.3}");
    }
    if let Some(cov) = &m.coverage {
        println!("shift coverage chi-square p = {:.3}", cov.p_value);
    }
    println!("wall {:?}", rec.total_wall());

    rec.final_latent.write_plat(BufWriter::new(File::create(&out)?))?;
    println!("wrote {out}");
    Ok(())
}
