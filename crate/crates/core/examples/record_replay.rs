//! Record every denoiser call of a run to a fixture, then replay it without
//! the model.
//!
//!     cargo run --example record_replay

use spotdiff::denoisers::protocol::Hello;
use spotdiff::denoisers::{AnalyticDenoiser, Fixture, GaussianMrfPrior, RecordingDenoiser, ReplayDenoiser};
use spotdiff::samplers::{Sampler, SamplerConfig};
use spotdiff::schedule::NoiseSchedule;

fn main() -> spotdiff::Result<()> {
    let schedule = NoiseSchedule::linear(20)?;
    let den = AnalyticDenoiser::new(GaussianMrfPrior::default_for(128), schedule.clone());
    let mut cfg = SamplerConfig::spotdiffusion(128, 32).with_seed(4).with_rows(4, 1);
    cfg.steps = 20;

    let hello = Hello {
        width: 32,
        height: 4,
        channels: 1,
        steps: 20,
        schedule: schedule.kind().code(),
    };
    let recorder = RecordingDenoiser::new(&den, hello);
    let original = Sampler::new(&recorder, &schedule).run(&cfg)?;
    let mut bytes = Vec::new();
    recorder.into_fixture().write_to(&mut bytes)?;
    println!("recorded {} calls, {} bytes", original.total_calls(), bytes.len());

    let replay = ReplayDenoiser::new(Fixture::read_from(&bytes[..])?);
    let again = Sampler::new(&replay, &schedule).run(&cfg)?;
    assert_eq!(again.final_latent, original.final_latent);
    println!("replay matches bit for bit");

    match Sampler::new(&replay, &schedule).run(&cfg.with_seed(5)) {
        Err(e) => println!("other seed: {e}"),
        Ok(_) => unreachable!("a different seed cannot match the fixture"),
    }
    Ok(())
}
