//! Plugging a user-defined noise predictor into the samplers, with a hook
//! watching each step.
//!
//!     cargo run --example custom_denoiser

use std::sync::Mutex;

use spotdiff::denoisers::{Denoiser, Descriptor, WindowContext};
use spotdiff::grid::Latent;
use spotdiff::samplers::{Sampler, SamplerConfig, SamplerHook};
use spotdiff::schedule::NoiseSchedule;

/// Claims every window is pure noise, so the clean estimate is always zero
/// and the panorama collapses to zero by the last step.
struct AllNoise {
    schedule: NoiseSchedule,
}

impl Denoiser for AllNoise {
    fn predict_eps(&self, window: &Latent, ctx: &WindowContext) -> spotdiff::Result<Latent> {
        let b = (1.0 - self.schedule.alpha_bar(ctx.t)).sqrt();
        let v = window.values().iter().map(|x| x / b).collect();
        Latent::new(window.width(), window.height(), window.channels(), v)
    }

    fn descriptor(&self) -> Descriptor {
        Descriptor {
            name: "all-noise".into(),
            digest: 0,
        }
    }
}

#[derive(Default)]
struct Energy(Mutex<Vec<f64>>);

impl SamplerHook for Energy {
    fn after_step(&self, _t: usize, _shift: usize, latent: &Latent, _eps: &Latent) {
        let e = latent.values().iter().map(|v| v * v).sum::<f64>() / latent.len() as f64;
        self.0.lock().unwrap().push(e);
    }
}

fn main() -> spotdiff::Result<()> {
    let schedule = NoiseSchedule::default();
    let den = AllNoise {
        schedule: schedule.clone(),
    };
    let hook = Energy::default();
    let rec = Sampler::new(&den, &schedule)
        .with_hook(&hook)
        .run(&SamplerConfig::spotdiffusion(256, 64).with_seed(1))?;
    let energy = hook.0.lock().unwrap();
    for (i, e) in energy.iter().enumerate() {
        if i % 10 == 0 || i + 1 == energy.len() {
            println!("entering step {i:>2}: mean square {e:.4}");
        }
    }
    let last = rec.final_latent.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("final |x| max {last:.2e}");
    Ok(())
}
