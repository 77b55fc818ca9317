//! The external-denoiser wire protocol with an in-process server on a pair
//! of pipes. A real server reads stdin and writes stdout the same way.
//!
//!     cargo run --example external_protocol

use std::io::pipe;
use std::thread;
use std::time::Duration;

use spotdiff::denoisers::protocol::{serve, Hello};
use spotdiff::denoisers::ExternalDenoiser;
use spotdiff::samplers::{Sampler, SamplerConfig};
use spotdiff::schedule::NoiseSchedule;

fn main() -> spotdiff::Result<()> {
    let schedule = NoiseSchedule::default();
    let (to_server, from_client) = (pipe()?, pipe()?);
    let (server_in, client_out) = to_server;
    let (client_in, server_out) = from_client;

    // Zero-mean, unit-variance independent pixels: eps = x * b / (a^2 + b^2).
    let abars = schedule.alpha_bars().to_vec();
    let server = thread::spawn(move || {
        serve(server_in, server_out, |_hello, req| {
            let ab = abars[req.t as usize];
            Ok(req.payload.iter().map(|&x| (x as f64 * (1.0 - ab).sqrt()) as f32).collect())
        })
    });

    let hello = Hello {
        width: 64,
        height: 8,
        channels: 1,
        steps: 50,
        schedule: schedule.kind().code(),
    };
    let den = ExternalDenoiser::from_streams(client_in, client_out, hello, Duration::from_secs(5))?;
    let rec = Sampler::new(&den, &schedule).run(&SamplerConfig::spotdiffusion(256, 64))?;
    den.shutdown()?;
    let served = server.join().expect("server thread")?;
    println!("served {served} requests, {} calls", rec.total_calls());
    let max = rec.final_latent.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("final |x| max {max:.3}");
    Ok(())
}
