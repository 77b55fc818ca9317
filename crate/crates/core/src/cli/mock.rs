//! A stand-in protocol server used to exercise the external client.

use std::io::{self, BufReader, BufWriter};
use std::thread;
use std::time::Duration;

use clap::ValueEnum;

use crate::denoisers::protocol::{serve, Hello, Request};
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockMode {
    /// Always predicts zero noise.
    Zero,
    /// Returns the input unchanged.
    Echo,
    /// Exact posterior for a zero-mean prior with independent pixels.
    Diag,
}

#[derive(Debug, Clone)]
pub struct MockOptions {
    pub mode: MockMode,
    pub sigma: f64,
    /// Exit without answering once this many requests have been served.
    pub die_after: Option<u64>,
    pub delay: Duration,
}

/// `eps = x * b / (a^2 sigma^2 + b^2)` with `a^2 = abar_t`, `b^2 = 1 - abar_t`.
fn diag_eps(schedule: &NoiseSchedule, sigma: f64, t: usize, x: &[f32]) -> Vec<f32> {
    let ab = schedule.alpha_bar(t);
    let b = (1.0 - ab).sqrt();
    let gain = b / (ab * sigma * sigma + (1.0 - ab));
    x.iter().map(|&v| (v as f64 * gain) as f32).collect()
}

/// Serves stdin/stdout until Shutdown.
pub fn run_mock(opts: &MockOptions) -> Result<u64> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut schedule: Option<NoiseSchedule> = None;
    let mut served = 0u64;
    let handler = |hello: &Hello, req: &Request| -> Result<Vec<f32>> {
        if opts.die_after == Some(served) {
            std::process::exit(0);
        }
        if !opts.delay.is_zero() {
            thread::sleep(opts.delay);
        }
        served += 1;
        match opts.mode {
            MockMode::Zero => Ok(vec![0.0; req.payload.len()]),
            MockMode::Echo => Ok(req.payload.clone()),
            MockMode::Diag => {
                if schedule.is_none() {
                    let kind = ScheduleKind::from_code(hello.schedule)
                        .ok_or_else(|| Error::Protocol(format!("unknown schedule code {}", hello.schedule)))?;
                    schedule = Some(NoiseSchedule::new(kind, hello.steps as usize)?);
                }
                let s = schedule.as_ref().expect("set above");
                if req.t as usize >= s.steps() {
                    return Err(Error::Protocol(format!("timestep {} out of range", req.t)));
                }
                Ok(diag_eps(s, opts.sigma, req.t as usize, &req.payload))
            }
        }
    };
    serve(BufReader::new(stdin.lock()), BufWriter::new(stdout.lock()), handler)
}
