//! Command-line front end: `generate`, `compare`, `calibrate`, `serve-check`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration failure.

pub mod config;
mod mock;
pub mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use config::ExperimentConfig;
pub use mock::{MockMode, MockOptions};

use crate::denoisers::protocol::{Hello, Request};
use crate::denoisers::{
    AnalyticDenoiser, Denoiser, ExternalDenoiser, Fixture, GaussianMrfPrior, RecordingDenoiser,
    ReplayDenoiser, WindowContext,
};
use crate::error::{Error, Result};
use crate::grid::Latent;
use crate::metrics::{percentile, threshold_calibration, MetricsRow, RunMetrics};
use crate::samplers::{RunRecord, Sampler, SamplerConfig, Strategy};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Parser)]
#[command(name = "spotdiff", version, about = "Tiled panorama diffusion with shifted windows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample panoramas with the configured strategy.
    Generate(CommonArgs),
    /// Run several strategies on the same seeds and summarize.
    Compare(CommonArgs),
    /// Derive seam-ratio thresholds from seam-free and disjoint-tiling runs.
    Calibrate(CommonArgs),
    /// Exercise an external denoiser over the stdio protocol.
    ServeCheck(ServeCheckArgs),
    #[command(hide = true)]
    MockDenoiser(MockArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set run.stride=32`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of seeds (runs for generate, sweep size for compare/calibrate).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// `mrf`, `replay[:<fixture>]`, or `external:<command>`.
    #[arg(long)]
    pub denoiser: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Expect {
    Any,
    Zero,
    Echo,
    Diag,
}

#[derive(Debug, Clone, Args)]
pub struct ServeCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 16)]
    pub requests: usize,
    /// Fail unless every response matches this reference to 1e-6.
    #[arg(long, value_enum, default_value_t = Expect::Any)]
    pub expect: Expect,
}

#[derive(Debug, Clone, Args)]
pub struct MockArgs {
    #[arg(long, value_enum, default_value_t = MockMode::Zero)]
    pub mode: MockMode,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long)]
    pub die_after: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl CliError {
    fn config(error: Error) -> Self {
        CliError { code: 2, error }
    }
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        CliError { code: 1, error }
    }
}

/// Parses process arguments, runs, and returns the exit code.
pub fn main() -> i32 {
    main_from(std::env::args_os())
}

pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = load_config(&args, "run.repeats")?;
            cmd_generate(&cfg)?;
        }
        Command::Compare(args) => {
            let cfg = load_config(&args, "compare.seeds")?;
            cfg.compare_configs().map_err(CliError::config)?;
            cmd_compare(&cfg)?;
        }
        Command::Calibrate(args) => {
            let cfg = load_config(&args, "calibrate.seeds")?;
            cmd_calibrate(&cfg)?;
        }
        Command::ServeCheck(args) => {
            let cfg = load_config(&args.common, "run.repeats")?;
            cmd_serve_check(&cfg, args.requests, args.expect)?;
        }
        Command::MockDenoiser(args) => {
            let opts = MockOptions {
                mode: args.mode,
                sigma: args.sigma,
                die_after: args.die_after,
                delay: Duration::from_millis(args.delay_ms),
            };
            if let Err(e) = mock::run_mock(&opts) {
                eprintln!("mock denoiser: {e}");
                std::process::exit(3);
            }
        }
    }
    Ok(())
}

/// Folds the convenience flags into `--set` overrides and loads the config.
fn load_config(args: &CommonArgs, seeds_key: &str) -> std::result::Result<ExperimentConfig, CliError> {
    let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
    let mut overrides = args.set.clone();
    if let Some(out) = &args.out {
        overrides.push(format!("output.dir={}", quote(&out.to_string_lossy())));
    }
    if let Some(n) = args.seeds {
        overrides.push(format!("{seeds_key}={n}"));
    }
    if let Some(spec) = &args.denoiser {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec.as_str(), ""));
        overrides.push(format!("denoiser.kind={}", quote(kind)));
        match (kind, rest) {
            (_, "") => {}
            ("replay", path) => overrides.push(format!("denoiser.fixture={}", quote(path))),
            ("external", cmd) => overrides.push(format!("denoiser.command={}", quote(cmd))),
            _ => {
                return Err(CliError::config(Error::InvalidConfig(format!(
                    "unrecognized denoiser {spec:?}"
                ))))
            }
        }
    }
    ExperimentConfig::load(args.config.as_deref(), &overrides).map_err(CliError::config)
}

/// Denoisers for one experiment. The analytic denoiser serves every window
/// width; external and replay sources are bound to one width each.
struct DenoiserPool<'a> {
    cfg: &'a ExperimentConfig,
    schedule: NoiseSchedule,
    analytic: Option<AnalyticDenoiser>,
    by_width: BTreeMap<usize, Box<dyn Denoiser>>,
}

impl<'a> DenoiserPool<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let schedule = cfg.schedule()?;
        let analytic = match cfg.denoiser.kind.as_str() {
            "mrf" => Some(AnalyticDenoiser::new(cfg.prior()?, schedule.clone())),
            _ => None,
        };
        Ok(DenoiserPool {
            cfg,
            schedule,
            analytic,
            by_width: BTreeMap::new(),
        })
    }

    fn hello(&self, window_width: usize) -> Hello {
        hello_for(self.cfg, window_width)
    }

    fn get(&mut self, window_width: usize) -> Result<&dyn Denoiser> {
        if let Some(a) = &self.analytic {
            return Ok(a);
        }
        if !self.by_width.contains_key(&window_width) {
            let hello = self.hello(window_width);
            let den: Box<dyn Denoiser> = match self.cfg.denoiser.kind.as_str() {
                "replay" => {
                    let path = self.cfg.denoiser.fixture.as_ref().expect("validated");
                    let fixture = Fixture::read_from(BufReader::new(File::open(path)?))?;
                    if fixture.hello != hello {
                        return Err(Error::InvalidArgument(format!(
                            "fixture {} was recorded for {:?}, this run needs {:?}",
                            path.display(),
                            fixture.hello,
                            hello
                        )));
                    }
                    Box::new(ReplayDenoiser::new(fixture))
                }
                _ => {
                    let command = self.cfg.denoiser.command.as_ref().expect("validated");
                    Box::new(ExternalDenoiser::spawn(
                        command,
                        hello,
                        Duration::from_millis(self.cfg.denoiser.timeout_ms),
                    )?)
                }
            };
            self.by_width.insert(window_width, den);
        }
        Ok(self.by_width[&window_width].as_ref())
    }
}

fn hello_for(cfg: &ExperimentConfig, window_width: usize) -> Hello {
    Hello {
        width: window_width as u32,
        height: cfg.run.height as u32,
        channels: cfg.run.channels as u32,
        steps: cfg.run.steps as u32,
        schedule: cfg.run.schedule.code(),
    }
}

/// Runs one config, optionally recording the denoiser calls.
fn execute(
    pool: &mut DenoiserPool<'_>,
    run: &SamplerConfig,
    record: bool,
) -> Result<(RunRecord, Option<Fixture>)> {
    let hello = pool.hello(run.window_width);
    let schedule = pool.schedule.clone();
    let den = pool.get(run.window_width)?;
    if record {
        let rec = RecordingDenoiser::new(den, hello);
        let result = Sampler::new(&rec, &schedule).run(run)?;
        Ok((result, Some(rec.into_fixture())))
    } else {
        Ok((Sampler::new(den, &schedule).run(run)?, None))
    }
}

/// Writes a run's image, raw latent and fixture; returns its metrics row.
fn write_run(
    cfg: &ExperimentConfig,
    digest: &str,
    record: &RunRecord,
    fixture: Option<&Fixture>,
) -> Result<MetricsRow> {
    let dir = &cfg.output.dir;
    let name = output::run_name(&record.config, digest);
    if cfg.output.pgm {
        output::write_pgm(&dir.join(format!("{name}.pgm")), &record.final_latent, digest)?;
    }
    if cfg.output.raw {
        output::write_plat(&dir.join(format!("{name}.plat")), &record.final_latent)?;
    }
    if let Some(f) = fixture {
        f.write_to(std::io::BufWriter::new(File::create(dir.join(format!("{name}.fixture")))?))?;
    }
    Ok(RunMetrics::from_record(record)?.row(record, digest))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("-".into(), |r| format!("{r:.4}"))
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let digest = cfg.digest();
    let base = cfg.sampler_config()?;
    ensure_dir(&cfg.output.dir)?;
    let mut pool = DenoiserPool::new(cfg)?;
    let mut rows = Vec::new();
    for i in 0..cfg.run.repeats {
        let run = base.clone().with_seed(cfg.run.seed + i as u64);
        let (record, fixture) = execute(&mut pool, &run, cfg.output.fixture)?;
        let row = write_run(cfg, &digest, &record, fixture.as_ref())?;
        println!(
            "{}  calls={} ratio={} wall_ms={:.1}",
            output::run_name(&run, &digest),
            row.total_calls,
            fmt_ratio(row.ratio),
            row.wall_ms
        );
        rows.push(row);
    }
    if cfg.output.csv {
        output::append_metrics(&cfg.output.dir.join("metrics.csv"), &rows)?;
    }
    Ok(rows)
}

/// One line of the compare summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    /// A seed, or `p5`/`p50`/`p95` for aggregate rows.
    pub seed: String,
    pub strategy: String,
    pub stride: usize,
    pub calls_per_step: f64,
    pub total_calls: f64,
    /// Calls relative to the reference strategy (spotdiffusion when present).
    pub call_ratio: f64,
    pub seam_ratio: Option<f64>,
    pub wall_ms: f64,
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let digest = cfg.digest();
    let runs = cfg.compare_configs()?;
    let reference = runs
        .iter()
        .position(|r| r.strategy == Strategy::SpotDiffusion)
        .unwrap_or(0);
    ensure_dir(&cfg.output.dir)?;
    let mut pool = DenoiserPool::new(cfg)?;
    let mut metrics_rows = Vec::new();
    let mut summary = Vec::new();
    for i in 0..cfg.compare.seeds {
        let seed = cfg.run.seed + i as u64;
        let mut panels = Vec::new();
        let mut rows = Vec::new();
        for run in &runs {
            let run = run.clone().with_seed(seed);
            let (record, fixture) = execute(&mut pool, &run, cfg.output.fixture)?;
            rows.push(write_run(cfg, &digest, &record, fixture.as_ref())?);
            panels.push(record.final_latent);
        }
        if cfg.output.pgm {
            let path = cfg
                .output
                .dir
                .join(format!("compare-seed{seed}-{}.pgm", &digest[..8]));
            output::write_montage(&path, &panels, &digest)?;
        }
        let ref_calls = rows[reference].total_calls as f64;
        for row in &rows {
            summary.push(SummaryRow {
                seed: seed.to_string(),
                strategy: row.strategy.clone(),
                stride: row.stride,
                calls_per_step: row.calls_per_step,
                total_calls: row.total_calls as f64,
                call_ratio: row.total_calls as f64 / ref_calls,
                seam_ratio: row.ratio,
                wall_ms: row.wall_ms,
            });
        }
        metrics_rows.extend(rows);
    }
    if cfg.compare.seeds > 1 {
        summary.extend(aggregate_rows(&summary, runs.len()));
    }
    for row in &summary {
        println!(
            "{:>4} {:<15} stride={:<3} calls={:<6} call_ratio={:.4} seam_ratio={} wall_ms={:.1}",
            row.seed,
            row.strategy,
            row.stride,
            row.total_calls,
            row.call_ratio,
            fmt_ratio(row.seam_ratio),
            row.wall_ms
        );
    }
    if cfg.output.csv {
        output::append_metrics(&cfg.output.dir.join("metrics.csv"), &metrics_rows)?;
        let path = cfg.output.dir.join(format!("summary-{}.csv", &digest[..8]));
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        for row in &summary {
            w.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(summary)
}

/// Percentile rows per strategy over a seed sweep.
fn aggregate_rows(per_seed: &[SummaryRow], strategies: usize) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for q in [5.0, 50.0, 95.0] {
        for k in 0..strategies {
            let rows: Vec<&SummaryRow> = per_seed.iter().skip(k).step_by(strategies).collect();
            let pick = |f: &dyn Fn(&SummaryRow) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| percentile(&v, q))
            };
            out.push(SummaryRow {
                seed: format!("p{q}"),
                strategy: rows[0].strategy.clone(),
                stride: rows[0].stride,
                calls_per_step: pick(&|r| Some(r.calls_per_step)).unwrap_or(f64::NAN),
                total_calls: pick(&|r| Some(r.total_calls)).unwrap_or(f64::NAN),
                call_ratio: pick(&|r| Some(r.call_ratio)).unwrap_or(f64::NAN),
                seam_ratio: pick(&|r| r.seam_ratio),
                wall_ms: pick(&|r| Some(r.wall_ms)).unwrap_or(f64::NAN),
            });
        }
    }
    out
}

/// Calibrates on full-width runs (seam-free) against static disjoint tilings,
/// both measured at the disjoint tiling's interior boundaries.
pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<crate::metrics::Thresholds> {
    let digest = cfg.digest();
    let (wp, w) = (cfg.run.panorama_width, cfg.run.window_width);
    let plain = cfg.sampler_config_for("plain")?;
    let disjoint = cfg.sampler_config_for(&format!("multidiffusion:{w}"))?;
    let boundaries = (w..wp).step_by(w).collect();
    ensure_dir(&cfg.output.dir)?;
    let mut pool = DenoiserPool::new(cfg)?;
    let seeds: Vec<u64> = (0..cfg.calibrate.seeds as u64).map(|i| cfg.run.seed + i).collect();
    let mut populations = Vec::new();
    for base in [&plain, &disjoint] {
        let schedule = pool.schedule.clone();
        let den = pool.get(base.window_width)?;
        let finals: Vec<Latent> = seeds
            .par_iter()
            .map(|&s| Ok(Sampler::new(den, &schedule).run(&base.clone().with_seed(s))?.final_latent))
            .collect::<Result<_>>()?;
        populations.push(finals);
    }
    let thresholds = threshold_calibration(&populations[0], &populations[1], &boundaries)?;
    let path = cfg.output.dir.join("thresholds.csv");
    fs::write(
        &path,
        format!(
            "no_seam_threshold,seam_threshold,runs,panorama_width,window_width,correlation_length,config_digest\n\
             {},{},{},{wp},{w},{},{digest}\n",
            thresholds.no_seam, thresholds.seam, cfg.calibrate.seeds, cfg.prior.correlation_length
        ),
    )?;
    println!(
        "no_seam={:.4} seam={:.4} runs={} -> {}",
        thresholds.no_seam,
        thresholds.seam,
        cfg.calibrate.seeds,
        path.display()
    );
    Ok(thresholds)
}

/// Outcome of a protocol check.
#[derive(Debug, Clone, PartialEq)]
pub struct ServeCheckReport {
    pub requests: usize,
    pub max_abs_zero: f64,
    pub max_abs_echo: f64,
    pub max_abs_diag: f64,
}

pub const SERVE_CHECK_TOLERANCE: f64 = 1e-6;

pub fn cmd_serve_check(cfg: &ExperimentConfig, requests: usize, expect: Expect) -> Result<ServeCheckReport> {
    let command = match (cfg.denoiser.kind.as_str(), &cfg.denoiser.command) {
        ("external", Some(c)) => c.clone(),
        _ => return Err(Error::InvalidArgument("serve-check needs --denoiser external:<command>".into())),
    };
    let w = cfg.run.window_width;
    let hello = hello_for(cfg, w);
    let schedule = cfg.schedule()?;
    let client = ExternalDenoiser::spawn(&command, hello, Duration::from_millis(cfg.denoiser.timeout_ms))?;
    let reference = AnalyticDenoiser::new(
        GaussianMrfPrior::new(vec![0.0; w], cfg.prior.sigma, 0.0)?,
        schedule.clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut report = ServeCheckReport {
        requests,
        max_abs_zero: 0.0,
        max_abs_echo: 0.0,
        max_abs_diag: 0.0,
    };
    for i in 0..requests {
        let t = schedule.steps() - 1 - i % schedule.steps();
        let payload: Vec<f32> = (0..hello.payload_len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let request = Request {
            t: t as u32,
            window_index: i as u32,
            condition: cfg.run.condition,
            payload,
        };
        let got = client.request(&request)?;
        let input = Latent::from_f32(w, cfg.run.height, cfg.run.channels, &request.payload)?;
        let ctx = WindowContext {
            t,
            offset: 0,
            window_index: i,
            condition: crate::denoisers::ConditionId(cfg.run.condition),
        };
        let diag = reference.predict_eps(&input, &ctx)?;
        for (k, &g) in got.iter().enumerate() {
            let g = g as f64;
            report.max_abs_zero = report.max_abs_zero.max(g.abs());
            report.max_abs_echo = report.max_abs_echo.max((g - request.payload[k] as f64).abs());
            report.max_abs_diag = report.max_abs_diag.max((g - diag.values()[k]).abs());
        }
    }
    client.shutdown()?;
    println!(
        "serve-check: {} requests ok; max|diff| zero={:.3e} echo={:.3e} diag={:.3e}",
        report.requests, report.max_abs_zero, report.max_abs_echo, report.max_abs_diag
    );
    let deviation = match expect {
        Expect::Any => None,
        Expect::Zero => Some(report.max_abs_zero),
        Expect::Echo => Some(report.max_abs_echo),
        Expect::Diag => Some(report.max_abs_diag),
    };
    if let Some(d) = deviation.filter(|&d| d.is_nan() || d > SERVE_CHECK_TOLERANCE) {
        return Err(Error::NumericalFailure(format!(
            "responses deviate from the {expect:?} reference by {d:.3e}"
        )));
    }
    Ok(report)
}
