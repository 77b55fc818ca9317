//! Experiment configuration: a sectioned `key = value` file (TOML) with
//! `section.key=value` overrides from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoisers::{digest_bytes, ConditionId, GaussianMrfPrior};
use crate::error::{Error, Result};
use crate::planner::{load_shift_sequence, ShiftLaw};
use crate::samplers::{SamplerConfig, Strategy};
use crate::schedule::{NoiseSchedule, ScheduleKind, StepKind, StepRule};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub prior: PriorSection,
    pub denoiser: DenoiserSection,
    pub output: OutputSection,
    pub compare: CompareSection,
    pub calibrate: CalibrateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// `plain`, `spotdiffusion`, or `multidiffusion`.
    pub strategy: String,
    pub panorama_width: usize,
    pub window_width: usize,
    pub stride: usize,
    pub height: usize,
    pub channels: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub rule: StepKind,
    pub eta: f64,
    pub seed: u64,
    /// `uniform`, `zero`, or `file:<path>`.
    pub shift_law: String,
    pub condition: u32,
    /// Number of runs, seeded `seed + i`.
    pub repeats: usize,
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            strategy: "spotdiffusion".into(),
            panorama_width: 256,
            window_width: 64,
            stride: 16,
            height: 8,
            channels: 1,
            steps: 50,
            schedule: ScheduleKind::Linear,
            rule: StepKind::Ddpm,
            eta: 0.0,
            seed: 0,
            shift_law: "uniform".into(),
            condition: 0,
            repeats: 1,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub amplitude: f64,
    pub cycles: f64,
    pub sigma: f64,
    pub correlation_length: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            amplitude: 1.0,
            cycles: 2.0,
            sigma: 1.0,
            correlation_length: crate::denoisers::DEFAULT_CORRELATION_LENGTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    /// `mrf`, `replay`, or `external`.
    pub kind: String,
    pub fixture: Option<PathBuf>,
    pub command: Option<String>,
    pub timeout_ms: u64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        DenoiserSection {
            kind: "mrf".into(),
            fixture: None,
            command: None,
            timeout_ms: crate::denoisers::DEFAULT_TIMEOUT.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub pgm: bool,
    pub raw: bool,
    pub csv: bool,
    /// Also write each run's denoiser calls as a replay fixture.
    pub fixture: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            pgm: true,
            raw: true,
            csv: true,
            fixture: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Strategy specs: `plain`, `spotdiffusion`, `multidiffusion:<stride>`.
    pub strategies: Vec<String>,
    pub seeds: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            strategies: vec![
                "spotdiffusion".into(),
                "multidiffusion:16".into(),
                "multidiffusion:64".into(),
            ],
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateSection {
    pub seeds: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            seeds: crate::metrics::MIN_CALIBRATION_RUNS,
        }
    }
}

impl ExperimentConfig {
    /// Parses config text, applies `section.key=value` overrides, validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("reading {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    /// Hex digest of the settings that determine sampled results; output
    /// locations and sweep sizes are left out.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            run: RunSection,
            prior: &'a PriorSection,
            denoiser: &'a DenoiserSection,
        }
        let canonical = toml::to_string(&Keyed {
            run: RunSection {
                repeats: 1,
                ..self.run.clone()
            },
            prior: &self.prior,
            denoiser: &self.denoiser,
        })
        .expect("config serializes");
        format!("{:016x}", digest_bytes(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler_config()?;
        if self.run.repeats == 0 || self.compare.seeds == 0 || self.calibrate.seeds == 0 {
            return Err(Error::InvalidConfig("repeat and seed counts must be at least 1".into()));
        }
        if self.compare.strategies.is_empty() {
            return Err(Error::InvalidConfig("compare.strategies is empty".into()));
        }
        self.schedule()?;
        self.prior()?;
        match self.denoiser.kind.as_str() {
            "mrf" => {}
            "replay" if self.denoiser.fixture.is_none() => {
                return Err(Error::InvalidConfig("replay denoiser needs denoiser.fixture".into()))
            }
            "replay" => {}
            "external" if self.denoiser.command.is_none() => {
                return Err(Error::InvalidConfig("external denoiser needs denoiser.command".into()))
            }
            "external" => {}
            other => return Err(Error::InvalidConfig(format!("unknown denoiser kind {other:?}"))),
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.run.schedule, self.run.steps).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn prior(&self) -> Result<GaussianMrfPrior> {
        let p = &self.prior;
        GaussianMrfPrior::sinusoid(
            self.run.panorama_width,
            p.amplitude,
            p.cycles,
            p.sigma,
            p.correlation_length,
        )
        .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn rule(&self) -> Result<StepRule> {
        match self.run.rule {
            StepKind::Ddpm => Ok(StepRule::DDPM),
            StepKind::Ddim => StepRule::ddim(self.run.eta).map_err(|e| Error::InvalidConfig(e.to_string())),
        }
    }

    fn shift_law(&self) -> Result<ShiftLaw> {
        match self.run.shift_law.as_str() {
            "uniform" => Ok(ShiftLaw::UniformInteger),
            "zero" => Ok(ShiftLaw::ForcedZero),
            s => match s.strip_prefix("file:") {
                Some(path) => load_shift_sequence(path)
                    .map(ShiftLaw::FixedSequence)
                    .map_err(|e| Error::InvalidConfig(format!("shift file {path}: {e}"))),
                None => Err(Error::InvalidConfig(format!("unknown shift law {s:?}"))),
            },
        }
    }

    /// The `[run]` section as a sampler config.
    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let strategy: Strategy = self.run.strategy.parse()?;
        self.build(strategy, self.run.stride)
    }

    /// The compare list as sampler configs. Checked only when comparing, so
    /// a compare list that misfits the geometry does not block other commands.
    pub fn compare_configs(&self) -> Result<Vec<SamplerConfig>> {
        self.compare.strategies.iter().map(|s| self.sampler_config_for(s)).collect()
    }

    /// A compare-list entry as a sampler config.
    pub fn sampler_config_for(&self, spec: &str) -> Result<SamplerConfig> {
        let (name, stride) = match spec.split_once(':') {
            Some((name, stride)) => (
                name,
                Some(stride.parse::<usize>().map_err(|_| {
                    Error::InvalidConfig(format!("bad stride in strategy {spec:?}"))
                })?),
            ),
            None => (spec, None),
        };
        let strategy: Strategy = name.parse()?;
        self.build(strategy, stride.unwrap_or(self.run.stride))
    }

    fn build(&self, strategy: Strategy, stride: usize) -> Result<SamplerConfig> {
        let r = &self.run;
        let window_width = match strategy {
            Strategy::Plain => r.panorama_width,
            _ => r.window_width,
        };
        let cfg = SamplerConfig {
            strategy,
            panorama_width: r.panorama_width,
            window_width,
            stride,
            height: r.height,
            channels: r.channels,
            steps: r.steps,
            rule: self.rule()?,
            seed: r.seed,
            shift_law: self.shift_law()?,
            condition: ConditionId(r.condition),
            parallel: r.parallel,
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidGeometry(msg) => Error::InvalidConfig(format!("{}: {msg}", strategy.name())),
            other => other,
        })?;
        Ok(cfg)
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {item:?} is not key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::InvalidConfig(format!("override key {key:?} is not section.key")))?;
    let raw = raw.trim();
    // Parse as a TOML value; anything that does not parse is taken as a bare string.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), value);
            Ok(())
        }
        _ => Err(Error::InvalidConfig(format!("{section} is not a section"))),
    }
}
