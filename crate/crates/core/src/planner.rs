//! Window layouts: static overlapping tilings and per-step shifted disjoint tilings.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// RNG stream reserved for shift draws; the noise stream is 0.
pub const SHIFT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    pub panorama_width: usize,
    pub window_width: usize,
    pub stride: usize,
    /// Left edges of the windows. For shifted plans these are positions in the
    /// translated panorama, not the original one.
    pub offsets: Vec<usize>,
    pub shift: usize,
    pub wraparound: bool,
}

impl WindowPlan {
    pub fn count(&self) -> usize {
        self.offsets.len()
    }

    /// Column of the original panorama where window `k` starts.
    ///
    /// Translating by `s` moves original column `x` to `x + s`, so window
    /// `k` of a shifted plan starts at `offsets[k] - s` in original coordinates.
    pub fn source_offset(&self, k: usize) -> usize {
        let w = self.panorama_width;
        (self.offsets[k] + w - self.shift % w) % w
    }

    /// Left-edge columns of every window, in original panorama coordinates.
    pub fn boundary_positions(&self) -> BTreeSet<usize> {
        (0..self.count()).map(|k| self.source_offset(k)).collect()
    }

    /// How many windows cover each original column.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.panorama_width];
        for k in 0..self.count() {
            let start = self.source_offset(k);
            for j in 0..self.window_width {
                counts[(start + j) % self.panorama_width] += 1;
            }
        }
        counts
    }
}

/// Overlapping static tiling with offsets `0, stride, ..., W' - W` and no wrap-around.
pub fn plan_static(panorama_width: usize, window_width: usize, stride: usize) -> Result<WindowPlan> {
    if stride == 0 || window_width == 0 {
        return Err(Error::InvalidGeometry(
            "stride and window width must be at least 1".into(),
        ));
    }
    if window_width > panorama_width {
        return Err(Error::InvalidGeometry(format!(
            "window width {window_width} exceeds panorama width {panorama_width}"
        )));
    }
    let span = panorama_width - window_width;
    if !span.is_multiple_of(stride) {
        return Err(Error::InvalidGeometry(format!(
            "panorama width minus window width ({panorama_width} - {window_width} = {span}) \
             must be divisible by the stride {stride}"
        )));
    }
    Ok(WindowPlan {
        panorama_width,
        window_width,
        stride,
        offsets: (0..=span).step_by(stride).collect(),
        shift: 0,
        wraparound: false,
    })
}

/// Disjoint tiling of the panorama translated by `shift`, with wrap-around.
pub fn plan_shifted(panorama_width: usize, window_width: usize, shift: usize) -> Result<WindowPlan> {
    check_shifted_geometry(panorama_width, window_width)?;
    if shift >= window_width {
        return Err(Error::InvalidGeometry(format!(
            "shift {shift} must be below the window width {window_width}"
        )));
    }
    Ok(WindowPlan {
        panorama_width,
        window_width,
        stride: window_width,
        offsets: (0..panorama_width).step_by(window_width).collect(),
        shift,
        wraparound: true,
    })
}

pub(crate) fn check_shifted_geometry(panorama_width: usize, window_width: usize) -> Result<()> {
    if window_width == 0 || panorama_width == 0 || !panorama_width.is_multiple_of(window_width) {
        return Err(Error::InvalidGeometry(format!(
            "panorama width {panorama_width} must be divisible by the window width {window_width}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShiftLaw {
    /// Uniform over `{0, ..., W-1}`.
    UniformInteger,
    ForcedZero,
    /// Replays `values[t]` at timestep `t`.
    FixedSequence(Vec<usize>),
}

/// Per-step shift source. Every call consumes exactly one draw from the
/// shift stream, whatever the law, so laws can be swapped under one seed
/// without disturbing the draws that follow.
#[derive(Debug, Clone)]
pub struct ShiftSampler {
    law: ShiftLaw,
    window_width: usize,
    rng: ChaCha8Rng,
}

impl ShiftSampler {
    pub fn new(law: ShiftLaw, window_width: usize, seed: u64) -> Result<Self> {
        if window_width == 0 {
            return Err(Error::InvalidArgument("window width must be positive".into()));
        }
        if let ShiftLaw::FixedSequence(seq) = &law {
            if let Some(bad) = seq.iter().find(|&&s| s >= window_width) {
                return Err(Error::InvalidArgument(format!(
                    "fixed shift {bad} is not below the window width {window_width}"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(SHIFT_STREAM);
        Ok(ShiftSampler {
            law,
            window_width,
            rng,
        })
    }

    pub fn law(&self) -> &ShiftLaw {
        &self.law
    }

    pub fn window_width(&self) -> usize {
        self.window_width
    }

    pub fn sample_shift(&mut self, t: usize) -> Result<usize> {
        let draw = self.rng.random_range(0..self.window_width);
        match &self.law {
            ShiftLaw::UniformInteger => Ok(draw),
            ShiftLaw::ForcedZero => Ok(0),
            ShiftLaw::FixedSequence(seq) => seq
                .get(t)
                .copied()
                .ok_or(Error::FixtureExhausted { t, call: 0 }),
        }
    }
}

/// Parses a shift file: one non-negative integer per line, blank lines and
/// `#` comments ignored.
pub fn parse_shift_sequence(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.split('#').next().unwrap_or("").trim()))
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            line.parse::<usize>()
                .map_err(|e| Error::Format(format!("shift file line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_shift_sequence(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_shift_sequence(&fs::read_to_string(path)?)
}

pub fn write_shift_sequence(shifts: &[usize]) -> String {
    shifts.iter().map(|s| format!("{s}\n")).collect()
}
