//! Seam, coverage and compute measurements over finished runs.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grid::PanoramaLatent;
use crate::planner::plan_shifted;
use crate::samplers::RunRecord;

/// Interior energies at or below this leave the ratio undefined.
pub const MIN_INTERIOR_ENERGY: f64 = 1e-12;
/// Runs required per population by [`threshold_calibration`].
pub const MIN_CALIBRATION_RUNS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SeamReport {
    pub boundary_energy: f64,
    pub interior_energy: f64,
    /// `boundary / interior`, `None` when the interior is flat.
    pub ratio: Option<f64>,
    pub boundaries: BTreeSet<usize>,
}

/// Mean squared first difference `p[b] - p[b-1]` (cyclic) over the boundary
/// columns, and the same over every other column.
pub fn seam_energy(p: &PanoramaLatent, boundaries: &BTreeSet<usize>) -> Result<SeamReport> {
    let w = p.width();
    if boundaries.is_empty() || boundaries.len() >= w {
        return Err(Error::InvalidArgument(format!(
            "boundary set must be a non-empty strict subset of the {w} columns, got {} columns",
            boundaries.len()
        )));
    }
    if let Some(&b) = boundaries.iter().find(|&&b| b >= w) {
        return Err(Error::InvalidArgument(format!("boundary column {b} outside width {w}")));
    }
    let mut sums = [0.0f64; 2];
    for col in 0..w {
        let prev = (col + w - 1) % w;
        let energy: f64 = (0..p.height())
            .flat_map(|row| (0..p.channels()).map(move |ch| (row, ch)))
            .map(|(row, ch)| {
                let d = p.get(row, col, ch) - p.get(row, prev, ch);
                d * d
            })
            .sum();
        sums[usize::from(!boundaries.contains(&col))] += energy;
    }
    let per_col = (p.height() * p.channels()) as f64;
    let boundary_energy = sums[0] / (boundaries.len() as f64 * per_col);
    let interior_energy = sums[1] / ((w - boundaries.len()) as f64 * per_col);
    Ok(SeamReport {
        boundary_energy,
        interior_energy,
        ratio: (interior_energy > MIN_INTERIOR_ENERGY).then(|| boundary_energy / interior_energy),
        boundaries: boundaries.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Boundary hits per column over the run; sums to `T * n`.
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Boundary-hit histogram of a shifted run and its uniformity test.
///
/// Every step's window edges are `W` apart, so column `x` and `x + W` are
/// always hit together. The statistic is therefore computed over the `W`
/// residue classes (one hit per step each), against `T / W` expected hits.
pub fn coverage_report(shifts: &[usize], panorama_width: usize, window_width: usize) -> Result<CoverageReport> {
    if shifts.is_empty() {
        return Err(Error::InvalidArgument("no shifts to summarize".into()));
    }
    let mut counts = vec![0u64; panorama_width];
    let mut classes = vec![0u64; window_width];
    for &s in shifts {
        let plan = plan_shifted(panorama_width, window_width, s)?;
        for b in plan.boundary_positions() {
            counts[b] += 1;
        }
        classes[(window_width - s) % window_width] += 1;
    }
    let expected = shifts.len() as f64 / window_width as f64;
    let chi_square: f64 = classes
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = window_width.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64)
            .map_err(|e| Error::NumericalFailure(e.to_string()))?
            .sf(chi_square)
    };
    Ok(CoverageReport {
        counts,
        chi_square,
        dof,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeReport {
    pub calls_per_step: f64,
    pub total_calls: usize,
    pub wall_ms_per_step: f64,
    pub total_wall_ms: f64,
}

impl ComputeReport {
    pub fn from_record(record: &RunRecord) -> Self {
        let steps = record.calls_per_step.len().max(1) as f64;
        let total_calls = record.total_calls();
        let total_wall_ms = record.total_wall().as_secs_f64() * 1e3;
        ComputeReport {
            calls_per_step: total_calls as f64 / steps,
            total_calls,
            wall_ms_per_step: total_wall_ms / steps,
            total_wall_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub no_seam: f64,
    pub seam: f64,
}

/// Linear-interpolated percentile of unsorted data, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Seam-ratio thresholds from two populations measured at the same boundaries.
///
/// `no_seam` is the 99th percentile over seam-free panoramas, `seam` the 1st
/// percentile over disjoint static tilings. Fails unless `no_seam < seam`.
pub fn threshold_calibration(
    seam_free: &[PanoramaLatent],
    disjoint: &[PanoramaLatent],
    boundaries: &BTreeSet<usize>,
) -> Result<Thresholds> {
    if seam_free.len() < MIN_CALIBRATION_RUNS || disjoint.len() < MIN_CALIBRATION_RUNS {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least {MIN_CALIBRATION_RUNS} runs per population, got {} and {}",
            seam_free.len(),
            disjoint.len()
        )));
    }
    let ratios = |ps: &[PanoramaLatent]| -> Result<Vec<f64>> {
        ps.iter()
            .map(|p| Ok(seam_energy(p, boundaries)?.ratio.unwrap_or(f64::NAN)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().filter(|r| r.is_finite()).collect())
    };
    let (free, seamy) = (ratios(seam_free)?, ratios(disjoint)?);
    if free.is_empty() || seamy.is_empty() {
        return Err(Error::CalibrationFailed {
            no_seam: f64::NAN,
            seam: f64::NAN,
        });
    }
    let t = Thresholds {
        no_seam: percentile(&free, 99.0),
        seam: percentile(&seamy, 1.0),
    };
    if t.no_seam < t.seam {
        Ok(t)
    } else {
        Err(Error::CalibrationFailed {
            no_seam: t.no_seam,
            seam: t.seam,
        })
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MetricsRow {
    pub strategy: String,
    pub panorama_width: usize,
    pub window_width: usize,
    pub stride: usize,
    pub steps: usize,
    pub seed: u64,
    pub calls_per_step: f64,
    pub total_calls: usize,
    pub wall_ms: f64,
    pub boundary_energy: Option<f64>,
    pub interior_energy: Option<f64>,
    pub ratio: Option<f64>,
    pub coverage_p: Option<f64>,
    pub config_digest: String,
}

pub const CSV_HEADER: [&str; 14] = [
    "strategy",
    "W_prime",
    "W",
    "stride",
    "T",
    "seed",
    "calls_per_step",
    "total_calls",
    "wall_ms",
    "boundary_energy",
    "interior_energy",
    "ratio",
    "coverage_p",
    "config_digest",
];

/// Seam, coverage and compute summary of one run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub seam: Option<SeamReport>,
    pub coverage: Option<CoverageReport>,
    pub compute: ComputeReport,
}

impl RunMetrics {
    pub fn from_record(record: &RunRecord) -> Result<Self> {
        let cfg = &record.config;
        let seam = record
            .seam_boundaries()
            .map(|b| seam_energy(&record.final_latent, &b))
            .transpose()?;
        let coverage = match cfg.strategy {
            crate::samplers::Strategy::SpotDiffusion => {
                Some(coverage_report(&record.shifts, cfg.panorama_width, cfg.window_width)?)
            }
            _ => None,
        };
        Ok(RunMetrics {
            seam,
            coverage,
            compute: ComputeReport::from_record(record),
        })
    }

    pub fn row(&self, record: &RunRecord, config_digest: &str) -> MetricsRow {
        let cfg = &record.config;
        MetricsRow {
            strategy: cfg.strategy.name().to_string(),
            panorama_width: cfg.panorama_width,
            window_width: cfg.window_width,
            stride: cfg.effective_stride(),
            steps: cfg.steps,
            seed: cfg.seed,
            calls_per_step: self.compute.calls_per_step,
            total_calls: self.compute.total_calls,
            wall_ms: self.compute.total_wall_ms,
            boundary_energy: self.seam.as_ref().map(|s| s.boundary_energy),
            interior_energy: self.seam.as_ref().map(|s| s.interior_energy),
            ratio: self.seam.as_ref().and_then(|s| s.ratio),
            coverage_p: self.coverage.as_ref().map(|c| c.p_value),
            config_digest: config_digest.to_string(),
        }
    }
}

/// Writes rows as CSV; the header goes first only when `header` is set.
pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    if header {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Latent;

    #[test]
    fn constant_panorama_has_no_ratio() {
        let p = Latent::new(16, 2, 1, vec![3.0; 32]).unwrap();
        let r = seam_energy(&p, &[0, 4].into()).unwrap();
        assert_eq!((r.boundary_energy, r.interior_energy, r.ratio), (0.0, 0.0, None));
    }

    #[test]
    fn pulse_energy_by_hand() {
        // A pulse of height h on [4, 10): the cyclic difference is +h at
        // column 4 and -h at column 10, zero everywhere else.
        let h = 1.5;
        let p = Latent::from_fn(16, 3, 2, |_, c, _| if (4..10).contains(&c) { h } else { 0.0 }).unwrap();
        let r = seam_energy(&p, &[4, 10, 12].into()).unwrap();
        assert!((r.boundary_energy - 2.0 * h * h / 3.0).abs() < 1e-15);
        assert_eq!(r.interior_energy, 0.0);
        assert_eq!(r.ratio, None);

        let r = seam_energy(&p, &[4].into()).unwrap();
        assert_eq!(r.boundary_energy, h * h);
        assert!((r.interior_energy - h * h / 15.0).abs() < 1e-15);
        assert!((r.ratio.unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boundary_sets() {
        let p = Latent::zeros(4, 1, 1).unwrap();
        assert!(seam_energy(&p, &BTreeSet::new()).is_err());
        assert!(seam_energy(&p, &(0..4).collect()).is_err());
        assert!(seam_energy(&p, &[7].into()).is_err());
    }

    #[test]
    fn zero_shifts_concentrate() {
        let r = coverage_report(&[0; 100], 256, 64).unwrap();
        assert_eq!(r.counts.iter().sum::<u64>(), 400);
        for col in 0..256 {
            assert_eq!(r.counts[col], if col % 64 == 0 { 100 } else { 0 });
        }
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn cycling_shifts_are_exactly_uniform() {
        let shifts: Vec<usize> = (0..640).map(|i| i % 64).collect();
        let r = coverage_report(&shifts, 256, 64).unwrap();
        assert!(r.counts.iter().all(|&c| c == 10));
        assert_eq!(r.chi_square, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert!((percentile(&v, 99.0) - 4.96).abs() < 1e-12);
    }

    #[test]
    fn calibration_needs_enough_runs() {
        let p = Latent::zeros(8, 1, 1).unwrap();
        let few = vec![p; 3];
        assert!(matches!(
            threshold_calibration(&few, &few, &[4].into()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let row = MetricsRow {
            strategy: "spotdiffusion".into(),
            panorama_width: 256,
            window_width: 64,
            stride: 64,
            steps: 50,
            seed: 7,
            calls_per_step: 4.0,
            total_calls: 200,
            wall_ms: 1.5,
            boundary_energy: Some(0.25),
            interior_energy: Some(0.5),
            ratio: Some(0.5),
            coverage_p: None,
            config_digest: "abc".into(),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row], true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "strategy,W_prime,W,stride,T,seed,calls_per_step,total_calls,wall_ms,boundary_energy,\
             interior_energy,ratio,coverage_p,config_digest\n\
             spotdiffusion,256,64,64,50,7,4.0,200,1.5,0.25,0.5,0.5,,abc\n"
        );
    }
}
