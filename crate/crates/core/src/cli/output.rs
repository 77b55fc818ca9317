//! Run naming and image/table writers.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::grid::Latent;
use crate::metrics::{write_csv, MetricsRow};
use crate::samplers::{SamplerConfig, Strategy};

/// `<strategy>[<stride>]-seed<seed>-<digest prefix>`.
pub fn run_name(cfg: &SamplerConfig, digest: &str) -> String {
    let strategy = match cfg.strategy {
        Strategy::MultiDiffusion => format!("multidiffusion{}", cfg.stride),
        s => s.name().to_string(),
    };
    format!("{strategy}-seed{}-{}", cfg.seed, &digest[..8.min(digest.len())])
}

/// One byte per value; each channel is min-max normalized on its own and
/// channels are stacked as pages, top to bottom.
fn gray_pages(latent: &Latent) -> Vec<u8> {
    let (w, h, c) = (latent.width(), latent.height(), latent.channels());
    let mut out = vec![0u8; w * h * c];
    for ch in 0..c {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for row in 0..h {
            for col in 0..w {
                let v = latent.get(row, col, ch);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let span = hi - lo;
        for row in 0..h {
            for col in 0..w {
                let v = latent.get(row, col, ch);
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                out[(ch * h + row) * w + col] = g as u8;
            }
        }
    }
    out
}

/// Binary PGM with the config digest in a header comment.
pub fn write_pgm(path: &Path, latent: &Latent, digest: &str) -> Result<()> {
    write_montage(path, std::slice::from_ref(latent), digest)
}

/// Panoramas of equal width stacked vertically, separated by one white row.
pub fn write_montage(path: &Path, panels: &[Latent], digest: &str) -> Result<()> {
    let width = panels.first().map_or(0, |p| p.width());
    let mut pixels = Vec::new();
    for (i, p) in panels.iter().enumerate() {
        if i > 0 {
            pixels.extend(std::iter::repeat_n(255u8, width));
        }
        assert_eq!(p.width(), width, "montage panels must share a width");
        pixels.extend(gray_pages(p));
    }
    let height = pixels.len().checked_div(width).unwrap_or(0);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n# spotdiff config {digest}\n{width} {height}\n255\n")?;
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

pub fn write_plat(path: &Path, latent: &Latent) -> Result<()> {
    latent.write_plat(BufWriter::new(File::create(path)?))
}

/// Appends rows to `path`, writing the header only when the file is new or empty.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    write_csv(BufWriter::new(file), rows, fresh)
}
