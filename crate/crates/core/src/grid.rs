//! Latent grids and the cyclic column primitives used by the samplers.
//!
//! Values are stored row-major with channels interleaved: the sample at
//! `(row, col, channel)` lives at `(row * width + col) * channels + channel`.
//! Only the width axis is ever shifted, cropped or concatenated; height is
//! carried along untouched.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// A `width × height × channels` real grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
    /// Timestep the grid belongs to. Bookkeeping only, never read by the math.
    pub timestep_tag: usize,
}

/// The full panorama being denoised.
pub type PanoramaLatent = Latent;
/// A window cropped out of a panorama; same layout, narrower width.
pub type WindowLatent = Latent;

impl Latent {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "latent dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(Error::shape(
                format!("{expected} values"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Latent {
            width,
            height,
            channels,
            values,
            timestep_tag: 0,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    values.push(f(row, col, ch));
                }
            }
        }
        Self::new(width, height, channels, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[self.index(row, col, ch)]
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn ensure_same_shape(&self, other: &Latent) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    /// Builds a latent with the same shape from already-validated values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = Latent::new(self.width, self.height, self.channels, values)?;
        out.timestep_tag = self.timestep_tag;
        Ok(out)
    }

    /// One column, as `height * channels` values in row-major order.
    pub fn column(&self, col: usize) -> Vec<f64> {
        let c = self.channels;
        (0..self.height)
            .flat_map(|row| {
                let start = self.index(row, col, 0);
                self.values[start..start + c].iter().copied()
            })
            .collect()
    }

    /// Cyclic translation along width: output column `x` is input column
    /// `(x - shift) mod width`.
    pub fn translate(&self, shift: i64) -> Latent {
        let w = self.width as i64;
        let s = shift.rem_euclid(w) as usize;
        if s == 0 {
            return self.clone();
        }
        let row_len = self.width * self.channels;
        let split = (self.width - s) * self.channels;
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks_exact(row_len) {
            // out[0..s] = in[w-s..w], out[s..w] = in[0..w-s]
            values.extend_from_slice(&row[split..]);
            values.extend_from_slice(&row[..split]);
        }
        Latent {
            values,
            ..self.shallow_meta()
        }
    }

    /// Copies `window_width` columns starting at `offset`, wrapping around the
    /// right edge. The source is left untouched.
    pub fn crop_window(&self, offset: usize, window_width: usize) -> Result<WindowLatent> {
        if window_width > self.width {
            return Err(Error::InvalidWindow {
                window: window_width,
                panorama: self.width,
            });
        }
        if window_width == 0 {
            return Err(Error::InvalidArgument("window width must be positive".into()));
        }
        let c = self.channels;
        let mut values = Vec::with_capacity(window_width * self.height * c);
        for row in 0..self.height {
            for k in 0..window_width {
                let col = (offset + k) % self.width;
                let start = self.index(row, col, 0);
                values.extend_from_slice(&self.values[start..start + c]);
            }
        }
        Ok(Latent {
            width: window_width,
            height: self.height,
            channels: c,
            values,
            timestep_tag: self.timestep_tag,
        })
    }

    /// Abuts windows left to right into one panorama.
    pub fn concat_windows(windows: &[WindowLatent]) -> Result<PanoramaLatent> {
        let first = windows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot concatenate zero windows".into()))?;
        let (h, c) = (first.height, first.channels);
        for w in windows {
            if w.height != h || w.channels != c {
                return Err(Error::shape(
                    format!("height {h}, channels {c}"),
                    format!("height {}, channels {}", w.height, w.channels),
                ));
            }
        }
        let width: usize = windows.iter().map(|w| w.width).sum();
        let mut values = Vec::with_capacity(width * h * c);
        for row in 0..h {
            for w in windows {
                let row_len = w.width * c;
                values.extend_from_slice(&w.values[row * row_len..(row + 1) * row_len]);
            }
        }
        Ok(Latent {
            width,
            height: h,
            channels: c,
            values,
            timestep_tag: first.timestep_tag,
        })
    }

    fn shallow_meta(&self) -> Latent {
        Latent {
            width: self.width,
            height: self.height,
            channels: self.channels,
            values: Vec::new(),
            timestep_tag: self.timestep_tag,
        }
    }

    /// Values rounded to `f32`, the precision of every on-disk and wire format.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn from_f32(width: usize, height: usize, channels: usize, values: &[f32]) -> Result<Self> {
        Self::new(width, height, channels, values.iter().map(|&v| v as f64).collect())
    }

    /// Writes the raw dump: `PLAT v1 <width> <height> <channels>\n` followed by
    /// little-endian `f32` values in layout order.
    pub fn write_plat<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "PLAT v1 {} {} {}", self.width, self.height, self.channels)?;
        out.write_all(&f32_le_bytes(&self.to_f32_vec()))?;
        out.flush()?;
        Ok(())
    }

    pub fn read_plat<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
        let dims = match fields.as_slice() {
            ["PLAT", "v1", w, h, c] => [w, h, c]
                .iter()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("bad PLAT dimension: {e}")))?,
            _ => return Err(Error::Format(format!("bad PLAT header {header:?}"))),
        };
        let n = dims[0] * dims[1] * dims[2];
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != n * 4 {
            return Err(Error::Format(format!(
                "PLAT payload has {} bytes, expected {}",
                payload.len(),
                n * 4
            )));
        }
        Self::from_f32(dims[0], dims[1], dims[2], &f32_from_le_bytes(&payload))
    }
}

pub(crate) fn f32_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}
