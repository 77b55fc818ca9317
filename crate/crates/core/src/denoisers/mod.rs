//! Noise predictors standing in for a trained diffusion model.
//!
//! A [`Denoiser`] maps a noisy window at timestep `t` to its predicted noise.
//! The samplers only ever talk to this trait.

mod external;
mod mrf;
pub mod protocol;
mod replay;

use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::grid::WindowLatent;

pub use external::{ExternalDenoiser, DEFAULT_TIMEOUT};
pub use mrf::{AnalyticDenoiser, GaussianMrfPrior, DEFAULT_CORRELATION_LENGTH, JITTER};
pub use replay::{Fixture, FixtureEntry, RecordingDenoiser, ReplayDenoiser};

/// Opaque per-window conditioning label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionId(pub u32);

/// Where a window sits in the current step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowContext {
    pub t: usize,
    /// Original-panorama column of the window's first column.
    pub offset: usize,
    /// Position of the window within the step, in evaluation order.
    pub window_index: usize,
    pub condition: ConditionId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub name: String,
    pub digest: u64,
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:016x}", self.name, self.digest)
    }
}

/// ε-prediction contract. Output shape equals input shape, and the output
/// is a deterministic function of the window values and context.
pub trait Denoiser: Send + Sync {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent>;

    fn descriptor(&self) -> Descriptor;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        (**self).predict_eps(window, ctx)
    }

    fn descriptor(&self) -> Descriptor {
        (**self).descriptor()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        (**self).predict_eps(window, ctx)
    }

    fn descriptor(&self) -> Descriptor {
        (**self).descriptor()
    }
}

/// First eight bytes of SHA-256, little-endian.
pub fn digest_bytes(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    u64::from_le_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Digest of an array as it would be sent on the wire (`f32`, little-endian).
pub fn digest_f32(values: &[f32]) -> u64 {
    digest_bytes(&crate::grid::f32_le_bytes(values))
}
