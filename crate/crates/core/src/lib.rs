//! Tiled diffusion sampling over wide latent panoramas.
//!
//! The crate denoises a `W' × H × C` panorama with a base denoiser that only
//! ever sees `W`-wide windows. Two tiling strategies are provided:
//! MultiDiffusion, which averages noise predictions from overlapping windows,
//! and SpotDiffusion, which denoises disjoint windows but moves the tiling by
//! a random cyclic shift every step so no seam stays in place.
//!
//! An analytic Gaussian denoiser with a closed-form Bayes posterior stands in
//! for a trained model, which makes seams, call counts and equivalences
//! measurable without any network.

pub mod cli;
pub mod denoisers;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod planner;
pub mod samplers;
pub mod schedule;

pub use error::{Error, Result};
pub use grid::{Latent, PanoramaLatent, WindowLatent};
