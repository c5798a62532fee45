//! Two-phase patch diffusion extrapolation.
//!
//! A model trained at one latent size generates a larger canvas in two
//! phases. First, a handful of non-overlapping patches are denoised
//! independently while same-position pixels are randomly exchanged between
//! them, so that they develop a shared structure. The patches are then
//! interleaved into the full canvas and refined with overlapping shifted
//! windows whose predictions are averaged.
//!
//! Denoisers sit behind [`denoise::Denoiser`]; the closed-form Gaussian
//! backends make the whole pipeline checkable against scalar oracles.

pub mod denoise;
pub mod error;
pub mod io;
pub mod latent;
pub mod pipeline;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod tile;
pub mod verify;

pub use error::{CutError, Result};
pub use latent::{Latent, Shape};
pub use pipeline::{
    run, run_ablation_sweep, run_cutdiffusion, run_direct, run_multidiffusion_baseline, CostReport, ExecOptions,
    Method, RunConfig, RunOutput,
};
pub use schedule::{ddim_step, predicted_x0, VarianceSchedule};
