//! The noise-prediction contract and its backends.
//!
//! Every pipeline talks to a [`Denoiser`]; it never knows whether the
//! prediction comes from a closed form, a constant, or another process.

mod analytic;
pub mod remote;
pub mod wire;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

pub use analytic::{
    analytic_correlated_eps, analytic_iid_eps, exp_decay_covariance, CorrelatedGaussianDenoiser, DataMean,
    DataVariance, GaussianDataModel, IidGaussianDenoiser, MAX_DENSE_DIM,
};
pub use remote::RemoteDenoiser;

use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};
use crate::schedule::VarianceSchedule;

#[derive(Debug, Clone, Copy)]
pub struct DenoiseRequest<'a> {
    pub latent: &'a Latent,
    pub t: usize,
    /// Passed through untouched; only remote backends look at it.
    pub condition: &'a str,
    pub request_id: u64,
}

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// Shape every request must have, if the backend is fixed-size.
    fn patch_shape(&self) -> Option<Shape> {
        None
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, sched: &VarianceSchedule) -> Result<Latent>;
}

/// Validates `req` against the schedule and the backend, runs it, and checks
/// the returned tensor.
pub fn predict_noise(backend: &dyn Denoiser, req: &DenoiseRequest<'_>, sched: &VarianceSchedule) -> Result<Latent> {
    sched.check_step(req.t)?;
    if let Some(shape) = backend.patch_shape() {
        if req.latent.shape() != shape {
            return Err(CutError::Capacity(format!(
                "backend `{}` accepts {shape} latents, got {}",
                backend.name(),
                req.latent.shape()
            )));
        }
    }
    let eps = backend.predict_noise(req, sched)?;
    if eps.shape() != req.latent.shape() {
        return Err(CutError::Protocol(format!(
            "request {}: backend returned {} for a {} input",
            req.request_id,
            eps.shape(),
            req.latent.shape()
        )));
    }
    Ok(eps)
}

/// Always predicts zero noise.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullDenoiser;

impl Denoiser for NullDenoiser {
    fn name(&self) -> &str {
        "zero"
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, _: &VarianceSchedule) -> Result<Latent> {
        Ok(Latent::zeros(req.latent.shape()))
    }
}

/// Counts invocations and the largest input seen, independent of any report
/// the pipeline produces.
pub struct CountingDenoiser<'a> {
    inner: &'a dyn Denoiser,
    calls: AtomicU64,
    max_cells: AtomicUsize,
}

impl<'a> CountingDenoiser<'a> {
    pub fn new(inner: &'a dyn Denoiser) -> Self {
        CountingDenoiser {
            inner,
            calls: AtomicU64::new(0),
            max_cells: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_cells(&self) -> usize {
        self.max_cells.load(Ordering::SeqCst)
    }
}

impl Denoiser for CountingDenoiser<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn patch_shape(&self) -> Option<Shape> {
        self.inner.patch_shape()
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, sched: &VarianceSchedule) -> Result<Latent> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.max_cells.fetch_max(req.latent.shape().len(), Ordering::SeqCst);
        self.inner.predict_noise(req, sched)
    }
}
