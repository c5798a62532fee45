//! Two-phase patch extrapolation plus the baselines it is measured against.
//!
//! * **cut**: `L1` non-overlapping patches denoised from `T` down to `T' + 1`
//!   with per-coordinate pixel interaction before each step, interleaved into
//!   one canvas, then shifted-window refinement with overlap averaging from
//!   `T'` down to 1.
//! * **multi**: shifted-window refinement over the whole schedule.
//! * **direct**: one full-canvas denoiser call per step.
//!
//! All three start from the same canvas noise, `pixel_relocation` of the
//! seeded patch set, so that the degenerate settings coincide bit for bit.

mod config;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    DenoiserConfig, Precision, RawConfig, RunConfig, DEFAULT_BASE, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};

use crate::denoise::{predict_noise, DenoiseRequest, Denoiser};
use crate::error::{CutError, Result};
use crate::latent::Latent;
use crate::schedule::{ddim_step_with, DdimVariant, VarianceSchedule};
use crate::stats::StatRow;
use crate::tile::{
    extract_tiles, fuse_overlaps, pixel_interaction, pixel_relocation, sample_patchset, PatchSet, TileSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cut,
    Multi,
    Direct,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cut => "cut",
            Method::Multi => "multi",
            Method::Direct => "direct",
        })
    }
}

/// Denoiser-call accounting for one run. Peak residency is measured in
/// patch-equivalents: the largest latent handed to the denoiser, divided by
/// the base patch size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub label: String,
    pub method: Method,
    pub phase1_patches: u64,
    pub phase2_patches: u64,
    pub phase1_calls: u64,
    pub phase2_calls: u64,
    pub total_calls: u64,
    pub peak_resident_latents: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub latent: Latent,
    pub report: CostReport,
    /// Cut only: the patch set at the phase boundary and its interleaved canvas.
    pub boundary_patches: Option<PatchSet>,
    pub boundary: Option<Latent>,
}

/// Execution settings that must not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// Worker threads; 0 uses the machine default.
    pub threads: usize,
}

struct Engine<'a> {
    cfg: &'a RunConfig,
    sched: VarianceSchedule,
    variant: DdimVariant,
    backend: &'a dyn Denoiser,
    pool: rayon::ThreadPool,
    next_request: u64,
    calls: u64,
    peak_cells: usize,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a RunConfig, backend: &'a dyn Denoiser, opts: ExecOptions) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| CutError::config("threads", e.to_string()))?;
        Ok(Engine {
            cfg,
            sched: cfg.schedule()?,
            variant: cfg.ddim_variant(),
            backend,
            pool,
            next_request: 0,
            calls: 0,
            peak_cells: 0,
        })
    }

    fn initial_patches(&self) -> Result<PatchSet> {
        sample_patchset(
            self.cfg.seed,
            self.cfg.target[0],
            self.cfg.target[1],
            self.cfg.patch_shape(),
        )
    }

    /// One reverse step on every latent; calls may run concurrently.
    fn step_all(&mut self, latents: &[Latent], t: usize, phase: &'static str) -> Result<Vec<Latent>> {
        let base_id = self.next_request;
        self.next_request += latents.len() as u64;
        self.calls += latents.len() as u64;
        if let Some(max) = latents.iter().map(|z| z.shape().len()).max() {
            self.peak_cells = self.peak_cells.max(max);
        }
        let (backend, sched, variant) = (self.backend, &self.sched, self.variant);
        let condition = self.cfg.condition.as_str();
        let f32_state = self.cfg.precision == Precision::F32;
        self.pool.install(|| {
            latents
                .par_iter()
                .enumerate()
                .map(|(i, z)| {
                    let req = DenoiseRequest {
                        latent: z,
                        t,
                        condition,
                        request_id: base_id + i as u64,
                    };
                    let wrap = |e| CutError::Backend {
                        phase,
                        t,
                        patch: i,
                        source: Box::new(e),
                    };
                    let eps = predict_noise(backend, &req, sched).map_err(wrap)?;
                    let next = ddim_step_with(z, &eps, t, sched, variant)?;
                    Ok(if f32_state { next.map(|v| v as f32 as f64) } else { next })
                })
                .collect()
        })
    }

    fn refine(&mut self, mut canvas: Latent, from: usize, spec: &TileSpec) -> Result<Latent> {
        for t in (1..=from).rev() {
            let tiles = extract_tiles(&canvas, spec)?;
            let tiles = self.step_all(&tiles, t, "refinement")?;
            canvas = fuse_overlaps(&tiles, spec)?;
            if self.cfg.precision == Precision::F32 {
                canvas = canvas.map(|v| v as f32 as f64);
            }
        }
        Ok(canvas)
    }

    fn report(&self, method: Method, phase1_patches: u64, phase2_patches: u64, phase1_calls: u64) -> CostReport {
        let patch_cells = self.cfg.patch_shape().len();
        CostReport {
            label: String::new(),
            method,
            phase1_patches,
            phase2_patches,
            phase1_calls,
            phase2_calls: self.calls - phase1_calls,
            total_calls: self.calls,
            peak_resident_latents: self.peak_cells.div_ceil(patch_cells) as u64,
        }
    }
}

pub fn run_cutdiffusion(cfg: &RunConfig, backend: &dyn Denoiser, opts: ExecOptions) -> Result<RunOutput> {
    let mut eng = Engine::new(cfg, backend, opts)?;
    let spec = cfg.tiling()?;
    let mut ps = eng.initial_patches()?;
    if cfg.copy_mode {
        ps.replicate_first();
    }
    let l1 = ps.len() as u64;
    for t in (cfg.t_prime + 1..=cfg.steps).rev() {
        if cfg.interaction_enabled() && (cfg.steps - t).is_multiple_of(cfg.interaction_interval) {
            ps = pixel_interaction(&ps, cfg.seed, t);
        }
        let (hs, ws) = ps.scales();
        let next = eng.step_all(ps.patches(), t, "structure")?;
        ps = PatchSet::new(next, hs, ws)?;
    }
    let phase1_calls = eng.calls;
    let boundary = pixel_relocation(&ps);
    let latent = eng.refine(boundary.clone(), cfg.t_prime, &spec)?;
    let mut report = eng.report(Method::Cut, l1, spec.len() as u64, phase1_calls);
    report.label = format!("cut-t{}", cfg.t_prime);
    Ok(RunOutput {
        latent,
        report,
        boundary_patches: Some(ps),
        boundary: Some(boundary),
    })
}

pub fn run_multidiffusion_baseline(cfg: &RunConfig, backend: &dyn Denoiser, opts: ExecOptions) -> Result<RunOutput> {
    let mut eng = Engine::new(cfg, backend, opts)?;
    let spec = cfg.tiling()?;
    let canvas = pixel_relocation(&eng.initial_patches()?);
    let latent = eng.refine(canvas, cfg.steps, &spec)?;
    let mut report = eng.report(Method::Multi, 0, spec.len() as u64, 0);
    report.label = "multi".into();
    Ok(RunOutput {
        latent,
        report,
        boundary_patches: None,
        boundary: None,
    })
}

pub fn run_direct(cfg: &RunConfig, backend: &dyn Denoiser, opts: ExecOptions) -> Result<RunOutput> {
    let mut eng = Engine::new(cfg, backend, opts)?;
    let mut canvas = pixel_relocation(&eng.initial_patches()?);
    for t in (1..=cfg.steps).rev() {
        canvas = eng.step_all(std::slice::from_ref(&canvas), t, "direct")?.remove(0);
    }
    let mut report = eng.report(Method::Direct, 0, 1, 0);
    report.label = "direct".into();
    Ok(RunOutput {
        latent: canvas,
        report,
        boundary_patches: None,
        boundary: None,
    })
}

pub fn run(method: Method, cfg: &RunConfig, backend: &dyn Denoiser, opts: ExecOptions) -> Result<RunOutput> {
    match method {
        Method::Cut => run_cutdiffusion(cfg, backend, opts),
        Method::Multi => run_multidiffusion_baseline(cfg, backend, opts),
        Method::Direct => run_direct(cfg, backend, opts),
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub t_prime: usize,
    pub output: RunOutput,
    pub boundary_stats: StatRow,
    pub final_stats: StatRow,
}

/// One cut run per `T'`, sharing the seed and every other setting.
pub fn run_ablation_sweep(
    cfg: &RunConfig,
    backend: &dyn Denoiser,
    t_primes: &[usize],
    opts: ExecOptions,
) -> Result<Vec<AblationRun>> {
    let scales = cfg.scales()?;
    t_primes
        .iter()
        .map(|&t_prime| {
            let mut c = cfg.clone();
            c.t_prime = t_prime;
            c.validate()?;
            let output = run_cutdiffusion(&c, backend, opts)?;
            let boundary = output.boundary.as_ref().expect("cut run has a boundary");
            let boundary_stats = StatRow::build(
                format!("{}-boundary", output.report.label),
                boundary,
                scales,
                output.boundary_patches.as_ref(),
                None,
            )?;
            let final_stats = StatRow::build(
                format!("{}-final", output.report.label),
                &output.latent,
                scales,
                None,
                None,
            )?;
            Ok(AblationRun {
                t_prime,
                output,
                boundary_stats,
                final_stats,
            })
        })
        .collect()
}
