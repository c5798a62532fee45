//! Acceptance checks shared by `cutdiffusion verify` and the acceptance test
//! target, together with the independent oracles they compare against.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::denoise::{CorrelatedGaussianDenoiser, CountingDenoiser, Denoiser};
use crate::error::{CutError, Result};
use crate::io::{save_latent, Dtype};
use crate::latent::{Latent, Shape};
use crate::pipeline::{
    run_cutdiffusion, run_direct, run_multidiffusion_baseline, DenoiserConfig, ExecOptions, RunConfig, DEFAULT_BASE,
};
use crate::schedule::{ddim_step, VarianceSchedule};
use crate::stats::{correlation, duplicated_block_fraction, ks_critical_1pct, ks_normal, moments};
use crate::tile::{pixel_gather, pixel_interaction, pixel_relocation, sample_patchset, shifted_window_tiles};

pub const EMBEDDED_GOLDEN: &str = include_str!("../fixtures/golden.json");

#[derive(Debug, Clone, Deserialize)]
pub struct DdimTuple {
    pub a_t: f64,
    pub a_prev: f64,
    pub z: f64,
    pub eps: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Golden {
    pub ddim_tuples: Vec<DdimTuple>,
}

impl Golden {
    pub fn embedded() -> Golden {
        serde_json::from_str(EMBEDDED_GOLDEN).expect("embedded golden vectors parse")
    }

    pub fn load(path: &Path) -> Result<Golden> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CutError::Format(format!("{}: {e}", path.display())))
    }
}

/// Per-cell affine map `z_end = gain * z_start + offset` produced by
/// deterministic DDIM under the i.i.d. Gaussian posterior-mean denoiser,
/// evaluated one scalar step at a time without touching the engine.
pub fn iid_ddim_affine_oracle(alphas_cumprod: &[f64], mean: f64, var: f64, from: usize, to: usize) -> (f64, f64) {
    let (mut gain, mut offset) = (1.0f64, 0.0f64);
    for t in (to + 1..=from).rev() {
        let a = alphas_cumprod[t];
        let ap = alphas_cumprod[t - 1];
        // posterior mean = p1 z + p0
        let p1 = a.sqrt() * var / (a * var + 1.0 - a);
        let p0 = (1.0 - a) * mean / (a * var + 1.0 - a);
        // eps = e1 z + e0
        let e1 = (1.0 - a.sqrt() * p1) / (1.0 - a).sqrt();
        let e0 = -a.sqrt() * p0 / (1.0 - a).sqrt();
        // z_prev = sqrt(ap/a) z + (sqrt(1 - ap) - sqrt(ap (1 - a) / a)) eps
        let kz = (ap / a).sqrt();
        let ke = (1.0 - ap).sqrt() - (ap * (1.0 - a) / a).sqrt();
        let step_gain = kz + ke * e1;
        let step_off = ke * e0;
        gain *= step_gain;
        offset = step_gain * offset + step_off;
    }
    (gain, offset)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:<28} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

fn timed(id: &'static str, limit: Option<Duration>, f: impl FnOnce() -> Result<(bool, String)>) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match result {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            passed = false;
            detail = format!("{detail}; exceeded {:.0}s budget", limit.as_secs_f64());
        }
    }
    Outcome {
        id,
        passed,
        detail,
        elapsed,
    }
}

fn iid_config(base: Shape, scale: usize, mean: f64, variance: f64) -> Result<RunConfig> {
    let mut cfg = RunConfig::new(base, base.h * scale, base.w * scale)?;
    cfg.denoiser = DenoiserConfig::GaussIid { mean, variance };
    cfg.seed = 20240415;
    Ok(cfg)
}

pub fn patch_counts() -> Outcome {
    timed("patch-counts", Some(Duration::from_secs(1)), || {
        let tiles = shifted_window_tiles(384, 384, 128, 128, 64, 64)?.len();
        let patches = sample_patchset(0, 384, 384, Shape::new(128, 128, 1))?.len();
        Ok((
            tiles == 25 && patches == 9,
            format!("shifted window {tiles}, non-overlapping {patches}"),
        ))
    })
}

pub fn multidiffusion_special_case() -> Outcome {
    timed("multidiffusion-special-case", Some(Duration::from_secs(30)), || {
        let mut cfg = iid_config(Shape::new(32, 32, 4), 2, 0.3, 0.25)?;
        cfg.t_prime = cfg.steps;
        let backend = cfg.build_denoiser()?;
        let cut = run_cutdiffusion(&cfg, backend.as_ref(), ExecOptions::default())?;
        let multi = run_multidiffusion_baseline(&cfg, backend.as_ref(), ExecOptions::default())?;
        let same = cut.latent.to_bits() == multi.latent.to_bits();
        Ok((
            same,
            format!("T'=T=50, {} values bit-identical: {same}", cut.latent.shape().len()),
        ))
    })
}

pub fn cost_accounting() -> Outcome {
    timed("cost-accounting", None, || {
        let [h, w, c] = DEFAULT_BASE;
        let cfg = iid_config(Shape::new(h, w, c), 2, 0.3, 0.25)?;
        let backend = cfg.build_denoiser()?;
        let c1 = CountingDenoiser::new(backend.as_ref());
        let cut = run_cutdiffusion(&cfg, &c1, ExecOptions::default())?;
        let c2 = CountingDenoiser::new(backend.as_ref());
        let multi = run_multidiffusion_baseline(&cfg, &c2, ExecOptions::default())?;
        let ok = cut.report.phase1_patches == 4
            && cut.report.phase2_patches == 9
            && cut.report.total_calls == 325
            && c1.calls() == 325
            && multi.report.total_calls == 450
            && c2.calls() == 450;
        Ok((
            ok,
            format!(
                "cut {} (counted {}), multi {} (counted {})",
                cut.report.total_calls,
                c1.calls(),
                multi.report.total_calls,
                c2.calls()
            ),
        ))
    })
}

pub fn relocation_bijectivity(trials: usize) -> Outcome {
    timed("relocation-bijectivity", None, || {
        let scales = [1usize, 2, 3];
        let mut failures = 0;
        for i in 0..trials {
            let hs = scales[i % 3];
            let ws = scales[(i / 3) % 3];
            let patch = Shape::new(1 + i % 5, 1 + (i / 5) % 4, 1 + i % 3);
            let ps = sample_patchset(i as u64, patch.h * hs, patch.w * ws, patch)?;
            let back = pixel_gather(&pixel_relocation(&ps), hs, ws)?;
            let exact = back
                .patches()
                .iter()
                .zip(ps.patches())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            failures += usize::from(!exact);
        }
        Ok((
            failures == 0,
            format!("{trials} patch sets over scales {{1,2,3}}^2, {failures} mismatches"),
        ))
    })
}

pub fn interaction_conservation(trials: usize) -> Outcome {
    timed("interaction-conservation", None, || {
        let mut failures = 0;
        for i in 0..trials {
            let l1 = 1 + i % 9;
            let patch = Shape::new(2 + i % 3, 2 + i % 4, 1 + i % 2);
            let ps = sample_patchset(i as u64, patch.h, patch.w * l1, patch)?;
            let out = pixel_interaction(&ps, i as u64, 1 + i % 50);
            'coord: for r in 0..patch.h {
                for c in 0..patch.w {
                    for k in 0..patch.c {
                        let mut a: Vec<u64> = ps.patches().iter().map(|p| p[(r, c, k)].to_bits()).collect();
                        let mut b: Vec<u64> = out.patches().iter().map(|p| p[(r, c, k)].to_bits()).collect();
                        a.sort_unstable();
                        b.sort_unstable();
                        if a != b {
                            failures += 1;
                            break 'coord;
                        }
                    }
                }
            }
        }
        Ok((failures == 0, format!("{trials} seeded trials, {failures} violations")))
    })
}

pub fn oracle_distribution() -> Outcome {
    timed("oracle-distribution", Some(Duration::from_secs(120)), || {
        let (mean, var) = (0.3, 0.25);
        let cfg = iid_config(Shape::new(32, 32, 4), 2, mean, var)?;
        let sched = cfg.schedule()?;
        let (gain, offset) = iid_ddim_affine_oracle(sched.alphas_cumprod(), mean, var, cfg.steps, 0);
        let want_var = gain * gain;
        let backend = cfg.build_denoiser()?;
        let runs = [
            (
                "cut",
                run_cutdiffusion(&cfg, backend.as_ref(), ExecOptions::default())?.latent,
            ),
            (
                "multi",
                run_multidiffusion_baseline(&cfg, backend.as_ref(), ExecOptions::default())?.latent,
            ),
            (
                "direct",
                run_direct(&cfg, backend.as_ref(), ExecOptions::default())?.latent,
            ),
        ];
        let n = runs[0].1.as_slice().len();
        let se = (want_var / n as f64).sqrt();
        let mut ok = n >= 10_000;
        let mut detail = format!("n={n} oracle mean {offset:.6} var {want_var:.6};");
        let mut seen = Vec::new();
        for (name, z) in &runs {
            let (m, v) = moments(z.as_slice())?;
            ok &= (m - offset).abs() <= 3.0 * se && (v / want_var - 1.0).abs() <= 0.10;
            detail.push_str(&format!(" {name} {m:.6}/{v:.6}"));
            seen.push((m, v));
        }
        for i in 0..seen.len() {
            for j in i + 1..seen.len() {
                ok &= (seen[i].0 - seen[j].0).abs() <= 3.0 * se && (seen[i].1 / seen[j].1 - 1.0).abs() <= 0.10;
            }
        }
        Ok((ok, detail))
    })
}

/// Copy-mode and normal boundary canvases with their KS distances against the
/// oracle boundary law.
#[derive(Debug, Clone)]
pub struct CopyModeProbe {
    pub copy_dup: f64,
    pub normal_dup: f64,
    pub copy_ks: f64,
    pub normal_ks: f64,
    pub critical: f64,
}

pub fn copy_mode_probe(seed: u64) -> Result<CopyModeProbe> {
    let (mean, var) = (0.3, 0.25);
    let mut cfg = iid_config(Shape::new(32, 32, 1), 4, mean, var)?;
    cfg.seed = seed;
    let sched = cfg.schedule()?;
    let (gain, offset) = iid_ddim_affine_oracle(sched.alphas_cumprod(), mean, var, cfg.steps, cfg.t_prime);
    let backend = cfg.build_denoiser()?;
    let normal = run_cutdiffusion(&cfg, backend.as_ref(), ExecOptions::default())?;
    cfg.copy_mode = true;
    let copy = run_cutdiffusion(&cfg, backend.as_ref(), ExecOptions::default())?;
    let (hs, ws) = cfg.scales()?;
    let nb = normal.boundary.expect("cut boundary");
    let cb = copy.boundary.expect("cut boundary");
    Ok(CopyModeProbe {
        copy_dup: duplicated_block_fraction(&cb, hs, ws)?,
        normal_dup: duplicated_block_fraction(&nb, hs, ws)?,
        copy_ks: ks_normal(cb.as_slice(), offset, gain.abs())?,
        normal_ks: ks_normal(nb.as_slice(), offset, gain.abs())?,
        critical: ks_critical_1pct(nb.as_slice().len()),
    })
}

pub fn copy_mode_failure() -> Outcome {
    timed("copy-mode-failure", None, || {
        let p = copy_mode_probe(20240415)?;
        let ok = p.copy_dup == 1.0 && p.normal_dup == 0.0 && p.copy_ks > p.critical && p.copy_ks > p.normal_ks;
        Ok((
            ok,
            format!(
                "dup copy {} normal {}; KS copy {:.4} normal {:.4} critical {:.4}",
                p.copy_dup, p.normal_dup, p.copy_ks, p.normal_ks, p.critical
            ),
        ))
    })
}

fn latent_file_bytes(z: &Latent, cfg: &RunConfig, dir: &Path) -> Result<Vec<u8>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("latent.json");
    save_latent(&path, z, Dtype::F64, cfg.seed, &cfg.config_hash())?;
    let mut bytes = std::fs::read(&path)?;
    bytes.extend(std::fs::read(path.with_extension("bin"))?);
    Ok(bytes)
}

pub fn determinism() -> Outcome {
    timed("determinism", None, || {
        let dir = std::env::temp_dir().join(format!("cutdiffusion-verify-{}", std::process::id()));
        let mut cfg = iid_config(Shape::new(16, 16, 2), 3, 0.1, 0.7)?;
        cfg.steps = 20;
        cfg.t_prime = 10;
        let mut corr = cfg.clone();
        corr.denoiser = DenoiserConfig::GaussCorr {
            mean: 0.1,
            variance: 0.7,
            length: 2.0,
        };
        let mut ok = true;
        for (k, cfg) in [cfg, corr].iter().enumerate() {
            let mut files = Vec::new();
            for (i, threads) in [1usize, 4, 1, 4].into_iter().enumerate() {
                let backend = cfg.build_denoiser()?;
                let out = run_cutdiffusion(cfg, backend.as_ref(), ExecOptions { threads })?;
                files.push(latent_file_bytes(
                    &out.latent,
                    cfg,
                    &dir.join(format!("cfg{k}-run{i}")),
                )?);
            }
            ok &= files.windows(2).all(|w| w[0] == w[1]);
        }
        let _ = std::fs::remove_dir_all(&dir);
        Ok((
            ok,
            "gauss-iid and gauss-corr, threads {1, 4} x two runs, latent files byte-identical".to_string(),
        ))
    })
}

pub fn ddim_golden(golden: &Golden) -> Outcome {
    timed("ddim-golden", None, || {
        let mut worst = 0.0f64;
        for g in &golden.ddim_tuples {
            let sched = VarianceSchedule::from_alphas_cumprod(vec![1.0, g.a_prev, g.a_t])?;
            let z = Latent::filled(Shape::new(1, 1, 1), g.z);
            let e = Latent::filled(Shape::new(1, 1, 1), g.eps);
            let got = ddim_step(&z, &e, 2, &sched)?.as_slice()[0];
            worst = worst.max((got - g.expected).abs() / g.expected.abs().max(f64::MIN_POSITIVE));
        }
        let ok = golden.ddim_tuples.len() >= 100 && worst <= 1e-12;
        Ok((
            ok,
            format!("{} tuples, worst relative error {worst:.2e}", golden.ddim_tuples.len()),
        ))
    })
}

/// Mean pairwise patch correlation at the phase boundary over `seeds`, with
/// its standard error, for a two-patch toy under the correlated backend.
/// The toy starts near pure noise (terminal alpha-bar about 0.005) and stops
/// phase 1 at step 10 so the smoothing prior has room to act.
pub fn interaction_coupling(interaction: bool, seeds: std::ops::Range<u64>) -> Result<(f64, f64)> {
    let base = Shape::new(8, 8, 1);
    let mut cfg = RunConfig::new(base, 8, 16)?;
    cfg.beta_end = 0.2;
    cfg.t_prime = 10;
    cfg.no_interaction = !interaction;
    cfg.denoiser = DenoiserConfig::GaussCorr {
        mean: 0.0,
        variance: 1.0,
        length: 2.0,
    };
    let backend: Box<dyn Denoiser> = Box::new(CorrelatedGaussianDenoiser::new(0.0, 1.0, 2.0)?);
    let mut corrs = Vec::new();
    for seed in seeds {
        cfg.seed = seed;
        let out = run_cutdiffusion(&cfg, backend.as_ref(), ExecOptions { threads: 1 })?;
        let ps = out.boundary_patches.expect("cut boundary");
        corrs.push(correlation(ps.patches()[0].as_slice(), ps.patches()[1].as_slice())?);
    }
    let (m, v) = moments(&corrs)?;
    Ok((m, (v / corrs.len() as f64).sqrt()))
}

pub fn run_all(golden: &Golden, quick: bool) -> Vec<Outcome> {
    let trials = if quick { 100 } else { 1000 };
    vec![
        patch_counts(),
        multidiffusion_special_case(),
        cost_accounting(),
        relocation_bijectivity(trials),
        interaction_conservation(trials),
        oracle_distribution(),
        copy_mode_failure(),
        determinism(),
        ddim_golden(golden),
    ]
}
