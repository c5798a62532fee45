use cutdiffusion::denoise::{CountingDenoiser, Denoiser, NullDenoiser};
use cutdiffusion::pipeline::{
    run, run_ablation_sweep, run_cutdiffusion, run_direct, run_multidiffusion_baseline, DenoiserConfig, ExecOptions,
    Method, Precision, RunConfig,
};
use cutdiffusion::stats::{duplicated_block_fraction, emit_cost_table};
use cutdiffusion::verify::interaction_coupling;
use cutdiffusion::{Latent, Shape};
use proptest::prelude::*;

fn bits(z: &Latent) -> Vec<u64> {
    z.to_bits()
}

fn corr_config(base: Shape, scale: (usize, usize), seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(base, base.h * scale.0, base.w * scale.1).unwrap();
    cfg.steps = 12;
    cfg.t_prime = 6;
    cfg.seed = seed;
    cfg.denoiser = DenoiserConfig::GaussCorr {
        mean: 0.2,
        variance: 0.6,
        length: 1.5,
    };
    cfg
}

fn exec(threads: usize) -> ExecOptions {
    ExecOptions { threads }
}

#[test]
fn t_prime_equal_steps_is_multidiffusion_under_correlated_prior() {
    for seed in [0, 1, 99] {
        let mut cfg = corr_config(Shape::new(8, 8, 1), (2, 3), seed);
        cfg.t_prime = cfg.steps;
        let backend = cfg.build_denoiser().unwrap();
        let cut = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
        let multi = run_multidiffusion_baseline(&cfg, backend.as_ref(), exec(0)).unwrap();
        assert_eq!(bits(&cut.latent), bits(&multi.latent));
        assert_eq!(cut.report.phase1_calls, 0);
        assert_eq!(cut.report.total_calls, multi.report.total_calls);
    }
}

#[test]
fn unit_scale_collapses_all_methods() {
    for denoiser in [
        DenoiserConfig::GaussIid {
            mean: -0.3,
            variance: 2.0,
        },
        DenoiserConfig::GaussCorr {
            mean: 0.1,
            variance: 0.5,
            length: 2.0,
        },
    ] {
        let mut cfg = RunConfig::new(Shape::new(8, 8, 2), 8, 8).unwrap();
        cfg.steps = 10;
        cfg.t_prime = 4;
        cfg.denoiser = denoiser;
        let backend = cfg.build_denoiser().unwrap();
        let outs: Vec<Latent> = [Method::Cut, Method::Multi, Method::Direct]
            .into_iter()
            .map(|m| run(m, &cfg, backend.as_ref(), exec(0)).unwrap().latent)
            .collect();
        assert_eq!(bits(&outs[0]), bits(&outs[1]));
        assert_eq!(bits(&outs[0]), bits(&outs[2]));
    }
}

#[test]
fn direct_at_unit_scale_calls_once_per_step() {
    let cfg = RunConfig::new(Shape::new(8, 8, 1), 8, 8).unwrap();
    let counter = CountingDenoiser::new(&NullDenoiser);
    let out = run_direct(&cfg, &counter, exec(0)).unwrap();
    assert_eq!(out.report.total_calls, 50);
    assert_eq!(counter.calls(), 50);
}

#[test]
fn default_cost_table() {
    let base = Shape::new(128, 128, 4);
    let cfg = RunConfig::new(base, 256, 256).unwrap();
    let mut reports = Vec::new();
    for m in [Method::Cut, Method::Multi, Method::Direct] {
        let counter = CountingDenoiser::new(&NullDenoiser);
        let out = run(m, &cfg, &counter, exec(0)).unwrap();
        assert_eq!(out.report.total_calls, counter.calls());
        reports.push(out.report);
    }
    assert_eq!(reports[0].total_calls, 325);
    assert_eq!((reports[0].phase1_patches, reports[0].phase2_patches), (4, 9));
    assert_eq!(reports[1].total_calls, 450);
    assert_eq!(reports[2].total_calls, 50);
    assert_eq!(reports[0].peak_resident_latents, 1);
    assert_eq!(reports[1].peak_resident_latents, 1);
    assert_eq!(reports[2].peak_resident_latents, 4);
    let table = emit_cost_table(&reports);
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(1).unwrap().ends_with(",325,1"), "{table}");
}

#[test]
fn direct_peak_at_three_times_is_nine_patches() {
    let cfg = RunConfig::new(Shape::new(8, 8, 1), 24, 24).unwrap();
    let counter = CountingDenoiser::new(&NullDenoiser);
    let direct = run_direct(&cfg, &counter, exec(0)).unwrap();
    let cut = run_cutdiffusion(&cfg, &NullDenoiser, exec(0)).unwrap();
    assert_eq!(direct.report.peak_resident_latents, 9);
    assert_eq!(cut.report.peak_resident_latents, 1);
    assert_eq!(counter.max_cells(), 24 * 24);
}

#[test]
fn worker_count_never_changes_bits() {
    let cfg = corr_config(Shape::new(8, 8, 2), (3, 2), 5);
    let backend = cfg.build_denoiser().unwrap();
    let reference = run_cutdiffusion(&cfg, backend.as_ref(), exec(1)).unwrap();
    for threads in [2, 3, 4, 8] {
        let out = run_cutdiffusion(&cfg, backend.as_ref(), exec(threads)).unwrap();
        assert_eq!(bits(&out.latent), bits(&reference.latent), "threads={threads}");
        assert_eq!(out.report, reference.report);
    }
}

#[test]
fn copy_mode_boundary_is_fully_duplicated() {
    for seed in 0..5 {
        let mut cfg = corr_config(Shape::new(8, 8, 1), (2, 2), seed);
        cfg.copy_mode = true;
        let backend = cfg.build_denoiser().unwrap();
        let out = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
        let b = out.boundary.unwrap();
        assert_eq!(duplicated_block_fraction(&b, 2, 2).unwrap(), 1.0);
        cfg.copy_mode = false;
        let out = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
        assert_eq!(duplicated_block_fraction(&out.boundary.unwrap(), 2, 2).unwrap(), 0.0);
    }
}

#[test]
fn interaction_changes_the_boundary_under_a_correlated_prior() {
    let cfg = corr_config(Shape::new(8, 8, 1), (2, 2), 3);
    let backend = cfg.build_denoiser().unwrap();
    let on = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
    let mut off_cfg = cfg.clone();
    off_cfg.no_interaction = true;
    let off = run_cutdiffusion(&off_cfg, backend.as_ref(), exec(0)).unwrap();
    assert_ne!(
        bits(on.boundary.as_ref().unwrap()),
        bits(off.boundary.as_ref().unwrap())
    );
}

#[test]
fn interval_larger_than_phase_one_matches_single_interaction() {
    // interval k interacts at steps T, T-k, ...; with k >= T - T' only step T remains
    let cfg = corr_config(Shape::new(8, 8, 1), (2, 1), 4);
    let backend = cfg.build_denoiser().unwrap();
    let mut a = cfg.clone();
    a.interaction_interval = cfg.steps - cfg.t_prime;
    let mut b = cfg.clone();
    b.interaction_interval = cfg.steps;
    let za = run_cutdiffusion(&a, backend.as_ref(), exec(0)).unwrap();
    let zb = run_cutdiffusion(&b, backend.as_ref(), exec(0)).unwrap();
    assert_eq!(bits(&za.latent), bits(&zb.latent));
}

#[test]
fn null_backend_telescopes_for_every_method() {
    let mut cfg = RunConfig::new(Shape::new(4, 4, 3), 8, 12).unwrap();
    cfg.steps = 20;
    cfg.t_prime = 7;
    let k = 1.0 / cfg.schedule().unwrap().alpha_bar(20).sqrt();
    let mut full = cfg.clone();
    full.t_prime = 20;
    let init: Vec<f64> = run_cutdiffusion(&full, &NullDenoiser, exec(0))
        .unwrap()
        .latent
        .as_slice()
        .iter()
        .map(|v| v / k)
        .collect();
    let close = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - k * y).abs() <= 1e-8 * (k * y).abs().max(1.0))
    };
    let mut quiet = cfg.clone();
    quiet.no_interaction = true;
    for m in [Method::Cut, Method::Multi, Method::Direct] {
        let out = run(m, &quiet, &NullDenoiser, exec(0)).unwrap();
        assert!(close(out.latent.as_slice(), &init), "{m}");
    }
    // interaction only permutes values, so the multiset still telescopes
    let mut got = run_cutdiffusion(&cfg, &NullDenoiser, exec(0))
        .unwrap()
        .latent
        .into_vec();
    let mut want = init.clone();
    got.sort_by(f64::total_cmp);
    want.sort_by(f64::total_cmp);
    assert!(close(&got, &want));
}

#[test]
fn verbatim_variant_differs_and_ends_elsewhere() {
    let mut cfg = RunConfig::new(Shape::new(4, 4, 1), 8, 8).unwrap();
    cfg.steps = 10;
    cfg.t_prime = 5;
    let backend = cfg.build_denoiser().unwrap();
    let std_out = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
    cfg.eq1_verbatim = true;
    let verb = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
    assert_ne!(bits(&std_out.latent), bits(&verb.latent));
}

#[test]
fn f32_precision_rounds_every_value() {
    let mut cfg = corr_config(Shape::new(8, 8, 1), (2, 2), 8);
    cfg.precision = Precision::F32;
    let backend = cfg.build_denoiser().unwrap();
    let out = run_cutdiffusion(&cfg, backend.as_ref(), exec(0)).unwrap();
    assert!(out.latent.as_slice().iter().all(|&v| v == f64::from(v as f32)));
}

#[test]
fn ablation_sweep_shares_the_seed() {
    let mut cfg = corr_config(Shape::new(8, 8, 1), (2, 2), 13);
    cfg.steps = 10;
    let backend = cfg.build_denoiser().unwrap();
    let runs = run_ablation_sweep(&cfg, backend.as_ref(), &[1, 5, 10], exec(0)).unwrap();
    assert_eq!(runs.len(), 3);
    assert_eq!(runs[0].output.report.total_calls, 4 * 9 + 9);
    assert_eq!(runs[2].output.report.phase1_calls, 0);
    let multi = run_multidiffusion_baseline(&cfg, backend.as_ref(), exec(0)).unwrap();
    assert_eq!(bits(&runs[2].output.latent), bits(&multi.latent));
    assert_eq!(runs[1].boundary_stats.count, 16 * 16);
}

#[test]
fn shape_mismatch_from_backend_is_reported() {
    struct Wrong;
    impl Denoiser for Wrong {
        fn name(&self) -> &str {
            "wrong"
        }
        fn predict_noise(
            &self,
            r: &cutdiffusion::denoise::DenoiseRequest<'_>,
            _: &cutdiffusion::VarianceSchedule,
        ) -> cutdiffusion::Result<Latent> {
            let s = r.latent.shape();
            Ok(Latent::zeros(Shape::new(s.h, s.w + 1, s.c)))
        }
    }
    let cfg = RunConfig::new(Shape::new(4, 4, 1), 8, 8).unwrap();
    let err = run_cutdiffusion(&cfg, &Wrong, exec(0)).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn interaction_couples_patches() {
    let (on, on_se) = interaction_coupling(true, 0..200).unwrap();
    let (off, off_se) = interaction_coupling(false, 0..200).unwrap();
    assert!(off.abs() < 3.0 * off_se, "off {off} ± {off_se}");
    assert!(on > 3.0 * on_se, "on {on} ± {on_se}");
    assert!(on - off > 3.0 * (on_se * on_se + off_se * off_se).sqrt());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counted_calls_follow_the_cost_formula(
        ph in 1usize..4, pw in 1usize..4, sh in 1usize..4, sw in 1usize..4, steps in 2usize..8, tp_frac in 0.0f64..1.0
    ) {
        let base = Shape::new(2 * ph, 2 * pw, 1);
        let mut cfg = RunConfig::new(base, base.h * sh, base.w * sw).unwrap();
        cfg.steps = steps;
        cfg.t_prime = 1 + ((steps - 1) as f64 * tp_frac) as usize;
        let l1 = (sh * sw) as u64;
        let l = ((2 * sh - 1) * (2 * sw - 1)) as u64;
        let counter = CountingDenoiser::new(&NullDenoiser);
        let out = run_cutdiffusion(&cfg, &counter, exec(0)).unwrap();
        let (t, tp) = (steps as u64, cfg.t_prime as u64);
        prop_assert_eq!(out.report.phase1_calls, l1 * (t - tp));
        prop_assert_eq!(out.report.phase2_calls, l * tp);
        prop_assert_eq!(out.report.total_calls, counter.calls());
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), threads in 1usize..5) {
        let cfg = corr_config(Shape::new(4, 4, 2), (2, 2), seed);
        let backend = cfg.build_denoiser().unwrap();
        let a = run_cutdiffusion(&cfg, backend.as_ref(), exec(1)).unwrap();
        let b = run_cutdiffusion(&cfg, backend.as_ref(), exec(threads)).unwrap();
        prop_assert_eq!(bits(&a.latent), bits(&b.latent));
    }
}
