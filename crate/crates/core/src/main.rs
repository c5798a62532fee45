use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cutdiffusion::denoise::remote;
use cutdiffusion::io::{parse_raw_config, preview_channels, save_image_ppm, save_latent, Dtype};
use cutdiffusion::pipeline::{
    run, run_ablation_sweep, CostReport, DenoiserConfig, ExecOptions, Method, Precision, RawConfig, RunConfig,
    RunOutput,
};
use cutdiffusion::stats::{emit_cost_table, emit_stat_table, StatRow};
use cutdiffusion::verify::{self, Golden};
use cutdiffusion::{CutError, Result};

#[derive(Parser)]
#[command(
    name = "cutdiffusion",
    version,
    about = "Two-phase patch diffusion with analytic denoisers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pipeline and write latent, image, cost and stat files.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = MethodArg::Cut)]
        method: MethodArg,
        /// Print the resolved config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run cut, multi and direct on one config and tabulate their costs.
    Compare {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep the phase boundary and measure interaction coupling.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,25,50")]
        t_primes: Vec<usize>,
        /// Seeds for the interaction on/off Monte-Carlo; 0 skips it.
        #[arg(long, default_value_t = 200)]
        coupling_seeds: u64,
    },
    /// Answer CDN1 frames with a local backend, over TCP or stdio.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        /// Address to listen on; omitted means one session on stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the acceptance suite and exit nonzero on any failure.
    Verify {
        /// Fewer randomized trials.
        #[arg(long)]
        quick: bool,
        /// Golden vector file to check against instead of the embedded copy.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cut,
    Multi,
    Direct,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cut => Method::Cut,
            MethodArg::Multi => Method::Multi,
            MethodArg::Direct => Method::Direct,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DenoiserArg {
    Zero,
    GaussIid,
    GaussCorr,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Patch shape h,w,c.
    #[arg(long, value_parser = dims::<3>)]
    base: Option<[usize; 3]>,
    /// Canvas h,w. Defaults to twice the patch per side.
    #[arg(long, value_parser = dims::<2>)]
    target: Option<[usize; 2]>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    t_prime: Option<usize>,
    /// Tile stride h,w for the refinement phase.
    #[arg(long, value_parser = dims::<2>)]
    stride: Option<[usize; 2]>,
    #[arg(long)]
    beta_start: Option<f64>,
    #[arg(long)]
    beta_end: Option<f64>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, value_enum)]
    denoiser: Option<DenoiserArg>,
    #[arg(long)]
    mean: Option<f64>,
    #[arg(long)]
    variance: Option<f64>,
    #[arg(long)]
    corr_length: Option<f64>,
    /// Remote endpoint: host:port, tcp://host:port or exec:<command>.
    #[arg(long)]
    remote: Option<String>,
    #[arg(long)]
    no_interaction: bool,
    #[arg(long)]
    copy_mode: bool,
    #[arg(long)]
    eq1_verbatim: bool,
    #[arg(long)]
    interaction_interval: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Worker threads; 0 picks the machine default. Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn dims<const N: usize>(s: &str) -> std::result::Result<[usize; N], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<usize>| format!("expected {N} comma-separated values, got {}", v.len()))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut raw = match &self.config {
            Some(path) => parse_raw_config(
                &fs::read_to_string(path)
                    .map_err(|e| CutError::config("config", format!("{}: {e}", path.display())))?,
            )?,
            None => RawConfig::default(),
        };
        raw.base = self.base.or(raw.base);
        raw.target = self.target.or(raw.target);
        if raw.target.is_none() {
            let [h, w, _] = raw.base.unwrap_or(cutdiffusion::pipeline::DEFAULT_BASE);
            raw.target = Some([2 * h, 2 * w]);
        }
        raw.stride = self.stride.or(raw.stride);
        raw.seed = self.seed.or(raw.seed);
        raw.steps = self.steps.or(raw.steps);
        raw.t_prime = self.t_prime.or(raw.t_prime);
        raw.beta_start = self.beta_start.or(raw.beta_start);
        raw.beta_end = self.beta_end.or(raw.beta_end);
        raw.condition = self.condition.clone().or(raw.condition);
        raw.interaction_interval = self.interaction_interval.or(raw.interaction_interval);
        if self.no_interaction {
            raw.no_interaction = Some(true);
        }
        if self.copy_mode {
            raw.copy_mode = Some(true);
        }
        if self.eq1_verbatim {
            raw.eq1_verbatim = Some(true);
        }
        if let Some(p) = self.precision {
            raw.precision = Some(match p {
                PrecisionArg::F64 => Precision::F64,
                PrecisionArg::F32 => Precision::F32,
            });
        }
        raw.denoiser = Some(self.denoiser_config(raw.denoiser.take().unwrap_or_default())?);
        raw.resolve()
    }

    fn denoiser_config(&self, from_file: DenoiserConfig) -> Result<DenoiserConfig> {
        let mut d = match self.denoiser {
            None => from_file,
            Some(kind) => {
                let same = matches!(
                    (kind, &from_file),
                    (DenoiserArg::Zero, DenoiserConfig::Zero)
                        | (DenoiserArg::GaussIid, DenoiserConfig::GaussIid { .. })
                        | (DenoiserArg::GaussCorr, DenoiserConfig::GaussCorr { .. })
                        | (DenoiserArg::Remote, DenoiserConfig::Remote { .. })
                );
                if same {
                    from_file
                } else {
                    match kind {
                        DenoiserArg::Zero => DenoiserConfig::Zero,
                        DenoiserArg::GaussIid => DenoiserConfig::GaussIid {
                            mean: 0.0,
                            variance: 1.0,
                        },
                        DenoiserArg::GaussCorr => DenoiserConfig::GaussCorr {
                            mean: 0.0,
                            variance: 1.0,
                            length: 2.0,
                        },
                        DenoiserArg::Remote => DenoiserConfig::Remote { address: None },
                    }
                }
            }
        };
        let label = d.label();
        let reject = |flag: &str| {
            CutError::config(
                flag.trim_start_matches("--"),
                format!("{flag} does not apply to the {label} denoiser"),
            )
        };
        match &mut d {
            DenoiserConfig::GaussIid { mean, variance } => {
                *mean = self.mean.unwrap_or(*mean);
                *variance = self.variance.unwrap_or(*variance);
                if self.corr_length.is_some() {
                    return Err(reject("--corr-length"));
                }
            }
            DenoiserConfig::GaussCorr { mean, variance, length } => {
                *mean = self.mean.unwrap_or(*mean);
                *variance = self.variance.unwrap_or(*variance);
                *length = self.corr_length.unwrap_or(*length);
            }
            DenoiserConfig::Remote { address } => {
                if self.remote.is_some() {
                    *address = self.remote.clone();
                }
            }
            DenoiserConfig::Zero => {}
        }
        if !matches!(d, DenoiserConfig::GaussIid { .. } | DenoiserConfig::GaussCorr { .. }) {
            if self.mean.is_some() {
                return Err(reject("--mean"));
            }
            if self.variance.is_some() {
                return Err(reject("--variance"));
            }
            if self.corr_length.is_some() {
                return Err(reject("--corr-length"));
            }
        }
        if self.remote.is_some() && !matches!(d, DenoiserConfig::Remote { .. }) {
            return Err(reject("--remote"));
        }
        Ok(d)
    }

    fn exec(&self) -> ExecOptions {
        ExecOptions { threads: self.threads }
    }
}

fn prepare_out_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn latent_dtype(cfg: &RunConfig) -> Dtype {
    match cfg.precision {
        Precision::F64 => Dtype::F64,
        Precision::F32 => Dtype::F32,
    }
}

fn write_latent_and_image(dir: &Path, name: &str, out: &cutdiffusion::Latent, cfg: &RunConfig) -> Result<()> {
    save_latent(
        &dir.join(format!("{name}.json")),
        out,
        latent_dtype(cfg),
        cfg.seed,
        &cfg.config_hash(),
    )?;
    save_image_ppm(&preview_channels(out), &dir.join(format!("{name}.ppm")))
}

fn stat_rows(out: &RunOutput, cfg: &RunConfig) -> Result<Vec<StatRow>> {
    let scales = cfg.scales()?;
    let mut rows = Vec::new();
    if let Some(b) = &out.boundary {
        rows.push(StatRow::build(
            format!("{}-boundary", out.report.label),
            b,
            scales,
            out.boundary_patches.as_ref(),
            None,
        )?);
    }
    rows.push(StatRow::build(
        format!("{}-final", out.report.label),
        &out.latent,
        scales,
        None,
        None,
    )?);
    Ok(rows)
}

fn cmd_generate(args: &RunArgs, method: Method, print_config: bool) -> Result<()> {
    let cfg = args.resolve()?;
    if print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let backend = cfg.build_denoiser()?;
    let out = run(method, &cfg, backend.as_ref(), args.exec())?;
    let dir = &args.out_dir;
    prepare_out_dir(dir, &cfg)?;
    write_latent_and_image(dir, "latent", &out.latent, &cfg)?;
    if let Some(b) = &out.boundary {
        write_latent_and_image(dir, "boundary", b, &cfg)?;
    }
    fs::write(dir.join("cost.csv"), emit_cost_table(std::slice::from_ref(&out.report)))?;
    fs::write(dir.join("stats.csv"), emit_stat_table(&stat_rows(&out, &cfg)?))?;
    print_report(&out.report);
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn print_report(r: &CostReport) {
    println!(
        "{:<28} {:<6} calls {:>6} (phase1 {} + phase2 {})  peak {} patch(es)",
        r.label, r.method, r.total_calls, r.phase1_calls, r.phase2_calls, r.peak_resident_latents
    );
}

fn cmd_compare(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let backend = cfg.build_denoiser()?;
    let dir = &args.out_dir;
    prepare_out_dir(dir, &cfg)?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for method in [Method::Cut, Method::Multi, Method::Direct] {
        let out = run(method, &cfg, backend.as_ref(), args.exec())?;
        write_latent_and_image(dir, &format!("latent-{method}"), &out.latent, &cfg)?;
        print_report(&out.report);
        rows.extend(stat_rows(&out, &cfg)?);
        reports.push(out.report);
    }
    fs::write(dir.join("cost.csv"), emit_cost_table(&reports))?;
    fs::write(dir.join("stats.csv"), emit_stat_table(&rows))?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_ablate(args: &RunArgs, t_primes: &[usize], coupling_seeds: u64) -> Result<()> {
    let cfg = args.resolve()?;
    let backend = cfg.build_denoiser()?;
    let dir = &args.out_dir;
    prepare_out_dir(dir, &cfg)?;
    let runs = run_ablation_sweep(&cfg, backend.as_ref(), t_primes, args.exec())?;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for r in runs {
        let stem = format!("tprime-{}", r.t_prime);
        write_latent_and_image(dir, &format!("{stem}-final"), &r.output.latent, &cfg)?;
        if let Some(b) = &r.output.boundary {
            write_latent_and_image(dir, &format!("{stem}-boundary"), b, &cfg)?;
        }
        println!(
            "T'={:<4} boundary dup {:.3} ks {:.4} max-corr {:.4} | final var {:.4} ks {:.4}",
            r.t_prime,
            r.boundary_stats.duplicated_block_fraction,
            r.boundary_stats.ks,
            r.boundary_stats.max_cross_patch_correlation,
            r.final_stats.variance,
            r.final_stats.ks
        );
        rows.push(r.boundary_stats);
        rows.push(r.final_stats);
        reports.push(r.output.report);
    }
    fs::write(dir.join("cost.csv"), emit_cost_table(&reports))?;
    fs::write(dir.join("stats.csv"), emit_stat_table(&rows))?;
    if coupling_seeds > 0 {
        let seeds = cfg.seed..cfg.seed + coupling_seeds;
        let (on, on_se) = verify::interaction_coupling(true, seeds.clone())?;
        let (off, off_se) = verify::interaction_coupling(false, seeds.clone())?;
        let mut w = csv::Writer::from_path(dir.join("coupling.csv")).map_err(csv_err)?;
        w.write_record([
            "interaction",
            "seed_start",
            "seeds",
            "mean_correlation",
            "standard_error",
        ])
        .map_err(csv_err)?;
        for (flag, m, se) in [("on", on, on_se), ("off", off, off_se)] {
            w.write_record([
                flag.to_owned(),
                seeds.start.to_string(),
                coupling_seeds.to_string(),
                m.to_string(),
                se.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        println!(
            "coupling over seeds {}..{}: on {on:.4} ± {on_se:.4}, off {off:.4} ± {off_se:.4}, delta {:.4}",
            seeds.start,
            seeds.end,
            on - off
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_serve(args: &RunArgs, listen: Option<&str>) -> Result<()> {
    let cfg = args.resolve()?;
    if matches!(cfg.denoiser, DenoiserConfig::Remote { .. }) {
        return Err(CutError::config("denoiser", "serve needs a local backend"));
    }
    let backend = cfg.build_denoiser()?;
    let sched = cfg.schedule()?;
    let shape = cfg.patch_shape();
    let Some(addr) = listen else {
        let (stdin, stdout) = (std::io::stdin(), std::io::stdout());
        return remote::serve(&mut stdin.lock(), &mut stdout.lock(), backend.as_ref(), &sched, shape);
    };
    let listener = std::net::TcpListener::bind(addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    std::thread::scope(|scope| {
        for stream in listener.incoming() {
            let stream = stream?;
            let (backend, sched) = (backend.as_ref(), &sched);
            scope.spawn(move || {
                let mut reader = std::io::BufReader::new(&stream);
                let mut writer = std::io::BufWriter::new(&stream);
                if let Err(e) = remote::serve(&mut reader, &mut writer, backend, sched, shape) {
                    eprintln!("connection closed: {e}");
                }
            });
        }
        Ok(())
    })
}

fn csv_err(e: csv::Error) -> CutError {
    CutError::Io(std::io::Error::other(e))
}

fn cmd_verify(quick: bool, golden: Option<&Path>) -> Result<bool> {
    let golden = match golden {
        Some(p) => Golden::load(p)?,
        None => Golden::embedded(),
    };
    let outcomes = verify::run_all(&golden, quick);
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", outcomes.len());
        Ok(true)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(false)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            run,
            method,
            print_config,
        } => cmd_generate(run, (*method).into(), *print_config).map(|()| true),
        Command::Compare { run } => cmd_compare(run).map(|()| true),
        Command::Ablate {
            run,
            t_primes,
            coupling_seeds,
        } => cmd_ablate(run, t_primes, *coupling_seeds).map(|()| true),
        Command::Serve { run, listen } => cmd_serve(run, listen.as_deref()).map(|()| true),
        Command::Verify { quick, golden } => cmd_verify(*quick, golden.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
