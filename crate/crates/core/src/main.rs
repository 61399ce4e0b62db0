use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sprite_core::estimation::estimate_all;
use sprite_core::io::{self, fits, Bitpix, HeaderValue};
use sprite_core::simulation::{self, BenchmarkSpec, Method, PsfFamily, PsfKind, SimSpec};
use sprite_core::solvers::{sprite_detailed, SolverConfig, SpriteOutput};
use sprite_core::wavelets::DictionaryKind;
use sprite_core::{LRExposure, LRStack, Result, SpriteError};

const EXIT_DEGRADED: u8 = 5;

#[derive(Parser)]
#[command(name = "sprite", version, about = "Super-resolved PSF reconstruction from undersampled exposures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a super-resolved image from a stack of exposures.
    Reconstruct(ReconstructArgs),
    /// Write a synthetic truth image and a noisy low-resolution stack.
    Simulate(SimulateArgs),
    /// Score every method over an SNR × trial grid and write CSV tables.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct Common {
    /// Key-value file with advanced solver settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Transform code: 2 = second-generation starlet, 24 = biorthogonal 7/9.
    #[arg(short = 't', default_value_t = 2)]
    transform: u32,
    /// Threshold multiple κ.
    #[arg(short = 's', default_value_t = 4.0)]
    kappa: f64,
    /// Upsampling factor; 1 only denoises.
    #[arg(short = 'r', default_value_t = 2)]
    upsampling: usize,
    /// Estimate the photometric flux of every exposure.
    #[arg(short = 'F')]
    estimate_flux: bool,
    /// Estimate the noise level of every exposure.
    #[arg(short = 'N')]
    estimate_noise: bool,
    /// Noise level shared by all exposures when it is not estimated.
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    common: Common,
    /// FITS cube (n, p, p) or raw stack.
    data_file: PathBuf,
    /// Where the super-resolved FITS image goes.
    output_file: PathBuf,
    /// Directory for the run report.
    output_directory: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PsfArg {
    Gaussian,
    Airy,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Fits,
    Raw,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gaussian")]
    psf: PsfArg,
    /// Gaussian width along rows, in high-resolution pixels.
    #[arg(long, default_value_t = 2.0)]
    sigma_x: f64,
    /// Gaussian width along columns, in high-resolution pixels.
    #[arg(long, default_value_t = 1.6)]
    sigma_y: f64,
    /// Gaussian orientation in radians.
    #[arg(long, default_value_t = 0.3)]
    theta: f64,
    /// Diffraction scale λ/D in high-resolution pixels.
    #[arg(long, default_value_t = 3.0)]
    lambda_over_d: f64,
    #[arg(long, default_value_t = 0.3)]
    obscuration: f64,
    #[arg(long, default_value_t = 0.02)]
    vane_width: f64,
    #[arg(long, default_value_t = 0.0)]
    vane_angle: f64,
    /// Low-resolution side p.
    #[arg(long, default_value_t = 84)]
    side: usize,
    #[arg(short = 'r', default_value_t = 2)]
    upsampling: usize,
    #[arg(short = 'n', long = "exposures", default_value_t = 4)]
    exposures: usize,
    /// SNR in dB; `inf` disables noise.
    #[arg(long, default_value_t = 30.0)]
    snr: f64,
    /// Largest sub-pixel shift, in low-resolution pixels.
    #[arg(long, default_value_t = 0.5)]
    max_shift: f64,
    #[arg(long, value_enum, default_value = "fits")]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    output_directory: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Comma-separated SNR levels in dB.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 15.0, 20.0, 25.0, 30.0])]
    snr: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Comma-separated method names; all by default.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// gaussian, airy or mixed.
    #[arg(long, default_value = "gaussian")]
    family: String,
    #[arg(long, default_value_t = 84)]
    side: usize,
    #[arg(short = 'r', default_value_t = 2)]
    upsampling: usize,
    #[arg(short = 'n', long = "exposures", default_value_t = 4)]
    exposures: usize,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    common: Common,
    output_directory: PathBuf,
}

fn input_err(msg: impl Into<String>) -> SpriteError {
    SpriteError::Input(msg.into())
}

fn load_config(common: &Common, cfg: &mut SolverConfig, bench: Option<&mut BenchmarkSpec>) -> Result<()> {
    cfg.power.seed = common.seed;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        io::config::apply(&io::parse_key_values(&text)?, cfg, bench, common.seed)?;
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))
}

fn build_stack(args: &ReconstructArgs, cfg: &SolverConfig) -> Result<LRStack> {
    let file = io::read_stack(&args.data_file)?;
    let n = file.planes.len();
    let exposures = file.planes.into_iter().map(LRExposure::from_image).collect();
    let mut stack = LRStack::new(exposures, args.upsampling)?;
    let report = estimate_all(&stack, cfg.aperture_radius).map_err(|e| e.at("estimation"))?;
    if !args.estimate_noise && args.sigma.is_none() && file.sigmas.iter().any(Option::is_none) {
        return Err(input_err("noise level unknown: pass -N, --sigma, or SIGMA_k header keywords"));
    }
    if let Some(s) = args.sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(input_err(format!("--sigma must be positive, got {s}")));
        }
    }
    for (k, e) in stack.exposures_mut().iter_mut().enumerate() {
        e.shift = report.shifts[k];
        e.sigma = match (file.sigmas[k], args.estimate_noise) {
            (Some(s), _) => s,
            (None, true) => report.sigmas[k],
            (None, false) => args.sigma.unwrap_or(1.0),
        };
        e.flux = match (file.fluxes[k], args.estimate_flux) {
            (Some(f), _) => f,
            (None, true) => report.fluxes[k],
            (None, false) => 1.0,
        };
        e.validate().map_err(|err| input_err(format!("exposure {k}: {err}")))?;
    }
    log::info!("{n} exposures, shifts {:?}", report.shifts);
    Ok(stack)
}

fn report_text(args: &ReconstructArgs, cfg: &SolverConfig, out: &SpriteOutput, secs: f64) -> String {
    let (h, w) = out.image.dims();
    let mut pairs: Vec<(String, String)> = vec![
        ("data_file".into(), args.data_file.display().to_string()),
        ("output_file".into(), args.output_file.display().to_string()),
        ("transform".into(), cfg.dictionary.code().to_string()),
        ("kappa".into(), cfg.kappa.to_string()),
        ("upsampling".into(), args.upsampling.to_string()),
        ("estimate_flux".into(), args.estimate_flux.to_string()),
        ("estimate_noise".into(), args.estimate_noise.to_string()),
        ("output_dims".into(), format!("{h}x{w}")),
        ("scales".into(), out.scales.to_string()),
        ("mu".into(), format!("{:e}", out.mu)),
        ("rho_normal".into(), format!("{:e}", out.rho_normal)),
        ("rho_frame".into(), format!("{:e}", out.rho_frame)),
        ("runtime_s".into(), format!("{secs:.3}")),
    ];
    for (k, e) in out.stack.exposures().iter().enumerate() {
        pairs.push((format!("sigma_{k}"), format!("{:e}", e.sigma)));
        pairs.push((format!("flux_{k}"), format!("{:e}", e.flux)));
        pairs.push((format!("shift_{k}"), format!("{} {}", e.shift.0, e.shift.1)));
    }
    for (k, p) in out.passes.iter().enumerate() {
        pairs.push((format!("pass_{k}_iterations"), p.iterations.to_string()));
        pairs.push((format!("pass_{k}_converged"), p.converged.to_string()));
        pairs.push((format!("pass_{k}_objective"), format!("{:e}", p.final_objective)));
    }
    let mut s = io::format_key_values(Some("sprite reconstruction report"), &pairs);
    s.push_str("# objective history of the last pass: iteration objective data_term penalty rel_change\n");
    for (i, r) in out.final_state.history.iter().enumerate() {
        let _ = writeln!(s, "# {i} {:e} {:e} {:e} {:e}", r.objective, r.data_term, r.penalty, r.rel_change);
    }
    s
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    if !(args.kappa > 0.0 && args.kappa.is_finite()) {
        return Err(input_err(format!("-s must be positive, got {}", args.kappa)));
    }
    if args.upsampling == 0 {
        return Err(input_err("-r must be at least 1"));
    }
    let mut cfg = SolverConfig {
        dictionary: DictionaryKind::from_code(args.transform)?,
        kappa: args.kappa,
        estimate_parameters: false,
        ..SolverConfig::default()
    };
    load_config(&args.common, &mut cfg, None)?;
    let stack = build_stack(&args, &cfg)?;
    let t = Instant::now();
    let out = sprite_detailed(&stack, &cfg)?;
    let secs = t.elapsed().as_secs_f64();
    ensure_dir(&args.output_directory)?;
    let mut keys = BTreeMap::new();
    keys.insert("TRANSFRM".into(), HeaderValue::Int(args.transform as i64));
    keys.insert("KAPPA".into(), HeaderValue::Real(args.kappa));
    keys.insert("UPSAMP".into(), HeaderValue::Int(args.upsampling as i64));
    fits::write(&args.output_file, std::slice::from_ref(&out.image), &keys, Bitpix::F64)?;
    let report = report_text(&args, &cfg, &out, secs);
    io::write_atomic(&args.output_directory.join("report.txt"), report.as_bytes())?;
    log::info!("reconstructed {:?} in {secs:.2} s", out.image.dims());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let psf = match args.psf {
        PsfArg::Gaussian => PsfKind::EllipticalGaussian {
            sigma_x: args.sigma_x,
            sigma_y: args.sigma_y,
            theta: args.theta,
        },
        PsfArg::Airy => PsfKind::ObscuredAiry {
            lambda_over_d: args.lambda_over_d,
            obscuration: args.obscuration,
            vane_width: args.vane_width,
            vane_angle: args.vane_angle,
        },
    };
    let side = args.side * args.upsampling;
    let spec = SimSpec {
        psf,
        hr_dims: (side, side),
        n_exposures: args.exposures,
        d: args.upsampling,
        snr_db: args.snr,
        max_shift: args.max_shift,
        seed: args.seed,
    };
    spec.validate()?;
    let truth = simulation::make_psf(spec.psf, spec.hr_dims)?;
    let sim = simulation::synthesize_stack(&truth, &spec)?;
    ensure_dir(&args.output_directory)?;
    let planes: Vec<_> = sim.stack.exposures().iter().map(|e| e.image.clone()).collect();
    let (stack_name, truth_name) = match args.format {
        FormatArg::Fits => {
            fits::write(&args.output_directory.join("truth.fits"), &[truth], &BTreeMap::new(), Bitpix::F64)?;
            fits::write(&args.output_directory.join("stack.fits"), &planes, &BTreeMap::new(), Bitpix::F64)?;
            ("stack.fits", "truth.fits")
        }
        FormatArg::Raw => {
            io::write_atomic(&args.output_directory.join("truth.raw"), &io::encode_raw(&[truth])?)?;
            io::write_atomic(&args.output_directory.join("stack.raw"), &io::encode_raw(&planes)?)?;
            ("stack.raw", "truth.raw")
        }
    };
    let mut pairs: Vec<(String, String)> = vec![
        ("truth".into(), truth_name.into()),
        ("stack".into(), stack_name.into()),
        ("psf".into(), format!("{:?}", spec.psf)),
        ("hr_dims".into(), format!("{side}x{side}")),
        ("upsampling".into(), spec.d.to_string()),
        ("exposures".into(), spec.n_exposures.to_string()),
        ("snr_db".into(), spec.snr_db.to_string()),
        ("signal_level".into(), format!("{:e}", sim.signal_level)),
        ("noise_sigma".into(), format!("{:e}", sim.noise_sigma)),
        ("seed".into(), spec.seed.to_string()),
    ];
    for (k, (s, f)) in sim.shifts.iter().zip(&sim.fluxes).enumerate() {
        pairs.push((format!("shift_{k}"), format!("{} {}", s.0, s.1)));
        pairs.push((format!("flux_{k}"), f.to_string()));
        pairs.push((format!("sigma_{k}"), format!("{:e}", sim.noise_sigma)));
    }
    let text = io::format_key_values(Some("ground truth of a simulated stack; shifts in low-resolution pixels"), &pairs);
    io::write_atomic(&args.output_directory.join("truth.txt"), text.as_bytes())
}

fn benchmark(args: BenchmarkArgs) -> Result<bool> {
    let methods = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.iter().map(|m| m.parse()).collect::<Result<Vec<_>>>()?
    };
    let mut spec = BenchmarkSpec {
        snr_db: args.snr.clone(),
        trials: args.trials,
        methods,
        family: args.family.parse::<PsfFamily>()?,
        lr_side: args.side,
        d: args.upsampling,
        n_exposures: args.exposures,
        seed: args.common.seed,
        jobs: args.jobs,
        ..BenchmarkSpec::default()
    };
    let mut solver = spec.solver.clone();
    load_config(&args.common, &mut solver, Some(&mut spec))?;
    spec.solver = solver;
    spec.validate()?;
    ensure_dir(&args.output_directory)?;
    let res = simulation::run_benchmark(&spec)?;
    let dir = &args.output_directory;
    io::write_atomic(&dir.join("benchmark.csv"), io::detail_csv(&res).as_bytes())?;
    io::write_atomic(&dir.join("aggregate.csv"), io::aggregate_csv(&res).as_bytes())?;
    io::write_atomic(&dir.join("failures.csv"), io::failures_csv(&res).as_bytes())?;
    for f in &res.failures {
        log::warn!("{} dB {} trial {}: {}", f.snr_db, f.method, f.trial, f.error);
    }
    let ok = res.success_fraction() >= 0.9;
    if !ok {
        eprintln!(
            "benchmark degraded: {} of {} cells failed",
            res.failures.len(),
            res.rows.len() + res.failures.len()
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reconstruct(a) => reconstruct(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_DEGRADED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
