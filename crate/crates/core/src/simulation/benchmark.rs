//! Benchmark grid: SNR levels × trials × reconstruction methods.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, make_psf, synthesize_stack, PsfKind, SimSpec};
use crate::error::{Result, SpriteError};
use crate::estimation::{apply_report, estimate_all};
use crate::image::{ImageGrid, LRStack};
use crate::metrics::{error_map_stats, mean_abs_ellipticity_error, measure_shape, pearson_correlation, ShapeMeasurement, DEFAULT_WEIGHT_SIGMA};
use crate::operator::ObservationOperator;
use crate::solvers::{quadratic_baseline, shift_and_add, sprite, SolverConfig};
use crate::stats::median;
use crate::wavelets::DictionaryKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ShiftAndAdd,
    QuadraticBaseline,
    SpriteStarlet2,
    SpriteBior79,
    SpriteNoPositivity,
    SpriteK1,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ShiftAndAdd,
        Method::QuadraticBaseline,
        Method::SpriteStarlet2,
        Method::SpriteBior79,
        Method::SpriteNoPositivity,
        Method::SpriteK1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ShiftAndAdd => "shift-and-add",
            Method::QuadraticBaseline => "quadratic-baseline",
            Method::SpriteStarlet2 => "sprite-starlet2",
            Method::SpriteBior79 => "sprite-bior79",
            Method::SpriteNoPositivity => "sprite-no-positivity",
            Method::SpriteK1 => "sprite-K1",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SpriteError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SpriteError::Input(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsfFamily {
    #[default]
    Gaussian,
    Airy,
    /// Even trials Gaussian, odd trials Airy.
    Mixed,
}

impl FromStr for PsfFamily {
    type Err = SpriteError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(PsfFamily::Gaussian),
            "airy" => Ok(PsfFamily::Airy),
            "mixed" => Ok(PsfFamily::Mixed),
            _ => Err(SpriteError::Input(format!("unknown PSF family '{s}'"))),
        }
    }
}

impl PsfFamily {
    /// Random PSF parameters for one trial; undersampled at the LR scale for `d = 2`.
    pub fn draw(self, trial: usize, rng: &mut impl Rng) -> PsfKind {
        let airy = match self {
            PsfFamily::Gaussian => false,
            PsfFamily::Airy => true,
            PsfFamily::Mixed => trial % 2 == 1,
        };
        if airy {
            PsfKind::ObscuredAiry {
                lambda_over_d: rng.gen_range(2.5..3.5),
                obscuration: rng.gen_range(0.2..0.35),
                vane_width: 0.02,
                vane_angle: rng.gen_range(0.0..2.0 * std::f64::consts::PI / 3.0),
            }
        } else {
            let major = rng.gen_range(1.6..2.4);
            PsfKind::EllipticalGaussian {
                sigma_x: major,
                sigma_y: major * rng.gen_range(0.7..1.0),
                theta: rng.gen_range(0.0..std::f64::consts::PI),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub family: PsfFamily,
    /// LR stamp side `p`; the truth is `d·p` square.
    pub lr_side: usize,
    pub d: usize,
    pub n_exposures: usize,
    pub seed: u64,
    /// Settings shared by every SPRITE variant.
    pub solver: SolverConfig,
    pub weight_sigma: f64,
    /// Quadratic-baseline weight as a fraction of `ρ(MᵀM)`.
    pub baseline_reg_rel: f64,
    /// Reconstruct with the simulated shifts, fluxes and noise levels instead
    /// of estimating them from the pixels.
    pub known_parameters: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            snr_db: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            trials: 20,
            methods: Method::ALL.to_vec(),
            family: PsfFamily::Gaussian,
            lr_side: 84,
            d: 2,
            n_exposures: 4,
            seed: 0,
            solver: SolverConfig::default(),
            weight_sigma: DEFAULT_WEIGHT_SIGMA,
            baseline_reg_rel: 0.01,
            known_parameters: false,
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub snr_db: f64,
    pub method: Method,
    pub trial: usize,
    pub e1_err: f64,
    pub e2_err: f64,
    pub fwhm_err_pct: f64,
    pub errmap_std: f64,
    pub pearson: f64,
    /// Minimum pixel over peak of the reconstruction.
    pub min_over_peak: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkFailure {
    pub snr_db: f64,
    pub method: Method,
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub snr_db: f64,
    pub method: Method,
    pub count: usize,
    pub failures: usize,
    pub e1_mean: f64,
    pub e1_std: f64,
    pub e2_mean: f64,
    pub e2_std: f64,
    pub e1_median: f64,
    pub e2_median: f64,
    pub fwhm_err_pct_mean: f64,
    pub errmap_std_median: f64,
    pub pearson_median: f64,
    pub runtime_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<BenchmarkFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl BenchmarkResult {
    pub fn success_fraction(&self) -> f64 {
        let total = self.rows.len() + self.failures.len();
        if total == 0 {
            1.0
        } else {
            self.rows.len() as f64 / total as f64
        }
    }

    pub fn cell(&self, snr_db: f64, method: Method) -> impl Iterator<Item = &BenchmarkRow> {
        self.rows.iter().filter(move |r| r.snr_db == snr_db && r.method == method)
    }

    pub fn aggregate_for(&self, snr_db: f64, method: Method) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.snr_db == snr_db && a.method == method)
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.methods.is_empty() || self.snr_db.is_empty() {
            return Err(SpriteError::Input("benchmark needs SNR levels, trials and methods".into()));
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(SpriteError::Input("SNR levels must be numbers or +inf".into()));
        }
        if !(self.baseline_reg_rel >= 0.0) || !(self.weight_sigma > 0.0) {
            return Err(SpriteError::Input("baseline weight and moment window must be nonnegative".into()));
        }
        if self.jobs == Some(0) {
            return Err(SpriteError::Input("jobs must be at least 1".into()));
        }
        self.solver.validate()
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.d * self.lr_side, self.d * self.lr_side)
    }

    /// The ground truth of one trial; shared by every SNR level.
    pub fn truth(&self, trial: usize) -> Result<ImageGrid> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[trial as u64]));
        make_psf(self.family.draw(trial, &mut rng), self.hr_dims())
    }

    pub fn sim_spec(&self, trial: usize, snr_index: usize) -> Result<SimSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[trial as u64]));
        Ok(SimSpec {
            psf: self.family.draw(trial, &mut rng),
            hr_dims: self.hr_dims(),
            n_exposures: self.n_exposures,
            d: self.d,
            snr_db: self.snr_db[snr_index],
            max_shift: 0.5,
            seed: derive_seed(self.seed, &[trial as u64, snr_index as u64 + 1]),
        })
    }
}

fn estimated(stack: &LRStack, spec: &BenchmarkSpec) -> Result<LRStack> {
    let mut st = stack.clone();
    if spec.known_parameters {
        return Ok(st);
    }
    let rep = estimate_all(&st, spec.solver.aperture_radius).map_err(|e| e.at("estimation"))?;
    apply_report(&mut st, &rep);
    Ok(st)
}

/// Runs one method on a simulated stack.
pub fn reconstruct(method: Method, stack: &LRStack, spec: &BenchmarkSpec) -> Result<ImageGrid> {
    let base = &SolverConfig {
        estimate_parameters: spec.solver.estimate_parameters && !spec.known_parameters,
        ..spec.solver.clone()
    };
    let d = stack.upsampling();
    match method {
        Method::ShiftAndAdd => shift_and_add(&estimated(stack, spec)?, d),
        Method::QuadraticBaseline => {
            let st = estimated(stack, spec)?;
            let rho = ObservationOperator::from_stack(&st).normal_spectral_radius(&base.power).value;
            quadratic_baseline(&st, spec.baseline_reg_rel * rho, d)
        }
        Method::SpriteStarlet2 => sprite(stack, &SolverConfig { dictionary: DictionaryKind::Starlet2, ..base.clone() }),
        Method::SpriteBior79 => sprite(stack, &SolverConfig { dictionary: DictionaryKind::Bior79, ..base.clone() }),
        Method::SpriteNoPositivity => sprite(
            stack,
            &SolverConfig { dictionary: DictionaryKind::Starlet2, positivity: false, ..base.clone() },
        ),
        Method::SpriteK1 => sprite(stack, &SolverConfig { dictionary: DictionaryKind::Starlet2, k_max: 1, ..base.clone() }),
    }
}

fn score(
    truth: &ImageGrid,
    truth_shape: &ShapeMeasurement,
    recon: &ImageGrid,
    spec: &BenchmarkSpec,
) -> Result<(f64, f64, f64, f64, f64, f64)> {
    let shape = measure_shape(recon, Some(spec.weight_sigma))?;
    let (_, errmap) = error_map_stats(truth, recon)?;
    let pearson = pearson_correlation(truth, recon)?;
    let peak = recon.max();
    let min_over_peak = if peak > 0.0 { recon.min() / peak } else { f64::NEG_INFINITY };
    Ok((
        (truth_shape.e1 - shape.e1).abs(),
        (truth_shape.e2 - shape.e2).abs(),
        100.0 * (shape.fwhm - truth_shape.fwhm).abs() / truth_shape.fwhm,
        errmap,
        pearson,
        min_over_peak,
    ))
}

type CellOutcome = std::result::Result<BenchmarkRow, BenchmarkFailure>;

fn run_job(spec: &BenchmarkSpec, trial: usize, snr_index: usize) -> Vec<CellOutcome> {
    let snr_db = spec.snr_db[snr_index];
    let fail_all = |e: SpriteError| {
        spec.methods
            .iter()
            .map(|&method| {
                Err(BenchmarkFailure {
                    snr_db,
                    method,
                    trial,
                    error: e.to_string(),
                })
            })
            .collect()
    };
    let prepared = (|| {
        let truth = spec.truth(trial)?;
        let shape = measure_shape(&truth, Some(spec.weight_sigma)).map_err(|e| e.at("truth metrics"))?;
        let sim = synthesize_stack(&truth, &spec.sim_spec(trial, snr_index)?)?;
        Ok::<_, SpriteError>((truth, shape, sim))
    })();
    let (truth, truth_shape, sim) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    spec.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = reconstruct(method, &sim.stack, spec).and_then(|r| score(&truth, &truth_shape, &r, spec));
            let runtime_s = start.elapsed().as_secs_f64();
            match outcome {
                Ok((e1_err, e2_err, fwhm_err_pct, errmap_std, pearson, min_over_peak)) => Ok(BenchmarkRow {
                    snr_db,
                    method,
                    trial,
                    e1_err,
                    e2_err,
                    fwhm_err_pct,
                    errmap_std,
                    pearson,
                    min_over_peak,
                    runtime_s,
                }),
                Err(e) => {
                    log::warn!("{method} failed at {snr_db} dB, trial {trial}: {e}");
                    Err(BenchmarkFailure {
                        snr_db,
                        method,
                        trial,
                        error: e.to_string(),
                    })
                }
            }
        })
        .collect()
}

/// Runs every (SNR, trial, method) cell. Individual failures are recorded.
/// Apart from runtimes, results depend only on the `BenchmarkSpec`.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkResult> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.snr_db.len())
        .flat_map(|s| (0..spec.trials).map(move |t| (s, t)))
        .collect();
    let work = || -> Vec<Vec<CellOutcome>> { jobs.par_iter().map(|&(s, t)| run_job(spec, t, s)).collect() };
    let outcomes = match spec.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SpriteError::Input(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    let aggregate = aggregate(spec, &rows, &failures);
    Ok(BenchmarkResult { rows, failures, aggregate })
}

/// One row per (SNR, method) in spec order.
pub fn aggregate(spec: &BenchmarkSpec, rows: &[BenchmarkRow], failures: &[BenchmarkFailure]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &snr_db in &spec.snr_db {
        for &method in &spec.methods {
            let cell: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.snr_db == snr_db && r.method == method).collect();
            let nfail = failures.iter().filter(|f| f.snr_db == snr_db && f.method == method).count();
            let pick = |f: fn(&BenchmarkRow) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (e1, e2) = (pick(|r| r.e1_err), pick(|r| r.e2_err));
            let zeros = vec![(0.0, 0.0); cell.len()];
            let errs: Vec<(f64, f64)> = e1.iter().zip(&e2).map(|(&a, &b)| (a, b)).collect();
            let stats = mean_abs_ellipticity_error(&zeros, &errs).ok();
            let avg = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            let med = |v: &[f64]| if v.is_empty() { f64::NAN } else { median(v) };
            out.push(AggregateRow {
                snr_db,
                method,
                count: cell.len(),
                failures: nfail,
                e1_mean: stats.map_or(f64::NAN, |s| s.e1),
                e1_std: stats.map_or(f64::NAN, |s| s.std1),
                e2_mean: stats.map_or(f64::NAN, |s| s.e2),
                e2_std: stats.map_or(f64::NAN, |s| s.std2),
                e1_median: med(&e1),
                e2_median: med(&e2),
                fwhm_err_pct_mean: avg(&pick(|r| r.fwhm_err_pct)),
                errmap_std_median: med(&pick(|r| r.errmap_std)),
                pearson_median: med(&pick(|r| r.pearson)),
                runtime_mean_s: avg(&pick(|r| r.runtime_s)),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: Vec<Method>, snr: Vec<f64>, trials: usize) -> BenchmarkSpec {
        BenchmarkSpec {
            snr_db: snr,
            trials,
            methods,
            lr_side: 28,
            solver: SolverConfig { n_max: 40, scales: 3, ..SolverConfig::default() },
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sprite".parse::<Method>().is_err());
        assert_eq!("Mixed".parse::<PsfFamily>().unwrap(), PsfFamily::Mixed);
    }

    #[test]
    fn schema_and_determinism() {
        let spec = small(Method::ALL.to_vec(), vec![30.0], 2);
        let a = run_benchmark(&spec).unwrap();
        assert_eq!(a.aggregate.len(), Method::ALL.len());
        for agg in &a.aggregate {
            assert_eq!(agg.count + agg.failures, 2);
        }
        assert_eq!(a.rows.len() + a.failures.len(), 12);
        let b = run_benchmark(&BenchmarkSpec { jobs: Some(1), ..spec }).unwrap();
        let strip = |r: &BenchmarkResult| {
            r.rows
                .iter()
                .map(|x| BenchmarkRow { runtime_s: 0.0, ..x.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn noise_free_cells_are_accurate() {
        // Without noise the reweighted solver only gets there once the
        // forward-backward loop has converged, hence the raised iteration cap.
        let spec = BenchmarkSpec {
            snr_db: vec![f64::INFINITY],
            trials: 3,
            methods: vec![Method::QuadraticBaseline, Method::SpriteStarlet2],
            lr_side: 26,
            solver: SolverConfig { n_max: 3000, ..SolverConfig::default() },
            baseline_reg_rel: 1e-4,
            ..BenchmarkSpec::default()
        };
        let res = run_benchmark(&spec).unwrap();
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        for a in &res.aggregate {
            assert!(a.e1_mean < 0.01 && a.e2_mean < 0.01, "{a:?}");
        }
    }

    #[test]
    fn known_parameters_skip_estimation() {
        let spec = BenchmarkSpec { known_parameters: true, ..small(vec![Method::ShiftAndAdd], vec![30.0], 1) };
        let sim = synthesize_stack(&spec.truth(0).unwrap(), &spec.sim_spec(0, 0).unwrap()).unwrap();
        let ours = reconstruct(Method::ShiftAndAdd, &sim.stack, &spec).unwrap();
        assert_eq!(ours, shift_and_add(&sim.stack, 2).unwrap());
    }

    #[test]
    fn trials_share_truth_across_snr() {
        let spec = small(vec![Method::ShiftAndAdd], vec![10.0, 20.0], 2);
        assert_eq!(spec.sim_spec(1, 0).unwrap().psf, spec.sim_spec(1, 1).unwrap().psf);
        assert_ne!(spec.sim_spec(1, 0).unwrap().seed, spec.sim_spec(1, 1).unwrap().seed);
        assert_ne!(spec.truth(0).unwrap(), spec.truth(1).unwrap());
        assert!(run_benchmark(&BenchmarkSpec { trials: 0, ..spec }).is_err());
    }
}
