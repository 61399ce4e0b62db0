//! Advanced settings read from a key-value file.
//!
//! Recognized keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `n_max`, `k_max` | iteration caps of one pass and number of passes |
//! | `rel_tol` | early stop on the relative iterate change |
//! | `omega1`, `omega2` | splitting weights |
//! | `scales` | wavelet detail scales `J` |
//! | `relax` | relaxation of the splitting iteration |
//! | `mu`, `mu_prox` | step sizes (`auto` for the defaults) |
//! | `inner_max_iters`, `inner_rel_tol`, `prox_warm_start` | analysis prox loop |
//! | `positivity` | positivity constraint on/off |
//! | `lambda_calibration` | `residual-mad` or `monte-carlo[:realizations]` |
//! | `lambda_refresh` | `every-iteration` or `once-per-pass` |
//! | `first_guess_k`, `aperture_radius`, `divergence_factor` | estimation and safeguards |
//! | `convolution` | `auto`, `direct` or `fft` |
//! | `weight_sigma`, `baseline_reg_rel`, `known_parameters` | benchmark only |

use std::str::FromStr;

use crate::error::{Result, SpriteError};
use crate::operator::ConvolutionPath;
use crate::simulation::benchmark::BenchmarkSpec;
use crate::solvers::{LambdaCalibration, LambdaRefresh, SolverConfig};

const DEFAULT_MC_REALIZATIONS: usize = 20;

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| SpriteError::Input(format!("config: {key} = {v:?} is not a valid number")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(SpriteError::Input(format!("config: {key} = {v:?} is not a boolean"))),
    }
}

fn step(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

/// Applies `pairs` to `cfg` (and to `bench` when given). Unknown keys are an
/// error; `seed` feeds the Monte-Carlo calibration.
pub fn apply(pairs: &[(String, String)], cfg: &mut SolverConfig, mut bench: Option<&mut BenchmarkSpec>, seed: u64) -> Result<()> {
    for (key, v) in pairs {
        let v = v.as_str();
        match key.as_str() {
            "n_max" => cfg.n_max = num(key, v)?,
            "k_max" => cfg.k_max = num(key, v)?,
            "rel_tol" => cfg.rel_tol = num(key, v)?,
            "omega1" => cfg.omega1 = num(key, v)?,
            "omega2" => cfg.omega2 = num(key, v)?,
            "scales" => cfg.scales = num(key, v)?,
            "relax" => cfg.relax_lambda = num(key, v)?,
            "mu" => cfg.mu = step(key, v)?,
            "mu_prox" => cfg.mu_prox = step(key, v)?,
            "inner_max_iters" => cfg.inner_max_iters = num(key, v)?,
            "inner_rel_tol" => cfg.inner_rel_tol = num(key, v)?,
            "prox_warm_start" => cfg.prox_warm_start = flag(key, v)?,
            "positivity" => cfg.positivity = flag(key, v)?,
            "first_guess_k" => cfg.first_guess_k = num(key, v)?,
            "aperture_radius" => cfg.aperture_radius = num(key, v)?,
            "divergence_factor" => cfg.divergence_factor = num(key, v)?,
            "lambda_calibration" => {
                cfg.lambda_calibration = match v.split_once(':') {
                    None if v == "residual-mad" => LambdaCalibration::ResidualMad,
                    None if v == "monte-carlo" => LambdaCalibration::MonteCarlo {
                        realizations: DEFAULT_MC_REALIZATIONS,
                        seed,
                    },
                    Some(("monte-carlo", r)) => LambdaCalibration::MonteCarlo {
                        realizations: num(key, r)?,
                        seed,
                    },
                    _ => return Err(SpriteError::Input(format!("config: unknown lambda_calibration {v:?}"))),
                }
            }
            "lambda_refresh" => {
                cfg.lambda_refresh = match v {
                    "every-iteration" => LambdaRefresh::EveryIteration,
                    "once-per-pass" => LambdaRefresh::OncePerPass,
                    _ => return Err(SpriteError::Input(format!("config: unknown lambda_refresh {v:?}"))),
                }
            }
            "convolution" => {
                cfg.path = match v {
                    "auto" => ConvolutionPath::Auto,
                    "direct" => ConvolutionPath::Direct,
                    "fft" => ConvolutionPath::Fft,
                    _ => return Err(SpriteError::Input(format!("config: unknown convolution path {v:?}"))),
                }
            }
            "weight_sigma" | "baseline_reg_rel" | "known_parameters" => match bench.as_deref_mut() {
                Some(b) if key == "weight_sigma" => b.weight_sigma = num(key, v)?,
                Some(b) if key == "known_parameters" => b.known_parameters = flag(key, v)?,
                Some(b) => b.baseline_reg_rel = num(key, v)?,
                None => return Err(SpriteError::Input(format!("config: {key} only applies to the benchmark"))),
            },
            _ => return Err(SpriteError::Input(format!("config: unknown key {key:?}"))),
        }
    }
    cfg.validate()
}
