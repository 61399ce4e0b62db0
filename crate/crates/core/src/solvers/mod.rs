//! Reconstruction drivers: shift-and-add, first guess, the reweighted
//! analysis-prior solver and the quadratic baseline.

mod baseline;
mod gfb;
mod shift_add;

pub use baseline::{conjugate_gradient, quadratic_baseline, quadratic_baseline_with, CgOptions, CgOutcome, QuadraticOutput};
pub use gfb::{
    calibrate_lambda, gfb_solve, lambda_from_gradient, monte_carlo_band_levels, update_weights, weight_update, GfbParams, IterationRecord,
    LambdaCalibration, LambdaRefresh, LambdaSource, SolverState,
};
pub use shift_add::{first_guess, first_guess_from, registered_median, shift_and_add, shift_and_add_with, HoleFill, ShiftAddOutput};

use crate::error::{Result, SpriteError};
use crate::estimation::{apply_report, estimate_all, EstimationReport, DEFAULT_APERTURE_RADIUS};
use crate::image::{ImageGrid, LRStack};
use crate::operator::{ConvolutionPath, ObservationOperator, PowerIterationOptions};
use crate::prox::ProxConfig;
use crate::wavelets::{Dictionary, DictionaryKind, WaveletTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub kappa: f64,
    pub dictionary: DictionaryKind,
    /// Detail scales `J`; lowered automatically when the grid is too small.
    pub scales: usize,
    pub omega1: f64,
    pub omega2: f64,
    /// Gradient step; `None` means `1/ρ(MᵀM)`.
    pub mu: Option<f64>,
    pub relax_lambda: f64,
    pub n_max: usize,
    pub rel_tol: f64,
    pub k_max: usize,
    pub positivity: bool,
    pub lambda_calibration: LambdaCalibration,
    pub lambda_refresh: LambdaRefresh,
    /// Dual step of the inner prox loop; `None` means `1/ρ(ΦΦᵀ)`.
    pub mu_prox: Option<f64>,
    pub inner_max_iters: usize,
    pub inner_rel_tol: f64,
    /// Reuse the prox dual variable across iterations.
    pub prox_warm_start: bool,
    /// Threshold multiple for the first-guess denoising.
    pub first_guess_k: f64,
    pub aperture_radius: f64,
    /// Estimate noise, shifts and fluxes from the data; otherwise use the stack's values.
    pub estimate_parameters: bool,
    pub power: PowerIterationOptions,
    pub divergence_factor: f64,
    pub path: ConvolutionPath,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kappa: 4.0,
            dictionary: DictionaryKind::Starlet2,
            scales: 4,
            omega1: 0.5,
            omega2: 0.5,
            mu: None,
            relax_lambda: 1.4,
            n_max: 300,
            rel_tol: 1e-5,
            k_max: 2,
            positivity: true,
            lambda_calibration: LambdaCalibration::ResidualMad,
            lambda_refresh: LambdaRefresh::EveryIteration,
            mu_prox: None,
            inner_max_iters: 50,
            inner_rel_tol: 1e-4,
            prox_warm_start: true,
            first_guess_k: 5.0,
            aperture_radius: DEFAULT_APERTURE_RADIUS,
            estimate_parameters: true,
            power: PowerIterationOptions::default(),
            divergence_factor: 10.0,
            path: ConvolutionPath::Auto,
        }
    }
}

impl SolverConfig {
    /// Checks everything that does not depend on the operator.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpriteError::Input(m));
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be nonnegative, got {}", self.kappa));
        }
        if self.scales == 0 {
            return bad("at least one wavelet scale is required".into());
        }
        if !(self.omega1 > 0.0 && self.omega1 < 1.0 && self.omega2 > 0.0 && self.omega2 < 1.0)
            || (self.omega1 + self.omega2 - 1.0).abs() > 1e-12
        {
            return bad(format!(
                "omega1 and omega2 must lie in (0, 1) and sum to 1, got {} and {}",
                self.omega1, self.omega2
            ));
        }
        if !(self.relax_lambda > 0.0 && self.relax_lambda < 1.5) {
            return bad(format!("relaxation must lie in (0, 1.5), got {}", self.relax_lambda));
        }
        if self.n_max == 0 || self.k_max == 0 || self.inner_max_iters == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("mu must be positive, got {mu}"));
            }
        }
        if let Some(m) = self.mu_prox {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("mu_prox must be positive, got {m}"));
            }
        }
        if !(self.first_guess_k >= 0.0) || !(self.aperture_radius > 0.0) || !(self.divergence_factor > 1.0) {
            return bad("first-guess multiple, aperture radius and divergence factor out of range".into());
        }
        Ok(())
    }

    /// Largest usable `J` for a grid of `dims`.
    pub fn effective_scales(&self, dims: (usize, usize)) -> usize {
        let side = dims.0.min(dims.1).max(2);
        let max = (usize::BITS - 1 - side.leading_zeros()) as usize;
        let j = self.scales.min(max).max(1);
        if j < self.scales {
            log::warn!("{}x{} grid supports only {j} wavelet scales", dims.0, dims.1);
        }
        j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpriteOutput {
    pub image: ImageGrid,
    pub first_guess: ImageGrid,
    /// Present when parameters were estimated from the data.
    pub estimation: Option<EstimationReport>,
    /// The stack with the parameters actually used.
    pub stack: LRStack,
    pub rho_normal: f64,
    pub rho_frame: f64,
    pub mu: f64,
    pub scales: usize,
    pub passes: Vec<PassSummary>,
    pub final_state: SolverState,
}

/// Full reconstruction: estimation, first guess and `K_max` weighted passes.
pub fn sprite_detailed(stack: &LRStack, cfg: &SolverConfig) -> Result<SpriteOutput> {
    cfg.validate()?;
    let mut stack = stack.clone();
    let estimation = if cfg.estimate_parameters {
        let rep = estimate_all(&stack, cfg.aperture_radius).map_err(|e| e.at("estimation"))?;
        apply_report(&mut stack, &rep);
        Some(rep)
    } else {
        None
    };
    let d = stack.upsampling();
    let hr = stack.hr_dims();
    let op = ObservationOperator::from_stack(&stack).with_path(cfg.path);
    let z = ObservationOperator::whiten(&stack);

    let rho = op.normal_spectral_radius(&cfg.power).value;
    if !(rho > 0.0) {
        return Err(SpriteError::Input("observation operator is identically zero".into()));
    }
    let mu = cfg.mu.unwrap_or(1.0 / rho);
    if mu >= 2.0 / rho {
        return Err(SpriteError::Input(format!("mu = {mu} must be below 2/rho = {}", 2.0 / rho)));
    }
    let relax_cap = 1.5_f64.min(0.5 * (1.0 + 2.0 / (rho * mu)));
    if cfg.relax_lambda >= relax_cap {
        return Err(SpriteError::Input(format!(
            "relaxation {} must be below {relax_cap}",
            cfg.relax_lambda
        )));
    }

    let scales = cfg.effective_scales(hr);
    let sa = shift_and_add(&stack, d).map_err(|e| e.at("shift-and-add"))?;
    let x0 = first_guess_from(&sa, cfg.dictionary, scales, cfg.first_guess_k).map_err(|e| e.at("first guess"))?;

    let dict = WaveletTransform::new(cfg.dictionary, scales, hr)?;
    let rho_frame = dict.frame_bound();
    let prox = ProxConfig {
        mu_prox: cfg.mu_prox.unwrap_or(1.0 / rho_frame),
        inner_max_iters: cfg.inner_max_iters,
        inner_rel_tol: cfg.inner_rel_tol,
        warm_start: cfg.prox_warm_start,
    };
    let params = GfbParams {
        kappa: cfg.kappa,
        mu,
        relax: cfg.relax_lambda,
        omega1: cfg.omega1,
        omega2: cfg.omega2,
        max_iters: cfg.n_max,
        rel_tol: cfg.rel_tol,
        positivity: cfg.positivity,
        prox,
        divergence_factor: cfg.divergence_factor,
    };

    let fixed_lambda = match (cfg.lambda_calibration, cfg.lambda_refresh) {
        (LambdaCalibration::ResidualMad, LambdaRefresh::EveryIteration) => None,
        (mode, _) => Some(calibrate_lambda(&op, &dict, x0.pixels(), &z, mode).map_err(|e| e.at("lambda calibration"))?),
    };

    let mut weights = vec![1.0; dict.coeff_len()];
    let mut passes = Vec::with_capacity(cfg.k_max);
    let mut state = None;
    for k in 0..cfg.k_max {
        let source = match &fixed_lambda {
            Some(l) => LambdaSource::Fixed(l),
            None => LambdaSource::Residual,
        };
        let st = gfb_solve(&op, &z, x0.pixels(), &weights, source, &dict, &params).map_err(|e| e.at("solver"))?;
        log::debug!("pass {k}: {} iterations, converged {}", st.iterations, st.converged);
        passes.push(PassSummary {
            iterations: st.iterations,
            converged: st.converged,
            final_objective: st.history.last().map_or(0.0, |h| h.objective),
        });
        if k + 1 < cfg.k_max {
            let sigma: Vec<f64> = st.lambda.iter().map(|l| mu * l).collect();
            weights = update_weights(&dict, &st.d, &sigma);
        }
        state = Some(st);
    }
    let final_state = state.expect("k_max >= 1");
    // The averaged iterate is only feasible in the limit; clip the residual
    // negatives left after a finite number of iterations.
    let floor = if cfg.positivity { 0.0 } else { f64::NEG_INFINITY };
    let pixels = final_state.d.iter().zip(x0.pixels()).map(|(a, b)| (a + b).max(floor)).collect();
    Ok(SpriteOutput {
        image: ImageGrid::from_vec(hr.0, hr.1, pixels)?,
        first_guess: x0,
        estimation,
        stack,
        rho_normal: rho,
        rho_frame,
        mu,
        scales,
        passes,
        final_state,
    })
}

/// The reconstructed high-resolution image.
pub fn sprite(stack: &LRStack, cfg: &SolverConfig) -> Result<ImageGrid> {
    Ok(sprite_detailed(stack, cfg)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let ok = SolverConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SolverConfig { omega1: 0.7, ..ok.clone() },
            SolverConfig { relax_lambda: 1.6, ..ok.clone() },
            SolverConfig { k_max: 0, ..ok.clone() },
            SolverConfig { kappa: -1.0, ..ok.clone() },
            SolverConfig { mu: Some(0.0), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn scales_clamped_to_grid() {
        let cfg = SolverConfig { scales: 6, ..SolverConfig::default() };
        assert_eq!(cfg.effective_scales((64, 64)), 6);
        assert_eq!(cfg.effective_scales((20, 40)), 4);
        assert_eq!(cfg.effective_scales((2, 2)), 1);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        use crate::simulation::{make_psf, synthesize_stack, PsfKind, SimSpec};
        let psf = PsfKind::EllipticalGaussian { sigma_x: 2.4, sigma_y: 1.8, theta: 0.4 };
        let truth = make_psf(psf, (64, 64)).unwrap();
        let spec = SimSpec { psf, hr_dims: (64, 64), snr_db: 20.0, seed: 3, ..SimSpec::default() };
        let sim = synthesize_stack(&truth, &spec).unwrap();
        let cfg = SolverConfig { n_max: 40, ..SolverConfig::default() };
        let a = sprite(&sim.stack, &cfg).unwrap();
        let b = sprite(&sim.stack, &cfg).unwrap();
        assert!(a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
