//! Weighted analysis-prior recovery of the correction `Δ` by generalized
//! forward-backward splitting, and the coefficient noise levels it thresholds at.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SpriteError};
use crate::operator::ObservationOperator;
use crate::prox::{analysis_prox_from, project_positive_shift, ProxConfig};
use crate::stats::{mad_sigma, norm2};
use crate::wavelets::{Dictionary, WaveletTransform};

/// How the per-coefficient noise levels `λ_j` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaCalibration {
    /// `1.4826·MAD` of each band of `Φ∇J1` at the current iterate.
    ResidualMad,
    /// Per-coefficient std of `Φ Mᵀ n` over seeded white-noise draws.
    MonteCarlo { realizations: usize, seed: u64 },
}

/// When residual-based levels are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaRefresh {
    #[default]
    EveryIteration,
    OncePerPass,
}

/// Source of `λ` for one solve.
#[derive(Debug, Clone, Copy)]
pub enum LambdaSource<'a> {
    Fixed(&'a [f64]),
    /// Recompute from the gradient at every iteration.
    Residual,
}

/// Numeric parameters of one solve, with step sizes already resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfbParams {
    pub kappa: f64,
    pub mu: f64,
    pub relax: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub max_iters: usize,
    /// Early stop on `‖d_{n+1} − d_n‖ / ‖d_n‖`.
    pub rel_tol: f64,
    pub positivity: bool,
    pub prox: ProxConfig,
    /// Abort when the objective exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    pub data_term: f64,
    pub penalty: f64,
    pub rel_change: f64,
}

/// Iterates and bookkeeping of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub d: Vec<f64>,
    pub x0: Vec<f64>,
    pub weights: Vec<f64>,
    /// Noise levels of `Φ Mᵀ n` per coefficient, before the step `μ`.
    pub lambda: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-coefficient `λ` from the band-wise MAD of `Φ g`; the coarse band gets 0.
pub fn lambda_from_gradient(dict: &WaveletTransform, g: &[f64]) -> Vec<f64> {
    let coeffs = dict.analyze(g);
    let n = dict.band_len();
    let nb = dict.num_bands();
    let mut out = vec![0.0; coeffs.len()];
    for b in 0..nb - 1 {
        let s = mad_sigma(&coeffs[b * n..(b + 1) * n]);
        out[b * n..(b + 1) * n].iter_mut().for_each(|v| *v = s);
    }
    out
}

/// Noise levels of `Φ Mᵀ n` for whitened data.
///
/// `point` is the current high-resolution estimate `Δ + x0`, used by the
/// residual mode.
pub fn calibrate_lambda(
    op: &ObservationOperator,
    dict: &WaveletTransform,
    point: &[f64],
    z: &[f64],
    mode: LambdaCalibration,
) -> Result<Vec<f64>> {
    match mode {
        LambdaCalibration::ResidualMad => Ok(lambda_from_gradient(dict, &op.grad_j1(point, z)?)),
        LambdaCalibration::MonteCarlo { realizations, seed } => {
            if realizations < 2 {
                return Err(SpriteError::Input("Monte-Carlo calibration needs at least 2 draws".into()));
            }
            let mut sumsq = vec![0.0; dict.coeff_len()];
            propagate_noise(op, dict, realizations, seed, |c| {
                for (s, v) in sumsq.iter_mut().zip(c) {
                    *s += v * v;
                }
            })?;
            let n = dict.band_len();
            let coarse = (dict.num_bands() - 1) * n;
            let mut out: Vec<f64> = sumsq.iter().map(|s| (s / realizations as f64).sqrt()).collect();
            out[coarse..].iter_mut().for_each(|v| *v = 0.0);
            Ok(out)
        }
    }
}

/// Calls `visit` with `Φ Mᵀ n` for each of `realizations` seeded unit white-noise vectors `n`.
fn propagate_noise(
    op: &ObservationOperator,
    dict: &WaveletTransform,
    realizations: usize,
    seed: u64,
    mut visit: impl FnMut(&[f64]),
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = vec![0.0; op.data_len()];
    for _ in 0..realizations {
        noise.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        visit(&dict.analyze(&op.adjoint(&noise)?));
    }
    Ok(())
}

/// One robust level per band: `1.4826·MAD` of the propagated noise pooled over
/// all draws and positions of the band.
pub fn monte_carlo_band_levels(
    op: &ObservationOperator,
    dict: &WaveletTransform,
    realizations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = dict.band_len();
    let nb = dict.num_bands();
    let mut pooled = vec![Vec::with_capacity(n * realizations); nb];
    propagate_noise(op, dict, realizations, seed, |c| {
        for (b, p) in pooled.iter_mut().enumerate() {
            p.extend_from_slice(&c[b * n..(b + 1) * n]);
        }
    })?;
    Ok(pooled.iter().map(|p| mad_sigma(p)).collect())
}

fn thresholds(params: &GfbParams, weights: &[f64], lambda: &[f64], omega: f64) -> Vec<f64> {
    let scale = params.mu * params.kappa / omega;
    weights.iter().zip(lambda).map(|(w, l)| scale * w * l).collect()
}

fn penalty(params: &GfbParams, dict: &WaveletTransform, d: &[f64], weights: &[f64], lambda: &[f64]) -> f64 {
    if params.kappa == 0.0 {
        return 0.0;
    }
    let a = dict.analyze(d);
    params.kappa * a.iter().zip(weights).zip(lambda).map(|((a, w), l)| w * l * a.abs()).sum::<f64>()
}

/// Solves `min_Δ ½‖z − M(Δ + x0)‖² + κ‖w⊙λ⊙ΦΔ‖₁` subject to `Δ ≥ −x0` when
/// positivity is on.
///
/// Iteration, starting from `z1 = z2 = 0`:
/// `g = μ∇J1(d + x0)`,
/// `z1 += ρ(prox(2d − z1 − g) − d)`, `z2 += ρ(P(2d − z2 − g) − d)`,
/// `d = ω1 z1 + ω2 z2`. Without positivity it reduces to relaxed
/// forward-backward on the single prox term.
#[allow(clippy::too_many_arguments)]
pub fn gfb_solve(
    op: &ObservationOperator,
    z: &[f64],
    x0: &[f64],
    weights: &[f64],
    lambda: LambdaSource<'_>,
    dict: &WaveletTransform,
    params: &GfbParams,
) -> Result<SolverState> {
    let n = op.hr_len();
    if x0.len() != n {
        return Err(SpriteError::dims(n, x0.len()));
    }
    if dict.image_len() != n {
        return Err(SpriteError::dims(n, dict.image_len()));
    }
    if weights.len() != dict.coeff_len() {
        return Err(SpriteError::dims(dict.coeff_len(), weights.len()));
    }
    if let LambdaSource::Fixed(l) = lambda {
        if l.len() != dict.coeff_len() {
            return Err(SpriteError::dims(dict.coeff_len(), l.len()));
        }
    }
    if !(params.mu > 0.0) || !(params.relax > 0.0) {
        return Err(SpriteError::Input("step and relaxation must be positive".into()));
    }
    let (omega1, omega2) = if params.positivity {
        (params.omega1, params.omega2)
    } else {
        (1.0, 0.0)
    };

    let mut state = SolverState {
        z1: vec![0.0; n],
        z2: vec![0.0; n],
        d: vec![0.0; n],
        x0: x0.to_vec(),
        weights: weights.to_vec(),
        lambda: match lambda {
            LambdaSource::Fixed(l) => l.to_vec(),
            LambdaSource::Residual => vec![0.0; dict.coeff_len()],
        },
        history: Vec::new(),
        iterations: 0,
        converged: false,
    };

    let mut initial_objective = None;
    let mut point = vec![0.0; n];
    let mut arg = vec![0.0; n];
    let mut dual = vec![0.0; dict.coeff_len()];
    for it in 0..params.max_iters {
        for k in 0..n {
            point[k] = state.d[k] + x0[k];
        }
        let mut resid = op.forward(&point)?;
        for (r, zi) in resid.iter_mut().zip(z) {
            *r -= zi;
        }
        let data_term = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
        let grad = op.adjoint(&resid)?;
        if matches!(lambda, LambdaSource::Residual) {
            state.lambda = lambda_from_gradient(dict, &grad);
        }
        let pen = penalty(params, dict, &state.d, &state.weights, &state.lambda);
        let objective = data_term + pen;
        let reference = *initial_objective.get_or_insert(objective);
        if !objective.is_finite() || objective > params.divergence_factor * reference.max(f64::MIN_POSITIVE) {
            return Err(SpriteError::Divergence(format!(
                "objective rose from {reference:.6e} to {objective:.6e} at iteration {it}"
            )));
        }

        let thr = thresholds(params, &state.weights, &state.lambda, omega1);
        for k in 0..n {
            arg[k] = 2.0 * state.d[k] - state.z1[k] - params.mu * grad[k];
        }
        let start = if params.prox.warm_start {
            std::mem::take(&mut dual)
        } else {
            vec![0.0; dict.coeff_len()]
        };
        let (p1, u) = analysis_prox_from(&arg, &thr, dict, &params.prox, start)?;
        dual = u;
        for k in 0..n {
            state.z1[k] += params.relax * (p1[k] - state.d[k]);
        }
        if params.positivity {
            for k in 0..n {
                arg[k] = 2.0 * state.d[k] - state.z2[k] - params.mu * grad[k];
            }
            let p2 = project_positive_shift(&arg, x0)?;
            for k in 0..n {
                state.z2[k] += params.relax * (p2[k] - state.d[k]);
            }
        }

        let next: Vec<f64> = (0..n).map(|k| omega1 * state.z1[k] + omega2 * state.z2[k]).collect();
        let diff: f64 = next.iter().zip(&state.d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let base = norm2(&state.d);
        let rel_change = if base > 0.0 {
            diff / base
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        state.d = next;
        state.iterations = it + 1;
        state.history.push(IterationRecord {
            objective,
            data_term,
            penalty: pen,
            rel_change,
        });
        log::trace!("iteration {it}: objective {objective:.6e}, change {rel_change:.3e}");
        if rel_change < params.rel_tol {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

/// `w = 1 / (1 + |α|/(3σ))`; a zero `σ` keeps only exactly-zero coefficients.
pub fn weight_update(alpha: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        1.0 / (1.0 + alpha.abs() / (3.0 * sigma))
    } else if alpha == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Weights for the next pass from `α = ΦΔ` and the image-domain levels `σ = μλ`.
pub fn update_weights(dict: &WaveletTransform, delta: &[f64], sigma: &[f64]) -> Vec<f64> {
    let alpha = dict.analyze(delta);
    alpha.iter().zip(sigma).map(|(&a, &s)| weight_update(a, s)).collect()
}
