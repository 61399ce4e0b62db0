//! Proximity operators: positivity projection and the weighted analysis-l1
//! prox, the latter solved by a forward-backward loop on the dual.

use crate::error::{Result, SpriteError};
use crate::wavelets::Dictionary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig {
    /// Dual step, admissible in `(0, 2/ρ(ΦΦᵀ))`.
    pub mu_prox: f64,
    pub inner_max_iters: usize,
    pub inner_rel_tol: f64,
    /// Start each solve from the previous dual variable instead of zero.
    pub warm_start: bool,
}

impl ProxConfig {
    /// Default inner loop with step `1/ρ(ΦΦᵀ)`.
    pub fn for_frame_bound(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(SpriteError::Input(format!("frame bound must be positive, got {rho}")));
        }
        Ok(ProxConfig {
            mu_prox: 1.0 / rho,
            inner_max_iters: 50,
            inner_rel_tol: 1e-6,
            warm_start: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_prox > 0.0 && self.mu_prox.is_finite()) {
            return Err(SpriteError::Input(format!("mu_prox must be positive, got {}", self.mu_prox)));
        }
        if self.inner_max_iters == 0 {
            return Err(SpriteError::Input("inner_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `max(x_i, −x0_i)`: projection onto `{t : t ≥ −x0}`.
pub fn project_positive_shift(x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    if x.len() != x0.len() {
        return Err(SpriteError::dims(x0.len(), x.len()));
    }
    Ok(x.iter().zip(x0).map(|(&a, &b)| a.max(-b)).collect())
}

/// Prox of `u ↦ Σ_j t_j |(Φu)_j|` at `x`.
///
/// Returns `x − Φᵀû` with `û` the minimizer of `½‖x − Φᵀu‖²` over the box
/// `|u_j| ≤ t_j`, starting from `u = 0`. The loop stops once the returned
/// image changes by less than `inner_rel_tol` relative to its norm.
pub fn analysis_prox<D: Dictionary + ?Sized>(
    x: &[f64],
    thresholds: &[f64],
    dict: &D,
    cfg: &ProxConfig,
) -> Result<Vec<f64>> {
    Ok(analysis_prox_dual(x, thresholds, dict, cfg)?.0)
}

/// Same as [`analysis_prox`] but also returns the dual variable `û`.
pub fn analysis_prox_dual<D: Dictionary + ?Sized>(
    x: &[f64],
    thresholds: &[f64],
    dict: &D,
    cfg: &ProxConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    analysis_prox_from(x, thresholds, dict, cfg, vec![0.0; dict.coeff_len()])
}

/// Dual loop started from `u0`, which is first clamped into the box.
pub fn analysis_prox_from<D: Dictionary + ?Sized>(
    x: &[f64],
    thresholds: &[f64],
    dict: &D,
    cfg: &ProxConfig,
    u0: Vec<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if x.len() != dict.image_len() {
        return Err(SpriteError::dims(dict.image_len(), x.len()));
    }
    if thresholds.len() != dict.coeff_len() {
        return Err(SpriteError::dims(dict.coeff_len(), thresholds.len()));
    }
    if u0.len() != dict.coeff_len() {
        return Err(SpriteError::dims(dict.coeff_len(), u0.len()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(SpriteError::Input(format!("thresholds must be nonnegative, got {t}")));
    }

    let mut u = u0;
    if thresholds.iter().all(|&t| t == 0.0) {
        u.iter_mut().for_each(|v| *v = 0.0);
        return Ok((x.to_vec(), u));
    }
    let mut out = x.to_vec();
    if u.iter().any(|&v| v != 0.0) {
        for (v, &t) in u.iter_mut().zip(thresholds) {
            *v = v.clamp(-t, t);
        }
        let back = dict.adjoint(&u);
        for ((o, xi), b) in out.iter_mut().zip(x).zip(&back) {
            *o = xi - b;
        }
    }
    for _ in 0..cfg.inner_max_iters {
        let step = dict.analyze(&out);
        for ((uj, sj), &t) in u.iter_mut().zip(&step).zip(thresholds) {
            *uj = (*uj + cfg.mu_prox * sj).clamp(-t, t);
        }
        let back = dict.adjoint(&u);
        let mut delta2 = 0.0;
        let mut norm2 = 0.0;
        for ((o, xi), b) in out.iter_mut().zip(x).zip(&back) {
            let next = xi - b;
            delta2 += (next - *o) * (next - *o);
            norm2 += next * next;
            *o = next;
        }
        if delta2 <= cfg.inner_rel_tol * cfg.inner_rel_tol * norm2 {
            break;
        }
    }
    Ok((out, u))
}
