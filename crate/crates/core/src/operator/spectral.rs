//! Power iteration for the largest eigenvalue of a symmetric positive
//! semidefinite map, used to bound gradient step sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationOptions {
    pub rel_tol: f64,
    pub min_iters: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        PowerIterationOptions {
            rel_tol: 1e-6,
            min_iters: 50,
            max_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// `false` when the iteration cap was hit before the tolerance was met.
    pub converged: bool,
}

/// Estimates `ρ(A)` for a symmetric PSD operator given as a closure.
pub fn spectral_radius(
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    dim: usize,
    opts: &PowerIterationOptions,
) -> SpectralEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    normalize(&mut v);
    let mut value = 0.0;
    for it in 1..=opts.max_iters.max(1) {
        let mut w = apply(&v);
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let change = (norm - value).abs() / norm;
        value = norm;
        w.iter_mut().for_each(|a| *a /= norm);
        v = w;
        if it >= opts.min_iters.min(opts.max_iters) && change < opts.rel_tol {
            return SpectralEstimate {
                value,
                iterations: it,
                converged: true,
            };
        }
    }
    log::warn!(
        "power iteration stopped at the {}-iteration cap before reaching tolerance {:e}",
        opts.max_iters,
        opts.rel_tol
    );
    SpectralEstimate {
        value,
        iterations: opts.max_iters,
        converged: false,
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
}
