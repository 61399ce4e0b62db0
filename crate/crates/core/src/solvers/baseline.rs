//! Quadratic (Tikhonov) reconstruction around the registered median image.

use crate::error::{Result, SpriteError};
use crate::image::{ImageGrid, LRStack};
use crate::operator::ObservationOperator;
use crate::stats::dot;

use super::shift_add::registered_median;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop once `‖r‖ ≤ rel_tol · ‖b‖`.
    pub rel_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 500,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradient for a symmetric positive (semi)definite `apply`, from zero.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    opts: &CgOptions,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (rr.sqrt() / bnorm, x.clone());
    for it in 1..=opts.max_iters {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_next = dot(&r, &r);
        let rel = rr_next.sqrt() / bnorm;
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= opts.rel_tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                relative_residual: rel,
                converged: true,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    log::warn!(
        "conjugate gradient stopped at relative residual {:.3e} (target {:.1e})",
        best.0,
        opts.rel_tol
    );
    Ok(CgOutcome {
        solution: best.1,
        iterations: opts.max_iters,
        relative_residual: best.0,
        converged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOutput {
    pub image: ImageGrid,
    pub x0: ImageGrid,
    pub cg: CgOutcome,
}

/// Minimizes `J1(Δ + x0) + λ‖Δ‖²` with `x0` the registered median image, via
/// CG on `(MᵀM + 2λI)Δ = Mᵀ(z − M x0)`. `reg_lambda` is in whitened-data units.
///
/// The stack's noise, flux and shift parameters are used as given.
pub fn quadratic_baseline_with(stack: &LRStack, reg_lambda: f64, d: usize, opts: &CgOptions) -> Result<QuadraticOutput> {
    if !(reg_lambda >= 0.0 && reg_lambda.is_finite()) {
        return Err(SpriteError::Input(format!("regularization weight must be nonnegative, got {reg_lambda}")));
    }
    let mut stack = stack.clone();
    stack.set_upsampling(d)?;
    let op = ObservationOperator::from_stack(&stack);
    let z = ObservationOperator::whiten(&stack);
    let x0 = registered_median(&stack, d)?;
    let mut r = op.forward(x0.pixels())?;
    for (a, b) in r.iter_mut().zip(&z) {
        *a = b - *a;
    }
    let rhs = op.adjoint(&r)?;
    let cg = conjugate_gradient(
        |v| {
            let mut out = op.normal(v)?;
            for (o, x) in out.iter_mut().zip(v) {
                *o += 2.0 * reg_lambda * x;
            }
            Ok(out)
        },
        &rhs,
        opts,
    )?;
    let (h, w) = x0.dims();
    let pixels = x0.pixels().iter().zip(&cg.solution).map(|(a, b)| a + b).collect();
    Ok(QuadraticOutput {
        image: ImageGrid::from_vec(h, w, pixels)?,
        x0,
        cg,
    })
}

pub fn quadratic_baseline(stack: &LRStack, reg_lambda: f64, d: usize) -> Result<ImageGrid> {
    Ok(quadratic_baseline_with(stack, reg_lambda, d, &CgOptions::default())?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LRExposure;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack(rng: &mut ChaCha8Rng) -> LRStack {
        stack_with(rng, &[(0.0, 0.0), (-0.5, 0.0), (0.0, -0.5), (-0.5, -0.5)])
    }

    fn stack_with(rng: &mut ChaCha8Rng, shifts: &[(f64, f64)]) -> LRStack {
        let exps = shifts
            .iter()
            .map(|&s| {
                let img = ImageGrid::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0));
                LRExposure::new(img, rng.gen_range(0.5..1.0), rng.gen_range(0.8..1.2), s).unwrap()
            })
            .collect();
        LRStack::new(exps, 2).unwrap()
    }

    #[test]
    fn cg_solves_small_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let out = conjugate_gradient(|v| Ok((&a * DVector::from_column_slice(v)).as_slice().to_vec()), &b, &CgOptions::default()).unwrap();
        let expect = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        for (x, e) in out.solution.iter().zip(expect.iter()) {
            assert!((x - e).abs() < 1e-10);
        }
        assert!(out.converged);
    }

    #[test]
    fn unregularized_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = stack(&mut rng);
        let out = quadratic_baseline_with(&st, 0.0, 2, &CgOptions { max_iters: 2000, rel_tol: 1e-13 }).unwrap();
        let op = ObservationOperator::from_stack(&st);
        let n = op.hr_len();
        let mut m = DMatrix::zeros(op.data_len(), n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            for (r, v) in op.forward(&e).unwrap().into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        let z = DVector::from_vec(ObservationOperator::whiten(&st));
        let mtm = m.transpose() * &m;
        let x = mtm.clone().cholesky().expect("well-posed").solve(&(m.transpose() * z));
        for (a, b) in out.image.pixels().iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn strong_regularization_returns_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let st = stack(&mut rng);
        let out = quadratic_baseline_with(&st, 1e12, 2, &CgOptions::default()).unwrap();
        for (a, b) in out.image.pixels().iter().zip(out.x0.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = stack_with(&mut rng, &[(0.0, 0.0), (0.13, -0.31), (-0.42, 0.22), (0.37, 0.08)]);
        let lam = 0.3;
        let out = quadratic_baseline_with(&st, lam, 2, &CgOptions::default()).unwrap();
        let op = ObservationOperator::from_stack(&st);
        let z = ObservationOperator::whiten(&st);
        let delta: Vec<f64> = out.image.pixels().iter().zip(out.x0.pixels()).map(|(a, b)| a - b).collect();
        let mut r = op.forward(out.x0.pixels()).unwrap();
        r.iter_mut().zip(&z).for_each(|(a, b)| *a = b - *a);
        let rhs = op.adjoint(&r).unwrap();
        let mut lhs = op.normal(&delta).unwrap();
        lhs.iter_mut().zip(&delta).for_each(|(a, d)| *a += 2.0 * lam * d);
        let resid: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let scale = dot(&rhs, &delta).abs().max(1e-300);
        assert!(dot(&resid, &delta).abs() / scale < 1e-8);
        assert!(quadratic_baseline(&st, -1.0, 2).is_err());
    }
}
