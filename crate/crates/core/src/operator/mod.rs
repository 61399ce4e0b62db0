//! Matrix-free observation operator.
//!
//! For exposure `k` with centroid offset `(i_k, j_k)` (LR pixels), flux `f_k` and
//! noise `σ_k`, the predicted low-resolution sample is
//!
//! ```text
//! ŷ_k(i, j) = Σ_l Σ_m h(l − d(i − i_k)) h(m − d(j − j_k)) x(l, m)
//! ```
//!
//! with `h` the Lanczos4 kernel, and the stacked operator row is scaled by `f_k / σ_k`.
//! Everything outside the high-resolution raster is zero.

mod fft;
pub mod spectral;

use crate::error::{Result, SpriteError};
use crate::image::{ImageGrid, LRStack};

pub use spectral::{spectral_radius, PowerIterationOptions, SpectralEstimate};

/// Half-width of the Lanczos kernel support.
pub const LANCZOS_SUPPORT: usize = 4;
const TAPS: usize = 2 * LANCZOS_SUPPORT;

fn sinc(x: f64) -> f64 {
    let px = std::f64::consts::PI * x;
    px.sin() / px
}

/// Lanczos4 interpolation kernel: `sinc(x)·sinc(x/4)` on `|x| < 4`, exactly 1 at 0
/// and exactly 0 at the other integers.
pub fn lanczos4_1d(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() >= LANCZOS_SUPPORT as f64 || x.fract() == 0.0 {
        0.0
    } else {
        sinc(x) * sinc(x / LANCZOS_SUPPORT as f64)
    }
}

/// Eight kernel taps along one axis for a fixed sub-pixel offset.
///
/// Output sample `i` reads high-resolution indices `d·i + base + q`, `q = 0..8`,
/// weighted by `weights[q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct AxisTaps {
    pub base: isize,
    pub weights: [f64; TAPS],
}

impl AxisTaps {
    /// `hr_offset` is the exposure offset in high-resolution pixels (`d · i_k`).
    pub fn new(hr_offset: f64) -> Self {
        let neg = -hr_offset;
        let fl = neg.floor();
        let frac = neg - fl;
        let mut weights = [0.0; TAPS];
        for (q, w) in weights.iter_mut().enumerate() {
            *w = lanczos4_1d(q as f64 - (LANCZOS_SUPPORT as f64 - 1.0) - frac);
        }
        AxisTaps {
            base: fl as isize - (LANCZOS_SUPPORT as isize - 1),
            weights,
        }
    }
}

/// Which convolution routine backs the warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionPath {
    /// Direct separable sums; they only touch the retained samples.
    #[default]
    Auto,
    Direct,
    Fft,
}

#[derive(Debug, Clone)]
struct ExposureModel {
    scale: f64,
    rows: AxisTaps,
    cols: AxisTaps,
}

/// The stacked operator `M` mapping a `(d·p_h)×(d·p_w)` image to `n·p_h·p_w` samples.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    exposures: Vec<ExposureModel>,
    hr_dims: (usize, usize),
    lr_dims: (usize, usize),
    d: usize,
    path: ConvolutionPath,
}

impl ObservationOperator {
    /// Builds `M` from the noise, flux and shift of each exposure in `stack`.
    pub fn from_stack(stack: &LRStack) -> Self {
        let meta: Vec<_> = stack
            .exposures()
            .iter()
            .map(|e| (e.sigma, e.flux, e.shift))
            .collect();
        Self::new(&meta, stack.lr_dims(), stack.upsampling())
    }

    /// `meta[k] = (σ_k, f_k, (i_k, j_k))`.
    pub fn new(meta: &[(f64, f64, (f64, f64))], lr_dims: (usize, usize), d: usize) -> Self {
        assert!(d >= 1, "upsampling factor must be >= 1");
        let exposures = meta
            .iter()
            .map(|&(sigma, flux, (si, sj))| ExposureModel {
                scale: flux / sigma,
                rows: AxisTaps::new(d as f64 * si),
                cols: AxisTaps::new(d as f64 * sj),
            })
            .collect();
        ObservationOperator {
            exposures,
            hr_dims: (lr_dims.0 * d, lr_dims.1 * d),
            lr_dims,
            d,
            path: ConvolutionPath::Auto,
        }
    }

    pub fn with_path(mut self, path: ConvolutionPath) -> Self {
        self.path = path;
        self
    }

    pub fn n_exposures(&self) -> usize {
        self.exposures.len()
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.hr_dims
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr_dims
    }

    pub fn upsampling(&self) -> usize {
        self.d
    }

    pub fn hr_len(&self) -> usize {
        self.hr_dims.0 * self.hr_dims.1
    }

    pub fn lr_len(&self) -> usize {
        self.lr_dims.0 * self.lr_dims.1
    }

    /// Length of the stacked data vector.
    pub fn data_len(&self) -> usize {
        self.n_exposures() * self.lr_len()
    }

    fn use_fft(&self) -> bool {
        match self.path {
            ConvolutionPath::Direct | ConvolutionPath::Auto => false,
            ConvolutionPath::Fft => true,
        }
    }

    fn check_hr(&self, len: usize) -> Result<()> {
        if len != self.hr_len() {
            return Err(SpriteError::dims(
                format!("{} high-resolution pixels", self.hr_len()),
                len,
            ));
        }
        Ok(())
    }

    fn check_data(&self, len: usize) -> Result<()> {
        if len != self.data_len() {
            return Err(SpriteError::dims(
                format!("{} stacked samples", self.data_len()),
                len,
            ));
        }
        Ok(())
    }

    /// `M x` on a row-major high-resolution vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_hr(x.len())?;
        let lr = self.lr_len();
        let mut out = vec![0.0; self.data_len()];
        if self.use_fft() {
            let conv = fft::FftWarp::new(self.hr_dims);
            let spectrum = conv.spectrum(x);
            for (k, e) in self.exposures.iter().enumerate() {
                conv.predict(&spectrum, &e.rows, &e.cols, self.d, self.lr_dims, &mut out[k * lr..(k + 1) * lr]);
                out[k * lr..(k + 1) * lr].iter_mut().for_each(|v| *v *= e.scale);
            }
        } else {
            let mut scratch = vec![0.0; self.hr_dims.0 * self.lr_dims.1];
            for (k, e) in self.exposures.iter().enumerate() {
                let dst = &mut out[k * lr..(k + 1) * lr];
                predict_direct(x, self.hr_dims, &e.rows, &e.cols, self.d, self.lr_dims, &mut scratch, dst);
                dst.iter_mut().for_each(|v| *v *= e.scale);
            }
        }
        Ok(out)
    }

    /// `Mᵀ r`; exposures are accumulated in index order.
    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_data(r.len())?;
        let lr = self.lr_len();
        let mut out = vec![0.0; self.hr_len()];
        if self.use_fft() {
            let conv = fft::FftWarp::new(self.hr_dims);
            let mut acc = conv.zero_spectrum();
            let mut scaled = vec![0.0; lr];
            for (k, e) in self.exposures.iter().enumerate() {
                for (s, v) in scaled.iter_mut().zip(&r[k * lr..(k + 1) * lr]) {
                    *s = e.scale * v;
                }
                conv.accumulate_adjoint(&scaled, &e.rows, &e.cols, self.d, self.lr_dims, &mut acc);
            }
            conv.finish_adjoint(acc, &mut out);
        } else {
            let mut scratch = vec![0.0; self.hr_dims.0 * self.lr_dims.1];
            let mut scaled = vec![0.0; lr];
            for (k, e) in self.exposures.iter().enumerate() {
                for (s, v) in scaled.iter_mut().zip(&r[k * lr..(k + 1) * lr]) {
                    *s = e.scale * v;
                }
                adjoint_direct(&scaled, self.hr_dims, &e.rows, &e.cols, self.d, self.lr_dims, &mut scratch, &mut out);
            }
        }
        Ok(out)
    }

    /// `Mᵀ(M x − z)`, the gradient of `½‖z − M x‖²`.
    pub fn grad_j1(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_data(z.len())?;
        let mut r = self.forward(x)?;
        for (a, b) in r.iter_mut().zip(z) {
            *a -= b;
        }
        self.adjoint(&r)
    }

    /// `½‖z − M x‖²`.
    pub fn j1(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_data(z.len())?;
        let mx = self.forward(x)?;
        Ok(0.5 * mx.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    /// Applies `MᵀM`.
    pub fn normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mx = self.forward(x)?;
        self.adjoint(&mx)
    }

    /// Whitened data vector `z_k = y_k / σ_k` in stacking order.
    pub fn whiten(stack: &LRStack) -> Vec<f64> {
        stack
            .exposures()
            .iter()
            .flat_map(|e| e.image.pixels().iter().map(move |v| v / e.sigma))
            .collect()
    }

    /// Estimate of `ρ(MᵀM)` by power iteration.
    pub fn normal_spectral_radius(&self, opts: &PowerIterationOptions) -> SpectralEstimate {
        spectral_radius(|v| self.normal(v).expect("dimensions fixed by construction"), self.hr_len(), opts)
    }
}

/// `D·H·x` for one exposure, unscaled, via two separable passes.
#[allow(clippy::too_many_arguments)]
fn predict_direct(
    x: &[f64],
    hr: (usize, usize),
    rows: &AxisTaps,
    cols: &AxisTaps,
    d: usize,
    lr: (usize, usize),
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let (hh, hw) = (hr.0 as isize, hr.1 as isize);
    let lw = lr.1;
    // columns: scratch(l, j) = Σ_q w[q] x(l, d·j + base + q)
    for l in 0..hr.0 {
        let xrow = &x[l * hr.1..(l + 1) * hr.1];
        let srow = &mut scratch[l * lw..(l + 1) * lw];
        for (j, s) in srow.iter_mut().enumerate() {
            let m0 = (d * j) as isize + cols.base;
            let mut acc = 0.0;
            if m0 >= 0 && m0 + TAPS as isize <= hw {
                let win = &xrow[m0 as usize..m0 as usize + TAPS];
                for q in 0..TAPS {
                    acc += cols.weights[q] * win[q];
                }
            } else {
                for q in 0..TAPS {
                    let m = m0 + q as isize;
                    if m >= 0 && m < hw {
                        acc += cols.weights[q] * xrow[m as usize];
                    }
                }
            }
            *s = acc;
        }
    }
    // rows: out(i, j) = Σ_q w[q] scratch(d·i + base + q, j)
    for i in 0..lr.0 {
        let orow = &mut out[i * lw..(i + 1) * lw];
        orow.iter_mut().for_each(|v| *v = 0.0);
        let l0 = (d * i) as isize + rows.base;
        for q in 0..TAPS {
            let l = l0 + q as isize;
            let w = rows.weights[q];
            if l < 0 || l >= hh || w == 0.0 {
                continue;
            }
            let srow = &scratch[l as usize * lw..(l as usize + 1) * lw];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += w * s;
            }
        }
    }
}

/// Accumulates `Hᵀ·Dᵀ·r` into `out`.
#[allow(clippy::too_many_arguments)]
fn adjoint_direct(
    r: &[f64],
    hr: (usize, usize),
    rows: &AxisTaps,
    cols: &AxisTaps,
    d: usize,
    lr: (usize, usize),
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let (hh, hw) = (hr.0 as isize, hr.1 as isize);
    let lw = lr.1;
    scratch.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..lr.0 {
        let rrow = &r[i * lw..(i + 1) * lw];
        let l0 = (d * i) as isize + rows.base;
        for q in 0..TAPS {
            let l = l0 + q as isize;
            let w = rows.weights[q];
            if l < 0 || l >= hh || w == 0.0 {
                continue;
            }
            let srow = &mut scratch[l as usize * lw..(l as usize + 1) * lw];
            for (s, v) in srow.iter_mut().zip(rrow) {
                *s += w * v;
            }
        }
    }
    for l in 0..hr.0 {
        let srow = &scratch[l * lw..(l + 1) * lw];
        let orow = &mut out[l * hr.1..(l + 1) * hr.1];
        for (j, &s) in srow.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let m0 = (d * j) as isize + cols.base;
            for q in 0..TAPS {
                let m = m0 + q as isize;
                if m >= 0 && m < hw {
                    orow[m as usize] += cols.weights[q] * s;
                }
            }
        }
    }
}

/// `D·H_k·x`: one exposure's prediction with unit flux and noise.
pub fn predict_exposure(x_hr: &ImageGrid, shift: (f64, f64), d: usize) -> Result<ImageGrid> {
    if d == 0 {
        return Err(SpriteError::Input("upsampling factor must be >= 1".into()));
    }
    let (h, w) = x_hr.dims();
    if h % d != 0 || w % d != 0 {
        return Err(SpriteError::Input(format!(
            "{h}x{w} image is not a multiple of the upsampling factor {d}"
        )));
    }
    let op = ObservationOperator::new(&[(1.0, 1.0, shift)], (h / d, w / d), d);
    let y = op.forward(x_hr.pixels())?;
    Ok(ImageGrid::from_vec(h / d, w / d, y)?.with_pitch_scale(x_hr.pitch_scale() * d as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    /// Independent reference: the kernel written straight from its definition.
    fn lanczos_reference(x: f64) -> f64 {
        if x == 0.0 {
            return 1.0;
        }
        if x.abs() >= 4.0 {
            return 0.0;
        }
        let pi = std::f64::consts::PI;
        ((pi * x).sin() / (pi * x)) * ((pi * x / 4.0).sin() / (pi * x / 4.0))
    }

    /// Dense `M` assembled entry by entry from the sample-prediction sum.
    fn dense_operator(meta: &[(f64, f64, (f64, f64))], lr: (usize, usize), d: usize) -> DMatrix<f64> {
        let (hh, hw) = (lr.0 * d, lr.1 * d);
        let mut m = DMatrix::zeros(meta.len() * lr.0 * lr.1, hh * hw);
        for (k, &(sigma, flux, (si, sj))) in meta.iter().enumerate() {
            for i in 0..lr.0 {
                for j in 0..lr.1 {
                    let row = k * lr.0 * lr.1 + i * lr.1 + j;
                    for l in 0..hh {
                        let hl = lanczos_reference(l as f64 - d as f64 * (i as f64 - si));
                        if hl == 0.0 {
                            continue;
                        }
                        for mm in 0..hw {
                            let hm = lanczos_reference(mm as f64 - d as f64 * (j as f64 - sj));
                            m[(row, l * hw + mm)] = flux / sigma * hl * hm;
                        }
                    }
                }
            }
        }
        m
    }

    fn random_meta(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64, (f64, f64))> {
        (0..n)
            .map(|_| {
                (
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.5..2.0),
                    (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
            })
            .collect()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(lanczos4_1d(0.0), 1.0);
        assert_eq!(lanczos4_1d(4.0), 0.0);
        assert_eq!(lanczos4_1d(-5.0), 0.0);
        assert_eq!(lanczos4_1d(2.0), 0.0);
        // sinc(0.5)·sinc(0.125)
        assert!((lanczos4_1d(0.5) - 0.620384).abs() < 1e-6);
        for k in 0..200 {
            let x = -4.5 + k as f64 * 0.0451;
            assert!((lanczos4_1d(x) - lanczos_reference(x)).abs() < 1e-15);
            assert_eq!(lanczos4_1d(x), lanczos4_1d(-x));
        }
    }

    #[test]
    fn predict_zero_and_identity() {
        let z = ImageGrid::zeros(8, 8);
        assert!(predict_exposure(&z, (0.3, -0.2), 2).unwrap().pixels().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ImageGrid::from_fn(9, 7, |_, _| rng.gen_range(-1.0..1.0));
        let y = predict_exposure(&x, (0.0, 0.0), 1).unwrap();
        for (a, b) in x.pixels().iter().zip(y.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(predict_exposure(&ImageGrid::zeros(5, 4), (0.0, 0.0), 2).is_err());
    }

    #[test]
    fn predict_delta_samples_kernel() {
        // HR delta at an LR-aligned sample, fractional offset: each LR pixel picks up
        // the separable kernel evaluated at its distance from the delta.
        let d = 2;
        let (a, b) = (4usize, 3usize);
        let mut x = ImageGrid::zeros(16, 16);
        x.set(d * a, d * b, 1.0);
        let shift = (0.3, -0.15);
        let y = predict_exposure(&x, shift, d).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expect = lanczos_reference((d * a) as f64 - d as f64 * (i as f64 - shift.0))
                    * lanczos_reference((d * b) as f64 - d as f64 * (j as f64 - shift.1));
                assert!((y.get(i, j) - expect).abs() < 1e-14);
            }
        }
        let y0 = predict_exposure(&x, (0.0, 0.0), d).unwrap();
        assert_eq!(y0.get(a, b), 1.0);
        assert!((y0.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &d in &[1usize, 2, 4] {
            let lr = (16 / d, 16 / d);
            let meta = random_meta(&mut rng, 3);
            let dense = dense_operator(&meta, lr, d);
            for path in [ConvolutionPath::Direct, ConvolutionPath::Fft] {
                let op = ObservationOperator::new(&meta, lr, d).with_path(path);
                let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..op.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mx = op.forward(&x).unwrap();
                let mty = op.adjoint(&y).unwrap();
                let dx = &dense * nalgebra::DVector::from_vec(x.clone());
                let dty = dense.transpose() * nalgebra::DVector::from_vec(y.clone());
                for (a, b) in mx.iter().zip(dx.iter()) {
                    assert!((a - b).abs() < 1e-10, "{path:?} d={d}: {a} vs {b}");
                }
                for (a, b) in mty.iter().zip(dty.iter()) {
                    assert!((a - b).abs() < 1e-10, "{path:?} d={d}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn fft_and_direct_agree_on_large_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let meta = random_meta(&mut rng, 4);
        let direct = ObservationOperator::new(&meta, (40, 36), 2);
        let fft = direct.clone().with_path(ConvolutionPath::Fft);
        let x: Vec<f64> = (0..direct.hr_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..direct.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (direct.forward(&x).unwrap(), fft.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
        let (a, b) = (direct.adjoint(&y).unwrap(), fft.adjoint(&y).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3usize {
            for n in 1..=8usize {
                let meta = random_meta(&mut rng, n);
                let op = ObservationOperator::new(&meta, (6, 5), d);
                let x: Vec<f64> = (0..op.hr_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..op.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let lhs = dot(&op.forward(&x).unwrap(), &y);
                let rhs = dot(&x, &op.adjoint(&y).unwrap());
                assert!((lhs - rhs).abs() <= 1e-10 * norm(&x) * norm(&y));
            }
        }
    }

    #[test]
    fn forward_basics() {
        let op = ObservationOperator::new(&[(1.0, 1.0, (0.0, 0.0))], (4, 4), 2);
        assert!(op.forward(&[0.0; 64]).unwrap().iter().all(|&v| v == 0.0));
        assert!(op.adjoint(&[0.0; 16]).unwrap().iter().all(|&v| v == 0.0));
        assert!(op.forward(&[0.0; 63]).is_err());
        assert!(op.adjoint(&[0.0; 15]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let img = ImageGrid::from_vec(8, 8, x.clone()).unwrap();
        assert_eq!(op.forward(&x).unwrap(), predict_exposure(&img, (0.0, 0.0), 2).unwrap().flatten());

        let meta = random_meta(&mut rng, 3);
        let op = ObservationOperator::new(&meta, (4, 4), 2);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (a, b) = (op.forward(&x).unwrap(), op.forward(&x2).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| (2.0 * p - q).abs() < 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let meta = random_meta(&mut rng, 3);
        let op = ObservationOperator::new(&meta, (5, 5), 2);
        let x: Vec<f64> = (0..op.hr_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..op.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = op.grad_j1(&x, &z).unwrap();
        let h = 1e-6;
        for _ in 0..10 {
            let dir: Vec<f64> = (0..op.hr_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let fd = (op.j1(&xp, &z).unwrap() - op.j1(&xm, &z).unwrap()) / (2.0 * h);
            let an = dot(&g, &dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        }

        // exact data gives a zero gradient
        let zx = op.forward(&x).unwrap();
        assert!(op.grad_j1(&x, &zx).unwrap().iter().all(|v| v.abs() < 1e-12));
        // zero data gives MᵀMx
        let g0 = op.grad_j1(&x, &vec![0.0; op.data_len()]).unwrap();
        assert_eq!(g0, op.normal(&x).unwrap());
    }

    #[test]
    fn pure_decimation_radius_is_exposure_count() {
        let opts = PowerIterationOptions::default();
        for n in 1..=4 {
            let meta = vec![(1.0, 1.0, (0.0, 0.0)); n];
            let op = ObservationOperator::new(&meta, (6, 6), 2);
            let est = op.normal_spectral_radius(&opts);
            assert!((est.value - n as f64).abs() < 1e-9, "n={n}: {}", est.value);
        }
    }

    #[test]
    fn radius_matches_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let meta = random_meta(&mut rng, 4);
        let lr = (8, 8);
        let dense = dense_operator(&meta, lr, 2);
        let normal = dense.transpose() * &dense;
        let eig = normal.symmetric_eigenvalues();
        let top = eig.iter().copied().fold(f64::MIN, f64::max);
        let op = ObservationOperator::new(&meta, lr, 2);
        let est = op.normal_spectral_radius(&PowerIterationOptions {
            rel_tol: 1e-10,
            max_iters: 5000,
            ..Default::default()
        });
        assert!((est.value - top).abs() / top < 1e-4, "{} vs {top}", est.value);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn inner_product_identity_random_geometry(d in 1usize..=3, n in 1usize..=8, h in 3usize..=9, w in 3usize..=9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let meta = random_meta(&mut rng, n);
            let op = ObservationOperator::new(&meta, (h, w), d);
            let x: Vec<f64> = (0..h * w * d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..op.data_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = dot(&op.forward(&x).unwrap(), &r);
            let rhs = dot(&x, &op.adjoint(&r).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn forward_cost_scales_with_pixel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let meta = random_meta(&mut rng, 4);
        let mut time = |p: usize| {
            let op = ObservationOperator::new(&meta, (p, p), 2);
            let x: Vec<f64> = (0..4 * p * p).map(|_| rng.gen_range(0.0..1.0)).collect();
            op.forward(&x).unwrap();
            (0..5)
                .map(|_| {
                    let t = std::time::Instant::now();
                    std::hint::black_box(op.forward(&x).unwrap());
                    t.elapsed().as_secs_f64()
                })
                .fold(f64::MAX, f64::min)
        };
        let small = time(64);
        let large = time(128);
        assert!(large / small < 4.6, "{large} / {small}");
    }
}
