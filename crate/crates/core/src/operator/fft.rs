//! FFT route for the warp: correlate the zero-padded image with the 8×8 tap
//! kernel in the Fourier domain, then keep the decimated samples.
//!
//! Padding each axis by at least the tap count keeps circular wrap-around away
//! from every sample that is read back, so results equal the direct route.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AxisTaps, TAPS};

/// Smallest 2^a·3^b·5^c that is `>= n`.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub(crate) struct FftWarp {
    hr: (usize, usize),
    n: (usize, usize),
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl FftWarp {
    pub fn new(hr: (usize, usize)) -> Self {
        let n = (smooth_size(hr.0 + TAPS), smooth_size(hr.1 + TAPS));
        let mut planner = FftPlanner::new();
        FftWarp {
            hr,
            n,
            row_fwd: planner.plan_fft_forward(n.1),
            row_inv: planner.plan_fft_inverse(n.1),
            col_fwd: planner.plan_fft_forward(n.0),
            col_inv: planner.plan_fft_inverse(n.0),
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (n0, n1) = self.n;
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); n0];
        for c in 0..n1 {
            for r in 0..n0 {
                column[r] = buf[r * n1 + c];
            }
            col.process(&mut column);
            for r in 0..n0 {
                buf[r * n1 + c] = column[r];
            }
        }
        if inverse {
            let s = 1.0 / (n0 * n1) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn zero_spectrum(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.n.0 * self.n.1]
    }

    /// Spectrum of the zero-padded high-resolution image.
    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = self.zero_spectrum();
        for l in 0..self.hr.0 {
            for m in 0..self.hr.1 {
                buf[l * self.n.1 + m] = Complex64::new(x[l * self.hr.1 + m], 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    fn kernel_spectrum(&self, rows: &AxisTaps, cols: &AxisTaps) -> Vec<Complex64> {
        let mut buf = self.zero_spectrum();
        for q in 0..TAPS {
            for r in 0..TAPS {
                buf[q * self.n.1 + r] = Complex64::new(rows.weights[q] * cols.weights[r], 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    /// Wrapped buffer index of correlation lag `u` along an axis, or `None` when
    /// every tap at that lag falls outside the image.
    fn lag_index(u: isize, extent: usize, n: usize) -> Option<usize> {
        if u <= -(TAPS as isize) || u >= extent as isize {
            None
        } else {
            Some(u.rem_euclid(n as isize) as usize)
        }
    }

    pub fn predict(
        &self,
        spectrum: &[Complex64],
        rows: &AxisTaps,
        cols: &AxisTaps,
        d: usize,
        lr: (usize, usize),
        out: &mut [f64],
    ) {
        let k = self.kernel_spectrum(rows, cols);
        let mut buf: Vec<Complex64> = spectrum.iter().zip(&k).map(|(a, b)| a * b.conj()).collect();
        self.transform(&mut buf, true);
        for i in 0..lr.0 {
            let u = Self::lag_index((d * i) as isize + rows.base, self.hr.0, self.n.0);
            for j in 0..lr.1 {
                let v = Self::lag_index((d * j) as isize + cols.base, self.hr.1, self.n.1);
                out[i * lr.1 + j] = match (u, v) {
                    (Some(u), Some(v)) => buf[u * self.n.1 + v].re,
                    _ => 0.0,
                };
            }
        }
    }

    pub fn accumulate_adjoint(
        &self,
        r: &[f64],
        rows: &AxisTaps,
        cols: &AxisTaps,
        d: usize,
        lr: (usize, usize),
        acc: &mut [Complex64],
    ) {
        let mut buf = self.zero_spectrum();
        for i in 0..lr.0 {
            let Some(u) = Self::lag_index((d * i) as isize + rows.base, self.hr.0, self.n.0) else {
                continue;
            };
            for j in 0..lr.1 {
                if let Some(v) = Self::lag_index((d * j) as isize + cols.base, self.hr.1, self.n.1) {
                    buf[u * self.n.1 + v].re += r[i * lr.1 + j];
                }
            }
        }
        self.transform(&mut buf, false);
        let k = self.kernel_spectrum(rows, cols);
        for ((a, b), c) in acc.iter_mut().zip(&buf).zip(&k) {
            *a += b * c;
        }
    }

    pub fn finish_adjoint(&self, mut acc: Vec<Complex64>, out: &mut [f64]) {
        self.transform(&mut acc, true);
        for l in 0..self.hr.0 {
            for m in 0..self.hr.1 {
                out[l * self.hr.1 + m] += acc[l * self.n.1 + m].re;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::smooth_size;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(7), 8);
        assert_eq!(smooth_size(176), 180);
        assert_eq!(smooth_size(49), 50);
    }
}
