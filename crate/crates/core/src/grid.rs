//! Separable multi-dimensional FFT on a periodic real-space grid.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major grid of up to three axes. Unused axes have length 1.
#[derive(Clone)]
pub struct FftGrid {
    dims: [usize; 3],
    ndim: usize,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for FftGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FftGrid")
            .field("dims", &&self.dims[..self.ndim])
            .finish()
    }
}

impl PartialEq for FftGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.ndim == other.ndim
    }
}

/// Smallest integer `>= n` whose prime factors are all in {2, 3, 5}.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl FftGrid {
    pub fn new(sizes: &[usize]) -> Self {
        assert!(!sizes.is_empty() && sizes.len() <= 3, "grid must have 1 to 3 axes");
        let mut dims = [1usize; 3];
        dims[..sizes.len()].copy_from_slice(sizes);
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            dims,
            ndim: sizes.len(),
            forward,
            inverse,
        }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of an integer frequency, wrapping negative entries.
    pub fn index_of_freq(&self, freq: &[i64]) -> usize {
        let mut idx = 0usize;
        for a in 0..3 {
            let n = self.dims[a] as i64;
            let f = if a < freq.len() { freq[a] } else { 0 };
            idx = idx * self.dims[a] + f.rem_euclid(n) as usize;
        }
        idx
    }

    /// Signed frequency of a flat index (in `(-n/2, n/2]` per axis).
    pub fn freq_of_index(&self, mut idx: usize) -> [i64; 3] {
        let mut out = [0i64; 3];
        for a in (0..3).rev() {
            let n = self.dims[a];
            let r = idx % n;
            idx /= n;
            out[a] = if r > n / 2 { r as i64 - n as i64 } else { r as i64 };
        }
        out
    }

    /// Grid point of a flat index in fractional coordinates.
    pub fn point_of_index(&self, mut idx: usize) -> [f64; 3] {
        let mut out = [0f64; 3];
        for a in (0..3).rev() {
            let n = self.dims[a];
            out[a] = (idx % n) as f64 / n as f64;
            idx /= n;
        }
        out
    }

    /// Unnormalized forward transform `X_k = sum_r x_r exp(-2 pi i k.r/n)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Unnormalized inverse transform `x_r = sum_k X_k exp(2 pi i k.r/n)`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "grid size mismatch");
        let [n0, n1, n2] = self.dims;
        // innermost axis is contiguous
        if n2 > 1 {
            for chunk in data.chunks_exact_mut(n2) {
                plans[2].process(chunk);
            }
        }
        if n1 > 1 {
            let mut line = vec![Complex64::new(0.0, 0.0); n1];
            for i0 in 0..n0 {
                for i2 in 0..n2 {
                    for (i1, v) in line.iter_mut().enumerate() {
                        *v = data[(i0 * n1 + i1) * n2 + i2];
                    }
                    plans[1].process(&mut line);
                    for (i1, v) in line.iter().enumerate() {
                        data[(i0 * n1 + i1) * n2 + i2] = *v;
                    }
                }
            }
        }
        if n0 > 1 {
            let stride = n1 * n2;
            let mut line = vec![Complex64::new(0.0, 0.0); n0];
            for off in 0..stride {
                for (i0, v) in line.iter_mut().enumerate() {
                    *v = data[i0 * stride + off];
                }
                plans[0].process(&mut line);
                for (i0, v) in line.iter().enumerate() {
                    data[i0 * stride + off] = *v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(7), 8);
        assert_eq!(next_smooth(13), 15);
        assert_eq!(next_smooth(31), 32);
        assert_eq!(next_smooth(49), 50);
        assert_eq!(next_smooth(1), 1);
    }

    #[test]
    fn transform_matches_direct_dft_2d() {
        let grid = FftGrid::new(&[4, 5]);
        let n = grid.len();
        let data: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        grid.forward(&mut fast);
        for k in 0..n {
            let kf = grid.freq_of_index(k);
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..n {
                let x = grid.point_of_index(r);
                let phase = -2.0 * PI * (kf[0] as f64 * x[0] + kf[1] as f64 * x[1]);
                acc += data[r] * Complex64::from_polar(1.0, phase);
            }
            assert!((acc - fast[k]).norm() < 1e-12);
        }
        grid.inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a / n as f64 - b).norm() < 1e-14);
        }
    }

    #[test]
    fn frequency_index_round_trip() {
        let grid = FftGrid::new(&[6, 5, 4]);
        for idx in 0..grid.len() {
            let f = grid.freq_of_index(idx);
            assert_eq!(grid.index_of_freq(&f), idx);
        }
    }
}
