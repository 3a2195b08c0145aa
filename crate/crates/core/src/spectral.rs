//! Periodic grid functions: FFTs, spectral derivatives and resampling.
//!
//! Grid functions live on `M` equispaced nodes of a period `L`. Discrete
//! frequencies are taken in the symmetric range `(-M/2, M/2]`; the Nyquist
//! coefficient is treated as real (cosine) in derivatives.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward DFT `f̂_m = (1/M) Σ f_j e^{-2πi m j / M}`, index order `0..M`.
pub fn forward(f: &[Complex64]) -> Vec<Complex64> {
    let mut buf = f.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    for b in buf.iter_mut() {
        *b *= scale;
    }
    buf
}

/// Inverse of [`forward`]: `f_j = Σ f̂_m e^{2πi m j / M}`.
pub fn inverse(c: &[Complex64]) -> Vec<Complex64> {
    let mut buf = c.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(&mut buf);
    buf
}

/// Signed frequency of DFT index `j` in `(-M/2, M/2]`.
pub fn signed_freq(j: usize, m: usize) -> i64 {
    if j <= m / 2 {
        j as i64
    } else {
        j as i64 - m as i64
    }
}

fn real_to_complex(f: &[f64]) -> Vec<Complex64> {
    f.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// Apply a real even Fourier multiplier `g(ξ)` (`ξ = 2πm/L`) to real data.
pub fn apply_multiplier(f: &[f64], length: f64, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let m = f.len();
    let mut c = forward(&real_to_complex(f));
    for (j, cj) in c.iter_mut().enumerate() {
        let xi = 2.0 * std::f64::consts::PI * signed_freq(j, m) as f64 / length;
        *cj *= g(xi);
    }
    inverse(&c).iter().map(|z| z.re).collect()
}

/// `|D_s| f`.
pub fn abs_derivative(f: &[f64], length: f64) -> Vec<f64> {
    apply_multiplier(f, length, f64::abs)
}

/// `d f / d s`, with the Nyquist mode dropped.
pub fn derivative(f: &[f64], length: f64) -> Vec<f64> {
    let m = f.len();
    let mut c = forward(&real_to_complex(f));
    for (j, cj) in c.iter_mut().enumerate() {
        let k = signed_freq(j, m);
        if m % 2 == 0 && j == m / 2 {
            *cj = Complex64::new(0.0, 0.0);
        } else {
            *cj *= Complex64::new(0.0, 2.0 * std::f64::consts::PI * k as f64 / length);
        }
    }
    inverse(&c).iter().map(|z| z.re).collect()
}

/// `d² f / d s²`.
pub fn second_derivative(f: &[f64], length: f64) -> Vec<f64> {
    apply_multiplier(f, length, |xi| -xi * xi)
}

/// Trigonometric interpolation of `f` (nodes `(j + shift) h`) onto `factor`
/// times as many nodes `(j' + shift') h / factor` sharing the same first-node
/// convention: fine node `i` sits at `origin + (i + 1/2) h / factor`.
///
/// The Nyquist coefficient is split evenly between `±M/2`.
pub fn upsample_half_offset(f: &[f64], factor: usize) -> Vec<f64> {
    let m = f.len();
    let mf = m * factor;
    let c = forward(&real_to_complex(f));
    // coarse node j at (j + 1/2) h; fine node i at (i + 1/2) h / factor.
    // value at position x (in units of h, measured from origin):
    //   Σ c_k e^{2πi k (x - 1/2) / M}
    // fine positions x_i = (i + 1/2)/factor, so phase shift
    //   e^{2πi k (1/2)(1/factor - 1) / M} applied before a size-mf inverse.
    let mut big = vec![Complex64::new(0.0, 0.0); mf];
    let shift = 0.5 * (1.0 / factor as f64 - 1.0);
    for (j, &cj) in c.iter().enumerate() {
        let k = signed_freq(j, m);
        let phase = |k: i64| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 * shift / m as f64);
        if m % 2 == 0 && j == m / 2 {
            let half = 0.5 * cj;
            let kp = k;
            let kn = -k;
            big[kp as usize] += half * phase(kp);
            big[(mf as i64 + kn) as usize] += half * phase(kn);
        } else {
            let idx = if k >= 0 { k as usize } else { (mf as i64 + k) as usize };
            big[idx] += cj * phase(k);
        }
    }
    inverse(&big).iter().map(|z| z.re).collect()
}

/// Trigonometric interpolant of `f` (nodes at `(j + 1/2) h`) evaluated at
/// arbitrary positions `x` measured in units of `h` from the grid origin.
pub fn interpolate_half_offset(f: &[f64], xs: &[f64]) -> Vec<f64> {
    let m = f.len();
    let c = forward(&real_to_complex(f));
    xs.iter()
        .map(|&x| {
            let mut acc = 0.0;
            for (j, &cj) in c.iter().enumerate() {
                let k = signed_freq(j, m) as f64;
                let theta = 2.0 * std::f64::consts::PI * (x - 0.5) / m as f64;
                let w = if m % 2 == 0 && j == m / 2 {
                    // symmetric Nyquist term: cos only
                    Complex64::new((k * theta).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, k * theta)
                };
                acc += (cj * w).re;
            }
            acc
        })
        .collect()
}

/// Fraction of spectral mass at `|m| > 3M/8` (top quarter of the band).
pub fn top_quarter_fraction(f: &[Complex64]) -> f64 {
    let m = f.len();
    let c = forward(f);
    let total: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let top: f64 = c
        .iter()
        .enumerate()
        .filter(|(j, _)| 8 * signed_freq(*j, m).unsigned_abs() as usize > 3 * m)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    top / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(m: usize, l: f64) -> Vec<f64> {
        (0..m).map(|j| (j as f64 + 0.5) * l / m as f64).collect()
    }

    #[test]
    fn derivatives_of_trig_polynomial() {
        let (m, l) = (64, 3.0);
        let s = grid(m, l);
        let w = 2.0 * PI / l;
        let f: Vec<f64> = s.iter().map(|&x| (3.0 * w * x).sin() + 0.5 * (5.0 * w * x).cos()).collect();
        let d = derivative(&f, l);
        let d2 = second_derivative(&f, l);
        let a = abs_derivative(&f, l);
        for (i, &x) in s.iter().enumerate() {
            let ed = 3.0 * w * (3.0 * w * x).cos() - 2.5 * w * (5.0 * w * x).sin();
            let ed2 = -9.0 * w * w * (3.0 * w * x).sin() - 12.5 * w * w * (5.0 * w * x).cos();
            let ea = 3.0 * w * (3.0 * w * x).sin() + 2.5 * w * (5.0 * w * x).cos();
            assert!((d[i] - ed).abs() < 1e-11);
            assert!((d2[i] - ed2).abs() < 1e-9);
            assert!((a[i] - ea).abs() < 1e-11);
        }
    }

    #[test]
    fn upsampling_reproduces_band_limited_function() {
        let (m, l) = (40, 2.0);
        let w = 2.0 * PI / l;
        let f: Vec<f64> = grid(m, l).iter().map(|&x| (7.0 * w * x).cos() + (3.0 * w * x).sin()).collect();
        let up = upsample_half_offset(&f, 4);
        for (i, &x) in grid(4 * m, l).iter().enumerate() {
            let e = (7.0 * w * x).cos() + (3.0 * w * x).sin();
            assert!((up[i] - e).abs() < 1e-12, "{i}");
        }
        let xs = [0.0, 1.3, 17.9];
        let vals = interpolate_half_offset(&f, &xs);
        for (x, v) in xs.iter().zip(vals) {
            let s = x * l / m as f64;
            let e = (7.0 * w * s).cos() + (3.0 * w * s).sin();
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn top_quarter_detects_high_frequencies() {
        let m = 32;
        let low: Vec<Complex64> = (0..m).map(|j| Complex64::new((2.0 * PI * 3.0 * j as f64 / m as f64).cos(), 0.0)).collect();
        assert!(top_quarter_fraction(&low) < 1e-20);
        let high: Vec<Complex64> = (0..m).map(|j| Complex64::new((2.0 * PI * 14.0 * j as f64 / m as f64).cos(), 0.0)).collect();
        assert!(top_quarter_fraction(&high) > 0.99);
    }
}
