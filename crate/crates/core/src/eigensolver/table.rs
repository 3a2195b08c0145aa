//! Tabulated `J_0, J_1, Y_0, Y_1` for kernel assembly.
//!
//! Quintic Hermite interpolation on a uniform grid of spacing 1/32 using
//! values, first and second derivatives (the latter from Bessel's equation).
//! Arguments below [`DIRECT_BELOW`] are evaluated directly.

use crate::oracles::bessel::{bessel_01, Cylinder01};

const STEP: f64 = 1.0 / 32.0;
/// Arguments below this bypass the table (logarithmic behaviour of `Y`).
pub const DIRECT_BELOW: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct BesselTable {
    x_max: f64,
    // per node: [f, f', f''] for j0, j1, y0, y1
    data: Vec<[f64; 12]>,
}

fn node_data(x: f64) -> [f64; 12] {
    let c = bessel_01(x);
    let inv = 1.0 / x;
    let d = |f0: f64, f1: f64| {
        // order 0: f0' = -f1, f0'' = -f0 + f1/x
        // order 1: f1' = f0 - f1/x, f1'' = -f1'/x - (1 - 1/x²) f1
        let d0 = -f1;
        let dd0 = -f0 + f1 * inv;
        let d1 = f0 - f1 * inv;
        let dd1 = -d1 * inv - (1.0 - inv * inv) * f1;
        (d0, dd0, d1, dd1)
    };
    let (jd0, jdd0, jd1, jdd1) = d(c.j0, c.j1);
    let (yd0, ydd0, yd1, ydd1) = d(c.y0, c.y1);
    [c.j0, jd0, jdd0, c.j1, jd1, jdd1, c.y0, yd0, ydd0, c.y1, yd1, ydd1]
}

impl BesselTable {
    /// Table covering arguments up to `x_max`.
    pub fn new(x_max: f64) -> Self {
        let n = ((x_max.max(2.0) / STEP).ceil() as usize) + 2;
        let start = (DIRECT_BELOW / STEP).floor() as usize;
        let mut data = vec![[0.0; 12]; n + 1];
        for (i, slot) in data.iter_mut().enumerate().skip(start) {
            *slot = node_data(i as f64 * STEP);
        }
        Self { x_max: (n - 1) as f64 * STEP, data }
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// `J_0, J_1, Y_0, Y_1` at `x > 0`.
    #[inline]
    pub fn eval(&self, x: f64) -> Cylinder01 {
        if x < DIRECT_BELOW || x >= self.x_max {
            return bessel_01(x);
        }
        let pos = x / STEP;
        let i = pos as usize;
        let t = pos - i as f64;
        let a = &self.data[i];
        let b = &self.data[i + 1];
        // quintic Hermite basis on [0, 1]
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
        let g0 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
        let g1 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
        let g2 = 0.5 * (t3 - 2.0 * t4 + t5);
        let s1 = STEP;
        let s2 = STEP * STEP;
        let f = |k: usize| {
            h0 * a[k] + h1 * s1 * a[k + 1] + h2 * s2 * a[k + 2] + g0 * b[k] + g1 * s1 * b[k + 1] + g2 * s2 * b[k + 2]
        };
        Cylinder01 { j0: f(0), j1: f(3), y0: f(6), y1: f(9) }
    }
}

impl BesselTable {
    /// `(Y_0, Y_1)` at `x > 0`.
    #[inline]
    pub fn eval_y(&self, x: f64) -> (f64, f64) {
        if x < DIRECT_BELOW || x >= self.x_max {
            let c = bessel_01(x);
            return (c.y0, c.y1);
        }
        let pos = x / STEP;
        let i = pos as usize;
        let t = pos - i as f64;
        let a = &self.data[i];
        let b = &self.data[i + 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
        let h1 = (t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5) * STEP;
        let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5) * STEP * STEP;
        let g0 = 1.0 - h0;
        let g1 = (-4.0 * t3 + 7.0 * t4 - 3.0 * t5) * STEP;
        let g2 = 0.5 * (t3 - 2.0 * t4 + t5) * STEP * STEP;
        let f = |k: usize| h0 * a[k] + h1 * a[k + 1] + h2 * a[k + 2] + g0 * b[k] + g1 * b[k + 1] + g2 * b[k + 2];
        (f(6), f(9))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_direct_evaluation() {
        let table = BesselTable::new(200.0);
        let mut worst = 0.0_f64;
        let mut x = 0.013;
        while x < 199.0 {
            let a = table.eval(x);
            let b = bessel_01(x);
            let scale = 1.0_f64.max(b.y0.abs()).max(b.y1.abs());
            for (p, q) in [(a.j0, b.j0), (a.j1, b.j1), (a.y0, b.y0), (a.y1, b.y1)] {
                worst = worst.max((p - q).abs() / scale);
            }
            x += 0.0917;
        }
        assert!(worst < 1e-11, "{worst}");
        for x in [0.4, 3.3, 57.01] {
            let (y0, y1) = table.eval_y(x);
            let c = table.eval(x);
            assert!((y0 - c.y0).abs() < 1e-14 && (y1 - c.y1).abs() < 1e-14);
        }
    }
}
