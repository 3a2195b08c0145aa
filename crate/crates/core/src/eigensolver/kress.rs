//! Nyström discretisation of the Helmholtz single-layer operator `S` and the
//! normal-derivative operator `K'` with Kress's logarithmic splitting.
//!
//! With `Φ(x, y) = (i/4) H_0^{(1)}(k|x - y|)`, `u = Sφ` solves the Helmholtz
//! equation inside, has trace `Sφ` and interior normal derivative
//! `(1/2 + K')φ` on the boundary.

use std::f64::consts::PI;

use faer::c64;
use faer::Mat;

use super::nodes::{Nodes, Symmetry, SymmetryClass};
use super::table::BesselTable;
use crate::oracles::bessel::EULER_GAMMA;

/// Quadrature data depending only on the node count `M = 2n`:
/// Kress's weights `R_d` and `ln(4 sin²(π d / M))`, indexed by `d = (i - j) mod M`.
#[derive(Debug, Clone)]
pub struct KressWeights {
    pub m: usize,
    pub r: Vec<f64>,
    pub log: Vec<f64>,
}

impl KressWeights {
    pub fn new(m: usize) -> Self {
        assert!(m >= 4 && m % 2 == 0);
        let n = m / 2;
        let nf = n as f64;
        let r = (0..m)
            .map(|d| {
                let mut acc = 0.0;
                for k in 1..n {
                    acc += ((k * d) as f64 * PI / nf).cos() / k as f64;
                }
                let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                -2.0 * PI / nf * acc - PI / (nf * nf) * sign
            })
            .collect();
        let log = (0..m)
            .map(|d| if d == 0 { 0.0 } else { (4.0 * (PI * d as f64 / m as f64).sin().powi(2)).ln() })
            .collect();
        Self { m, r, log }
    }
}

/// Rows of `S` and `K'` in the arclength-isometric scaling
/// `Ã_ij = A_ij sqrt(w_i / w_j)`, row-major over `rows × M`.
pub struct Rows {
    pub rows: Vec<usize>,
    pub s: Vec<c64>,
    pub kp: Vec<c64>,
}

/// Assemble the requested rows of `S` (and of `K'` when `with_kp`).
pub fn assemble_rows(nodes: &Nodes, w: &KressWeights, table: &BesselTable, k: f64, rows: &[usize], with_kp: bool) -> Rows {
    let m = nodes.m;
    assert_eq!(w.m, m);
    let h = 2.0 * PI / m as f64;
    let inv4pi = 1.0 / (4.0 * PI);
    let sqrt_w: Vec<f64> = nodes.speed.iter().map(|v| (h * v).sqrt()).collect();
    let mut s = vec![c64::new(0.0, 0.0); rows.len() * m];
    let mut kp = if with_kp { vec![c64::new(0.0, 0.0); rows.len() * m] } else { Vec::new() };
    for (ri, &i) in rows.iter().enumerate() {
        let xi = nodes.x[i];
        let ni = nodes.normal[i];
        let base = ri * m;
        for j in 0..m {
            let d = (i + m - j) % m;
            let scale = nodes.speed[j] * sqrt_w[i] / sqrt_w[j];
            if j == i {
                let m1 = -inv4pi;
                let m2 = c64::new(-EULER_GAMMA / (2.0 * PI) - (0.5 * k * nodes.speed[i]).ln() / (2.0 * PI), 0.25);
                s[base + j] = (c64::new(w.r[0] * m1, 0.0) + m2 * h) * scale;
                if with_kp {
                    kp[base + j] = c64::new(-h * nodes.curvature[i] * inv4pi * scale, 0.0);
                }
                continue;
            }
            let dx = xi - nodes.x[j];
            let r = dx.norm();
            let z = k * r;
            let b = table.eval(z);
            let lg = w.log[d];
            let rd = w.r[d];
            let m1 = -b.j0 * inv4pi;
            // Φ = -Y0/4 + i J0/4; M2 = Φ - M1 log
            let m2 = c64::new(-0.25 * b.y0 - m1 * lg, 0.25 * b.j0);
            s[base + j] = (c64::new(rd * m1, 0.0) + m2 * h) * scale;
            if with_kp {
                let c = ni.dot(dx) / r;
                let l1 = k * inv4pi * b.j1 * c;
                let l = c64::new(0.25 * k * b.y1 * c, -0.25 * k * b.j1 * c);
                let l2 = l - c64::new(l1 * lg, 0.0);
                kp[base + j] = (c64::new(rd * l1, 0.0) + l2 * h) * scale;
            }
        }
    }
    Rows { rows: rows.to_vec(), s, kp }
}

/// Symmetry-reduced block `B[p][q] = Σ_g χ(g) Ã[rep_p][g(rep_q)]` of a row
/// set assembled at the representatives.
pub fn reduce(rows: &[c64], m: usize, sym: &Symmetry, class: SymmetryClass) -> Mat<c64> {
    let chi = class.characters();
    let n = sym.reps.len();
    Mat::from_fn(n, n, |p, q| {
        let rq = sym.reps[q];
        let row = &rows[p * m..(p + 1) * m];
        let mut acc = c64::new(0.0, 0.0);
        for g in 0..4 {
            acc += row[sym.perm[g][rq]] * chi[g];
        }
        acc
    })
}

/// Circulant matrix of a real even Fourier multiplier `g(ξ)` on the uniform
/// grid of `m` nodes with period `length`, as its first column `c_d`.
pub fn multiplier_column(m: usize, length: f64, g: impl Fn(f64) -> f64) -> Vec<f64> {
    (0..m)
        .map(|d| {
            let mut acc = 0.0;
            for j in 0..m {
                let f = crate::spectral::signed_freq(j, m);
                let xi = 2.0 * PI * f as f64 / length;
                let w = if m % 2 == 0 && j == m / 2 { (PI * d as f64).cos() } else { (2.0 * PI * (f * d as i64) as f64 / m as f64).cos() };
                acc += g(xi) * w;
            }
            acc / m as f64
        })
        .collect()
}

/// Reduced block of a circulant matrix with first column `col`.
pub fn reduce_circulant(col: &[f64], sym: &Symmetry, class: SymmetryClass) -> Mat<c64> {
    let chi = class.characters();
    let m = col.len();
    let n = sym.reps.len();
    Mat::from_fn(n, n, |p, q| {
        let rp = sym.reps[p];
        let rq = sym.reps[q];
        let mut acc = 0.0;
        for g in 0..4 {
            let j = sym.perm[g][rq];
            acc += col[(rp + m - j) % m] * chi[g];
        }
        c64::new(acc, 0.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};
    use crate::mode::Grid;
    use crate::oracles::bessel::bessel_j_and_prime;

    // on the circle of radius R: S e^{imθ} = (iπR/2) J_m H_m e^{imθ} and
    // (1/2 + K') e^{imθ} = (iπkR/2) J_m' H_m e^{imθ}, arguments kR
    fn circle_symbols(m: usize, k: f64, r: f64) -> (c64, c64) {
        let x = k * r;
        let (j, jp) = bessel_j_and_prime(m, x);
        // Y_m, Y_m' by upward recurrence from Y_0, Y_1
        let c = crate::oracles::bessel::bessel_01(x);
        let mut y = vec![c.y0, c.y1];
        for n in 1..m {
            let next = 2.0 * n as f64 / x * y[n] - y[n - 1];
            y.push(next);
        }
        let ym = y[m];
        let hm = c64::new(j, ym);
        let s = c64::new(0.0, PI * r / 2.0) * j * hm;
        let kp = c64::new(0.0, PI * k * r / 2.0) * jp * hm;
        (s, kp)
    }

    #[test]
    fn circle_eigenvalues_of_layer_operators() {
        let r = 1.3;
        let curve = build_domain(&DomainSpec::disk(r)).unwrap();
        let m = 64;
        let nodes = Nodes::uniform(&curve, &Grid::for_curve(&curve, m));
        let w = KressWeights::new(m);
        let k = 3.7;
        let table = BesselTable::new(k * 2.0 * r + 2.0);
        let all: Vec<usize> = (0..m).collect();
        let rows = assemble_rows(&nodes, &w, &table, k, &all, true);
        for mode in [0usize, 1, 3, 7] {
            let f: Vec<c64> = nodes.s.iter().map(|s| c64::from_polar(1.0, mode as f64 * s / r)).collect();
            let (es, ek) = circle_symbols(mode, k, r);
            for i in [0usize, 17, 40] {
                let mut a = c64::new(0.0, 0.0);
                let mut b = c64::new(0.0, 0.0);
                for j in 0..m {
                    a += rows.s[i * m + j] * f[j];
                    b += rows.kp[i * m + j] * f[j];
                }
                assert!((a - es * f[i]).norm() < 1e-11, "S mode {mode}: {a} vs {}", es * f[i]);
                // the circle symbol is that of the interior trace 1/2 + K'
                let b = b + f[i] * 0.5;
                assert!((b - ek * f[i]).norm() < 1e-11, "K' mode {mode}: {b} vs {}", ek * f[i]);
            }
        }
    }

    #[test]
    fn multiplier_column_applies_abs_derivative() {
        let m = 32;
        let l = 5.0;
        let col = multiplier_column(m, l, f64::abs);
        let f: Vec<f64> = (0..m).map(|j| (2.0 * PI * 3.0 * (j as f64 + 0.5) / m as f64).cos()).collect();
        for i in 0..m {
            let got: f64 = (0..m).map(|j| col[(i + m - j) % m] * f[j]).sum();
            let want = 2.0 * PI * 3.0 / l * f[i];
            assert!((got - want).abs() < 1e-12);
        }
    }
}
