//! Interior integrals of eigenfunctions known through their boundary traces.
//!
//! The domain is split into a core `{dist >= δ}` and a collar
//! `x = γ(s) - t n(s)`, `0 <= t < δ`, with Jacobian `1 - κ t`. Both carry
//! tensor Gauss rules. At a quadrature point the function comes from Green's
//! representation
//!
//! `u(x) = ∫ [Φ ∂ₙu - u ∂_{n_y} Φ] ds`, `Φ = -Y_0(k|x - y|)/4`,
//!
//! evaluated with the trapezoid rule on traces upsampled so that the node
//! spacing stays below a quarter of the depth. In the thin strip next to
//! the boundary it comes instead from the Taylor series in `t` whose
//! coefficients follow from the traces through the Helmholtz equation in
//! boundary coordinates.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::nodes::Nodes;
use super::table::BesselTable;
use crate::geometry::{BoundaryCurve, Shape, Side, Vec2};
use crate::quadrature::gauss_legendre;
use crate::spectral;

/// Gauss points per panel.
const PANEL_POINTS: usize = 12;
/// Largest trace upsampling factor.
const MAX_REFINE: usize = 4;
/// Highest Taylor coefficient used in the boundary strip.
const TAYLOR_ORDER: usize = 16;
/// Graded (cornered) boundaries: s-derivatives of the traces are unreliable
/// next to the corners, so the strip keeps only `u - t ∂ₙu` and is made thin
/// by heavier upsampling.
const GRADED_MAX_REFINE: usize = 64;
const GRADED_TAYLOR_ORDER: usize = 1;

/// Quadrature resolution and what to accumulate.
#[derive(Debug, Clone)]
pub struct InteriorOptions {
    /// Collar widths at which masses are recorded.
    pub bands: Vec<f64>,
    /// Integrate over one quarter and multiply by four (functions even
    /// under both reflections, e.g. products within one symmetry class).
    pub quadrant: bool,
    /// Gauss points per unit length per unit frequency.
    pub density: f64,
    /// Also accumulate `|k^{-1} ∇u|²` in the bands.
    pub gradient: bool,
}

impl Default for InteriorOptions {
    fn default() -> Self {
        Self { bands: vec![0.05, 0.1, 0.2], quadrant: false, density: 1.6, gradient: true }
    }
}

#[derive(Debug, Clone)]
pub struct InteriorIntegrals {
    /// `gram[a][b] = ∫_Ω u_a u_b`.
    pub gram: Vec<Vec<f64>>,
    /// Collar widths actually resolved (those not exceeding the collar).
    pub bands: Vec<f64>,
    /// `band_mass[a][i] = ∫_{dist < bands[i]} u_a²`.
    pub band_mass: Vec<Vec<f64>>,
    /// `band_grad[a][i] = ∫_{dist < bands[i]} |k^{-1} ∇u_a|²`.
    pub band_grad: Vec<Vec<f64>>,
    /// Estimated absolute error of the diagonal of `gram`.
    pub error: f64,
}

/// Width of the collar: the largest requested band, at most 40% of the inradius.
pub fn collar_width(curve: &BoundaryCurve, bands: &[f64]) -> f64 {
    let want = bands.iter().copied().fold(0.2, f64::max);
    want.min(0.4 * curve.inradius())
}

#[derive(Debug, Clone, Copy)]
struct CollarPiece {
    s_lo: f64,
    s_hi: f64,
    corner_lo: bool,
    corner_hi: bool,
}

#[derive(Debug, Clone, Copy)]
enum CoreCell {
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    Polar { c: Vec2, r1: f64, th0: f64, th1: f64 },
}

fn layout(curve: &BoundaryCurve, delta: f64, quadrant: bool) -> (Vec<CollarPiece>, Vec<CoreCell>) {
    let l = curve.length;
    let s0 = curve.symmetric_origin();
    let span = if quadrant { l / 4.0 } else { l };
    let mut cuts: Vec<f64> = Vec::new();
    for lap in 0..3 {
        for &st in &curve.starts {
            let c = st + lap as f64 * l;
            if c > s0 + 1e-12 * l && c < s0 + span - 1e-12 * l {
                cuts.push(c);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut edges = vec![s0];
    edges.extend(cuts);
    edges.push(s0 + span);
    let is_corner = |s: f64| curve.corner_at(curve.wrap(s)).is_some();
    let pieces = edges
        .windows(2)
        .map(|w| CollarPiece { s_lo: w[0], s_hi: w[1], corner_lo: is_corner(w[0]), corner_hi: is_corner(w[1]) })
        .collect();
    let o = curve.spec.origin;
    let core = match curve.spec.shape {
        Shape::Disk { radius } => {
            let th1 = if quadrant { PI / 2.0 } else { 2.0 * PI };
            vec![CoreCell::Polar { c: o, r1: radius - delta, th0: 0.0, th1 }]
        }
        Shape::Stadium { a, r } => {
            let rho = r - delta;
            if quadrant {
                vec![
                    CoreCell::Rect { x0: o.x, x1: o.x + a, y0: o.y - rho, y1: o.y },
                    CoreCell::Polar { c: o + Vec2::new(a, 0.0), r1: rho, th0: -PI / 2.0, th1: 0.0 },
                ]
            } else {
                vec![
                    CoreCell::Rect { x0: o.x - a, x1: o.x + a, y0: o.y - rho, y1: o.y + rho },
                    CoreCell::Polar { c: o + Vec2::new(a, 0.0), r1: rho, th0: -PI / 2.0, th1: PI / 2.0 },
                    CoreCell::Polar { c: o + Vec2::new(-a, 0.0), r1: rho, th0: PI / 2.0, th1: 1.5 * PI },
                ]
            }
        }
        Shape::Rectangle { a, b } => {
            let (ai, bi) = (a - delta, b - delta);
            if quadrant {
                vec![CoreCell::Rect { x0: o.x, x1: o.x + ai, y0: o.y - bi, y1: o.y }]
            } else {
                vec![CoreCell::Rect { x0: o.x - ai, x1: o.x + ai, y0: o.y - bi, y1: o.y + bi }]
            }
        }
    };
    (pieces, core)
}

/// Gauss rule on `[a, b]` split into panels no longer than `len`.
fn panels(a: f64, b: f64, len: f64, gl: &(Vec<f64>, Vec<f64>)) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let n = ((b - a) / len).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut out = Vec::with_capacity(n * gl.0.len());
    for p in 0..n {
        let lo = a + p as f64 * h;
        for (x, w) in gl.0.iter().zip(&gl.1) {
            out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
        }
    }
    out
}

/// Boundary data at one upsampling level, pre-multiplied by the weights.
struct Level {
    x: Vec<Vec2>,
    n: Vec<Vec2>,
    wu: Vec<Vec<f64>>,
    wv: Vec<Vec<f64>>,
}

impl Level {
    fn new(curve: &BoundaryCurve, nodes: &Nodes, u: &[Vec<f64>], v: &[Vec<f64>], factor: usize) -> Self {
        let fine = if factor == 1 { nodes.clone() } else { nodes.refined(curve, factor) };
        let w = fine.weights();
        let up = |f: &Vec<f64>| -> Vec<f64> {
            let g = if factor == 1 { f.clone() } else { spectral::upsample_half_offset(f, factor) };
            g.iter().zip(&w).map(|(a, b)| a * b).collect()
        };
        Self { x: fine.x.clone(), n: fine.normal.clone(), wu: u.iter().map(up).collect(), wv: v.iter().map(up).collect() }
    }

    /// Values (and gradients) of all functions at `p`.
    fn eval(&self, table: &BesselTable, k: f64, p: Vec2, vals: &mut [f64], grads: Option<&mut [Vec2]>) {
        vals.iter_mut().for_each(|v| *v = 0.0);
        let nf = vals.len();
        match grads {
            None => {
                for j in 0..self.x.len() {
                    let d = p - self.x[j];
                    let r = d.norm();
                    let (y0, y1) = table.eval_y(k * r);
                    let a = -0.25 * y0;
                    let b = 0.25 * k * y1 * self.n[j].dot(d) / r;
                    for f in 0..nf {
                        vals[f] += a * self.wv[f][j] + b * self.wu[f][j];
                    }
                }
            }
            Some(g) => {
                g.iter_mut().for_each(|v| *v = Vec2::new(0.0, 0.0));
                for j in 0..self.x.len() {
                    let d = p - self.x[j];
                    let r = d.norm();
                    let z = k * r;
                    let (y0, y1) = table.eval_y(z);
                    let e = (1.0 / r) * d;
                    let nj = self.n[j];
                    let ne = nj.dot(e);
                    let a = -0.25 * y0;
                    let b = 0.25 * k * y1 * ne;
                    let y1p = y0 - y1 / z;
                    // ∇(-Y0/4) = (k/4) Y1 e; ∇((k/4) Y1 (n·e)) = (k/4)[k Y1' (n·e) e + Y1 (n - (n·e) e)/r]
                    let ga = (0.25 * k * y1) * e;
                    let gb = (0.25 * k) * ((k * y1p * ne) * e + (y1 / r) * (nj - ne * e));
                    for f in 0..nf {
                        vals[f] += a * self.wv[f][j] + b * self.wu[f][j];
                        g[f] = g[f] + self.wv[f][j] * ga + self.wu[f][j] * gb;
                    }
                }
            }
        }
    }
}

/// Trigonometric interpolation of node data at arbitrary parameters.
struct Interp {
    m: usize,
    coeffs: Vec<Vec<Complex64>>,
}

impl Interp {
    fn new(data: &[Vec<f64>]) -> Self {
        let m = data[0].len();
        let coeffs = data
            .iter()
            .map(|f| {
                let c: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                spectral::forward(&c)
            })
            .collect();
        Self { m, coeffs }
    }

    /// Values of every function at node-index position `x` (node `j` at `x = j + 1/2`).
    fn eval(&self, x: f64, out: &mut [f64]) {
        let m = self.m;
        let theta = 2.0 * PI * (x - 0.5) / m as f64;
        let step = Complex64::from_polar(1.0, theta);
        let half = m / 2;
        let mut ph = Complex64::new(1.0, 0.0);
        let mut phases = Vec::with_capacity(half + 1);
        for _ in 0..=half {
            phases.push(ph);
            ph *= step;
        }
        for (c, o) in self.coeffs.iter().zip(out.iter_mut()) {
            let mut acc = c[0].re;
            for kk in 1..half {
                acc += 2.0 * (c[kk] * phases[kk]).re;
            }
            if m % 2 == 0 {
                acc += c[half].re * phases[half].re;
            } else {
                acc += 2.0 * (c[half] * phases[half]).re;
            }
            *o = acc;
        }
    }
}

/// Taylor coefficients `c_0..=c_N` of `u(s, t)` in the depth `t`, on the nodes.
fn taylor_coefficients(nodes: &Nodes, k: f64, u: &[f64], v: &[f64], order: usize) -> Vec<Vec<f64>> {
    let m = nodes.m;
    let d2 = |f: &[f64]| -> Vec<f64> { second_s_derivative(nodes, f) };
    let kap = &nodes.curvature;
    let mut c: Vec<Vec<f64>> = vec![u.to_vec(), v.iter().map(|x| -x).collect()];
    for n in 0..order.saturating_sub(1) {
        let dd = d2(&c[n]);
        let nf = n as f64;
        let next: Vec<f64> = (0..m)
            .map(|i| {
                let kp = kap[i];
                let cn = c[n][i];
                let cn1 = c[n + 1][i];
                let cm1 = if n >= 1 { c[n - 1][i] } else { 0.0 };
                let cm2 = if n >= 2 { c[n - 2][i] } else { 0.0 };
                let num = 2.0 * kp * (nf + 1.0) * nf * cn1 - kp * kp * nf * (nf - 1.0) * cn + kp * (nf + 1.0) * cn1
                    - kp * kp * nf * cn
                    - k * k * (cn - 2.0 * kp * cm1 + kp * kp * cm2)
                    - dd[i];
                num / ((nf + 2.0) * (nf + 1.0))
            })
            .collect();
        c.push(next);
    }
    c
}

fn first_s_derivative(nodes: &Nodes, f: &[f64]) -> Vec<f64> {
    // derivative in the node parameter t, then ds = speed dt
    let dt = spectral::derivative(f, 2.0 * PI);
    dt.iter().zip(&nodes.speed).map(|(a, b)| a / b).collect()
}

fn second_s_derivative(nodes: &Nodes, f: &[f64]) -> Vec<f64> {
    if nodes.grid.is_some() {
        let l = nodes.speed[0] * 2.0 * PI;
        spectral::second_derivative(f, l)
    } else {
        first_s_derivative(nodes, &first_s_derivative(nodes, f))
    }
}

/// Interior Gram matrix, collar masses and error estimate for the functions
/// with traces `u[a]`, `v[a]` (outward normal derivative) on `nodes`.
pub fn interior_integrals(
    curve: &BoundaryCurve,
    nodes: &Nodes,
    k: f64,
    u: &[Vec<f64>],
    v: &[Vec<f64>],
    opts: &InteriorOptions,
) -> InteriorIntegrals {
    let nf = u.len();
    let graded = !curve.corners.is_empty();
    let (max_refine, order) = if graded { (GRADED_MAX_REFINE, GRADED_TAYLOR_ORDER) } else { (MAX_REFINE, TAYLOR_ORDER) };
    let h = nodes.max_spacing();
    let t_strip = 4.0 * h / max_refine as f64;
    let delta = collar_width(curve, &opts.bands);
    let bands: Vec<f64> = opts.bands.iter().copied().filter(|&e| e <= delta + 1e-12).collect();
    let mult = if opts.quadrant { 4.0 } else { 1.0 };
    let kq = k.max(4.0);
    let panel_len = PANEL_POINTS as f64 / (opts.density * kq);
    let gl = gauss_legendre(PANEL_POINTS);
    let table = BesselTable::new(k * 2.0 * (curve.length / 2.0) + 4.0);

    // upsampling levels 1, 2, 4, ...
    let mut levels: Vec<(usize, Level)> = Vec::new();
    let mut f = 1;
    while f <= max_refine {
        levels.push((f, Level::new(curve, nodes, u, v, f)));
        f *= 2;
    }
    let level_for = |t: f64| -> &Level {
        let need = (4.0 * h / t).max(1.0);
        levels.iter().find(|(f, _)| *f as f64 >= need - 1e-9).map(|(_, l)| l).unwrap_or(&levels.last().unwrap().1)
    };

    // depth breakpoints
    let t_strip = t_strip.min(delta);
    let mut breaks = vec![0.0, t_strip];
    let mut t = t_strip;
    while t < 4.0 * h && t < delta {
        t *= 2.0;
        breaks.push(t.min(delta));
    }
    breaks.extend(bands.iter().copied());
    breaks.push(delta);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut gram = vec![vec![0.0; nf]; nf];
    let mut band_mass = vec![vec![0.0; bands.len()]; nf];
    let mut band_grad = vec![vec![0.0; bands.len()]; nf];
    let mut strip_err = 0.0;
    let mut vals = vec![0.0; nf];
    let mut grads = vec![Vec2::new(0.0, 0.0); nf];
    let inv_k2 = 1.0 / (k * k);

    let mut accumulate = |vals: &[f64], grads: Option<&[Vec2]>, w: f64, depth: f64| {
        for a in 0..nf {
            for b in a..nf {
                gram[a][b] += w * vals[a] * vals[b];
            }
            for (i, &e) in bands.iter().enumerate() {
                if depth < e {
                    band_mass[a][i] += w * vals[a] * vals[a];
                    if let Some(g) = grads {
                        band_grad[a][i] += w * g[a].dot(g[a]) * inv_k2;
                    }
                }
            }
        }
    };

    let (pieces, core) = layout(curve, delta, opts.quadrant);

    // Taylor strip
    let coeffs: Vec<Vec<Vec<f64>>> = (0..nf).map(|a| taylor_coefficients(nodes, k, &u[a], &v[a], order)).collect();
    let mut flat: Vec<Vec<f64>> = Vec::new();
    for c in &coeffs {
        flat.extend(c.iter().cloned());
    }
    if opts.gradient {
        for c in &coeffs {
            for cn in c {
                flat.push(first_s_derivative(nodes, cn));
            }
        }
    }
    let interp = Interp::new(&flat);
    let per = order + 1;
    let mut cvals = vec![0.0; flat.len()];
    let n_strip = breaks.iter().position(|&b| b >= t_strip - 1e-12).unwrap();
    let gl_strip = gauss_legendre(10);
    let strip_rule: Vec<(f64, f64)> =
        breaks[..=n_strip].windows(2).flat_map(|w| panels(w[0], w[1], f64::INFINITY, &gl_strip)).collect();
    for piece in &pieces {
        let corner = piece.corner_lo || piece.corner_hi;
        // with corners the s-range shrinks with t, so s nodes move with t
        let t_sets: Vec<Vec<(f64, f64)>> = if corner { strip_rule.iter().map(|&tw| vec![tw]).collect() } else { vec![strip_rule.clone()] };
        for ts in &t_sets {
            let t_ref = ts[0].0;
            let lo = piece.s_lo + if piece.corner_lo && corner { t_ref } else { 0.0 };
            let hi = piece.s_hi - if piece.corner_hi && corner { t_ref } else { 0.0 };
            for (s, ws) in panels(lo, hi, panel_len, &gl) {
                let frame = curve.boundary_eval_side(curve.wrap(s), Side::After);
                let kap = frame.curvature;
                let x = nodes.parameter_of(curve, s) / (2.0 * PI) * nodes.m as f64;
                interp.eval(x, &mut cvals);
                for &(t, wt) in ts {
                    let jac = 1.0 - kap * t;
                    let w = mult * ws * wt * jac;
                    for a in 0..nf {
                        let c = &cvals[a * per..(a + 1) * per];
                        let mut val = 0.0;
                        let mut low = 0.0;
                        let mut tp = 1.0;
                        for (n, cn) in c.iter().enumerate() {
                            val += cn * tp;
                            if n + 2 <= order {
                                low += cn * tp;
                            }
                            tp *= t;
                        }
                        vals[a] = val;
                        strip_err += if order >= 2 {
                            w * (val * val - low * low).abs()
                        } else {
                            // size of the dropped t² and t³ terms
                            w * k * k * t * t * (c[0] * c[0] + c[1] * c[1] * t * t / 3.0)
                        };
                        if opts.gradient {
                            let cs = &cvals[nf * per + a * per..nf * per + (a + 1) * per];
                            let mut ut = 0.0;
                            let mut us = 0.0;
                            let mut tp = 1.0;
                            for n in 0..per {
                                us += cs[n] * tp;
                                if n + 1 < per {
                                    ut += (n + 1) as f64 * c[n + 1] * tp;
                                }
                                tp *= t;
                            }
                            // u_t is the inward derivative; |∇u|² = u_t² + u_s²/J²
                            grads[a] = Vec2::new(ut, us / jac);
                        }
                    }
                    accumulate(&vals, if opts.gradient { Some(&grads) } else { None }, w, t);
                }
            }
        }
    }

    // collar beyond the strip
    for win in breaks[n_strip..].windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let n_t = (((t1 - t0) / panel_len) * PANEL_POINTS as f64).ceil() as usize + 3;
        let rule_t = gauss_legendre(n_t.min(40));
        let ts = panels(t0, t1, f64::INFINITY, &rule_t);
        let level = level_for(t0);
        let want_grad = opts.gradient && bands.iter().any(|&e| t0 < e - 1e-12);
        for &(t, wt) in &ts {
            for piece in &pieces {
                let lo = piece.s_lo + if piece.corner_lo { t } else { 0.0 };
                let hi = piece.s_hi - if piece.corner_hi { t } else { 0.0 };
                for (s, ws) in panels(lo, hi, panel_len, &gl) {
                    let frame = curve.boundary_eval_side(curve.wrap(s), Side::After);
                    let p = frame.point - t * frame.normal;
                    let w = mult * ws * wt * (1.0 - frame.curvature * t);
                    if want_grad {
                        level.eval(&table, k, p, &mut vals, Some(&mut grads));
                        accumulate(&vals, Some(&grads), w, t);
                    } else {
                        level.eval(&table, k, p, &mut vals, None);
                        accumulate(&vals, None, w, t);
                    }
                }
            }
        }
    }

    // core
    let coarse = level_for(delta);
    for cell in &core {
        match *cell {
            CoreCell::Rect { x0, x1, y0, y1 } => {
                let xs = panels(x0, x1, panel_len, &gl);
                let ys = panels(y0, y1, panel_len, &gl);
                for &(x, wx) in &xs {
                    for &(y, wy) in &ys {
                        coarse.eval(&table, k, Vec2::new(x, y), &mut vals, None);
                        accumulate(&vals, None, mult * wx * wy, f64::INFINITY);
                    }
                }
            }
            CoreCell::Polar { c, r1, th0, th1 } => {
                let rs = panels(0.0, r1, panel_len, &gl);
                let ths = panels(th0, th1, panel_len / r1.max(1e-12), &gl);
                for &(r, wr) in &rs {
                    for &(th, wth) in &ths {
                        let p = c + Vec2::new(r * th.cos(), r * th.sin());
                        coarse.eval(&table, k, p, &mut vals, None);
                        accumulate(&vals, None, mult * wr * wth * r, f64::INFINITY);
                    }
                }
            }
        }
    }

    for a in 0..nf {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
    }
    InteriorIntegrals { gram, bands, band_mass, band_grad, error: strip_err + 1e-12 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec};
    use crate::mode::BcKind;
    use crate::oracles::disk_mode;

    fn check_disk(bc: BcKind, m: usize, n: usize, quadrant: bool) {
        let curve = build_domain(&DomainSpec::disk(1.0)).unwrap();
        let modes = disk_mode(&curve, bc, m, n, None).unwrap();
        let mode = &modes[0];
        let nodes = Nodes::uniform(&curve, &mode.grid);
        let opts = InteriorOptions { quadrant, ..Default::default() };
        let res = interior_integrals(&curve, &nodes, mode.lambda, &[mode.u.clone()], &[mode.v.clone()], &opts);
        let norm = res.gram[0][0];
        assert!((norm - 1.0).abs() < 1e-8, "{bc:?} m={m} n={n}: {norm} (err est {})", res.error);
    }

    #[test]
    fn disk_oracle_modes_have_unit_interior_norm() {
        check_disk(BcKind::Dirichlet, 0, 1, false);
        check_disk(BcKind::Dirichlet, 3, 2, true);
        check_disk(BcKind::Neumann, 2, 1, true);
        check_disk(BcKind::Dirichlet, 7, 4, true);
        check_disk(BcKind::RobinConstant { kappa: 1.0 }, 1, 3, false);
    }

    #[test]
    fn disk_collar_mass_matches_radial_integral() {
        let curve = build_domain(&DomainSpec::disk(1.0)).unwrap();
        let mode = &disk_mode(&curve, BcKind::Dirichlet, 0, 1, None).unwrap()[0];
        let nodes = Nodes::uniform(&curve, &mode.grid);
        let res = interior_integrals(&curve, &nodes, mode.lambda, &[mode.u.clone()], &[mode.v.clone()], &InteriorOptions::default());
        // 2π ∫_{1-ε}^1 J0(λr)² r dr / (π J1(λ)²)
        let lam = mode.lambda;
        let j1 = crate::oracles::bessel::bessel_j(1, lam);
        for (i, &eps) in res.bands.iter().enumerate() {
            let q = crate::quadrature::composite_gauss(20, 10, 1.0 - eps, 1.0);
            let num: f64 = q.iter().map(|(r, w)| w * crate::oracles::bessel::bessel_j(0, lam * r).powi(2) * r).sum();
            let want = 2.0 * num / (j1 * j1);
            assert!((res.band_mass[0][i] - want).abs() < 1e-8 * want.max(1e-3), "eps={eps}: {} vs {want}", res.band_mass[0][i]);
            // |λ⁻¹∇u|² = J1(λr)² / (π J1(λ)²)
            let num: f64 = q.iter().map(|(r, w)| w * crate::oracles::bessel::bessel_j(1, lam * r).powi(2) * r).sum();
            let want = 2.0 * num / (j1 * j1);
            assert!((res.band_grad[0][i] - want).abs() < 1e-8 * want, "grad eps={eps}: {} vs {want}", res.band_grad[0][i]);
        }
    }

    #[test]
    fn stadium_reflection_quadrant_agrees_with_full_domain() {
        // a smooth even test function: plane waves summed over the group
        let curve = build_domain(&DomainSpec::stadium(1.0, 1.0)).unwrap();
        let k = 7.3;
        let m = curve.grid_size(((8.0 * k * curve.length) / (2.0 * PI)) as usize);
        let nodes = Nodes::uniform(&curve, &crate::mode::Grid::for_curve(&curve, m));
        let dir = Vec2::new(0.6, 0.8);
        let (mut u, mut v) = (vec![0.0; m], vec![0.0; m]);
        for i in 0..m {
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    let d = Vec2::new(sx * dir.x, sy * dir.y);
                    let ph = k * d.dot(nodes.x[i]);
                    u[i] += ph.cos();
                    v[i] += -k * ph.sin() * d.dot(nodes.normal[i]);
                }
            }
        }
        let full = interior_integrals(&curve, &nodes, k, &[u.clone()], &[v.clone()], &InteriorOptions { gradient: false, ..Default::default() });
        let quad = interior_integrals(&curve, &nodes, k, &[u], &[v], &InteriorOptions { quadrant: true, gradient: false, ..Default::default() });
        assert!((full.gram[0][0] - quad.gram[0][0]).abs() < 1e-8 * full.gram[0][0], "{} {}", full.gram[0][0], quad.gram[0][0]);
        // compare with a direct product-Gauss integral of the explicit function
        let q = crate::quadrature::composite_gauss(20, 40, -2.0, 2.0);
        let mut direct = 0.0;
        for &(x, wx) in &q {
            for &(y, wy) in &crate::quadrature::composite_gauss(20, 20, -1.0, 1.0) {
                let p = Vec2::new(x, y);
                if curve.signed_distance(p) <= 0.0 {
                    continue;
                }
                let mut f = 0.0;
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        f += (k * Vec2::new(sx * dir.x, sy * dir.y).dot(p)).cos();
                    }
                }
                direct += wx * wy * f * f;
            }
        }
        // the masked tensor rule is only accurate to a few digits
        assert!((direct - full.gram[0][0]).abs() < 2e-3 * direct, "{direct} {}", full.gram[0][0]);
    }

    #[test]
    fn square_mode_norm_on_graded_nodes() {
        // sin·sin (Dirichlet) and cos·cos (Neumann) products with unit norm on [-1, 1]²
        let curve = build_domain(&DomainSpec::rectangle(1.0, 1.0)).unwrap();
        let (kx, ky) = (PI, 1.5 * PI);
        let lam = kx.hypot(ky);
        for neumann in [false, true] {
            let f = |k: f64, x: f64| if neumann { (k * (x + 1.0)).cos() } else { (k * (x + 1.0)).sin() };
            let df = |k: f64, x: f64| if neumann { -k * (k * (x + 1.0)).sin() } else { k * (k * (x + 1.0)).cos() };
            for m in [96, 160] {
                let nodes = Nodes::graded(&curve, m);
                let mut u = Vec::new();
                let mut v = Vec::new();
                for (p, n) in nodes.x.iter().zip(&nodes.normal) {
                    let (x, y) = (p.x - curve.spec.origin.x, p.y - curve.spec.origin.y);
                    u.push(f(kx, x) * f(ky, y));
                    v.push(df(kx, x) * f(ky, y) * n.x + f(kx, x) * df(ky, y) * n.y);
                }
                let res = interior_integrals(&curve, &nodes, lam, &[u], &[v], &InteriorOptions::default());
                let err = (res.gram[0][0] - 1.0).abs();
                assert!(err < 1e-4, "neumann={neumann} M={m}: {}", res.gram[0][0]);
                assert!(err < 10.0 * res.error, "neumann={neumann} M={m}: error {err} vs estimate {}", res.error);
            }
        }
    }
}
