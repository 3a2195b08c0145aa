//! Spectrum scan, eigenvalue refinement, traces and normalization.
//!
//! The scan evaluates the smallest singular value `σ₁(k)` of every
//! symmetry-reduced operator on an equispaced `k` grid. The node count is
//! fixed within unit-width `k` bands so that `σ₁` is a continuous function
//! of `k` between neighbouring scan points. Local minima below the dip
//! threshold are refined by Brent minimization of `σ₁²`, which is smooth
//! and parabolic at a simple eigenvalue.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use super::interior::{interior_integrals, InteriorOptions};
use super::nodes::{Nodes, NotSymmetric, Symmetry, SymmetryClass};
use super::operator::{mode_node_count, node_count, smallest_two, solver_node_count, Discretisation};
use crate::geometry::BoundaryCurve;
use crate::mode::{BcKind, Certificate, CollarBand, Degeneracy, Grid, Mode, Provenance};
use crate::oracles::{default_grid_size, weyl_count, weyl_spacing};
use crate::spectral;

/// Normalization error above which a mode carries a warning.
pub const NORM_WARNING: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("σ_min = {sigma:.3e} at k = {k} is not small: not an eigenvalue")]
    NotAnEigenvalue { k: f64, sigma: f64 },
    #[error("refinement left the bracket [{lo}, {hi}]")]
    Refinement { lo: f64, hi: f64 },
    #[error(transparent)]
    NotSymmetric(#[from] NotSymmetric),
}

/// Parameters of the singular-value scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub k_min: f64,
    pub k_max: f64,
    /// Scan step.
    pub dk: f64,
    /// Boundary nodes per wavelength at the top of each unit `k` band.
    #[serde(default = "default_ppw")]
    pub ppw: f64,
    /// Relative tolerance of the refined eigenvalues.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Scan minima with `σ₁` above this are ignored.
    #[serde(default = "default_dip")]
    pub dip_threshold: f64,
    /// Refined minima with `σ₁` above this are rejected.
    #[serde(default = "default_accept")]
    pub accept: f64,
    /// Worker threads for the scan and the mode construction.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_ppw() -> f64 {
    8.0
}
fn default_tol() -> f64 {
    1e-9
}
fn default_dip() -> f64 {
    0.1
}
fn default_accept() -> f64 {
    1e-4
}
fn default_threads() -> usize {
    1
}

impl ScanConfig {
    /// Defaults for `[k_min, k_max]` with the largest admissible step.
    pub fn for_range(curve: &BoundaryCurve, bc: BcKind, k_min: f64, k_max: f64) -> Self {
        Self {
            k_min,
            k_max,
            dk: max_step(curve, bc, k_max),
            ppw: default_ppw(),
            tol: default_tol(),
            dip_threshold: default_dip(),
            accept: default_accept(),
            threads: default_threads(),
        }
    }

    pub fn validate(&self, curve: &BoundaryCurve, bc: BcKind) -> Result<(), SolverError> {
        let err = |m: String| Err(SolverError::Config(m));
        if !(self.k_min.is_finite() && self.k_max.is_finite() && self.k_min > 0.0 && self.k_max > self.k_min) {
            return err(format!("need 0 < k_min < k_max, got [{}, {}]", self.k_min, self.k_max));
        }
        let limit = max_step(curve, bc, self.k_max);
        if !(self.dk > 0.0 && self.dk <= limit * (1.0 + 1e-9)) {
            return err(format!("scan step {} must lie in (0, {limit:.6}] (a fifth of the mean level spacing)", self.dk));
        }
        if !(self.ppw >= 6.0) {
            return err(format!("grid density must be at least 6 nodes per wavelength, got {}", self.ppw));
        }
        if !(self.tol > 0.0 && self.tol < 1e-3) {
            return err(format!("refinement tolerance {} out of range", self.tol));
        }
        if !(self.dip_threshold > 0.0 && self.accept > 0.0 && self.accept < self.dip_threshold) {
            return err("need 0 < accept < dip_threshold".into());
        }
        if self.threads == 0 {
            return err("threads must be at least 1".into());
        }
        if matches!(bc, BcKind::RobinMultiplier { .. }) && !curve.corners.is_empty() {
            return err("the Robin multiplier needs a smooth boundary".into());
        }
        bc.validate().map_err(SolverError::Config)
    }
}

/// A fifth of the mean level spacing at `k`.
pub fn max_step(curve: &BoundaryCurve, bc: BcKind, k: f64) -> f64 {
    weyl_spacing(curve, bc, k) / 5.0
}

/// Dense operator `A(k)` on `m` nodes in the arclength-isometric scaling.
#[derive(Debug, Clone)]
pub struct BoundaryOperatorMatrix {
    pub k: f64,
    pub m: usize,
    pub matrix: Mat<c64>,
}

pub fn assemble_boundary_operator(curve: &BoundaryCurve, bc: BcKind, k: f64, m: usize) -> Result<BoundaryOperatorMatrix, SolverError> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(SolverError::Config(format!("frequency must be positive, got {k}")));
    }
    bc.validate().map_err(SolverError::Config)?;
    let nyquist = node_count(curve, k, 2.0);
    if m < nyquist || m % 4 != 0 {
        return Err(SolverError::Config(format!("grid size {m} must be a multiple of 4 and at least {nyquist} at k = {k}")));
    }
    if !curve.corners.is_empty() && m % curve.corners.len() != 0 {
        return Err(SolverError::Config(format!("grid size {m} must be divisible by the number of sides")));
    }
    if matches!(bc, BcKind::RobinMultiplier { .. }) && !curve.corners.is_empty() {
        return Err(SolverError::Config("the Robin multiplier needs a smooth boundary".into()));
    }
    let disc = Discretisation::new(curve, bc, m, k)?;
    Ok(BoundaryOperatorMatrix { k, m, matrix: disc.full_operator(k) })
}

/// A scan minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub k: f64,
    pub sigma: f64,
    pub class: SymmetryClass,
    /// Neighbouring scan points.
    pub bracket: (f64, f64),
    /// `σ₁` at the bracket ends.
    pub sigma_ends: (f64, f64),
}

/// Unit-width frequency bands sharing one node count.
struct Band {
    lo: f64,
    hi: f64,
    disc: Discretisation,
    /// finer discretisation on which accepted roots are polished
    fine: Option<Discretisation>,
}

fn bands(curve: &BoundaryCurve, bc: BcKind, cfg: &ScanConfig) -> Result<Vec<Band>, SolverError> {
    let mut out = Vec::new();
    let mut lo = cfg.k_min;
    while lo < cfg.k_max {
        let hi = (lo.floor() + 1.0).min(cfg.k_max);
        let top = hi + 2.0 * cfg.dk;
        let m = solver_node_count(curve, bc, top, cfg.ppw);
        let mf = mode_node_count(curve, bc, top, cfg.ppw);
        let fine = if mf > m { Some(Discretisation::new(curve, bc, mf, top)?) } else { None };
        out.push(Band { lo, hi, disc: Discretisation::new(curve, bc, m, top)?, fine });
        lo = hi;
    }
    Ok(out)
}

/// Map `f` over `items` on `threads` scoped workers, preserving order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|sc| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| sc.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread")).collect()
    })
}

fn class_sigmas(disc: &Discretisation, k: f64) -> [f64; 4] {
    let rows = disc.rep_rows(k);
    let mut out = [0.0; 4];
    for (c, class) in SymmetryClass::ALL.iter().enumerate() {
        out[c] = smallest_two(&disc.class_operator(k, &rows, *class)).0;
    }
    out
}

fn scan_band(band: &Band, cfg: &ScanConfig) -> Vec<Candidate> {
    // global grid k_j = k_min + j dk, one extra point on each side
    let j0 = ((band.lo - cfg.k_min) / cfg.dk).ceil() as i64 - 1;
    let j1 = ((band.hi - cfg.k_min) / cfg.dk).ceil() as i64;
    let ks: Vec<f64> = (j0..=j1).map(|j| cfg.k_min + j as f64 * cfg.dk).filter(|&k| k > 0.0).collect();
    let sig = par_map(&ks, cfg.threads, |&k| class_sigmas(&band.disc, k));
    let mut out = Vec::new();
    for (c, class) in SymmetryClass::ALL.iter().enumerate() {
        for i in 1..ks.len().saturating_sub(1) {
            let (a, b, d) = (sig[i - 1][c], sig[i][c], sig[i + 1][c]);
            let owned = ks[i] >= band.lo && (ks[i] < band.hi || band.hi >= cfg.k_max);
            if owned && b < a && b <= d && b < cfg.dip_threshold {
                out.push(Candidate { k: ks[i], sigma: b, class: *class, bracket: (ks[i - 1], ks[i + 1]), sigma_ends: (a, d) });
            }
        }
    }
    out
}

/// Local minima of `σ₁(A(k))` below the dip threshold, per symmetry class,
/// sorted by `k`.
pub fn scan_spectrum(curve: &BoundaryCurve, bc: BcKind, cfg: &ScanConfig) -> Result<Vec<Candidate>, SolverError> {
    cfg.validate(curve, bc)?;
    let mut out = Vec::new();
    for band in bands(curve, bc, cfg)? {
        out.extend(scan_band(&band, cfg));
    }
    out.sort_by(|a, b| a.k.total_cmp(&b.k).then(a.class.cmp(&b.class)));
    Ok(out)
}

/// Brent minimization of `f` on `[a, b]`; returns `(x, f(x))`.
fn brent_min(f: impl Fn(f64) -> f64, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = xtol + 1e-15 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// A refined eigenvalue of one symmetry class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub lambda: f64,
    pub class: SymmetryClass,
    pub sigma1: f64,
    pub sigma2: f64,
}

fn class_pair(disc: &Discretisation, k: f64, class: SymmetryClass) -> (f64, f64) {
    let rows = disc.rep_rows(k);
    smallest_two(&disc.class_operator(k, &rows, class))
}

fn refine_in(disc: &Discretisation, class: SymmetryClass, lo: f64, hi: f64, tol: f64) -> Result<Refined, SolverError> {
    let f = |k: f64| class_pair(disc, k, class).0.powi(2);
    let (x, _) = brent_min(f, lo, hi, 0.1 * tol * hi);
    let margin = 1e-3 * (hi - lo);
    if x - lo < margin || hi - x < margin {
        return Err(SolverError::Refinement { lo, hi });
    }
    let (sigma1, sigma2) = class_pair(disc, x, class);
    Ok(Refined { lambda: x, class, sigma1, sigma2 })
}

/// Refine the eigenvalue inside `bracket`, choosing the symmetry class with
/// the deepest dip at the bracket midpoint.
pub fn refine_eigenvalue(curve: &BoundaryCurve, bc: BcKind, bracket: (f64, f64), cfg: &ScanConfig) -> Result<Refined, SolverError> {
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(SolverError::Config(format!("invalid bracket [{lo}, {hi}]")));
    }
    let disc = Discretisation::new(curve, bc, solver_node_count(curve, bc, hi, cfg.ppw), hi)?;
    let sig = class_sigmas(&disc, 0.5 * (lo + hi));
    let c = (0..4).min_by(|&a, &b| sig[a].total_cmp(&sig[b])).unwrap();
    refine_in(&disc, SymmetryClass::ALL[c], lo, hi, cfg.tol)
}

/// One bracket end sits well below the V shape the other end implies around
/// the refined root: a second root of the class is pulling it down.
fn lopsided(cand: &Candidate, root: f64, dk: f64) -> bool {
    let ends = [(cand.bracket.0, cand.sigma_ends.0), (cand.bracket.1, cand.sigma_ends.1)];
    let slopes: Vec<Option<f64>> = ends.iter().map(|&(k, s)| {
        let d = (k - root).abs();
        (d > 0.2 * dk).then(|| s / d)
    }).collect();
    match (slopes[0], slopes[1]) {
        (Some(a), Some(b)) => a.min(b) < 0.6 * a.max(b),
        _ => false,
    }
}

/// Refine one candidate; near-degenerate pairs inside one scan step are
/// separated by a finer local scan.
fn refine_candidate(disc: &Discretisation, cand: &Candidate, cfg: &ScanConfig) -> (Vec<Refined>, Vec<String>) {
    let mut log = Vec::new();
    let first = match refine_in(disc, cand.class, cand.bracket.0, cand.bracket.1, cfg.tol) {
        Ok(r) => r,
        Err(e) => {
            log.push(format!("candidate k={:.6} class {}: {e}", cand.k, cand.class.label()));
            return (Vec::new(), log);
        }
    };
    let mut found = vec![first];
    let slope = 0.5 * (cand.sigma_ends.0 + cand.sigma_ends.1) / cfg.dk;
    if !degenerate(first.sigma1, first.sigma2, cfg.accept) && (first.sigma2 < 2.5 * slope * cfg.dk || lopsided(cand, first.lambda, cfg.dk)) {
        // a second eigenvalue of this class may hide in the same dip
        let n = 40;
        let (a, b) = (first.lambda - 2.0 * cfg.dk, first.lambda + 2.0 * cfg.dk);
        let ks: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        let s: Vec<f64> = ks.iter().map(|&k| class_pair(disc, k, cand.class).0).collect();
        for i in 1..n {
            if s[i] < s[i - 1] && s[i] <= s[i + 1] && s[i] < cfg.dip_threshold {
                if let Ok(r) = refine_in(disc, cand.class, ks[i - 1], ks[i + 1], cfg.tol) {
                    if (r.lambda - first.lambda).abs() > 10.0 * cfg.tol * r.lambda {
                        log.push(format!("split near-degenerate pair at {:.8} / {:.8} (class {})", first.lambda, r.lambda, cand.class.label()));
                        found.push(r);
                    }
                }
            }
        }
    }
    found.retain(|r| {
        let ok = r.sigma1 < cfg.accept;
        if !ok {
            log.push(format!("rejected minimum k={:.8} class {}: σ₁ = {:.2e}", r.lambda, r.class.label(), r.sigma1));
        }
        ok
    });
    (found, log)
}

/// Re-refine an accepted root on the finer discretisation inside a bracket of
/// relative width 1e-4, well inside the fine dip.
fn polish(fine: &Discretisation, r: Refined, cfg: &ScanConfig, log: &mut Vec<String>) -> Option<Refined> {
    let w = 1e-4 * r.lambda.max(1.0);
    match refine_in(fine, r.class, r.lambda - w, r.lambda + w, cfg.tol) {
        Ok(p) if p.sigma1 < cfg.accept => Some(p),
        Ok(p) => {
            log.push(format!("rejected polished root k={:.8} class {}: σ₁ = {:.2e}", p.lambda, p.class.label(), p.sigma1));
            None
        }
        Err(e) => {
            log.push(format!("polishing k={:.8} class {}: {e}", r.lambda, r.class.label()));
            None
        }
    }
}

/// Eigenvalues in `[k_min, k_max]` of every class, deduplicated within a
/// class and sorted.
fn eigenvalues(curve: &BoundaryCurve, bc: BcKind, cfg: &ScanConfig, log: &mut Vec<String>) -> Result<Vec<Refined>, SolverError> {
    cfg.validate(curve, bc)?;
    let mut all = Vec::new();
    for band in bands(curve, bc, cfg)? {
        let cands = scan_band(&band, cfg);
        let res = par_map(&cands, cfg.threads, |c| refine_candidate(&band.disc, c, cfg));
        for (found, l) in res {
            log.extend(l);
            match &band.fine {
                None => all.extend(found),
                Some(fine) => all.extend(found.into_iter().filter_map(|r| polish(fine, r, cfg, log))),
            }
        }
    }
    all.retain(|r| r.lambda >= cfg.k_min && r.lambda <= cfg.k_max);
    all.sort_by(|a, b| a.class.cmp(&b.class).then(a.lambda.total_cmp(&b.lambda)));
    all.dedup_by(|b, a| a.class == b.class && (a.lambda - b.lambda).abs() < 10.0 * cfg.tol * a.lambda);
    all.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.class.cmp(&b.class)));
    Ok(all)
}

/// Real boundary traces of the `ell` smallest singular directions of one class.
struct ClassTraces {
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    sigma: f64,
}

fn class_traces(disc: &Discretisation, k: f64, class: SymmetryClass, ell: usize) -> ClassTraces {
    let rows = disc.trace_rows(k);
    let a = disc.class_operator(k, &rows, class);
    let svd = a.thin_svd().expect("SVD converges");
    let n = a.ncols();
    let s = svd.S().column_vector();
    let sigma = s[n - ell].re;
    let (bs, bkp) = disc.layer_blocks(&rows, class);
    let bkp = bkp.expect("normal-derivative rows");
    let w = disc.nodes.weights();
    let m = disc.m();
    // complex fields, then their real and imaginary parts
    let mut real_fields: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for col in 0..ell {
        let raw: Vec<c64> = (0..n).map(|i| svd.V()[(i, n - 1 - col)]).collect();
        let dens = disc.isometric_density(&raw);
        let psi = faer::Col::<c64>::from_fn(n, |i| dens[i]);
        let ur = &bs * &psi;
        let vr = &bkp * &psi;
        let ur: Vec<c64> = (0..ur.nrows()).map(|i| ur[i]).collect();
        let vr: Vec<c64> = (0..vr.nrows()).map(|i| vr[i]).collect();
        let uf = disc.sym.expand(class, &ur);
        let vf = disc.sym.expand(class, &vr);
        let un: Vec<c64> = (0..m).map(|j| uf[j] / w[j].sqrt()).collect();
        let vn: Vec<c64> = (0..m).map(|j| vf[j] / w[j].sqrt()).collect();
        real_fields.push((un.iter().map(|z| z.re).collect(), vn.iter().map(|z| z.re).collect()));
        real_fields.push((un.iter().map(|z| z.im).collect(), vn.iter().map(|z| z.im).collect()));
    }
    // dominant ell-dimensional real subspace in the weighted boundary metric
    let rows_n = 2 * m;
    let f = Mat::<f64>::from_fn(rows_n, real_fields.len(), |i, c| {
        let j = i % m;
        let val = if i < m { real_fields[c].0[j] } else { real_fields[c].1[j] / k };
        val * w[j].sqrt()
    });
    let fsvd = f.thin_svd().expect("SVD converges");
    let mut u = Vec::with_capacity(ell);
    let mut v = Vec::with_capacity(ell);
    for col in 0..ell {
        let coef = fsvd.V().col(col);
        let mut uu = vec![0.0; m];
        let mut vv = vec![0.0; m];
        for (c, fld) in real_fields.iter().enumerate() {
            for j in 0..m {
                uu[j] += coef[c] * fld.0[j];
                vv[j] += coef[c] * fld.1[j];
            }
        }
        u.push(uu);
        v.push(vv);
    }
    ClassTraces { u, v, sigma }
}

/// Gram–Schmidt in the metric `g`; returns coefficient rows `c` with
/// `Σ_ab c[i][a] g[a][b] c[j][b] = δ_ij`.
fn orthonormalize(g: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = g.len();
    let inner = |a: &[f64], b: &[f64]| -> f64 { (0..n).map(|i| (0..n).map(|j| a[i] * g[i][j] * b[j]).sum::<f64>()).sum() };
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        for prev in &out {
            let p = inner(&c, prev);
            for j in 0..n {
                c[j] -= p * prev[j];
            }
        }
        let nrm = inner(&c, &c).sqrt();
        out.push(c.iter().map(|x| x / nrm).collect());
    }
    out
}

/// Sign convention: the entry of largest magnitude in `(u, v/λ)` is positive.
fn fix_sign(u: &mut [f64], v: &mut [f64], lambda: f64) {
    let mut best: f64 = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        for x in [*a, *b / lambda] {
            if x.abs() > best.abs() {
                best = x;
            }
        }
    }
    if best < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn certificate(gram_diag: f64, error: f64, scale2: f64, bands: &[f64], mass: &[f64], grad: &[f64], method: &str) -> Certificate {
    Certificate {
        norm_sq: gram_diag * scale2,
        error: error / gram_diag,
        method: method.into(),
        bands: bands
            .iter()
            .enumerate()
            .map(|(i, &eps)| CollarBand { eps, mass: mass[i] * scale2, grad_mass: grad[i] * scale2 })
            .collect(),
    }
}

/// Traces on the uniform arclength grid from node data.
fn to_grid(curve: &BoundaryCurve, nodes: &Nodes, grid: &Grid, f: &[f64]) -> Vec<f64> {
    if nodes.grid.as_ref() == Some(grid) {
        return f.to_vec();
    }
    let xs: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&s| nodes.parameter_of(curve, s) / (2.0 * std::f64::consts::PI) * nodes.m as f64)
        .collect();
    spectral::interpolate_half_offset(f, &xs)
}

const INTERIOR_METHOD: &str = "core/collar Gauss quadrature of the Green representation";

/// Orthonormal modes of one class at `lambda` (`ell` of them).
fn class_modes(curve: &BoundaryCurve, disc: &Discretisation, bc: BcKind, lambda: f64, class: SymmetryClass, ell: usize) -> Vec<Mode> {
    let tr = class_traces(disc, lambda, class, ell);
    let opts = InteriorOptions { quadrant: true, ..Default::default() };
    let res = interior_integrals(curve, &disc.nodes, lambda, &tr.u, &tr.v, &opts);
    let coef = orthonormalize(&res.gram);
    let grid = match disc.nodes.grid {
        Some(g) => g,
        None => Grid::for_curve(curve, default_grid_size(curve, lambda)),
    };
    let method = format!("{INTERIOR_METHOD}, quadrant");
    let mut out = Vec::with_capacity(ell);
    for (i, c) in coef.iter().enumerate() {
        let m = disc.m();
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; m];
        for a in 0..ell {
            for j in 0..m {
                u[j] += c[a] * tr.u[a][j];
                v[j] += c[a] * tr.v[a][j];
            }
        }
        fix_sign(&mut u, &mut v, lambda);
        // masses of the normalized combination: only diagonal band data
        // exist, so they are exact for ell = 1 and approximate otherwise
        let scale2: f64 = c.iter().map(|x| x * x).sum();
        let mass: Vec<f64> = (0..res.bands.len()).map(|b| (0..ell).map(|a| c[a] * c[a] * res.band_mass[a][b]).sum::<f64>()).collect();
        let grad: Vec<f64> = (0..res.bands.len()).map(|b| (0..ell).map(|a| c[a] * c[a] * res.band_grad[a][b]).sum::<f64>()).collect();
        let norm_sq: f64 = (0..ell).map(|a| (0..ell).map(|b| c[a] * res.gram[a][b] * c[b]).sum::<f64>()).sum();
        let cert = certificate(norm_sq, res.error * scale2, 1.0, &res.bands, &mass, &grad, &method);
        let mut warnings = Vec::new();
        if cert.error > NORM_WARNING {
            warnings.push(format!("normalization error estimate {:.2e} exceeds {NORM_WARNING:.0e}", cert.error));
        }
        let label = if ell > 1 { format!("class {} #{i}", class.label()) } else { format!("class {}", class.label()) };
        out.push(Mode {
            lambda,
            bc,
            grid,
            u: to_grid(curve, &disc.nodes, &grid, &u),
            v: to_grid(curve, &disc.nodes, &grid, &v),
            certificate: cert,
            provenance: Provenance::Solver,
            degeneracy: Degeneracy { multiplicity: ell, member: i, label },
            quality: tr.sigma,
            warnings,
        });
    }
    out
}

/// Normalized modes at a refined eigenvalue: every class whose operator is
/// singular at `lambda` contributes its null space.
pub fn compute_mode(curve: &BoundaryCurve, bc: BcKind, lambda: f64, cfg: &ScanConfig) -> Result<Vec<Mode>, SolverError> {
    if !(lambda > 0.0) {
        return Err(SolverError::Config(format!("frequency must be positive, got {lambda}")));
    }
    let disc = Discretisation::new(curve, bc, mode_node_count(curve, bc, lambda, cfg.ppw), lambda)?;
    let rows = disc.rep_rows(lambda);
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for class in SymmetryClass::ALL {
        let sv = class_singular_values(&disc.class_operator(lambda, &rows, class));
        best = best.min(sv[0]);
        let ell = if sv[0] >= cfg.accept {
            0
        } else {
            1 + sv[1..].iter().take_while(|&&s| degenerate(sv[0], s, cfg.accept)).count()
        };
        if ell > 0 {
            out.extend(class_modes(curve, &disc, bc, lambda, class, ell));
        }
    }
    if out.is_empty() {
        return Err(SolverError::NotAnEigenvalue { k: lambda, sigma: best });
    }
    label_group(&mut out);
    Ok(out)
}

/// A second singular value counts towards the null space when it is below
/// the acceptance level and within two decades of the first.
fn degenerate(sigma1: f64, sigma2: f64, accept: f64) -> bool {
    sigma2 < accept && sigma2 < 100.0 * sigma1.max(1e-13)
}

fn class_singular_values(a: &Mat<c64>) -> Vec<f64> {
    let mut sv = a.singular_values().expect("singular values converge");
    sv.sort_by(f64::total_cmp);
    sv
}

fn label_group(group: &mut [Mode]) {
    let n = group.len();
    for (i, m) in group.iter_mut().enumerate() {
        m.degeneracy.multiplicity = n;
        m.degeneracy.member = i;
    }
}

/// Rescale a mode to unit interior norm, recomputing its certificate from
/// the traces on its grid.
pub fn normalize_mode(curve: &BoundaryCurve, mode: &Mode) -> Mode {
    let nodes = Nodes::uniform(curve, &mode.grid);
    let quadrant = reflection_even_square(curve, &nodes, &mode.u, &mode.v, mode.lambda);
    let opts = InteriorOptions { quadrant, ..Default::default() };
    let res = interior_integrals(curve, &nodes, mode.lambda, &[mode.u.clone()], &[mode.v.clone()], &opts);
    let g = res.gram[0][0];
    let scale = 1.0 / g.sqrt();
    let method = if quadrant { format!("{INTERIOR_METHOD}, quadrant") } else { INTERIOR_METHOD.to_string() };
    let mut out = mode.clone();
    out.u.iter_mut().for_each(|x| *x *= scale);
    out.v.iter_mut().for_each(|x| *x *= scale);
    out.certificate = certificate(g, res.error, 1.0 / g, &res.bands, &res.band_mass[0], &res.band_grad[0], &method);
    out.warnings.retain(|w| !w.starts_with("normalization error"));
    if out.certificate.error > NORM_WARNING {
        out.warnings.push(format!("normalization error estimate {:.2e} exceeds {NORM_WARNING:.0e}", out.certificate.error));
    }
    out
}

/// Whether `u²` is invariant under both reflections (the traces have a
/// definite parity under each), up to a relative residual of `1e-8`.
fn reflection_even_square(curve: &BoundaryCurve, nodes: &Nodes, u: &[f64], v: &[f64], lambda: f64) -> bool {
    let Ok(sym) = Symmetry::new(nodes, curve.spec.origin) else {
        return false;
    };
    let z: Vec<f64> = u.iter().chain(v.iter()).enumerate().map(|(i, x)| if i < u.len() { *x } else { x / lambda }).collect();
    let norm: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let m = u.len();
    [1usize, 2].iter().all(|&g| {
        let p = &sym.perm[g];
        let res = |sign: f64| -> f64 {
            (0..m)
                .map(|i| (u[p[i]] - sign * u[i]).powi(2) + ((v[p[i]] - sign * v[i]) / lambda).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        res(1.0).min(res(-1.0)) < 1e-8 * norm
    })
}

/// Sliding-window comparison of the computed count with two-term Weyl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub lambda_max: f64,
    pub window: f64,
    pub band: f64,
    pub count: usize,
    pub weyl: f64,
    /// Largest `|N(λ) - N_W(λ)|` over the checked points.
    pub max_deviation: f64,
    /// `(λ, N(λ) - N_W(λ))` on the checked points.
    pub deviation: Vec<(f64, f64)>,
    /// Windows `[lo, hi]` whose count deviates from Weyl by more than the band.
    pub flagged: Vec<(f64, f64, f64)>,
    pub ok: bool,
}

/// Compare counts with `weyl_count` on sliding windows `[λ - window, λ]`
/// (window increments) and on the cumulative count.
pub fn verify_completeness(curve: &BoundaryCurve, bc: BcKind, modes: &[Mode], lambda_max: f64, window: f64, band: f64) -> CompletenessReport {
    let mut lams: Vec<f64> = modes.iter().map(|m| m.lambda).filter(|&l| l <= lambda_max).collect();
    lams.sort_by(f64::total_cmp);
    let count_below = |x: f64| lams.partition_point(|&l| l <= x) as f64;
    let mut flagged = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut deviation = Vec::new();
    let steps = 400usize;
    for i in 0..=steps {
        let hi = lambda_max * i as f64 / steps as f64;
        let dev = count_below(hi) - weyl_count(curve, bc, hi);
        max_dev = max_dev.max(dev.abs());
        deviation.push((hi, dev));
        let lo = (hi - window).max(0.0);
        if hi - lo < window * 0.999 {
            continue;
        }
        let got = count_below(hi) - count_below(lo);
        let want = weyl_count(curve, bc, hi) - weyl_count(curve, bc, lo);
        if (got - want).abs() > band {
            flagged.push((lo, hi, got - want));
        }
    }
    CompletenessReport {
        lambda_max,
        window,
        band,
        count: lams.len(),
        weyl: weyl_count(curve, bc, lambda_max),
        max_deviation: max_dev,
        deviation,
        ok: flagged.is_empty(),
        flagged,
    }
}

/// Result of a full spectrum computation.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub modes: Vec<Mode>,
    /// Refinement failures, rejected minima and split pairs.
    pub log: Vec<String>,
}

/// Scan, refine and construct every mode with `λ` in `[k_min, k_max]`.
/// Eigenvalues of different classes closer than ten tolerances form one
/// degenerate eigenspace.
pub fn solve_spectrum(curve: &BoundaryCurve, bc: BcKind, cfg: &ScanConfig) -> Result<Spectrum, SolverError> {
    let mut log = Vec::new();
    let eig = eigenvalues(curve, bc, cfg, &mut log)?;
    // group by class, then build modes per distinct (λ, class)
    let mut groups: Vec<Vec<Refined>> = Vec::new();
    for r in eig {
        match groups.last_mut() {
            Some(g) if (r.lambda - g[0].lambda).abs() < 10.0 * cfg.tol * r.lambda => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    let built: Vec<Vec<Mode>> = par_map(&groups, cfg.threads, |g| {
        let (m, top) = band_node_count(curve, bc, cfg, g[0].lambda);
        let disc = Discretisation::new(curve, bc, m, top).expect("symmetric nodes");
        let mut modes = Vec::new();
        for r in g {
            let ell = if degenerate(r.sigma1, r.sigma2, cfg.accept) { 2 } else { 1 };
            modes.extend(class_modes(curve, &disc, bc, r.lambda, r.class, ell));
        }
        label_group(&mut modes);
        modes
    });
    Ok(Spectrum { modes: built.into_iter().flatten().collect(), log })
}

/// Node count and table range of the scan band containing `k`.
fn band_node_count(curve: &BoundaryCurve, bc: BcKind, cfg: &ScanConfig, k: f64) -> (usize, f64) {
    let top = (k.floor() + 1.0).min(cfg.k_max) + 2.0 * cfg.dk;
    (mode_node_count(curve, bc, top, cfg.ppw), top)
}
