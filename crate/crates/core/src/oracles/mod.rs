//! Closed-form eigenmodes of the disk and the rectangle, and the two-term
//! Weyl law.
//!
//! On the disk the first-order Robin multiplier `κ|D_s|` acts on the angular
//! frequency `m` as the constant impedance `κ|m|/r`, so it reduces to the
//! radial matching equation `x J_m'(x) + κ|m| J_m(x) = 0` with `x = λr`.
//! The constant impedance `κ` gives `x J_m'(x) + κ r J_m(x) = 0`.

pub mod bessel;

use std::f64::consts::PI;

use crate::geometry::{BoundaryCurve, Shape};
use crate::mode::{min_grid_size, BcKind, Certificate, Degeneracy, Grid, Mode, Provenance};
use bessel::{bessel_j_and_prime, matching_roots_below, Matching};

pub use bessel::{bessel_zero, ZeroKind};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no root with index n={n} for order m={m}")]
    Indexing { m: usize, n: usize },
    #[error("{0}")]
    Unsupported(String),
}

fn matching_for(bc: BcKind, m: usize, radius: f64) -> Matching {
    match bc {
        BcKind::Dirichlet => Matching::Dirichlet,
        BcKind::Neumann => Matching::Neumann,
        BcKind::RobinConstant { kappa } => Matching::Robin(kappa * radius),
        BcKind::RobinMultiplier { kappa } => Matching::Robin(kappa * m as f64),
    }
}

/// The `n`-th radial root (`n >= 1`) of the disk matching equation, as `λ`.
pub fn disk_eigenvalue(radius: f64, bc: BcKind, m: usize, n: usize) -> Result<f64, OracleError> {
    let matching = matching_for(bc, m, radius);
    let mut x_max = (m as f64 + 4.0 * n as f64 + 10.0) * 1.5;
    loop {
        let roots = matching_roots_below(matching, m, x_max);
        if roots.len() >= n {
            return Ok(roots[n - 1] / radius);
        }
        if x_max > 1e5 {
            return Err(OracleError::Indexing { m, n });
        }
        x_max *= 2.0;
    }
}

/// Grid size used for oracle modes when none is requested.
pub fn default_grid_size(curve: &BoundaryCurve, lambda: f64) -> usize {
    curve.grid_size(min_grid_size(lambda, curve.length).max(32))
}

/// Disk mode `(m, n)`; returns the cosine mode, and for `m >= 1` also its
/// sine partner. `grid_m` selects the boundary grid size (default: eight
/// nodes per wavelength).
pub fn disk_mode(
    curve: &BoundaryCurve,
    bc: BcKind,
    m: usize,
    n: usize,
    grid_m: Option<usize>,
) -> Result<Vec<Mode>, OracleError> {
    let radius = match curve.spec.shape {
        Shape::Disk { radius } => radius,
        _ => return Err(OracleError::Unsupported("disk_mode needs a disk".into())),
    };
    if n == 0 {
        return Err(OracleError::Indexing { m, n });
    }
    let lambda = disk_eigenvalue(radius, bc, m, n)?;
    Ok(disk_modes_at(curve, radius, bc, m, n, lambda, grid_m))
}

fn disk_modes_at(
    curve: &BoundaryCurve,
    radius: f64,
    bc: BcKind,
    m: usize,
    n: usize,
    lambda: f64,
    grid_m: Option<usize>,
) -> Vec<Mode> {
    let x = lambda * radius;
    let (j, jp) = bessel_j_and_prime(m, x);
    let mf = m as f64;
    let radial = 0.5 * radius * radius * (jp * jp + (1.0 - mf * mf / (x * x)) * j * j);
    let angular = if m == 0 { 2.0 * PI } else { PI };
    let norm = 1.0 / (radial * angular).sqrt();
    let gm = grid_m.unwrap_or_else(|| default_grid_size(curve, lambda));
    let grid = Grid::for_curve(curve, gm);
    let thetas: Vec<f64> = grid.nodes().iter().map(|s| s / radius).collect();
    let parts: &[(&str, fn(f64) -> f64)] = if m == 0 {
        &[("cos", f64::cos)]
    } else {
        &[("cos", f64::cos), ("sin", f64::sin)]
    };
    let multiplicity = parts.len();
    parts
        .iter()
        .enumerate()
        .map(|(member, (name, trig))| {
            let ang: Vec<f64> = thetas.iter().map(|t| trig(mf * t)).collect();
            let u: Vec<f64> = ang.iter().map(|a| norm * j * a).collect();
            let v: Vec<f64> = ang.iter().map(|a| norm * lambda * jp * a).collect();
            let mut mode = Mode {
                lambda,
                bc,
                grid,
                u,
                v,
                certificate: Certificate { norm_sq: 1.0, error: 1e-14, method: "bessel norm integral".into(), bands: Vec::new() },
                provenance: Provenance::Oracle,
                degeneracy: Degeneracy { multiplicity, member, label: format!("m={m} n={n} {name}") },
                quality: 0.0,
                warnings: Vec::new(),
            };
            mode.quality = mode.bc_residual();
            mode
        })
        .collect()
}

/// One entry of a disk spectrum listing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskLevel {
    pub lambda: f64,
    pub m: usize,
    pub n: usize,
}

/// All disk levels `(m, n)` with `λ < lambda_max`, ascending in `λ`
/// (each `m >= 1` level listed once; it carries two modes).
pub fn disk_levels_below(radius: f64, bc: BcKind, lambda_max: f64) -> Vec<DiskLevel> {
    let x_max = lambda_max * radius;
    let mut out = Vec::new();
    let mut m = 0usize;
    while (m as f64) < x_max {
        let roots = matching_roots_below(matching_for(bc, m, radius), m, x_max);
        if roots.is_empty() && m > 0 {
            break;
        }
        for (i, x) in roots.into_iter().enumerate() {
            out.push(DiskLevel { lambda: x / radius, m, n: i + 1 });
        }
        m += 1;
    }
    out.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.m.cmp(&b.m)));
    out
}

/// The first `count` disk modes (degenerate pairs expanded as cos/sin),
/// sorted by `λ`.
pub fn disk_modes_first(curve: &BoundaryCurve, bc: BcKind, count: usize) -> Result<Vec<Mode>, OracleError> {
    let radius = match curve.spec.shape {
        Shape::Disk { radius } => radius,
        _ => return Err(OracleError::Unsupported("disk_modes_first needs a disk".into())),
    };
    let mut lambda_max = 10.0 / radius;
    let levels = loop {
        let lv = disk_levels_below(radius, bc, lambda_max);
        let total: usize = lv.iter().map(|l| if l.m == 0 { 1 } else { 2 }).sum();
        if total >= count {
            break lv;
        }
        lambda_max *= 1.3;
    };
    let mut modes = Vec::with_capacity(count + 1);
    for lv in levels {
        if modes.len() >= count {
            break;
        }
        modes.extend(disk_modes_at(curve, radius, bc, lv.m, lv.n, lv.lambda, None));
    }
    modes.truncate(count);
    Ok(modes)
}

/// Closed-form norm `‖e^b‖²` of the boundary observable of a disk mode
/// (Dirichlet: `‖λ⁻¹∂ₙu‖²`; otherwise `‖u‖²`) on the disk of radius `r`.
pub fn disk_boundary_norm(radius: f64, bc: BcKind, m: usize, lambda: f64) -> f64 {
    let x = lambda * radius;
    let (j, jp) = bessel_j_and_prime(m, x);
    let mf = m as f64;
    let radial = 0.5 * radius * radius * (jp * jp + (1.0 - mf * mf / (x * x)) * j * j);
    // the angular factor cancels between the trace and the interior norm
    let trace = if bc.is_dirichlet() { jp * jp } else { j * j };
    trace * radius / radial
}

/// Rectangle mode `(m, n)` on `[-a, a] x [-b, b]`.
pub fn rectangle_mode(
    curve: &BoundaryCurve,
    bc: BcKind,
    m: usize,
    n: usize,
    grid_m: Option<usize>,
) -> Result<Mode, OracleError> {
    let (a, b) = match curve.spec.shape {
        Shape::Rectangle { a, b } => (a, b),
        _ => return Err(OracleError::Unsupported("rectangle_mode needs a rectangle".into())),
    };
    let neumann = match bc {
        BcKind::Dirichlet => false,
        BcKind::Neumann => true,
        _ => return Err(OracleError::Unsupported("Robin conditions are not supported on the rectangle".into())),
    };
    if !neumann && (m == 0 || n == 0) {
        return Err(OracleError::Indexing { m, n });
    }
    if neumann && m == 0 && n == 0 {
        return Err(OracleError::Unsupported("the constant Neumann mode (λ = 0) is excluded".into()));
    }
    let kx = m as f64 * PI / (2.0 * a);
    let ky = n as f64 * PI / (2.0 * b);
    let lambda = kx.hypot(ky);
    let weight = |k: usize| if neumann && k == 0 { 2.0 } else { 1.0 };
    let norm = 1.0 / (a * b * weight(m) * weight(n)).sqrt();
    // factor and derivative along each axis
    let fx = |x: f64| if neumann { (kx * (x + a)).cos() } else { (kx * (x + a)).sin() };
    let dfx = |x: f64| if neumann { -kx * (kx * (x + a)).sin() } else { kx * (kx * (x + a)).cos() };
    let fy = |y: f64| if neumann { (ky * (y + b)).cos() } else { (ky * (y + b)).sin() };
    let dfy = |y: f64| if neumann { -ky * (ky * (y + b)).sin() } else { ky * (ky * (y + b)).cos() };
    let gm = grid_m.unwrap_or_else(|| default_grid_size(curve, lambda));
    let grid = Grid::for_curve(curve, gm);
    let mut u = Vec::with_capacity(gm);
    let mut v = Vec::with_capacity(gm);
    for s in grid.nodes() {
        let f = curve.boundary_eval(s).expect("rectangle grids avoid corners");
        let p = f.point - curve.spec.origin;
        let grad = crate::geometry::Vec2::new(dfx(p.x) * fy(p.y), fx(p.x) * dfy(p.y));
        u.push(norm * fx(p.x) * fy(p.y));
        v.push(norm * grad.dot(f.normal));
    }
    let mut mode = Mode {
        lambda,
        bc,
        grid,
        u,
        v,
        certificate: Certificate { norm_sq: 1.0, error: 1e-14, method: "closed-form product norm".into(), bands: Vec::new() },
        provenance: Provenance::Oracle,
        degeneracy: Degeneracy { multiplicity: 1, member: 0, label: format!("m={m} n={n}") },
        quality: 0.0,
        warnings: Vec::new(),
    };
    mode.quality = mode.bc_residual();
    Ok(mode)
}

/// Two-term Weyl counting function `A λ²/4π ∓ L λ/4π` (minus for
/// Dirichlet, plus for Neumann and Robin).
pub fn weyl_count(curve: &BoundaryCurve, bc: BcKind, lambda: f64) -> f64 {
    let sign = if bc.is_dirichlet() { 1.0 } else { -1.0 };
    curve.area() * lambda * lambda / (4.0 * PI) - sign * curve.length * lambda / (4.0 * PI)
}

/// Mean level spacing `1 / N_W'(λ)` from the two-term Weyl law.
pub fn weyl_spacing(curve: &BoundaryCurve, bc: BcKind, lambda: f64) -> f64 {
    let sign = if bc.is_dirichlet() { 1.0 } else { -1.0 };
    let density = curve.area() * lambda / (2.0 * PI) - sign * curve.length / (4.0 * PI);
    1.0 / density.max(1e-12)
}
